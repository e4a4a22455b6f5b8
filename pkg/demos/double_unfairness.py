"""Eight applicants, two groups, and what each method does with them."""

import numpy as np

from fairmask import MaskSpec, majority, omit_sensitive, toy_table2, train_logistic, train_then_mask
from fairmask.baselines import massage_labels
from fairmask.metrics import EvalFrame, admittance

d = toy_table2()
raw = d.provenance.columns
print("applicant  group  SAT   extra  admitted")
for i in range(d.n_rows):
    print(f"{i + 1:>9}  {raw['Sensitive'][i]:>5}  {raw['SAT'][i]:.0f}  {raw['Extracurricular'][i]:>5.0f}  {d.labels[i]:>8}")

# the protected group is admitted more often overall...
print("admission rates (protected, other):", admittance(EvalFrame(d.labels, d.labels, d.group_id, d.protected)))

# ...yet applicant 4 was turned down while applicant 5, identical apart from group, got in.
# the accuracy-optimal model sees this and gives group membership a negative weight
h = train_logistic(d)
print("h* weights [sensitive, SAT, extra]:", np.round(h.coef, 3))

# rate equalising by relabelling makes it worse: another protected applicant loses their place
relabelled, plan = massage_labels(d)
print("massaging flips applicant(s):", [r + 1 for r in plan.rows], "| rate gap", plan.gap_before, "->", plan.gap_after)

# dropping the column keeps the within-group order only when nothing stands in for it
omit = omit_sensitive(d)
print("omit-sensitive decisions :", omit.decide(d.features))

# train-then-mask scores everyone as if they were in the reference group
ttm = train_then_mask(d, d, MaskSpec.from_dataset(d))
print("train-then-mask decisions:", ttm.decide(d.features), "tau =", round(ttm.tau, 4))
print("applicants 4 and 5 now agree:", ttm.decide(d.features[3:5]))

print("majority decisions       :", majority(d).decide(d.features))
