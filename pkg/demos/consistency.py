"""Own score against the mean score of the k nearest neighbours."""

import numpy as np

from fairmask import MaskSpec, SyntheticSpec, split_dataset, synthesize, unconstrained
from fairmask.metrics import EvalFrame, knn_consistency

split = split_dataset(synthesize(SyntheticSpec(n=2000, rho=0.8, seed=2)), seed=2)
test = split.test
h = unconstrained(split.train, "logistic")
masked = MaskSpec.from_dataset(split.train).apply_to(h)  # tau = 0 here

features = test.features[:, list(test.non_sensitive_index)]  # neighbours by non-sensitive columns only
for name, model in (("h* (sees the group)", h), ("masked", masked)):
    f = EvalFrame(test.labels, model.decide(test.features), test.group_id, test.protected,
                  candidate_scores=model.predict_scores(test.features))
    pts = knn_consistency(f, features, k=5)
    gap = np.abs(pts[:, 0] - pts[:, 1])
    r = np.corrcoef(pts[:, 0], pts[:, 1])[0, 1]
    print(f"{name:<20} mean |own - knn| {gap.mean():.4f}   corr {r:.3f}")

# a nonzero tau moves both coordinates by the same amount, so the picture only slides along the diagonal
