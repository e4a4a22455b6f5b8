"""Dropping the sensitive column is not enough when another column tracks it."""

from fairmask import MaskSpec, SyntheticSpec, omit_sensitive, split_dataset, synthesize, train_then_mask, unconstrained
from fairmask.metrics import frame_for, group_discrimination, latent_discrimination

print(" rho   omit L_Discr   ttm L_Discr   h* G_Discr   ttm G_Discr")
for rho in (0.0, 0.4, 0.8, 0.95):
    split = split_dataset(synthesize(SyntheticSpec(n=2000, rho=rho, seed=0)), seed=0)
    h = unconstrained(split.train, "linear_svm")
    omit = omit_sensitive(split.train, "linear_svm")
    ttm = train_then_mask(split.train, split.validation, MaskSpec.from_dataset(split.train), "linear_svm", h_star=h)

    ld_omit = latent_discrimination(frame_for(omit, split.test, h))
    ld_ttm = latent_discrimination(frame_for(ttm, split.test, h))  # exactly zero, whatever rho is
    gd_h = group_discrimination(frame_for(h, split.test))
    gd_ttm = group_discrimination(frame_for(ttm, split.test))
    print(f"{rho:4.2f}   {ld_omit:12.4f}   {ld_ttm:11.4f}   {gd_h:10.4f}   {gd_ttm:11.4f}")

# without the sensitive column the remaining weights shift to absorb the group effect, which
# reorders people inside each group at every rho; masking keeps h*'s within-group order
