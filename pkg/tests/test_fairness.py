import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logit

from fairmask import Dataset, ScoreModel, SyntheticSpec, synthesize, toy_table2
from fairmask.core import DimensionError, FairmaskError, split_dataset
from fairmask.fairness import (
    MaskSpec,
    default_tau_grid,
    mask,
    pareto_flags,
    select_tau,
    tau_grid_values,
    tau_sweep,
    train_then_mask,
)
from fairmask.metrics import frame_for, latent_discrimination, strict_latent_discrimination
from fairmask.models import train_family

from conftest import make_dataset


def scored(scores, labels, sensitive=None):
    """Dataset plus logistic model whose masked scores are ``scores``."""
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    s = np.arange(n) % 2 if sensitive is None else np.asarray(sensitive)
    X = np.column_stack([s, logit(scores)])
    d = Dataset(X, labels, sensitive_index=(0,), mask_values=(0.0,))
    m = ScoreModel(family="logistic", n_features=2, coef=[3.0, 1.0], intercept=0.0, sensitive_index=(0,))
    return d, m


def boundary_oracle(scores, labels):
    """Best accuracy over every distinct decision boundary of the scores."""
    cuts = np.concatenate([[-np.inf], np.unique(scores)])
    return max(np.mean((scores > c) == (labels == 1)) for c in cuts)


def dominance_oracle(acc, gd):
    k = len(acc)
    return np.array([
        not any(acc[j] >= acc[i] and gd[j] <= gd[i] and (acc[j] > acc[i] or gd[j] < gd[i]) for j in range(k))
        for i in range(k)
    ])


# --------------------------------------------------------------------------
# masking
# --------------------------------------------------------------------------


def test_mask_erases_the_only_difference():
    d = Dataset(np.array([[1.0, 0.3, 2.0], [0.0, 0.3, 2.0]]), [1, 0], sensitive_index=(0,))
    out = mask(d, MaskSpec((0,), (0.0,)))
    np.testing.assert_array_equal(out.features[0], out.features[1])
    np.testing.assert_array_equal(out.labels, d.labels)
    assert len(np.unique(out.group_id)) == 1


def test_mask_is_idempotent():
    d = make_dataset(n=20, seed=3)
    spec = MaskSpec.from_dataset(d)
    once = mask(d, spec)
    twice = mask(once, spec)
    assert once.features.tobytes() == twice.features.tobytes()
    np.testing.assert_array_equal(np.delete(once.features, 0, axis=1), np.delete(d.features, 0, axis=1))


def test_mask_two_sensitive_columns():
    d = make_dataset(n=30, d=5, sensitive=(0, 2), seed=1)
    out = mask(d, MaskSpec((0, 2), (1.0, 1.0)))
    assert np.all(out.features[:, [0, 2]] == 1.0)


def test_mask_spec_errors():
    d = make_dataset(n=10, d=3)
    with pytest.raises(DimensionError):
        mask(d, MaskSpec((7,), (0.0,)))
    with pytest.raises(FairmaskError):
        MaskSpec((0,), (np.nan,))
    with pytest.raises(FairmaskError):
        mask(d, MaskSpec((1,), (0.0,)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), ref=st.sampled_from([0.0, 1.0]))
def test_masking_equals_shift_for_linear_models(seed, ref):
    rng = np.random.default_rng(seed)
    d = make_dataset(n=50, d=4, seed=seed)
    w = rng.standard_normal(4)
    b = float(rng.standard_normal())
    m = ScoreModel(family="logistic", n_features=4, coef=w, intercept=b, sensitive_index=(0,))
    masked = MaskSpec((0,), (ref,)).apply_to(m)
    by_masking = masked.raw_scores(d.features)
    X = d.features
    shifted = 1.0 / (1.0 + np.exp(-(X[:, 1:] @ w[1:] + w[0] * ref + b)))
    np.testing.assert_allclose(by_masking, shifted, rtol=0, atol=1e-12)


# --------------------------------------------------------------------------
# offset selection
# --------------------------------------------------------------------------


def test_select_tau_example():
    d, m = scored([0.3, 0.4, 0.6, 0.7], [0, 1, 1, 1])
    spec = MaskSpec.from_dataset(d)
    taus = tau_grid_values((-0.3, 0.3, 13))
    assert np.isclose(taus, 0.15).sum() == 1
    scores = spec.apply_to(m).raw_scores(d.features)
    assert boundary_oracle(scores, d.labels) == 1.0
    accs = [np.mean((scores + t > 0.5) == d.labels) for t in taus]
    assert accs[int(np.argmin(np.abs(taus)))] == 0.75
    # only offsets in (0.1, 0.2) classify all four rows correctly
    assert [t for t, a in zip(taus, accs) if a == 1.0] == [t for t in taus if 0.1 < t < 0.2]
    assert select_tau(m, d, spec, (-0.3, 0.3, 13)) == pytest.approx(0.15, abs=1e-12)


def test_select_tau_prefers_zero_when_already_perfect():
    d, m = scored([0.2, 0.3, 0.7, 0.9], [0, 0, 1, 1])
    assert select_tau(m, d, MaskSpec.from_dataset(d), (-0.1, 0.1, 21)) == 0.0


def test_select_tau_tie_goes_to_smaller_magnitude_then_smaller_value():
    d, m = scored([0.2, 0.3, 0.7, 0.9], [0, 0, 1, 1])
    spec = MaskSpec.from_dataset(d)
    assert select_tau(m, d, spec, (-0.1, 0.1, 2)) == -0.1


def test_select_tau_constant_model_two_candidates():
    d = make_dataset(n=10, seed=2, labels=np.array([1] * 7 + [0] * 3))
    m = ScoreModel(family="constant", n_features=d.n_features, constant_score=0.4)
    taus = tau_grid_values((-0.5, 0.5, 11))
    # everyone is rejected for 0.4 + tau <= 0.5 and admitted above
    reject, admit = np.mean(d.labels == 0), np.mean(d.labels == 1)
    assert (reject, admit) == (0.3, 0.7)
    expected = min((t for t in taus if 0.4 + t > 0.5), key=abs)
    assert select_tau(m, d, MaskSpec.from_dataset(d), (-0.5, 0.5, 11)) == expected


def test_select_tau_rejects_single_point_grid():
    d, m = scored([0.2, 0.7], [0, 1])
    with pytest.raises(FairmaskError, match="count"):
        select_tau(m, d, MaskSpec.from_dataset(d), (0.0, 1.0, 1))


def test_default_grid_covers_every_boundary():
    d, m = scored([0.2, 0.35, 0.6, 0.9], [0, 1, 0, 1])
    lo, hi, count = default_tau_grid(m, d, MaskSpec.from_dataset(d))
    s = MaskSpec.from_dataset(d).apply_to(m).raw_scores(d.features)
    assert count == 101
    assert lo == 0.5 - s.max() and hi == 0.5 - s.min()


# --------------------------------------------------------------------------
# train-then-mask
# --------------------------------------------------------------------------


@pytest.mark.parametrize("family", ["logistic", "linear_svm"])
def test_train_then_mask_has_zero_latent_discrimination(family):
    split = split_dataset(synthesize(SyntheticSpec(n=600, seed=4)), seed=4)
    spec = MaskSpec.from_dataset(split.train)
    model = train_then_mask(split.train, split.validation, spec, family)
    h_star = model.unmasked()
    ref = train_family(family, split.train)
    assert h_star.to_text() == ref.to_text()
    f = frame_for(model, split.test, h_star)
    assert latent_discrimination(f) == 0.0
    assert strict_latent_discrimination(f) == 0.0


def test_train_then_mask_ignores_sensitive_values():
    split = split_dataset(synthesize(SyntheticSpec(n=400, seed=1)), seed=1)
    model = train_then_mask(split.train, split.validation, MaskSpec.from_dataset(split.train), "logistic")
    X = np.array(split.test.features)
    flipped = X.copy()
    flipped[:, 0] = 1.0 - flipped[:, 0]
    np.testing.assert_array_equal(model.decide(X), model.decide(flipped))


def test_zero_grid_reduces_to_plain_masking():
    split = split_dataset(synthesize(SyntheticSpec(n=300, seed=2)), seed=2)
    spec = MaskSpec.from_dataset(split.train)
    model = train_then_mask(split.train, split.validation, spec, "logistic", grid=(0.0, 0.0, 1))
    h_star = train_family("logistic", split.train)
    assert model.tau == 0.0
    X = split.test.features
    np.testing.assert_array_equal(model.decide(X), h_star.decide(mask(split.test, spec).features))


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("family", ["logistic", "linear_svm"])
def test_ranks_within_group_survive_masking(seed, family):
    d = make_dataset(n=120, d=5, sensitive=(0, 1), seed=seed)
    h = train_family(family, d)
    masked = MaskSpec((0, 1), (0.0, 1.0)).apply_to(h)
    a, b = h.raw_scores(d.features), masked.raw_scores(d.features)
    for g in np.unique(d.group_id):
        rows = np.flatnonzero(d.group_id == g)
        ra = np.argsort(np.argsort(a[rows], kind="stable"), kind="stable")
        rb = np.argsort(np.argsort(b[rows], kind="stable"), kind="stable")
        np.testing.assert_array_equal(ra, rb)


@pytest.mark.parametrize("family", ["logistic", "linear_svm"])
def test_latent_zero_at_every_grid_offset(family):
    split = split_dataset(synthesize(SyntheticSpec(n=500, rho=0.6, seed=9)), seed=9)
    spec = MaskSpec.from_dataset(split.train)
    h_star = train_family(family, split.train)
    for tau in tau_grid_values(default_tau_grid(h_star, split.validation, spec, count=21)):
        f = frame_for(spec.apply_to(h_star).with_tau(tau), split.test, h_star)
        assert latent_discrimination(f) == 0.0
        assert strict_latent_discrimination(f) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_grid_tau_is_within_one_cell_of_boundary_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 200))
    d = make_dataset(n=n, seed=seed)
    h = train_family("logistic", d)
    spec = MaskSpec.from_dataset(d)
    grid = default_tau_grid(h, d, spec)
    tau = select_tau(h, d, spec, grid)
    s = spec.apply_to(h).raw_scores(d.features)
    acc = np.mean((s + tau > 0.5) == d.labels)
    taus = tau_grid_values(grid)
    step = taus[1] - taus[0]
    cell_mass = max(np.sum((s > 0.5 - t - step) & (s <= 0.5 - t)) for t in taus) / n
    assert acc >= boundary_oracle(s, d.labels) - cell_mass


# --------------------------------------------------------------------------
# sweeps and frontiers
# --------------------------------------------------------------------------


def test_pareto_example():
    flags = pareto_flags([0.80, 0.82, 0.79], [0.10, 0.15, 0.20])
    assert flags.tolist() == [True, True, False]


def test_pareto_duplicates_all_on_frontier():
    flags = pareto_flags([0.8, 0.8, 0.7], [0.1, 0.1, 0.3])
    assert flags.tolist() == [True, True, False]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=30))
def test_pareto_matches_dominance_oracle(points):
    acc = np.array([a / 6 for a, _ in points])
    gd = np.array([g / 6 for _, g in points])
    flags = pareto_flags(acc, gd)
    np.testing.assert_array_equal(flags, dominance_oracle(acc, gd))
    # every point off the frontier is dominated by a frontier point
    for i in np.flatnonzero(~flags):
        assert any(acc[j] >= acc[i] and gd[j] <= gd[i] for j in np.flatnonzero(flags))


def test_sweep_points_and_export():
    split = split_dataset(synthesize(SyntheticSpec(n=500, seed=3)), seed=3)
    spec = MaskSpec.from_dataset(split.train)
    h = train_family("logistic", split.train)
    res = tau_sweep(h, split.validation, spec)
    assert len(res.points) == 101
    acc = np.array([p.accuracy for p in res.points])
    gd = np.array([p.group_discr for p in res.points])
    assert res.star.accuracy == acc.max()
    assert res.tau_star == select_tau(h, split.validation, spec)
    np.testing.assert_array_equal([p.on_frontier for p in res.points], dominance_oracle(acc, gd))
    # the lowest offset admits nobody, so both admittances are 0
    low = tau_sweep(h, split.validation, spec, (-1.0, 0.0, 5)).points[0]
    assert low.group_discr == 0.0
    lines = res.to_csv(marker=True).splitlines()
    assert lines[0] == "tau,accuracy,group_discr,on_frontier,marker"
    assert len(lines) == 1 + 101 + 1
    assert lines[-1].endswith(",tau_star")
    assert res.to_csv().splitlines()[0] == "tau,accuracy,group_discr,on_frontier"


def test_sweep_groups_come_from_original_values():
    d, m = scored([0.2, 0.8, 0.3, 0.9], [0, 1, 0, 1], sensitive=[1, 1, 0, 0])
    res = tau_sweep(m, d, MaskSpec.from_dataset(d), (0.0, 0.25, 2))
    # at tau = 0.25 the score 0.3 crosses; only the unprotected row at 0.3 flips
    assert res.points[1].group_discr == 0.5


def test_sweep_needs_both_groups():
    d, m = scored([0.2, 0.8], [0, 1], sensitive=[1, 1])
    with pytest.raises(FairmaskError, match="group discrimination undefined"):
        tau_sweep(m, d, MaskSpec.from_dataset(d), (0.0, 0.1, 2))


def test_sweep_reports_each_sensitive_column():
    d = make_dataset(n=80, d=5, sensitive=(0, 1), seed=5)
    h = train_family("logistic", d)
    res = tau_sweep(h, d, MaskSpec((0, 1), (0.0, 0.0)), (-0.2, 0.2, 5))
    for p in res.points:
        assert len(p.group_discr_by_column) == 2
        assert p.group_discr == p.group_discr_by_column[0]


def test_toy_train_then_mask_decisions_are_sensitive_free():
    d = toy_table2()
    model = train_then_mask(d, d, MaskSpec.from_dataset(d), "logistic")
    # applicants 4 and 5 differ only in the sensitive column
    assert model.decide(d.features[3:4])[0] == model.decide(d.features[4:5])[0]
