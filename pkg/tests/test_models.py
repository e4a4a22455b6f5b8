import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairmask import Dataset, ScoreModel, toy_table2
from fairmask.baselines import omit_sensitive, unconstrained
from fairmask.models import (
    MlpArchitecture,
    TrainConfig,
    TrainingError,
    hinge_objective,
    init_mlp,
    logistic_objective,
    mlp_from_weights,
    mlp_loss_and_grad,
    predict_scores,
    train_family,
    train_linear_svm,
    train_logistic,
    train_mlp,
)

from conftest import make_dataset

LONG = TrainConfig(epochs=20000, learning_rate=0.5, convergence_tol=1e-14)


def toy_profile(kind, l2=1e-3, axis=np.linspace(-10.0, 10.0, 41)):
    """Brute-force grid over all four toy parameters, reduced to a (w_sens, b) table.

    Entry ``[i, j]`` is the smallest objective over the SAT and extracurricular
    weights with ``w_sens = axis[i]`` and ``b = axis[j]``. The losses are
    written out here rather than imported, so the oracle shares no code with
    the trainers.
    """
    d = toy_table2()
    X, y = d.features, d.labels.astype(float)
    W1, W2 = (a.ravel() for a in np.meshgrid(axis, axis, indexing="ij"))
    table = np.empty((len(axis), len(axis)))
    for i, ws in enumerate(axis):
        for j, b in enumerate(axis):
            z = ws * X[:, [0]] + W1 * X[:, [1]] + W2 * X[:, [2]] + b
            if kind == "logistic":
                loss = np.mean(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - y[:, None] * z, axis=0)
            else:
                loss = np.mean(np.maximum(0.0, 1.0 - (2 * y[:, None] - 1) * z), axis=0)
            table[i, j] = np.min(loss + 0.5 * l2 * (ws ** 2 + W1 ** 2 + W2 ** 2))
    return axis, table


# --------------------------------------------------------------------------
# logistic regression
# --------------------------------------------------------------------------


def test_two_point_logistic_matches_grid_search():
    d = Dataset(np.array([[-1.0], [1.0]]), [0, 1])
    m = train_logistic(d, TrainConfig(l2_penalty=0.1, epochs=20000, learning_rate=0.5, convergence_tol=1e-15))
    w, b = m.coef[0], m.intercept
    assert w > 0
    assert abs(b) < 1e-6

    ws = np.linspace(-3, 3, 6001)
    bs = np.linspace(-1, 1, 201)
    W, B = np.meshgrid(ws, bs, indexing="ij")
    # mean of log(1 + e^{b - w}) and log(1 + e^{-w - b}) plus 0.05 w^2
    obj = 0.5 * (np.logaddexp(0, B - W) + np.logaddexp(0, -W - B)) + 0.05 * W ** 2
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    assert bs[j] == 0.0
    assert abs(w - ws[i]) <= ws[1] - ws[0]


def test_all_negative_labels_degenerate_mode():
    d = make_dataset(n=30, labels=np.zeros(30, dtype=int))
    with pytest.raises(TrainingError, match="single class"):
        train_logistic(d)
    m = train_logistic(d, allow_degenerate=True)
    assert np.all(m.raw_scores(d.features) < 0.5)


def test_logistic_diverges_with_epoch_index():
    d = make_dataset(n=30, seed=2)
    with np.errstate(over="ignore"), pytest.raises(TrainingError, match="epoch 0"):
        train_logistic(d, TrainConfig(learning_rate=1e308))


@pytest.mark.parametrize("family, trainer", [("logistic", train_logistic), ("hinge", train_linear_svm)])
def test_toy_sensitive_weight_is_negative(family, trainer):
    axis, table = toy_profile(family)
    i, j = np.unravel_index(np.argmin(table), table.shape)
    assert 0 < i < len(axis) - 1 and 0 < j < len(axis) - 1, "grid optimum on the boundary"
    assert axis[i] < 0
    best_nonneg = table[axis >= 0].min()
    assert best_nonneg > table.min()

    d = toy_table2()
    for cfg in (TrainConfig(), LONG):
        m = trainer(d, cfg)
        assert m.coef[0] < 0
    # the long run must also beat the coarse grid and everything it found with w_sens >= 0
    obj = logistic_objective if family == "logistic" else hinge_objective
    loss = obj(d.features, d.labels, m.coef, m.intercept, 1e-3)
    assert loss <= table.min() + 1e-9
    assert loss < best_nonneg


# --------------------------------------------------------------------------
# linear SVM
# --------------------------------------------------------------------------


def test_svm_separable_two_points():
    d = Dataset(np.array([[0.0, 1.0], [2.0, -1.0]]), [1, 0])
    m = train_linear_svm(d)
    np.testing.assert_array_equal(m.decide(d.features), d.labels)


def test_svm_feature_scaling_keeps_training_decisions():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((60, 3))
    y = (X @ [1.0, -2.0, 0.5] + 0.3 * rng.standard_normal(60) > 0).astype(int)
    cfg = TrainConfig(l2_penalty=0.0, epochs=3000, learning_rate=0.05)
    a = train_linear_svm(Dataset(X, y), cfg)
    b = train_linear_svm(Dataset(2.0 * X, y), cfg)
    agree = np.mean(a.decide(X) == b.decide(2.0 * X))
    assert agree == 1.0


# --------------------------------------------------------------------------
# MLP
# --------------------------------------------------------------------------


def numeric_grad(params, X, y, activation, l2, h=1e-5):
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up, _ = mlp_loss_and_grad(params, X, y, activation, l2)
            p[idx] = old - h
            down, _ = mlp_loss_and_grad(params, X, y, activation, l2)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(a, b):
    worst = 0.0
    for x, y in zip(a, b):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), 1e-7)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


@pytest.mark.parametrize("activation", ["relu", "sigmoid"])
def test_mlp_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(11)
    X = rng.standard_normal((5, 4))
    y = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
    params = init_mlp(4, MlpArchitecture((6, 5, 4), activation), seed=3)
    _, analytic = mlp_loss_and_grad(params, X, y, activation, l2=1e-2)
    numeric = numeric_grad(params, X, y, activation, l2=1e-2)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_mlp_represents_xor():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    # h1 = relu(x1 + x2) and h2 = relu(x1 + x2 - 1); output 10 h1 - 20 h2 - 5
    m = mlp_from_weights(
        2,
        [(np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([0.0, -1.0])), (np.array([[10.0], [-20.0]]), np.array([-5.0]))],
        "relu",
    )
    np.testing.assert_array_equal(m.decide(X), y)


def test_mlp_small_step_decreases_loss():
    d = make_dataset(n=30, seed=4)
    params = init_mlp(d.n_features, MlpArchitecture(), seed=0)
    y = d.labels.astype(float)
    before, grads = mlp_loss_and_grad(params, d.features, y, "relu", 1e-3)
    stepped = [p - 1e-3 * g for p, g in zip(params, grads)]
    after, _ = mlp_loss_and_grad(stepped, d.features, y, "relu", 1e-3)
    assert after < before


def test_mlp_non_finite_activation_names_layer():
    X = np.array([[10.0, 10.0]])
    params = [np.full((2, 2), 1e300), np.zeros(2), np.full((2, 1), 1e300), np.zeros(1)]
    with np.errstate(over="ignore"), pytest.raises(TrainingError, match="layer 1"):
        mlp_loss_and_grad(params, X, np.array([1.0]), "relu", 0.0)


def test_mlp_training_runs_and_is_deterministic():
    d = make_dataset(n=60, seed=6)
    cfg = TrainConfig(epochs=200)
    a = train_mlp(d, MlpArchitecture((8, 8)), cfg)
    b = train_mlp(d, MlpArchitecture((8, 8)), cfg)
    assert a.to_text() == b.to_text()
    hist = a.meta["loss_history"]
    assert hist[-1] < hist[0]
    assert np.all((a.raw_scores(d.features) >= 0) & (a.raw_scores(d.features) <= 1))


# --------------------------------------------------------------------------
# shared properties
# --------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 1.0))
def test_linear_objectives_are_convex(seed, lam):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((20, 3))
    y = rng.integers(0, 2, 20).astype(float)
    (w1, b1), (w2, b2) = [(rng.standard_normal(3) * 3, rng.standard_normal()) for _ in range(2)]
    for obj in (logistic_objective, hinge_objective):
        mid = obj(X, y, lam * w1 + (1 - lam) * w2, lam * b1 + (1 - lam) * b2, 0.1)
        assert mid <= lam * obj(X, y, w1, b1, 0.1) + (1 - lam) * obj(X, y, w2, b2, 0.1) + 1e-9


@pytest.mark.parametrize("family", ["logistic", "linear_svm"])
def test_training_is_bit_deterministic(family):
    d = make_dataset(n=50, seed=8)
    a, b = train_family(family, d), train_family(family, d)
    assert a.coef.tobytes() == b.coef.tobytes()
    assert a.intercept == b.intercept


def test_minibatch_is_seeded():
    d = make_dataset(n=50, seed=8)
    cfg = TrainConfig(batch_size=8, epochs=50, seed=3)
    assert train_logistic(d, cfg).coef.tobytes() == train_logistic(d, cfg).coef.tobytes()
    other = TrainConfig(batch_size=8, epochs=50, seed=4)
    assert train_logistic(d, cfg).coef.tobytes() != train_logistic(d, other).coef.tobytes()


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("family", ["logistic", "linear_svm"])
def test_linear_scores_follow_nonsensitive_part_within_group(seed, family):
    d = make_dataset(n=80, d=5, sensitive=(0, 1), seed=seed)
    m = train_family(family, d)
    k, _ = m.linear_parts(d.features)
    s = m.raw_scores(d.features)
    for g in np.unique(d.group_id):
        rows = np.flatnonzero(d.group_id == g)
        ki, kj = k[rows][:, None], k[rows][None, :]
        si, sj = s[rows][:, None], s[rows][None, :]
        assert not np.any((ki > kj) & (si < sj))
        assert not np.any((si > sj) & ~(ki > kj))


@pytest.mark.parametrize("family, obj", [("logistic", logistic_objective), ("linear_svm", hinge_objective)])
def test_full_model_fits_no_worse_than_omit_sensitive(family, obj):
    from fairmask import SyntheticSpec, synthesize

    d = synthesize(SyntheticSpec(n=400, seed=2))
    cfg = TrainConfig(epochs=5000)
    full = unconstrained(d, family, cfg)
    omit = omit_sensitive(d, family, cfg)
    y = d.labels
    full_loss = obj(d.features, y, full.coef, full.intercept, cfg.l2_penalty)
    reduced = d.features[:, list(d.non_sensitive_index)]
    omit_loss = obj(reduced, y, omit.coef, omit.intercept, cfg.l2_penalty)
    assert full_loss <= omit_loss + cfg.convergence_tol


def test_predict_scores_examples():
    d = make_dataset(n=12, seed=9)
    zero = ScoreModel(family="logistic", n_features=d.n_features, coef=np.zeros(d.n_features), intercept=0.0)
    np.testing.assert_array_equal(predict_scores(zero, d), np.full(12, 0.5))

    m = train_logistic(d)
    base = predict_scores(m, d)
    shifted = predict_scores(m.with_tau(0.2), d)
    np.testing.assert_array_equal(shifted, base + 0.2)

    perm = np.random.default_rng(0).permutation(12)
    np.testing.assert_array_equal(predict_scores(m, d.take(perm)), base[perm])


def test_predict_scores_width_mismatch():
    m = ScoreModel(family="logistic", n_features=3, coef=np.zeros(3))
    with pytest.raises(ValueError, match="expected width 3, got 2"):
        predict_scores(m, make_dataset(n=5, d=2))


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown family"):
        train_family("forest", make_dataset())
