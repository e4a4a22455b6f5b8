"""From-scratch trainers: logistic regression, linear SVM and a small MLP.

All trainers default to full-batch gradient descent so that identical data and
configuration give bit-identical parameters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import Dataset, FairmaskError, ScoreModel, hidden_activation

__all__ = [
    "TrainConfig",
    "MlpArchitecture",
    "TrainingError",
    "train_logistic",
    "train_linear_svm",
    "train_mlp",
    "train_family",
    "predict_scores",
    "logistic_objective",
    "hinge_objective",
    "mlp_loss_and_grad",
    "init_mlp",
    "mlp_from_weights",
]


class TrainingError(FairmaskError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 2000
    l2_penalty: float = 1e-3
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    convergence_tol: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise FairmaskError("learning_rate must be positive")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise FairmaskError("epochs must be a positive integer")
        if not self.l2_penalty >= 0:
            raise FairmaskError("l2_penalty must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise FairmaskError("batch_size must be positive")
        if not self.convergence_tol > 0:
            raise FairmaskError("convergence_tol must be positive")

    def as_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "l2_penalty": self.l2_penalty,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "convergence_tol": self.convergence_tol,
        }


@dataclass(frozen=True)
class MlpArchitecture:
    hidden_layers: tuple[int, ...] = (16, 16, 16)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if not self.hidden_layers or any(h < 1 for h in self.hidden_layers):
            raise FairmaskError("need at least one hidden layer of positive width")
        if self.activation not in ("relu", "sigmoid"):
            raise FairmaskError(f"unknown activation {self.activation!r}")

    def as_dict(self) -> dict:
        return {"hidden_layers": list(self.hidden_layers), "activation": self.activation}


# --------------------------------------------------------------------------
# objectives
# --------------------------------------------------------------------------


def logistic_objective(X, y, w, b, l2) -> float:
    """Mean log-loss plus ``l2/2 * ||w||^2`` (intercept unpenalised)."""
    z = X @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))


def hinge_objective(X, y, w, b, l2) -> float:
    """Mean hinge loss on labels mapped to +-1, plus ``l2/2 * ||w||^2``."""
    s = 2.0 * y - 1.0
    z = X @ w + b
    return float(np.mean(np.maximum(0.0, 1.0 - s * z)) + 0.5 * l2 * (w @ w))


def _batches(n: int, cfg: TrainConfig, rng: np.random.Generator):
    if cfg.batch_size is None or cfg.batch_size >= n:
        yield slice(None)
        return
    order = rng.permutation(n)
    for start in range(0, n, cfg.batch_size):
        yield order[start:start + cfg.batch_size]


def _check_labels(train: Dataset, allow_degenerate: bool) -> None:
    if not allow_degenerate and len(np.unique(train.labels)) < 2:
        raise TrainingError(
            "training labels contain a single class; pass allow_degenerate=True to fit anyway"
        )


def _linear_model(family: str, train: Dataset, w, b, meta) -> ScoreModel:
    return ScoreModel(
        family=family,
        n_features=train.n_features,
        coef=w,
        intercept=b,
        sensitive_index=train.sensitive_index,
        meta=meta,
    )


def train_logistic(train: Dataset, cfg: TrainConfig | None = None, *, allow_degenerate: bool = False) -> ScoreModel:
    """L2-regularised logistic regression by gradient descent.

    Returns a model with ``score(x) = sigmoid(w.x + b)``.
    """
    cfg = cfg or TrainConfig()
    _check_labels(train, allow_degenerate)
    X = train.features
    y = train.labels.astype(float)
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    rng = np.random.default_rng(cfg.seed)
    prev = math.inf
    epochs_run = 0
    for epoch in range(cfg.epochs):
        for idx in _batches(n, cfg, rng):
            Xb, yb = X[idx], y[idx]
            r = expit(Xb @ w + b) - yb
            w = w - cfg.learning_rate * (Xb.T @ r / len(yb) + cfg.l2_penalty * w)
            b = b - cfg.learning_rate * float(np.mean(r))
        loss = logistic_objective(X, y, w, b, cfg.l2_penalty)
        epochs_run = epoch + 1
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}; lower the learning rate")
        if abs(prev - loss) < cfg.convergence_tol:
            break
        prev = loss
    return _linear_model("logistic", train, w, b, {"epochs_run": epochs_run, "final_loss": loss})


def train_linear_svm(train: Dataset, cfg: TrainConfig | None = None, *, allow_degenerate: bool = False) -> ScoreModel:
    """Linear SVM: L2-regularised hinge loss by subgradient descent.

    Steps have the constant size ``learning_rate``. Subgradient steps are not
    monotone, so the iterate with the lowest objective is returned.
    Scores are ``sigmoid(w.x + b)``, which keeps the order and maps the
    decision value 0 to 1/2.
    """
    cfg = cfg or TrainConfig()
    _check_labels(train, allow_degenerate)
    X = train.features
    y = train.labels.astype(float)
    s = 2.0 * y - 1.0
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    best = (hinge_objective(X, y, w, b, cfg.l2_penalty), w, b)
    rng = np.random.default_rng(cfg.seed)
    prev = math.inf
    epochs_run = 0
    for epoch in range(cfg.epochs):
        for idx in _batches(n, cfg, rng):
            Xb, sb = X[idx], s[idx]
            active = (sb * (Xb @ w + b)) < 1.0
            gw = -(Xb[active].T @ sb[active]) / len(sb) + cfg.l2_penalty * w
            gb = -float(np.sum(sb[active])) / len(sb)
            w = w - cfg.learning_rate * gw
            b = b - cfg.learning_rate * gb
        loss = hinge_objective(X, y, w, b, cfg.l2_penalty)
        epochs_run = epoch + 1
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}; lower the learning rate")
        if loss < best[0]:
            best = (loss, w, b)
        if abs(prev - loss) < cfg.convergence_tol:
            break
        prev = loss
    loss, w, b = best
    return _linear_model("linear_svm", train, w, b, {"epochs_run": epochs_run, "final_loss": loss})


# --------------------------------------------------------------------------
# MLP
# --------------------------------------------------------------------------


def init_mlp(n_in: int, arch: MlpArchitecture, seed: int) -> list[np.ndarray]:
    """Flat parameter list ``[W1, b1, ..., Wout, bout]``, uniform in +-1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    params = []
    fan_in = n_in
    for width in arch.hidden_layers + (1,):
        bound = 1.0 / math.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, width)))
        params.append(rng.uniform(-bound, bound, size=width))
        fan_in = width
    return params


def _act_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0).astype(float)
    return a * (1.0 - a)


def mlp_loss_and_grad(params, X, y, activation: str, l2: float):
    """Mean log-loss (+ ``l2/2`` times the squared weight norms) and its gradient.

    Raises
    ------
    TrainingError
        If a layer produces non-finite activations; the message names the layer.
    """
    n_layers = len(params) // 2
    acts = [X]
    pre = []
    a = X
    for i in range(n_layers):
        W, b = params[2 * i], params[2 * i + 1]
        z = a @ W + b
        if not np.all(np.isfinite(z)):
            raise TrainingError(f"non-finite activations in layer {i}")
        pre.append(z)
        a = z if i == n_layers - 1 else hidden_activation(z, activation)
        acts.append(a)
    z_out = acts[-1][:, 0]
    n = X.shape[0]
    penalty = sum(float(np.sum(params[2 * i] ** 2)) for i in range(n_layers))
    loss = float(np.mean(np.logaddexp(0.0, z_out) - y * z_out)) + 0.5 * l2 * penalty

    grads = [None] * len(params)
    delta = ((expit(z_out) - y) / n)[:, None]
    for i in reversed(range(n_layers)):
        W = params[2 * i]
        grads[2 * i] = acts[i].T @ delta + l2 * W
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W.T) * _act_grad(pre[i - 1], acts[i], activation)
    return loss, grads


def mlp_from_weights(n_features: int, layers, activation: str = "relu", **kw) -> ScoreModel:
    return ScoreModel(family="mlp", n_features=n_features, layers=tuple(layers), activation=activation, **kw)


def train_mlp(train: Dataset, arch: MlpArchitecture | None = None, cfg: TrainConfig | None = None) -> ScoreModel:
    arch = arch or MlpArchitecture()
    cfg = cfg or TrainConfig()
    X = train.features
    y = train.labels.astype(float)
    n = X.shape[0]
    params = init_mlp(X.shape[1], arch, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    prev = math.inf
    for epoch in range(cfg.epochs):
        batch_losses = []
        for idx in _batches(n, cfg, rng):
            loss, grads = mlp_loss_and_grad(params, X[idx], y[idx], arch.activation, cfg.l2_penalty)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}; lower the learning rate")
            batch_losses.append(loss)
            params = [p - cfg.learning_rate * g for p, g in zip(params, grads)]
        epoch_loss = float(np.mean(batch_losses))
        history.append(epoch_loss)
        if abs(prev - epoch_loss) < cfg.convergence_tol:
            break
        prev = epoch_loss

    notes = []
    tail = np.asarray(history[-max(2, len(history) // 10):])
    if len(tail) > 1 and np.any(np.diff(tail) > 1e-6):
        msg = "training loss increased during the final 10% of epochs"
        notes.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    layers = [(params[2 * i], params[2 * i + 1]) for i in range(len(params) // 2)]
    return mlp_from_weights(
        train.n_features,
        layers,
        arch.activation,
        sensitive_index=train.sensitive_index,
        warnings=tuple(notes),
        meta={"epochs_run": len(history), "final_loss": history[-1], "loss_history": history},
    )


def train_family(family: str, train: Dataset, cfg: TrainConfig | None = None, arch: MlpArchitecture | None = None) -> ScoreModel:
    """Dispatch on a family name (``svm`` is accepted for ``linear_svm``)."""
    if family == "logistic":
        return train_logistic(train, cfg)
    if family in ("linear_svm", "svm"):
        return train_linear_svm(train, cfg)
    if family == "mlp":
        return train_mlp(train, arch, cfg)
    raise FairmaskError(f"unknown family {family!r}")


def predict_scores(model: ScoreModel, d: Dataset) -> np.ndarray:
    """``score(x_i) + tau`` for every row of ``d``."""
    return model.predict_scores(d.features)
