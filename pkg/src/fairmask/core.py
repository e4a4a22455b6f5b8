"""Shared domain types: schemas, datasets, splits, score models and reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "FAMILIES",
    "FairmaskError",
    "DimensionError",
    "SplitError",
    "SensitiveColumn",
    "DatasetSchema",
    "Dataset",
    "Split",
    "ScoreModel",
    "FairnessReport",
    "decide",
    "split_indices",
    "split_dataset",
    "load_model",
    "save_model",
]

FAMILIES = ("logistic", "linear_svm", "mlp", "constant")
LINEAR_FAMILIES = ("logistic", "linear_svm")
THRESHOLD = 0.5


class FairmaskError(ValueError):
    """Base class for errors raised by this package."""


class DimensionError(FairmaskError):
    pass


class SplitError(FairmaskError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# Schema
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SensitiveColumn:
    """A sensitive attribute and the raw value every row is masked to.

    ``protected`` names the categorical level encoded as 1. Numeric sensitive
    columns are binarised with ``threshold`` instead: values ``<= threshold``
    are protected (e.g. German credit "age" at 25).
    """

    name: str
    mask_reference: str
    protected: str | None = None
    threshold: float | None = None


@dataclass(frozen=True)
class DatasetSchema:
    columns: tuple[tuple[str, str], ...]
    label_column: str
    positive_label: str
    sensitive_columns: tuple[SensitiveColumn, ...]
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple((str(n), str(k)) for n, k in self.columns))
        object.__setattr__(self, "sensitive_columns", tuple(self.sensitive_columns))
        names = [n for n, _ in self.columns]
        for _, kind in self.columns:
            if kind not in ("numeric", "categorical"):
                raise FairmaskError(f"unknown column kind {kind!r}")
        if not self.sensitive_columns:
            raise FairmaskError("schema needs at least one sensitive column")
        required = [self.label_column] + [s.name for s in self.sensitive_columns]
        for name in required:
            if names.count(name) != 1:
                raise FairmaskError(f"column {name!r} must appear exactly once in columns")
        if len(set(required)) != len(required):
            raise FairmaskError("label and sensitive columns must be distinct")
        kinds = dict(self.columns)
        for s in self.sensitive_columns:
            if kinds[s.name] == "numeric":
                if s.threshold is None:
                    raise FairmaskError(f"numeric sensitive column {s.name!r} needs a threshold")
                try:
                    float(s.mask_reference)
                except ValueError:
                    raise FairmaskError(
                        f"mask_reference {s.mask_reference!r} is not a value of numeric column {s.name!r}"
                    ) from None

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.columns)

    def kind(self, name: str) -> str:
        return dict(self.columns)[name]

    def sensitive(self, name: str) -> SensitiveColumn | None:
        for s in self.sensitive_columns:
            if s.name == name:
                return s
        return None

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "DatasetSchema":
        try:
            columns = tuple((c["name"], c["kind"]) for c in obj["columns"])
            sensitive = tuple(
                SensitiveColumn(
                    name=s["name"],
                    mask_reference=str(s["mask_reference"]),
                    protected=None if s.get("protected") is None else str(s["protected"]),
                    threshold=None if s.get("threshold") is None else float(s["threshold"]),
                )
                for s in obj["sensitive_columns"]
            )
            return cls(
                columns=columns,
                label_column=obj["label_column"],
                positive_label=str(obj["positive_label"]),
                sensitive_columns=sensitive,
                name=obj.get("name", "dataset"),
            )
        except KeyError as exc:
            raise FairmaskError(f"schema is missing key {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        sens = []
        for s in self.sensitive_columns:
            d = {"name": s.name, "mask_reference": s.mask_reference}
            if s.protected is not None:
                d["protected"] = s.protected
            if s.threshold is not None:
                d["threshold"] = s.threshold
            sens.append(d)
        return {
            "name": self.name,
            "columns": [{"name": n, "kind": k} for n, k in self.columns],
            "label_column": self.label_column,
            "positive_label": self.positive_label,
            "sensitive_columns": sens,
        }


# --------------------------------------------------------------------------
# Dataset and splits
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Numeric feature matrix with labels and sensitive-column bookkeeping.

    Parameters
    ----------
    features : array of shape (n, d)
        Preprocessed features, sensitive columns included.
    labels : array of shape (n,)
        Binary labels.
    sensitive_index : tuple of int
        Positions of the sensitive columns inside ``features``. May be empty
        for a dataset whose sensitive columns were dropped.
    feature_names : tuple of str, optional
    mask_values : tuple of float, optional
        Encoded mask reference per sensitive column.
    row_ids : array of shape (n,), optional
        Row provenance in the source table; defaults to ``arange(n)``.
    provenance : object, optional
        Free-form source information (raw values, file path, ...).
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive_index: tuple[int, ...] = ()
    feature_names: tuple[str, ...] | None = None
    mask_values: tuple[float, ...] | None = None
    row_ids: np.ndarray | None = None
    provenance: Any = field(default=None, repr=False)
    group_id: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {X.shape}")
        n, d = X.shape
        if n < 1:
            raise FairmaskError("dataset needs at least one row")
        y = np.asarray(self.labels)
        if y.shape != (n,):
            raise DimensionError(f"labels must have shape ({n},), got {y.shape}")
        if not np.all((y == 0) | (y == 1)):
            raise FairmaskError("labels must be 0/1")
        sens = tuple(int(i) for i in self.sensitive_index)
        if len(set(sens)) != len(sens) or any(i < 0 or i >= d for i in sens):
            raise DimensionError(f"sensitive_index {sens} invalid for width {d}")
        if not np.all(np.isfinite(X)):
            raise FairmaskError("features must be finite")
        if self.feature_names is not None and len(self.feature_names) != d:
            raise DimensionError("feature_names length does not match feature width")
        if self.mask_values is not None and len(self.mask_values) != len(sens):
            raise DimensionError("one mask value per sensitive column required")
        row_ids = np.arange(n) if self.row_ids is None else np.asarray(self.row_ids)
        if row_ids.shape != (n,):
            raise DimensionError("row_ids length does not match row count")

        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y, dtype=np.int64))
        object.__setattr__(self, "sensitive_index", sens)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.mask_values is not None:
            object.__setattr__(self, "mask_values", tuple(float(v) for v in self.mask_values))
        object.__setattr__(self, "row_ids", _frozen(row_ids, dtype=np.int64))
        if sens:
            _, inverse = np.unique(X[:, list(sens)], axis=0, return_inverse=True)
            gid = inverse.reshape(-1)
        else:
            gid = np.zeros(n, dtype=np.int64)
        object.__setattr__(self, "group_id", _frozen(gid, dtype=np.int64))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def non_sensitive_index(self) -> tuple[int, ...]:
        s = set(self.sensitive_index)
        return tuple(i for i in range(self.n_features) if i not in s)

    @property
    def sensitive_values(self) -> np.ndarray:
        return self.features[:, list(self.sensitive_index)]

    @property
    def protected(self) -> np.ndarray:
        """Boolean flag from the first (designated) sensitive column."""
        if not self.sensitive_index:
            raise FairmaskError("dataset has no sensitive column")
        return self.features[:, self.sensitive_index[0]] == 1.0

    def replace(self, **changes) -> "Dataset":
        kw = {
            "features": self.features,
            "labels": self.labels,
            "sensitive_index": self.sensitive_index,
            "feature_names": self.feature_names,
            "mask_values": self.mask_values,
            "row_ids": self.row_ids,
            "provenance": self.provenance,
        }
        kw.update(changes)
        return Dataset(**kw)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return self.replace(
            features=self.features[rows], labels=self.labels[rows], row_ids=self.row_ids[rows]
        )

    def drop_sensitive(self) -> "Dataset":
        keep = list(self.non_sensitive_index)
        if not keep:
            raise FairmaskError("dataset has no non-sensitive columns")
        names = None if self.feature_names is None else tuple(self.feature_names[i] for i in keep)
        return self.replace(
            features=self.features[:, keep], sensitive_index=(), feature_names=names, mask_values=None
        )


@dataclass(frozen=True, eq=False)
class Split:
    train: Dataset
    validation: Dataset
    test: Dataset
    seed: int


def _apportion(total: int, weights: Sequence[float]) -> np.ndarray:
    """Integer counts summing to ``total`` by largest remainder."""
    raw = total * np.asarray(weights, dtype=float)
    counts = np.floor(raw + 1e-9).astype(int)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def split_indices(labels, fractions: Sequence[float], seed: int) -> tuple[np.ndarray, ...]:
    """Stratified, seeded row indices for a three-way split.

    Part sizes come from the fractions (largest remainder); each part then
    receives ``floor`` or ``ceil`` of its share of the positive rows, so its
    positive rate is within ``1/len(part)`` of the source rate.
    """
    y = np.asarray(labels)
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three positive numbers summing to 1, got {tuple(fractions)}")
    n = len(y)
    sizes = _apportion(n, fr)
    if np.any(sizes == 0):
        raise SplitError(f"empty split part (n={n}, sizes={tuple(int(s) for s in sizes)})")
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y != 1)
    n_pos = _apportion(len(pos), sizes / n)
    rng = np.random.default_rng(seed)
    pos = rng.permutation(pos)
    neg = rng.permutation(neg)
    parts = []
    p0 = q0 = 0
    for size, k in zip(sizes, n_pos):
        rows = np.concatenate([pos[p0:p0 + k], neg[q0:q0 + size - k]])
        p0 += k
        q0 += size - k
        parts.append(np.sort(rows))
    return tuple(parts)


def split_dataset(d: Dataset, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> Split:
    tr, va, te = split_indices(d.labels, fractions, seed)
    return Split(train=d.take(tr), validation=d.take(va), test=d.take(te), seed=seed)


# --------------------------------------------------------------------------
# Score models
# --------------------------------------------------------------------------

_ACTIVATIONS = ("relu", "sigmoid")


def hidden_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return expit(z)


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """A trained scoring function with an additive decision offset ``tau``.

    Linear families keep ``coef``/``intercept`` (over the model's input
    columns). The MLP keeps ``layers`` as ``(W, b)`` pairs with ``W`` of shape
    ``(fan_in, fan_out)``; the output unit is a logistic link. ``constant``
    models emit ``constant_score`` everywhere.

    ``input_index`` selects which columns of the dataset the model reads
    (``None`` means all). ``mask_index``/``mask_values`` overwrite columns of
    the incoming rows before anything else happens.
    """

    family: str
    n_features: int
    coef: np.ndarray | None = None
    intercept: float = 0.0
    layers: tuple = ()
    activation: str = "relu"
    constant_score: float | None = None
    tau: float = 0.0
    sensitive_index: tuple[int, ...] = ()
    input_index: tuple[int, ...] | None = None
    mask_index: tuple[int, ...] = ()
    mask_values: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise FairmaskError(f"unknown model family {self.family!r}")
        width = self.n_input
        if self.family in LINEAR_FAMILIES:
            if self.coef is None:
                raise FairmaskError("linear model needs coef")
            coef = _frozen(self.coef)
            if coef.shape != (width,):
                raise DimensionError(f"coef has shape {coef.shape}, expected ({width},)")
            object.__setattr__(self, "coef", coef)
            object.__setattr__(self, "intercept", float(self.intercept))
        elif self.family == "mlp":
            if not self.layers:
                raise FairmaskError("mlp model needs layers")
            if self.activation not in _ACTIVATIONS:
                raise FairmaskError(f"unknown activation {self.activation!r}")
            layers = tuple((_frozen(W), _frozen(b)) for W, b in self.layers)
            fan_in = width
            for W, b in layers:
                if W.ndim != 2 or W.shape[0] != fan_in or b.shape != (W.shape[1],):
                    raise DimensionError("inconsistent mlp layer shapes")
                fan_in = W.shape[1]
            if fan_in != 1:
                raise DimensionError("mlp output layer must have a single unit")
            object.__setattr__(self, "layers", layers)
        else:
            if self.constant_score is None or not 0.0 <= self.constant_score <= 1.0:
                raise FairmaskError("constant model needs constant_score in [0, 1]")
            object.__setattr__(self, "constant_score", float(self.constant_score))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "sensitive_index", tuple(int(i) for i in self.sensitive_index))
        if self.input_index is not None:
            object.__setattr__(self, "input_index", tuple(int(i) for i in self.input_index))
        object.__setattr__(self, "mask_index", tuple(int(i) for i in self.mask_index))
        object.__setattr__(self, "mask_values", tuple(float(v) for v in self.mask_values))
        if len(self.mask_index) != len(self.mask_values):
            raise DimensionError("mask_index and mask_values differ in length")
        if any(i < 0 or i >= self.n_features for i in self.mask_index):
            raise DimensionError("mask_index out of range")
        if any(i < 0 or i >= width for i in self.sensitive_index):
            raise DimensionError("sensitive_index out of range")
        object.__setattr__(self, "warnings", tuple(self.warnings))
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n_input(self) -> int:
        return self.n_features if self.input_index is None else len(self.input_index)

    @property
    def is_linear(self) -> bool:
        return self.family in LINEAR_FAMILIES

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError(f"expected a 2-D feature matrix, got shape {X.shape}")
        if X.shape[1] != self.n_features:
            raise DimensionError(f"expected width {self.n_features}, got {X.shape[1]}")
        return X

    def linear_parts(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Split the decision value into (non-sensitive part, sensitive part + intercept).

        Both parts are row-wise reductions, so a row's value does not depend on
        the other rows in the batch.
        """
        if not self.is_linear:
            raise FairmaskError("linear_parts needs a linear model")
        X = self._prepare(self._check(X))
        sens = list(self.sensitive_index)
        rest = [i for i in range(self.n_input) if i not in set(sens)]
        k = (X[:, rest] * self.coef[rest]).sum(axis=1)
        c = (X[:, sens] * self.coef[sens]).sum(axis=1) + self.intercept
        return k, c

    def _prepare(self, X: np.ndarray) -> np.ndarray:
        if self.mask_index:
            X = X.copy()
            X[:, list(self.mask_index)] = self.mask_values
        if self.input_index is not None:
            X = X[:, list(self.input_index)]
        return X

    def raw_scores(self, X) -> np.ndarray:
        """Scores in [0, 1] before the offset ``tau``."""
        X = self._check(X)
        if self.is_linear:
            k, c = self.linear_parts(X)
            return np.clip(expit(k + c), 0.0, 1.0)
        if self.family == "constant":
            return np.full(X.shape[0], self.constant_score)
        a = self._prepare(X)
        for i, (W, b) in enumerate(self.layers):
            z = a @ W + b
            a = z if i == len(self.layers) - 1 else hidden_activation(z, self.activation)
        return np.clip(expit(a[:, 0]), 0.0, 1.0)

    def predict_scores(self, X) -> np.ndarray:
        return self.raw_scores(X) + self.tau

    def decide(self, X) -> np.ndarray:
        return (self.predict_scores(X) > THRESHOLD).astype(np.int64)

    def with_tau(self, tau: float) -> "ScoreModel":
        return replace(self, tau=tau)

    def with_mask(self, index: Sequence[int], values: Sequence[float]) -> "ScoreModel":
        return replace(self, mask_index=tuple(index), mask_values=tuple(values))

    def unmasked(self) -> "ScoreModel":
        return replace(self, mask_index=(), mask_values=(), tau=0.0)

    # ---- serialization ---------------------------------------------------

    def to_text(self) -> str:
        def fl(v) -> str:
            return repr(float(v))

        def ints(seq) -> str:
            return " ".join(str(int(i)) for i in seq)

        lines = [
            "format: fairmask-score-model",
            "version: 1",
            f"family: {self.family}",
            f"n_features: {self.n_features}",
            f"tau: {fl(self.tau)}",
            f"sensitive_index: {ints(self.sensitive_index)}",
            f"input_index: {'all' if self.input_index is None else ints(self.input_index)}",
            f"mask_index: {ints(self.mask_index)}",
            f"mask_values: {' '.join(fl(v) for v in self.mask_values)}",
        ]
        if self.is_linear:
            lines.append(f"intercept: {fl(self.intercept)}")
            lines.append(f"coef: {' '.join(fl(v) for v in self.coef)}")
        elif self.family == "mlp":
            lines.append(f"activation: {self.activation}")
            lines.append(f"n_layers: {len(self.layers)}")
            for i, (W, b) in enumerate(self.layers):
                lines.append(f"layer.{i}.shape: {W.shape[0]} {W.shape[1]}")
                lines.append(f"layer.{i}.weights: {' '.join(fl(v) for v in W.ravel(order='C'))}")
                lines.append(f"layer.{i}.bias: {' '.join(fl(v) for v in b)}")
        else:
            lines.append(f"constant_score: {fl(self.constant_score)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScoreModel":
        kv = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition(":")
            if not sep:
                raise FairmaskError(f"malformed model line {line!r}")
            kv[key.strip()] = value.strip()
        if kv.get("format") != "fairmask-score-model":
            raise FairmaskError("not a fairmask score model")
        if kv.get("version") != "1":
            raise FairmaskError(f"unsupported model version {kv.get('version')!r}")

        def floats(key):
            return [float(t) for t in kv[key].split()]

        def ints(key):
            return [int(t) for t in kv[key].split()]

        family = kv["family"]
        kw = dict(
            family=family,
            n_features=int(kv["n_features"]),
            tau=float(kv["tau"]),
            sensitive_index=ints("sensitive_index"),
            input_index=None if kv["input_index"] == "all" else ints("input_index"),
            mask_index=ints("mask_index"),
            mask_values=floats("mask_values"),
        )
        if family in LINEAR_FAMILIES:
            kw.update(intercept=float(kv["intercept"]), coef=floats("coef"))
        elif family == "mlp":
            layers = []
            for i in range(int(kv["n_layers"])):
                r, c = (int(t) for t in kv[f"layer.{i}.shape"].split())
                W = np.array(floats(f"layer.{i}.weights")).reshape(r, c)
                layers.append((W, np.array(floats(f"layer.{i}.bias"))))
            kw.update(layers=tuple(layers), activation=kv["activation"])
        else:
            kw.update(constant_score=float(kv["constant_score"]))
        return cls(**kw)


def save_model(model: ScoreModel, path) -> None:
    Path(path).write_text(model.to_text())


def load_model(path) -> ScoreModel:
    return ScoreModel.from_text(Path(path).read_text())


def decide(model: ScoreModel, x) -> int | np.ndarray:
    """Threshold-1/2 decision: 1 iff ``score(x) + tau > 1/2``.

    A single feature vector returns an int; a matrix returns an array.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != model.n_features:
            raise DimensionError(f"expected width {model.n_features}, got {x.shape[0]}")
        return int(model.decide(x[None, :])[0])
    return model.decide(x)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FairnessReport:
    algorithm: str
    accuracy: float
    admit_protected: float
    admit_unprotected: float
    group_discr: float
    latent_discr: float | None = None
    strict_latent_discr: float | None = None
    consistency_points: np.ndarray | None = field(default=None, repr=False, compare=False)
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("accuracy", "admit_protected", "admit_unprotected", "group_discr"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise FairmaskError(f"{name}={v} outside [0, 1]")

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "admit_protected": self.admit_protected,
            "admit_unprotected": self.admit_unprotected,
            "group_discr": self.group_discr,
            "latent_discr": self.latent_discr,
            "strict_latent_discr": self.strict_latent_discr,
            **dict(self.extra),
        }
