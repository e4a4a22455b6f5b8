"""Train-then-mask: masking, offset selection, offset sweeps and Pareto fronts."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import THRESHOLD, Dataset, DimensionError, FairmaskError, ScoreModel
from .models import MlpArchitecture, TrainConfig, train_family

__all__ = [
    "MaskSpec",
    "SweepPoint",
    "TauSweepResult",
    "mask",
    "default_tau_grid",
    "tau_grid_values",
    "select_tau",
    "train_then_mask",
    "pareto_flags",
    "tau_sweep",
]

Grid = tuple  # (lo, hi, count)


@dataclass(frozen=True)
class MaskSpec:
    """Sensitive column positions and the encoded value each is fixed to."""

    sensitive_index: tuple[int, ...]
    reference_values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "sensitive_index", tuple(int(i) for i in self.sensitive_index))
        object.__setattr__(self, "reference_values", tuple(float(v) for v in self.reference_values))
        if len(self.sensitive_index) != len(self.reference_values):
            raise FairmaskError("one reference value per sensitive column required")
        if not self.sensitive_index:
            raise FairmaskError("mask needs at least one sensitive column")
        if not np.all(np.isfinite(self.reference_values)):
            raise FairmaskError("reference values must be finite")

    @classmethod
    def from_dataset(cls, d: Dataset, reference_values: Sequence[float] | None = None) -> "MaskSpec":
        if reference_values is None:
            reference_values = d.mask_values if d.mask_values is not None else (0.0,) * len(d.sensitive_index)
        return cls(d.sensitive_index, tuple(reference_values))

    def check(self, d: Dataset) -> None:
        if any(i < 0 or i >= d.n_features for i in self.sensitive_index):
            raise DimensionError(f"mask index {self.sensitive_index} out of range for width {d.n_features}")
        if set(self.sensitive_index) != set(d.sensitive_index):
            raise FairmaskError(
                f"mask index {self.sensitive_index} does not match dataset sensitive columns {d.sensitive_index}"
            )

    def apply_to(self, model: ScoreModel) -> ScoreModel:
        return model.with_mask(self.sensitive_index, self.reference_values)


def mask(d: Dataset, spec: MaskSpec) -> Dataset:
    """Copy of ``d`` with every sensitive column overwritten by its reference value."""
    spec.check(d)
    X = np.array(d.features)
    X[:, list(spec.sensitive_index)] = spec.reference_values
    return d.replace(features=X)


# --------------------------------------------------------------------------
# offset selection
# --------------------------------------------------------------------------


def default_tau_grid(model: ScoreModel, validation: Dataset, spec: MaskSpec, count: int = 101) -> Grid:
    """Grid spanning ``[1/2 - max score, 1/2 - min score]`` of the masked validation scores."""
    s = spec.apply_to(model).raw_scores(validation.features)
    lo, hi = THRESHOLD - float(s.max()), THRESHOLD - float(s.min())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return (lo, hi, count)


def tau_grid_values(grid: Grid) -> np.ndarray:
    lo, hi, count = grid
    if int(count) < 1 or (int(count) < 2 and lo != hi):
        raise FairmaskError(f"tau grid needs count >= 2, got {count}")
    if hi < lo:
        raise FairmaskError("tau grid needs lo <= hi")
    return np.linspace(float(lo), float(hi), int(count))


def _accuracies(scores: np.ndarray, labels: np.ndarray, taus: np.ndarray) -> np.ndarray:
    out = np.empty(len(taus))
    for i, t in enumerate(taus):
        out[i] = np.mean((scores + t > THRESHOLD) == (labels == 1))
    return out


def _best_index(acc: np.ndarray, taus: np.ndarray) -> int:
    # highest accuracy, then smallest |tau|, then smaller tau
    return int(np.lexsort((taus, np.abs(taus), -acc))[0])


def select_tau(model: ScoreModel, validation: Dataset, spec: MaskSpec, grid: Grid | None = None) -> float:
    """Grid offset maximising masked validation accuracy.

    Ties go to the offset of smallest absolute value, then the smaller one.
    """
    if validation.n_rows == 0:
        raise FairmaskError("empty validation set")
    spec.check(validation)
    if grid is None:
        grid = default_tau_grid(model, validation, spec)
    taus = tau_grid_values(grid)
    s = spec.apply_to(model).raw_scores(validation.features)
    acc = _accuracies(s, validation.labels, taus)
    return float(taus[_best_index(acc, taus)])


def train_then_mask(
    train: Dataset,
    validation: Dataset,
    spec: MaskSpec,
    family: str = "logistic",
    cfg: TrainConfig | None = None,
    grid: Grid | None = None,
    arch: MlpArchitecture | None = None,
    h_star: ScoreModel | None = None,
) -> ScoreModel:
    """Train h* on all features, mask the sensitive columns, pick the offset.

    Pass an already trained ``h_star`` to skip the first step. The returned
    model masks its inputs itself, so its decisions never depend on the
    sensitive columns; ``model.unmasked()`` recovers h*.
    """
    spec.check(train)
    spec.check(validation)
    if validation.n_features != train.n_features:
        raise DimensionError("train and validation widths differ")
    if h_star is None:
        h_star = train_family(family, train, cfg, arch)
    tau = select_tau(h_star, validation, spec, grid)
    model = spec.apply_to(h_star).with_tau(tau)
    return model


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------


def pareto_flags(accuracy, discrimination) -> np.ndarray:
    """Non-dominated flags for (maximise accuracy, minimise discrimination).

    ``q`` dominates ``p`` when it is at least as good on both coordinates and
    strictly better on one; identical points never dominate each other.
    """
    acc = np.asarray(accuracy, dtype=float)
    gd = np.asarray(discrimination, dtype=float)
    order = np.lexsort((gd, -acc))
    flags = np.zeros(len(acc), dtype=bool)
    best_prev = np.inf  # smallest discrimination among strictly more accurate points
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and acc[order[j]] == acc[order[i]]:
            j += 1
        block = order[i:j]
        block_min = gd[block[0]]
        for p in block:
            flags[p] = gd[p] == block_min and best_prev > gd[p]
        best_prev = min(best_prev, block_min)
        i = j
    return flags


@dataclass(frozen=True)
class SweepPoint:
    tau: float
    accuracy: float
    group_discr: float
    on_frontier: bool
    group_discr_by_column: tuple[float, ...] = ()


@dataclass(frozen=True)
class TauSweepResult:
    points: tuple[SweepPoint, ...]
    tau_star: float
    grid_spec: Grid

    COLUMNS = ("tau", "accuracy", "group_discr", "on_frontier")

    @property
    def star(self) -> SweepPoint:
        return next(p for p in self.points if p.tau == self.tau_star)

    def to_csv(self, dest=None, marker: bool = False) -> str:
        """Delimited export; ``marker`` appends a ``tau_star`` row and a marker column."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS + (("marker",) if marker else ()))
        for p in self.points:
            row = [repr(p.tau), repr(p.accuracy), repr(p.group_discr), int(p.on_frontier)]
            w.writerow(row + ([""] if marker else []))
        if marker:
            p = self.star
            w.writerow([repr(p.tau), repr(p.accuracy), repr(p.group_discr), int(p.on_frontier), "tau_star"])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


def _column_gaps(decisions: np.ndarray, sens: np.ndarray) -> tuple[float, ...]:
    gaps = []
    for c in range(sens.shape[1]):
        prot = sens[:, c] == 1.0
        if prot.all() or not prot.any():
            raise FairmaskError("group discrimination undefined: a group is absent from eval data")
        gaps.append(abs(decisions[prot].mean() - decisions[~prot].mean()))
    return tuple(float(g) for g in gaps)


def tau_sweep(model: ScoreModel, eval_data: Dataset, spec: MaskSpec, grid: Grid | None = None) -> TauSweepResult:
    """Accuracy and group discrimination of the masked model at every grid offset.

    Decisions come from masked scores; groups come from the original,
    unmasked sensitive values of ``eval_data``. With several sensitive columns
    ``group_discr`` is the gap for the first one and all per-column gaps are
    kept in ``group_discr_by_column``.
    """
    spec.check(eval_data)
    if grid is None:
        grid = default_tau_grid(model, eval_data, spec)
    taus = tau_grid_values(grid)
    if len(taus) < 2:
        raise FairmaskError("tau sweep needs at least two grid points")
    s = spec.apply_to(model).raw_scores(eval_data.features)
    sens = eval_data.sensitive_values
    y = eval_data.labels
    accs, gaps = [], []
    for t in taus:
        dec = (s + t > THRESHOLD).astype(float)
        accs.append(float(np.mean(dec == y)))
        gaps.append(_column_gaps(dec, sens))
    accs = np.array(accs)
    first = np.array([g[0] for g in gaps])
    flags = pareto_flags(accs, first)
    points = tuple(
        SweepPoint(float(t), float(a), float(g[0]), bool(f), g)
        for t, a, g, f in zip(taus, accs, gaps, flags)
    )
    star = float(taus[_best_index(accs, taus)])
    return TauSweepResult(points=points, tau_star=star, grid_spec=tuple(grid))
