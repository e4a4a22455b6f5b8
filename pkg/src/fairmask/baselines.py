"""Comparison algorithms: unconstrained h*, omit-sensitive, majority, data massaging."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Dataset, FairmaskError, ScoreModel
from .models import MlpArchitecture, TrainConfig, train_family, train_logistic

__all__ = [
    "MassageError",
    "MassagePlan",
    "unconstrained",
    "omit_sensitive",
    "majority",
    "plan_massage",
    "massage_labels",
    "massage",
]


class MassageError(FairmaskError):
    pass


def unconstrained(train: Dataset, family: str = "logistic", cfg: TrainConfig | None = None,
                  arch: MlpArchitecture | None = None) -> ScoreModel:
    """The accuracy-only model on all features; the h* reference for latent metrics."""
    return train_family(family, train, cfg, arch)


def omit_sensitive(train: Dataset, family: str = "logistic", cfg: TrainConfig | None = None,
                   arch: MlpArchitecture | None = None) -> ScoreModel:
    """Same family trained with the sensitive columns dropped.

    The returned model still takes full-width rows and simply never reads the
    sensitive columns.
    """
    reduced = train.drop_sensitive()
    model = train_family(family, reduced, cfg, arch)
    return replace(model, n_features=train.n_features, input_index=train.non_sensitive_index, sensitive_index=())


def majority(train: Dataset) -> ScoreModel:
    """Constant score 1 if positives are a strict majority, else constant 0."""
    pos = int(train.labels.sum())
    score = 1.0 if pos > train.n_rows - pos else 0.0
    return ScoreModel(family="constant", n_features=train.n_features, constant_score=score)


@dataclass(frozen=True)
class MassagePlan:
    """How many labels to flip on each side and which rows.

    ``promote_protected`` is True when the protected group has the lower
    positive rate: then protected negatives are promoted and unprotected
    positives demoted; otherwise the directions are reversed.
    """

    protected_flips: int
    unprotected_flips: int
    promote_protected: bool
    rows: tuple[int, ...]
    gap_before: float
    gap_after: float


def _flip_gap(pos_p, n_p, pos_u, n_u, a, b, promote_protected):
    sign = 1 if promote_protected else -1
    return abs((pos_p + sign * a) / n_p - (pos_u - sign * b) / n_u)


def plan_massage(labels, protected, scores) -> MassagePlan:
    """Choose flips that bring the two groups' positive rates closest.

    Candidates flip ``a`` protected and ``b`` unprotected labels with
    ``|a - b| <= 1``. The smallest resulting rate gap wins; ties go to fewer
    total flips, then to the protected side. Protected flips take the
    best-ranked negatives (or worst-ranked positives when demoting), and
    unprotected flips the opposite; ranking ties go to the lower row index.
    """
    y = np.asarray(labels).astype(int)
    p = np.asarray(protected, dtype=bool)
    s = np.asarray(scores, dtype=float)
    n_p, n_u = int(p.sum()), int((~p).sum())
    if n_p == 0 or n_u == 0:
        raise MassageError("massaging needs both groups present")
    pos_p, pos_u = int(y[p].sum()), int(y[~p].sum())
    promote = pos_p / n_p < pos_u / n_u
    idx = np.arange(len(y))
    if promote:
        cand_p = idx[p & (y == 0)]
        cand_p = cand_p[np.lexsort((cand_p, -s[cand_p]))]  # highest score first
        cand_u = idx[~p & (y == 1)]
        cand_u = cand_u[np.lexsort((cand_u, s[cand_u]))]  # lowest score first
    else:
        cand_p = idx[p & (y == 1)]
        cand_p = cand_p[np.lexsort((cand_p, s[cand_p]))]
        cand_u = idx[~p & (y == 0)]
        cand_u = cand_u[np.lexsort((cand_u, -s[cand_u]))]

    best = None
    for total in range(n_p + n_u + 1):
        options = {(total - total // 2, total // 2), (total // 2, total - total // 2)}
        for a, b in sorted(options, reverse=True):  # protected side first on ties
            gap = _flip_gap(pos_p, n_p, pos_u, n_u, a, b, promote)
            key = (gap, total, -a)
            if best is None or key < best[0]:
                best = (key, a, b)
    _, a, b = best
    short_p, short_u = a - len(cand_p), b - len(cand_u)
    if short_p > 0 or short_u > 0:
        raise MassageError(
            f"not enough flippable rows: need {a} protected and {b} unprotected, "
            f"short by {max(short_p, 0)} and {max(short_u, 0)}"
        )
    rows = tuple(int(r) for r in np.concatenate([cand_p[:a], cand_u[:b]]))
    return MassagePlan(
        protected_flips=a,
        unprotected_flips=b,
        promote_protected=bool(promote),
        rows=rows,
        gap_before=abs(pos_p / n_p - pos_u / n_u),
        gap_after=_flip_gap(pos_p, n_p, pos_u, n_u, a, b, promote),
    )


def massage_labels(train: Dataset, ranker_cfg: TrainConfig | None = None) -> tuple[Dataset, MassagePlan]:
    """Relabelled copy of ``train`` (the input is left untouched) and the flip plan."""
    if len(train.sensitive_index) != 1:
        raise MassageError("massaging supports exactly one sensitive column")
    ranker = train_logistic(train, ranker_cfg)
    plan = plan_massage(train.labels, train.protected, ranker.raw_scores(train.features))
    y = np.array(train.labels)
    rows = list(plan.rows)
    y[rows] = 1 - y[rows]
    return train.replace(labels=y), plan


def massage(train: Dataset, ranker_cfg: TrainConfig | None = None, family: str = "logistic",
            cfg: TrainConfig | None = None, arch: MlpArchitecture | None = None) -> ScoreModel:
    """Relabel with a logistic ranker, then retrain ``family`` on all features."""
    relabelled, plan = massage_labels(train, ranker_cfg)
    model = train_family(family, relabelled, cfg, arch)
    meta = dict(model.meta)
    meta["massage"] = {
        "protected_flips": plan.protected_flips,
        "unprotected_flips": plan.unprotected_flips,
        "promote_protected": plan.promote_protected,
        "gap_before": plan.gap_before,
        "gap_after": plan.gap_after,
    }
    return replace(model, meta=meta)
