"""Accuracy, admittance, group and latent discrimination, and kNN consistency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import Dataset, FairmaskError, FairnessReport, ScoreModel

__all__ = [
    "EvalFrame",
    "accuracy",
    "admittance",
    "group_discrimination",
    "latent_discrimination",
    "strict_latent_discrimination",
    "count_order_violations",
    "pair_subsample_ld",
    "knn_consistency",
    "frame_for",
    "fairness_report",
]


@dataclass(frozen=True, eq=False)
class EvalFrame:
    """Per-row inputs for every metric.

    ``reference_scores`` are the unmasked scores of the unconstrained model
    h*; ``candidate_scores`` are the scores of the model under evaluation.
    ``group`` identifies the joint sensitive-value combination of each row and
    ``protected`` comes from the designated sensitive column.
    """

    labels: np.ndarray
    predictions: np.ndarray
    group: np.ndarray
    protected: np.ndarray
    reference_scores: np.ndarray | None = None
    candidate_scores: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.labels)
        if n < 1:
            raise FairmaskError("EvalFrame needs at least one row")
        for name in ("labels", "predictions", "group", "protected", "reference_scores", "candidate_scores"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=bool if name == "protected" else None)
            if v.shape != (n,):
                raise FairmaskError(f"{name} has shape {v.shape}, expected ({n},)")
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return len(self.labels)


def accuracy(f: EvalFrame) -> float:
    return 1.0 - float(np.sum(np.abs(f.labels - f.predictions))) / f.n


def admittance(f: EvalFrame) -> tuple[float, float]:
    """Positive-prediction rate of the protected and unprotected groups."""
    p = f.protected
    n_p = int(p.sum())
    n_u = f.n - n_p
    if n_p == 0 or n_u == 0:
        raise FairmaskError("admittance needs both groups non-empty")
    return float(f.predictions[p].sum()) / n_p, float(f.predictions[~p].sum()) / n_u


def group_discrimination(f: EvalFrame) -> float:
    a1, a0 = admittance(f)
    return abs(a1 - a0)


# --------------------------------------------------------------------------
# latent discrimination
# --------------------------------------------------------------------------


def _discordant(ref: np.ndarray, cand: np.ndarray, strict: bool) -> int:
    """Pairs with ``ref_i > ref_j`` and ``cand_i < cand_j`` (``<=`` if strict).

    Rows are swept in increasing ``ref`` order, one tie block at a time, and a
    Fenwick tree over candidate ranks counts earlier rows with a larger (or,
    if strict, larger-or-equal) candidate score.
    """
    n = len(ref)
    if n < 2:
        return 0
    _, rank = np.unique(cand, return_inverse=True)
    rank = rank.reshape(-1)
    m = int(rank.max()) + 1
    tree = [0] * (m + 1)
    order = np.argsort(ref, kind="stable")
    sorted_ref = ref[order]
    starts = np.flatnonzero(np.r_[True, sorted_ref[1:] != sorted_ref[:-1]])
    ends = np.r_[starts[1:], n]
    inserted = 0
    total = 0
    for s, e in zip(starts, ends):
        block = rank[order[s:e]].tolist()
        for r in block:
            # inserted rows with rank > r (or >= r when strict), as a complement
            i = r if strict else r + 1
            c = 0
            while i > 0:
                c += tree[i]
                i -= i & -i
            total += inserted - c
        for r in block:
            i = r + 1
            while i <= m:
                tree[i] += 1
                i += i & -i
        inserted += len(block)
    return total


def _group_pairs(group: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    ids, inverse, counts = np.unique(group, return_inverse=True, return_counts=True)
    denom = int(np.sum(counts * (counts - 1) // 2))
    return ids, inverse.reshape(-1), denom


def count_order_violations(f: EvalFrame, strict: bool = False) -> tuple[int, int]:
    """(violating within-group pairs, total within-group pairs)."""
    if f.reference_scores is None or f.candidate_scores is None:
        raise FairmaskError("latent discrimination needs reference and candidate scores")
    ids, inverse, denom = _group_pairs(f.group)
    if denom == 0:
        raise FairmaskError("no within-group pairs")
    ref = np.asarray(f.reference_scores, dtype=float)
    cand = np.asarray(f.candidate_scores, dtype=float)
    total = 0
    for g in range(len(ids)):
        rows = np.flatnonzero(inverse == g)
        total += _discordant(ref[rows], cand[rows], strict)
    return total, denom


def latent_discrimination(f: EvalFrame) -> float:
    """Share of within-group pairs whose candidate order flips the h* order.

    A pair violates when ``h*(x_i) > h*(x_j)`` and ``h(x_i) < h(x_j)``. The
    denominator sums ``C(n_g, 2)`` over every group.
    """
    num, den = count_order_violations(f, strict=False)
    return num / den


def strict_latent_discrimination(f: EvalFrame) -> float:
    """As :func:`latent_discrimination`, but candidate ties also violate."""
    num, den = count_order_violations(f, strict=True)
    return num / den


def pair_subsample_ld(f: EvalFrame, pairs: int, seed: int = 0, strict: bool = False, chunk: int = 1_000_000) -> float:
    """Monte-Carlo estimate of latent discrimination from uniform within-group pairs.

    The standard error of the estimate ``p`` is ``sqrt(p * (1 - p) / pairs)``.
    """
    if pairs < 1:
        raise FairmaskError("pairs must be >= 1")
    if f.reference_scores is None or f.candidate_scores is None:
        raise FairmaskError("latent discrimination needs reference and candidate scores")
    ids, inverse, denom = _group_pairs(f.group)
    if denom == 0:
        raise FairmaskError("no within-group pairs")
    members = [np.flatnonzero(inverse == g) for g in range(len(ids))]
    sizes = np.array([len(m) for m in members])
    weights = sizes * (sizes - 1) / 2.0 / denom
    ref = np.asarray(f.reference_scores, dtype=float)
    cand = np.asarray(f.candidate_scores, dtype=float)
    offsets = np.r_[0, np.cumsum(sizes)[:-1]]
    flat = np.concatenate(members)
    rng = np.random.default_rng(seed)
    hits = 0
    left = pairs
    while left > 0:
        take = min(chunk, left)
        left -= take
        g = rng.choice(len(members), size=take, p=weights)
        hi = sizes[g]
        a = rng.integers(0, hi)
        b = rng.integers(0, hi - 1)
        b = b + (b >= a)
        i = flat[offsets[g] + a]
        j = flat[offsets[g] + b]
        ri, rj, ci, cj = ref[i], ref[j], cand[i], cand[j]
        if strict:
            bad = ((ri > rj) & (ci <= cj)) | ((rj > ri) & (cj <= ci))
        else:
            bad = ((ri > rj) & (ci < cj)) | ((rj > ri) & (cj < ci))
        hits += int(bad.sum())
    return hits / pairs


# --------------------------------------------------------------------------
# consistency
# --------------------------------------------------------------------------


def knn_consistency(f: EvalFrame, features, k: int, use_scores: bool = True, block: int = 512) -> np.ndarray:
    """Own value and mean value over the k nearest neighbours, one row per sample.

    ``features`` should hold the non-sensitive columns only. Distances are
    Euclidean, the sample itself is excluded and distance ties go to the lower
    row index. With ``use_scores`` the values are candidate scores, otherwise
    the 0/1 predictions.
    """
    X = np.asarray(features, dtype=float)
    n = X.shape[0]
    if X.ndim != 2 or n != f.n:
        raise FairmaskError("features must be a matrix with one row per frame row")
    if not 1 <= k < n:
        raise FairmaskError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    if use_scores:
        if f.candidate_scores is None:
            raise FairmaskError("candidate scores required when use_scores=True")
        values = np.asarray(f.candidate_scores, dtype=float)
    else:
        values = np.asarray(f.predictions, dtype=float)
    out = np.empty((n, 2))
    out[:, 0] = values
    for start in range(0, n, block):
        stop = min(n, start + block)
        d = cdist(X[start:stop], X, "sqeuclidean")
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        for r in range(stop - start):
            cand = np.flatnonzero(d[r] <= kth[r])
            nn = cand[np.argsort(d[r, cand], kind="stable")[:k]]
            out[start + r, 1] = values[nn].mean()
    return out


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------


def frame_for(model: ScoreModel, data: Dataset, reference: ScoreModel | None = None) -> EvalFrame:
    """Evaluation frame for ``model`` on ``data``.

    Candidate scores are taken before the offset ``tau``: a constant shift does
    not change any within-group ordering, and leaving it out avoids rounding
    ties introduced by the addition.
    """
    return EvalFrame(
        labels=data.labels,
        predictions=model.decide(data.features),
        group=data.group_id,
        protected=data.protected,
        reference_scores=None if reference is None else reference.raw_scores(data.features),
        candidate_scores=model.raw_scores(data.features),
    )


def fairness_report(
    algorithm: str,
    model: ScoreModel,
    data: Dataset,
    reference: ScoreModel | None,
    *,
    reference_is_self: bool = False,
    knn_k: int | None = None,
) -> FairnessReport:
    f = frame_for(model, data, reference)
    a1, a0 = admittance(f)
    ld = sld = None
    if not reference_is_self and reference is not None:
        ld = latent_discrimination(f)
        sld = strict_latent_discrimination(f)
    points = None
    if knn_k is not None:
        scored = EvalFrame(
            labels=f.labels,
            predictions=f.predictions,
            group=f.group,
            protected=f.protected,
            candidate_scores=model.predict_scores(data.features),
        )
        points = knn_consistency(scored, data.features[:, list(data.non_sensitive_index)], knn_k)
    return FairnessReport(
        algorithm=algorithm,
        accuracy=accuracy(f),
        admit_protected=a1,
        admit_unprotected=a0,
        group_discr=abs(a1 - a0),
        latent_discr=ld,
        strict_latent_discr=sld,
        consistency_points=points,
    )
