"""CSV ingestion, schema-driven preprocessing, bundled fixtures and a synthetic generator."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .core import Dataset, DatasetSchema, FairmaskError

__all__ = [
    "DataError",
    "MissingColumnError",
    "ParseError",
    "EmptyFileError",
    "UnseenLevelError",
    "RawTable",
    "PreprocessPlan",
    "SyntheticSpec",
    "load_schema",
    "save_schema",
    "bundled_schema",
    "load_csv",
    "preprocess",
    "toy_table2",
    "toy_table2_path",
    "synthesize",
    "synthetic_table",
    "write_csv",
]

MISSING = frozenset({"", "?", "NA", "N/A", "nan", "NaN"})


class DataError(FairmaskError):
    pass


class MissingColumnError(DataError):
    pass


class ParseError(DataError):
    pass


class EmptyFileError(DataError):
    pass


class UnseenLevelError(DataError):
    pass


# --------------------------------------------------------------------------
# schema files
# --------------------------------------------------------------------------


def load_schema(path) -> DatasetSchema:
    with open(path) as fh:
        return DatasetSchema.from_dict(json.load(fh))


def save_schema(schema: DatasetSchema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


def bundled_schema(name: str) -> DatasetSchema:
    """One of the shipped schemas: ``adult``, ``german``, ``compas`` or ``toy_table2``."""
    ref = resources.files("fairmask") / "resources" / f"{name}.schema.json"
    return DatasetSchema.from_dict(json.loads(ref.read_text()))


# --------------------------------------------------------------------------
# raw tables
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RawTable:
    """Typed columns of a CSV file restricted to the schema's columns.

    Numeric columns are float arrays, categorical columns are arrays of str.
    """

    columns: dict[str, np.ndarray]
    row_ids: np.ndarray
    n_parsed: int
    n_dropped: int
    source: str | None = None

    @property
    def n_rows(self) -> int:
        return len(self.row_ids)

    def take(self, rows) -> "RawTable":
        rows = np.asarray(rows)
        return RawTable(
            {k: v[rows] for k, v in self.columns.items()},
            self.row_ids[rows],
            n_parsed=len(rows),
            n_dropped=0,
            source=self.source,
        )


def load_csv(path, schema: DatasetSchema) -> RawTable:
    """Read a comma-separated file with a header row.

    Columns not in the schema are ignored and header order does not matter.
    Rows with a missing value (empty, ``?``, ``NA``...) in a schema column are
    dropped with a warning that states how many.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyFileError(f"{path} is empty") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFileError(f"{path} has a header but no data rows")
    pos = {}
    for name in schema.column_names:
        if name not in header:
            raise MissingColumnError(f"column {name!r} missing from {path}")
        pos[name] = header.index(name)

    keep, ids = [], []
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ParseError(f"{path} line {i + 2}: expected {len(header)} fields, got {len(r)}")
        vals = [r[pos[n]].strip() for n in schema.column_names]
        if any(v in MISSING for v in vals):
            continue
        keep.append(vals)
        ids.append(i)
    dropped = len(rows) - len(keep)
    if dropped:
        warnings.warn(f"dropped {dropped} of {len(rows)} rows with missing values", stacklevel=2)
    if not keep:
        raise EmptyFileError(f"{path}: every row has missing values")

    cols: dict[str, np.ndarray] = {}
    for j, (name, kind) in enumerate(schema.columns):
        raw = [v[j] for v in keep]
        if kind == "numeric":
            out = np.empty(len(raw))
            for k, v in enumerate(raw):
                try:
                    out[k] = float(v)
                except ValueError:
                    raise ParseError(f"{path} line {ids[k] + 2}: column {name!r} value {v!r} is not numeric") from None
            cols[name] = out
        else:
            cols[name] = np.array(raw, dtype=object)
    return RawTable(cols, np.asarray(ids), n_parsed=len(rows), n_dropped=dropped, source=str(path))


def write_csv(columns: dict[str, Any], path, order=None) -> None:
    order = list(order or columns)
    n = len(next(iter(columns.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(order)
        for i in range(n):
            w.writerow([_fmt(columns[c][i]) for c in order])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PreprocessPlan:
    """Frozen per-column encoding fitted on a training table.

    Each step is a dict with ``name`` and ``action``:

    * ``standardize``: ``mean``, ``sd`` (``sd == 0`` encodes as zeros)
    * ``onehot``: ``levels`` in order of first appearance
    * ``sensitive``: ``protected`` level or numeric ``threshold``, plus ``mask_value``
    """

    steps: tuple[dict, ...]
    label_column: str
    positive_label: str
    version: int = 1

    def feature_names(self) -> tuple[str, ...]:
        names = []
        for st in self.steps:
            if st["action"] == "onehot":
                names.extend(f"{st['name']}={lv}" for lv in st["levels"])
            else:
                names.append(st["name"])
        return tuple(names)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "fairmask-preprocess-plan",
                "version": self.version,
                "label_column": self.label_column,
                "positive_label": self.positive_label,
                "steps": list(self.steps),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PreprocessPlan":
        obj = json.loads(text)
        if obj.get("format") != "fairmask-preprocess-plan" or obj.get("version") != 1:
            raise DataError("not a version-1 fairmask preprocess plan")
        return cls(tuple(obj["steps"]), obj["label_column"], obj["positive_label"])


def _encode_sensitive(values: np.ndarray, step: dict) -> np.ndarray:
    if step.get("threshold") is not None:
        return (values.astype(float) <= step["threshold"]).astype(float)
    return (values == step["protected"]).astype(float)


def _fit_plan(table: RawTable, schema: DatasetSchema) -> PreprocessPlan:
    steps = []
    for name, kind in schema.columns:
        if name == schema.label_column:
            continue
        col = table.columns[name]
        sens = schema.sensitive(name)
        if sens is not None:
            step: dict[str, Any] = {"name": name, "action": "sensitive"}
            if kind == "numeric":
                step["threshold"] = float(sens.threshold)
                step["mask_value"] = float(float(sens.mask_reference) <= sens.threshold)
            else:
                levels = list(dict.fromkeys(col.tolist()))
                if sens.mask_reference not in levels:
                    raise DataError(f"mask_reference {sens.mask_reference!r} is not a level of {name!r}")
                protected = sens.protected
                if protected is None:
                    if set(levels) <= {"0", "1"}:
                        protected = "1"
                    else:
                        raise DataError(f"sensitive column {name!r} needs an explicit protected level")
                step["protected"] = protected
                step["levels"] = levels
                step["mask_value"] = float(sens.mask_reference == protected)
            steps.append(step)
        elif kind == "numeric":
            mean = float(np.mean(col))
            sd = float(np.std(col))
            if sd == 0.0:
                warnings.warn(f"column {name!r} has zero variance; encoded as zeros", stacklevel=3)
            steps.append({"name": name, "action": "standardize", "mean": mean, "sd": sd})
        else:
            steps.append({"name": name, "action": "onehot", "levels": list(dict.fromkeys(col.tolist()))})
    return PreprocessPlan(tuple(steps), schema.label_column, schema.positive_label)


def preprocess(table: RawTable, schema: DatasetSchema, plan: PreprocessPlan | None = None) -> tuple[Dataset, PreprocessPlan]:
    """Encode a raw table; fits the plan on ``table`` when ``plan`` is None.

    Fit only on the training split: validation and test must reuse its plan.
    """
    if plan is None:
        plan = _fit_plan(table, schema)
    blocks, sens_index, mask_values = [], [], []
    width = 0
    for st in plan.steps:
        col = table.columns[st["name"]]
        if st["action"] == "standardize":
            x = np.zeros(len(col)) if st["sd"] == 0.0 else (col.astype(float) - st["mean"]) / st["sd"]
            blocks.append(x[:, None])
            width += 1
        elif st["action"] == "onehot":
            levels = st["levels"]
            lookup = {lv: i for i, lv in enumerate(levels)}
            unseen = sorted(set(col.tolist()) - set(lookup))
            if unseen:
                raise UnseenLevelError(f"column {st['name']!r} has levels unseen in training: {unseen}")
            block = np.zeros((len(col), len(levels)))
            block[np.arange(len(col)), [lookup[v] for v in col]] = 1.0
            blocks.append(block)
            width += len(levels)
        else:
            if "levels" in st:
                unseen = sorted(set(col.tolist()) - set(st["levels"]))
                if unseen:
                    raise UnseenLevelError(f"column {st['name']!r} has levels unseen in training: {unseen}")
            blocks.append(_encode_sensitive(col, st)[:, None])
            sens_index.append(width)
            mask_values.append(st["mask_value"])
            width += 1
    X = np.hstack(blocks) if blocks else np.zeros((table.n_rows, 0))
    raw_labels = table.columns[plan.label_column]
    if raw_labels.dtype == object:
        labels = (raw_labels == plan.positive_label).astype(int)
    else:
        labels = (raw_labels == float(plan.positive_label)).astype(int)
    d = Dataset(
        features=X,
        labels=labels,
        sensitive_index=tuple(sens_index),
        feature_names=plan.feature_names(),
        mask_values=tuple(mask_values),
        row_ids=table.row_ids,
        provenance=table,
    )
    return d, plan


# --------------------------------------------------------------------------
# fixtures
# --------------------------------------------------------------------------


def toy_table2_path() -> Path:
    return Path(str(resources.files("fairmask") / "resources" / "toy_table2.csv"))


def toy_table2() -> Dataset:
    """The eight-applicant admissions example (protected group = Sensitive 1).

    Features are ``[Sensitive, SAT, Extracurricular]`` with the two scores
    standardised; ``provenance`` holds the raw table.
    """
    schema = bundled_schema("toy_table2")
    d, _ = preprocess(load_csv(toy_table2_path(), schema), schema)
    return d


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the proxy-feature generator.

    A binary sensitive bit ``s`` (protected share ``protected_share``) is
    paired with a proxy feature whose correlation with ``s`` is ``rho``.
    A latent score ``x . beta + proxy_weight * proxy + noise * eps`` is
    thresholded separately per group so that each group's positive rate equals
    ``base_rates = (protected, unprotected)`` exactly (up to rounding); a gap
    in base rates therefore acts as a direct effect of ``s`` on the label.
    """

    n: int = 2000
    rho: float = 0.8
    base_rates: tuple[float, float] = (0.2, 0.4)
    noise: float = 0.3
    n_features: int = 3
    protected_share: float = 0.5
    proxy_weight: float = -0.3
    seed: int = 0

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise DataError(f"rho must be in [-1, 1], got {self.rho}")
        if self.n < 10:
            raise DataError("n must be at least 10")
        if not all(0.0 < r < 1.0 for r in self.base_rates):
            raise DataError("base rates must lie in (0, 1)")
        if not 0.0 < self.protected_share < 1.0:
            raise DataError("protected_share must lie in (0, 1)")
        if self.noise < 0 or self.n_features < 1:
            raise DataError("noise must be >= 0 and n_features >= 1")


def synthetic_table(spec: SyntheticSpec) -> dict[str, np.ndarray]:
    """Raw columns ``sensitive, proxy, x1..xk, label`` for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    n, p = spec.n, spec.protected_share
    s = np.zeros(n, dtype=int)
    s[rng.permutation(n)[: int(round(n * p))]] = 1
    zs = (s - p) / np.sqrt(p * (1 - p))
    proxy = spec.rho * zs + np.sqrt(1.0 - spec.rho ** 2) * rng.standard_normal(n)
    X = rng.standard_normal((n, spec.n_features))
    beta = np.linspace(1.0, 0.5, spec.n_features)
    latent = X @ beta + spec.proxy_weight * proxy + spec.noise * rng.standard_normal(n)
    y = np.zeros(n, dtype=int)
    for g, rate in ((1, spec.base_rates[0]), (0, spec.base_rates[1])):
        rows = np.flatnonzero(s == g)
        k = int(round(rate * len(rows)))
        top = rows[np.argsort(-latent[rows], kind="stable")[:k]]
        y[top] = 1
    cols = {"sensitive": s, "proxy": proxy}
    for j in range(spec.n_features):
        cols[f"x{j + 1}"] = X[:, j]
    cols["label"] = y
    return cols


def synthetic_schema(spec: SyntheticSpec) -> DatasetSchema:
    columns = [("sensitive", "categorical"), ("proxy", "numeric")]
    columns += [(f"x{j + 1}", "numeric") for j in range(spec.n_features)]
    columns.append(("label", "categorical"))
    return DatasetSchema.from_dict({
        "name": "synthetic",
        "columns": [{"name": n, "kind": k} for n, k in columns],
        "label_column": "label",
        "positive_label": "1",
        "sensitive_columns": [{"name": "sensitive", "mask_reference": "0", "protected": "1"}],
    })


def synthesize(spec: SyntheticSpec) -> Dataset:
    """Labelled dataset with features ``[sensitive, proxy, x1..xk]`` (mask value 0)."""
    cols = synthetic_table(spec)
    names = [c for c in cols if c != "label"]
    X = np.column_stack([cols[c].astype(float) for c in names])
    return Dataset(
        features=X,
        labels=cols["label"],
        sensitive_index=(0,),
        feature_names=tuple(names),
        mask_values=(0.0,),
        provenance={"spec": spec},
    )
