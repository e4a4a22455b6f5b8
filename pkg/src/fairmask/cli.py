"""Command-line entry point: ``fairmask {compare,sweep,consistency,synth}``.

Errors exit non-zero with a single stderr line ``fairmask-error[<stage>]: <reason>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import majority, massage, omit_sensitive, unconstrained
from .core import Dataset, FairmaskError, split_indices
from .data import (
    SyntheticSpec,
    bundled_schema,
    load_csv,
    load_schema,
    preprocess,
    save_schema,
    synthetic_schema,
    synthetic_table,
    toy_table2_path,
    write_csv,
)
from .fairness import MaskSpec, pareto_flags, tau_sweep, train_then_mask
from .metrics import EvalFrame, fairness_report, knn_consistency
from .models import MlpArchitecture, TrainConfig

ALGORITHMS = ("unconstrained", "omit_sensitive", "majority", "massage", "train_then_mask")
METRIC_KEYS = ("accuracy", "admit_protected", "admit_unprotected", "group_discr", "latent_discr",
               "strict_latent_discr")
ADULT_SIZED_ROWS = 10_000


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, StageError) and isinstance(ev, (FairmaskError, OSError, ValueError)):
            raise StageError(self.name, str(ev)) from ev
        return False


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _split_arg(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--split expects a,b,c, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"--split expects three fractions, got {text!r}")
    return parts


def _grid_arg(text: str) -> tuple[float, float, int]:
    try:
        lo, hi, count = text.split(":")
        return float(lo), float(hi), int(count)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--tau-grid expects lo:hi:count, got {text!r}") from None


def _pair_arg(text: str) -> tuple[float, float]:
    try:
        a, b = (float(t) for t in text.split(","))
        return a, b
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        p.add_argument("--data", required=True, help="CSV file with a header row")
        p.add_argument("--schema", required=True,
                       help="schema JSON file, or the name of a bundled schema (adult, german, compas, toy_table2)")
        p.add_argument("--family", choices=("logistic", "svm", "mlp"), default="svm")
        p.add_argument("--split", type=_split_arg, default=(0.6, 0.2, 0.2), help="train,validation,test fractions")
        p.add_argument("--tau-grid", type=_grid_arg, default=None,
                       help="lo:hi:count; use --tau-grid=lo:hi:count when lo is negative "
                            "(default: 101 points over the masked validation scores)")
        p.add_argument("--k", type=int, default=None, help="neighbours for consistency (default 10 for >= 10000 rows, else 5)")
        p.add_argument("--lr", type=float, default=0.1)
        p.add_argument("--epochs", type=int, default=2000)
        p.add_argument("--l2", type=float, default=1e-3)
        p.add_argument("--hidden", default="16,16,16", help="MLP hidden layer widths")
        p.add_argument("--activation", choices=("relu", "sigmoid"), default="relu")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"fairmask-error[args]: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairmask", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compare", help="run every algorithm on one split and write a report")
    _add_common(p)
    p.add_argument("--repeats", type=int, default=None, help="number of seeds to average (default 1)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="accuracy / group-discrimination trade-off over tau")
    _add_common(p)
    p.add_argument("--on", choices=("validation", "test"), default="validation")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("consistency", help="own score vs. mean kNN score of the masked model")
    _add_common(p)
    p.add_argument("--tau", type=float, default=0.0)
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("synth", help="write a synthetic or toy CSV plus its schema")
    _add_common(p, data=False)
    p.add_argument("--toy", action="store_true", help="write the eight-applicant toy table")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--rho", type=float, default=0.8)
    p.add_argument("--base-rates", type=_pair_arg, default=(0.2, 0.4))
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--n-features", type=int, default=3)
    p.set_defaults(func=cmd_synth)
    return parser


# --------------------------------------------------------------------------
# shared pipeline pieces
# --------------------------------------------------------------------------


def _schema(arg: str):
    if Path(arg).exists():
        return load_schema(arg)
    return bundled_schema(arg)


def _configs(args) -> tuple[str, TrainConfig, MlpArchitecture]:
    family = "linear_svm" if args.family == "svm" else args.family
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, l2_penalty=args.l2, seed=args.seed)
    arch = MlpArchitecture(tuple(int(h) for h in args.hidden.split(",")), args.activation)
    return family, cfg, arch


def _load(args):
    with _Stage("load"):
        schema = _schema(args.schema)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            table = load_csv(args.data, schema)
        notices = [str(w.message) for w in caught]
    return schema, table, notices


def _prepare(schema, table, fractions, seed) -> tuple[Dataset, Dataset, Dataset]:
    with _Stage("split"):
        labels_raw = table.columns[schema.label_column]
        if labels_raw.dtype == object:
            y = (labels_raw == schema.positive_label).astype(int)
        else:
            y = (labels_raw == float(schema.positive_label)).astype(int)
        tr, va, te = split_indices(y, fractions, seed)
    with _Stage("preprocess"):
        train, plan = preprocess(table.take(tr), schema)
        val, _ = preprocess(table.take(va), schema, plan)
        test, _ = preprocess(table.take(te), schema, plan)
    return train, val, test


def _default_k(n_rows: int) -> int:
    return 10 if n_rows >= ADULT_SIZED_ROWS else 5


class _Outputs:
    """Write files atomically and remove every output of the run on failure."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.written: list[Path] = []

    def write(self, name: str, text: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        target = self.dir / name
        fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{name}.")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
        self.written.append(target)
        return target

    def rollback(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)


def _config_block(args, family, cfg, arch, extra=None) -> dict:
    block = {
        "command": args.command,
        "data": getattr(args, "data", None),
        "schema": getattr(args, "schema", None),
        "family": family,
        "seed": args.seed,
        "split": list(getattr(args, "split", ())),
        "tau_grid": None if getattr(args, "tau_grid", None) is None else list(args.tau_grid),
        "train_config": cfg.as_dict(),
        "mlp_architecture": arch.as_dict() if family == "mlp" else None,
        "version": __version__,
    }
    block.update(extra or {})
    return block


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _run_once(schema, table, args, family, cfg, arch, seed, notices):
    train, val, test = _prepare(schema, table, args.split, seed)
    cfg = TrainConfig(**{**cfg.as_dict(), "seed": seed})
    spec = MaskSpec.from_dataset(train)
    models = {}
    with _Stage("unconstrained"):
        h_star = unconstrained(train, family, cfg, arch)
        models["unconstrained"] = h_star
    with _Stage("omit_sensitive"):
        models["omit_sensitive"] = omit_sensitive(train, family, cfg, arch)
    with _Stage("majority"):
        models["majority"] = majority(train)
    if len(train.sensitive_index) == 1:
        with _Stage("massage"):
            models["massage"] = massage(train, TrainConfig(seed=seed), family, cfg, arch)
    else:
        note = "massage skipped: it needs exactly one sensitive column"
        if note not in notices:
            notices.append(note)
    with _Stage("train_then_mask"):
        models["train_then_mask"] = train_then_mask(train, val, spec, family, cfg, args.tau_grid, arch, h_star=h_star)

    rows = {}
    with _Stage("evaluate"):
        for name, model in models.items():
            rep = fairness_report(name, model, test, h_star, reference_is_self=(name == "unconstrained"))
            d = rep.as_dict()
            if name == "train_then_mask":
                d["tau"] = model.tau
            if name == "massage":
                d["massage"] = model.meta["massage"]
            rows[name] = d
    return rows


def _mean_rows(runs: list[dict]) -> dict:
    out = {}
    for name in ALGORITHMS:
        present = [r[name] for r in runs if name in r]
        if not present:
            continue
        agg = {}
        for key in METRIC_KEYS:
            vals = [p[key] for p in present]
            agg[key] = None if any(v is None for v in vals) else float(np.mean(vals))
        if name == "train_then_mask":
            agg["tau"] = float(np.mean([p["tau"] for p in present]))
        out[name] = agg
    return out


def _table(metrics: dict, header: str) -> str:
    lines = [header, f"{'Algorithm':<18}{'Acc':>9}{'Adm1':>9}{'Adm0':>9}{'G_Discr':>10}{'L_Discr':>11}"]
    for name, m in metrics.items():
        ld = "-" if m["latent_discr"] is None else f"{m['latent_discr']:.6f}"
        lines.append(
            f"{name:<18}{m['accuracy']:>9.4f}{m['admit_protected']:>9.4f}"
            f"{m['admit_unprotected']:>9.4f}{m['group_discr']:>10.4f}{ld:>11}"
        )
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    family, cfg, arch = _configs(args)
    repeats = 1 if args.repeats is None else args.repeats
    if repeats < 1:
        raise StageError("args", "--repeats must be >= 1")
    schema, table, notices = _load(args)
    runs = [_run_once(schema, table, args, family, cfg, arch, args.seed + r, notices) for r in range(repeats)]
    metrics = _mean_rows(runs)
    report = {
        "format": "fairmask-report",
        "version": 1,
        "repeats": repeats,
        "algorithms": list(metrics),
        "metrics": metrics,
        "config": _config_block(args, family, cfg, arch, {
            "seeds": [args.seed + r for r in range(repeats)],
            "repeats_flag_given": args.repeats is not None,
        }),
        "per_repeat": runs,
        "notices": notices,
    }
    header = f"# fairmask compare  family={family}  repeats={repeats}  seed={args.seed}"
    text = _table(metrics, header)
    out = _Outputs(Path(args.out))
    try:
        with _Stage("write"):
            out.write("report.json", json.dumps(report, indent=2) + "\n")
            out.write("report.txt", text)
    except BaseException:
        out.rollback()
        raise
    sys.stdout.write(text)
    for n in notices:
        sys.stdout.write(f"notice: {n}\n")
    return 0


def _dominated_anywhere(acc, gd) -> np.ndarray:
    k = len(acc)
    dom = np.zeros(k, dtype=bool)
    for i in range(k):
        for j in range(k):
            if acc[j] >= acc[i] and gd[j] <= gd[i] and (acc[j] > acc[i] or gd[j] < gd[i]):
                dom[i] = True
                break
    return dom


def cmd_sweep(args) -> int:
    family, cfg, arch = _configs(args)
    schema, table, _ = _load(args)
    train, val, test = _prepare(schema, table, args.split, args.seed)
    with _Stage("train"):
        h_star = unconstrained(train, family, cfg, arch)
    with _Stage("sweep"):
        data = val if args.on == "validation" else test
        result = tau_sweep(h_star, data, MaskSpec.from_dataset(train), args.tau_grid)
        acc = np.array([p.accuracy for p in result.points])
        gd = np.array([p.group_discr for p in result.points])
        flags = np.array([p.on_frontier for p in result.points])
        if np.any(flags & _dominated_anywhere(acc, gd)) or not np.array_equal(flags, pareto_flags(acc, gd)):
            raise StageError("sweep", "frontier verification failed")
        if result.star.accuracy != acc.max():
            raise StageError("sweep", "tau_star does not reach the maximum accuracy")
    out = _Outputs(Path(args.out))
    try:
        with _Stage("write"):
            out.write("sweep.csv", result.to_csv(marker=True))
            cfg_block = _config_block(args, family, cfg, arch, {"evaluated_on": args.on, "grid": list(result.grid_spec),
                                                                "tau_star": result.tau_star})
            out.write("sweep.config.json", json.dumps(cfg_block, indent=2) + "\n")
    except BaseException:
        out.rollback()
        raise
    sys.stdout.write(f"tau_star={result.tau_star!r} accuracy={result.star.accuracy:.4f} "
                     f"group_discr={result.star.group_discr:.4f} points={len(result.points)}\n")
    return 0


def cmd_consistency(args) -> int:
    family, cfg, arch = _configs(args)
    schema, table, _ = _load(args)
    train, val, test = _prepare(schema, table, args.split, args.seed)
    k = args.k if args.k is not None else _default_k(table.n_rows)
    with _Stage("train"):
        h_star = unconstrained(train, family, cfg, arch)
        model = MaskSpec.from_dataset(train).apply_to(h_star).with_tau(args.tau)
    with _Stage("consistency"):
        scores = model.predict_scores(test.features)
        frame = EvalFrame(labels=test.labels, predictions=model.decide(test.features), group=test.group_id,
                          protected=test.protected, candidate_scores=scores)
        points = knn_consistency(frame, test.features[:, list(test.non_sensitive_index)], k)
    out = _Outputs(Path(args.out))
    try:
        with _Stage("write"):
            lines = ["own_score,knn_mean"] + [f"{a!r},{b!r}" for a, b in points.tolist()]
            out.write("consistency.csv", "\n".join(lines) + "\n")
            out.write("consistency.config.json",
                      json.dumps(_config_block(args, family, cfg, arch, {"k": k, "tau": args.tau}), indent=2) + "\n")
    except BaseException:
        out.rollback()
        raise
    sys.stdout.write(f"wrote {len(points)} points (k={k}, tau={args.tau})\n")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    schema_path = out.with_name(out.stem + ".schema.json")
    if args.toy:
        text = toy_table2_path().read_text()
        schema = bundled_schema("toy_table2")
        writer = lambda: out.write_text(text)  # noqa: E731
    else:
        if not -1.0 <= args.rho <= 1.0:
            raise StageError("args", f"--rho must be in [-1, 1], got {args.rho}")
        with _Stage("synth"):
            spec = SyntheticSpec(n=args.n, rho=args.rho, base_rates=tuple(args.base_rates), noise=args.noise,
                                 n_features=args.n_features, seed=args.seed)
            cols = synthetic_table(spec)
            schema = synthetic_schema(spec)
        writer = lambda: write_csv(cols, out)  # noqa: E731
    try:
        with _Stage("write"):
            out.parent.mkdir(parents=True, exist_ok=True)
            writer()
            save_schema(schema, schema_path)
    except BaseException:
        out.unlink(missing_ok=True)
        schema_path.unlink(missing_ok=True)
        raise
    sys.stdout.write(f"wrote {out} and {schema_path}\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"fairmask-error[{exc.stage}]: {msg}\n")
        return 1
    except FairmaskError as exc:
        sys.stderr.write(f"fairmask-error[{args.command}]: {str(exc).splitlines()[0]}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
