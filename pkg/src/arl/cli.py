"""Command-line entry point: train, compare, bias-sweep, probe, diagnose.

Every command reads an optional JSON experiment spec (``--spec``); flags
override spec fields. Paths inside a spec are relative to the spec file.
Outputs are written atomically; wall-clock information goes to a
``*.meta.json`` sidecar so the JSON and CSV bodies are reproducible byte for
byte.

Exit codes: 0 success, 1 user or configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from arl import numerics as nx
from arl.dataset import (
    DataError,
    SchemaError,
    inject_label_bias,
    inject_representation_bias,
    load_dataset,
    set_base_rate,
    split,
)
from arl.eval import (
    QUADRANTS,
    REPORT_COLUMNS,
    identifiability_probe,
    report_group_names,
    weight_diagnostics,
)
from arl.model import load_checkpoint, save_checkpoint
from arl.train import (
    DivergenceError,
    TrainConfig,
    expand_grid,
    flatten_report,
    grid_search,
    multi_run,
    standard_grid,
    train,
)

log = logging.getLogger("arl")

# method label -> (trainer method, selection criterion, config overrides)
METHOD_LABELS = {
    "ERM": ("ERM", "auc", {}),
    "IPW_S": ("IPW_S", "auc", {}),
    "IPW_SY": ("IPW_SY", "auc", {}),
    "ARL": ("ARL", "auc", {"adversary_mode": "X+Y"}),
    "ARL_S": ("ARL", "auc", {"adversary_mode": "S"}),
    "ARL_SY": ("ARL", "auc", {"adversary_mode": "S+Y"}),
    "ARL_XYS": ("ARL", "auc", {"adversary_mode": "X+Y+S"}),
    "DRO": ("DRO", "dro_worst_case", {}),
    "DRO_AUC": ("DRO", "auc", {}),
    "MINDIFF": ("MINDIFF", "auc", {}),
}

DEFAULT_ETA_GRID = (0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0)


class UserError(Exception):
    pass


@dataclass
class ExperimentSpec:
    data: Path
    schema: Path
    methods: list
    config: dict = field(default_factory=dict)
    method_configs: dict = field(default_factory=dict)
    grid: object = None
    method_grids: dict = field(default_factory=dict)
    n_seeds: int = 10
    split_seed: int = 0
    train_fraction: float = 0.7
    folds: int = 5
    biases: list = field(default_factory=list)
    report_group: str = "F"
    base_rate: dict | None = None
    out: Path = Path("out")
    jobs: int = 1

    def resolved(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k in ("data", "schema", "out"):
            d[k] = str(d[k])
        return d


def _resolve(base, value):
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def load_spec(args):
    raw, base = {}, Path.cwd()
    if args.spec:
        spec_path = Path(args.spec)
        if not spec_path.exists():
            raise UserError(f"spec file not found: {spec_path}")
        raw = json.loads(spec_path.read_text(encoding="utf-8"))
        base = spec_path.resolve().parent
    known = set(ExperimentSpec.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise UserError(f"unknown spec keys: {sorted(unknown)}")
    for key in ("data", "schema", "out"):
        if key in raw:
            raw[key] = _resolve(base, raw[key])
    if args.data:
        raw["data"] = Path(args.data)
    if args.schema:
        raw["schema"] = Path(args.schema)
    if args.out:
        raw["out"] = Path(args.out)
    if args.methods:
        raw["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.seeds is not None:
        raw["n_seeds"] = args.seeds
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UserError(f"config file not found: {cfg_path}")
        raw["config"] = {**raw.get("config", {}), **json.loads(cfg_path.read_text(encoding="utf-8"))}
    for key in ("data", "schema"):
        if key not in raw:
            raise UserError(f"missing --{key} (or '{key}' in the spec)")
        if not Path(raw[key]).exists():
            raise UserError(f"{key} file not found: {raw[key]}")
    raw.setdefault("methods", ["ERM"])
    for m in raw["methods"]:
        if m not in METHOD_LABELS:
            raise UserError(f"unknown method {m!r}; expected one of {sorted(METHOD_LABELS)}")
    return ExperimentSpec(**raw)


def method_config(spec, label):
    method, criterion, overrides = METHOD_LABELS[label]
    base = {**spec.config, **overrides, **spec.method_configs.get(label, {}), "method": method}
    try:
        return TrainConfig.from_dict(base), criterion
    except (TypeError, ValueError) as exc:
        raise UserError(f"{label}: bad config: {exc}") from None


def method_grid(spec, label, config):
    grid = spec.method_grids.get(label, spec.grid)
    if grid is None:
        return None
    if grid == "standard":
        grid = standard_grid(config.method)
        if config.method == "DRO":
            grid["dro_eta"] = list(DEFAULT_ETA_GRID)
    return expand_grid(config, grid)


# --- output helpers --------------------------------------------------------

class Outputs:
    """Stage files in a temp dir; move them into ``out`` only when the command succeeds."""

    def __init__(self, out):
        self.out = Path(out)
        self.stage = None
        self.written = []

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for rel in self.written:
                    dest = self.out / rel
                    dest.parent.mkdir(parents=True, exist_ok=True)
                    os.replace(self.stage / rel, dest)
        finally:
            shutil.rmtree(self.stage, ignore_errors=True)
        return False

    def path(self, rel):
        p = self.stage / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(rel)
        return p

    def json(self, rel, doc):
        self.path(rel).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def csv(self, rel, header, rows):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
        self.path(rel).write_text(buf.getvalue(), encoding="utf-8")


def _cell(v):
    if isinstance(v, float):
        return "" if not np.isfinite(v) else repr(round(v, 10))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Path):
        return str(obj)
    return obj


def metric_columns(schema):
    return list(REPORT_COLUMNS) + [f"auc_{g}" for g in report_group_names(schema)]


def _load(spec):
    ds = load_dataset(spec.data, spec.schema)
    train_set, test = split(ds, spec.train_fraction, spec.split_seed)
    return ds, train_set, test


def _tune_and_run(spec, label, train_set, test, keep_models=False):
    config, criterion = method_config(spec, label)
    points = method_grid(spec, label, config)
    table = None
    if points is not None:
        config, table = grid_search(points, train_set, spec.folds, spec.split_seed, criterion, spec.jobs)
        log.info("%s: selected %s", label, config.to_json())
    agg = multi_run(config, train_set, test, spec.n_seeds, spec.jobs, keep_models)
    return config, agg, table


# --- commands --------------------------------------------------------------

def cmd_train(spec, outputs):
    _, train_set, test = _load(spec)
    cols = metric_columns(train_set.schema)
    dataset_name = train_set.schema.name
    for label in spec.methods:
        config, agg, table = _tune_and_run(spec, label, train_set, test, keep_models=True)
        rows = []
        for seed in agg.seeds:
            flat = flatten_report(agg.per_seed[seed])
            run_config = replace(config, seed=seed).to_dict()
            rows.append([label, dataset_name, seed] + [flat.get(c, float("nan")) for c in cols]
                        + [json.dumps(run_config, sort_keys=True)])
            result = agg.results[seed]
            extra = {"config": run_config, "label": label}
            save_checkpoint(
                outputs.path(f"checkpoints/{label}_seed{seed}.json"),
                result.learner,
                train_set.stats,
                label,
                result.adversary,
                extra,
            )
        outputs.csv(f"train_{label}.csv", ["method", "dataset", "seed"] + cols + ["config"], rows)
        outputs.json(
            f"train_{label}.json",
            {"spec": spec.resolved(), "label": label, "selected_config": config.to_dict(),
             "cv_table": table, "report": agg.to_dict()},
        )


def compare_table(labels, aggregates, cols):
    """Rows of mean +- std per method and the best method per column."""
    best = {}
    for c in cols:
        vals = {l: aggregates[l].mean.get(c, float("nan")) for l in labels}
        finite = {l: v for l, v in vals.items() if np.isfinite(v)}
        if finite:
            best[c] = max(finite, key=finite.get)
    rows = []
    for l in labels:
        row = {"method": l}
        for c in cols:
            row[f"{c}_mean"] = aggregates[l].mean.get(c, float("nan"))
            row[f"{c}_std"] = aggregates[l].std.get(c, float("nan"))
            row[f"{c}_best"] = best.get(c) == l
        rows.append(row)
    return rows, best


def cmd_compare(spec, outputs):
    if len(spec.methods) < 2:
        raise UserError("compare needs at least two methods")
    _, train_set, test = _load(spec)
    cols = metric_columns(train_set.schema)
    aggregates, selected, tables = {}, {}, {}
    for label in spec.methods:
        config, agg, table = _tune_and_run(spec, label, train_set, test)
        aggregates[label], selected[label], tables[label] = agg, config.to_dict(), table
    rows, best = compare_table(spec.methods, aggregates, cols)
    header = ["method"] + [f"{c}_{k}" for c in cols for k in ("mean", "std")]
    outputs.csv(
        "compare.csv",
        header + ["seeds", "config"],
        [[r["method"]] + [r[h] for h in header[1:]]
         + [" ".join(map(str, aggregates[r["method"]].seeds)), json.dumps(selected[r["method"]], sort_keys=True)]
         for r in rows],
    )
    outputs.json(
        "compare.json",
        {"spec": spec.resolved(), "rows": rows, "best": best, "selected_configs": selected,
         "cv_tables": tables, "reports": {l: a.to_dict() for l, a in aggregates.items()}},
    )


def apply_bias(train_set, bias, level, seed):
    kind = bias["kind"]
    if kind == "label_flip":
        return inject_label_bias(train_set, level, seed)
    if kind == "representation":
        return inject_representation_bias(train_set, bias["feature"], bias["group"], level, seed)
    if kind == "base_rate":
        return set_base_rate(train_set, bias["feature"], bias["group"], level, seed)
    raise UserError(f"unknown bias kind {kind!r}")


def bias_sweep(spec, train_set, test):
    """Every (bias level, method, seed) run on a fresh copy of the original training set."""
    from arl.train import evaluate

    points = []
    group = spec.report_group
    for bias in spec.biases:
        for level in bias["levels"]:
            for label in spec.methods:
                config, _ = method_config(spec, label)
                vals, overall = [], []
                for i in range(spec.n_seeds):
                    run_cfg = replace(config, seed=config.seed + i)
                    biased = apply_bias(train_set, bias, level, run_cfg.seed)
                    try:
                        report = evaluate(train(run_cfg, biased), test)
                    except DivergenceError as exc:
                        log.warning("%s level %s seed %d excluded: %s", label, level, run_cfg.seed, exc)
                        continue
                    vals.append(report.group_auc.get(group, float("nan")))
                    overall.append(report.auc_overall)
                vals = np.array(vals)
                n = len(vals)
                mean = float(np.mean(vals)) if n else float("nan")
                std = float(np.std(vals, ddof=1)) if n > 1 else 0.0
                half = 1.96 * std / np.sqrt(n) if n else float("nan")
                points.append({
                    "kind": bias["kind"], "level": level, "method": label, "n_runs": n,
                    "auc_group": group, "auc_mean": mean, "auc_std": std,
                    "ci_low": mean - half, "ci_high": mean + half,
                    "auc_overall_mean": float(np.mean(overall)) if overall else float("nan"),
                    "per_seed": vals.tolist(),
                })
    return points


def cmd_bias_sweep(spec, outputs):
    if not spec.biases:
        raise UserError("bias-sweep needs a nonempty 'biases' list in the spec")
    _, train_set, test = _load(spec)
    points = bias_sweep(spec, train_set, test)
    header = ["kind", "level", "method", "n_runs", "auc_group", "auc_mean", "auc_std", "ci_low", "ci_high",
              "auc_overall_mean"]
    outputs.csv("bias_sweep.csv", header, [[p[h] for h in header] for p in points])
    outputs.json("bias_sweep.json", {"spec": spec.resolved(), "points": points})


def cmd_probe(spec, outputs):
    ds = load_dataset(spec.data, spec.schema)
    if not ds.schema.protected:
        raise UserError("schema declares no protected features")
    results = [identifiability_probe(ds, p.column, seed=spec.split_seed) for p in ds.schema.protected]
    header = ["feature", "accuracy", "majority_baseline", "n_train", "n_test"]
    outputs.csv("probe.csv", header, [[getattr(r, h) for h in header] for r in results])
    outputs.json("probe.json", {"spec": spec.resolved(), "results": [r.to_dict() for r in results]})


def cmd_diagnose(spec, outputs, checkpoint):
    if not checkpoint or not Path(checkpoint).exists():
        raise UserError(f"checkpoint not found: {checkpoint}")
    ck = load_checkpoint(checkpoint)
    if ck["adversary"] is None:
        raise UserError(f"{checkpoint}: not an ARL checkpoint (no adversary)")
    _, train_set, _ = _load(spec)
    diag = weight_diagnostics(ck["learner"], ck["adversary"], train_set)
    rows = []
    for name in QUADRANTS:
        for left, right, count in zip(diag.bins[:-1], diag.bins[1:], diag.histograms[name]):
            rows.append([float(left), float(right), int(count), name])
    outputs.csv("lambda_histograms.csv", ["bin_left", "bin_right", "count", "quadrant"], rows)
    summary = {
        "spec": spec.resolved(),
        "checkpoint": str(checkpoint),
        "n": diag.n,
        "mean_lambda": float(diag.lambdas.mean()),
        "quadrant_counts": {q: int(np.sum(diag.quadrant == i)) for i, q in enumerate(QUADRANTS)},
        "quadrant_mean": diag.quadrant_mean,
        "class_mean": {str(int(k)): v for k, v in diag.class_mean.items()},
        "group_class_mean": {f"{g}|{c}": v for (g, c), v in diag.group_class_mean.items()},
        "misclassified_mean": diag.misclassified_mean(),
    }
    if spec.base_rate:
        cfg = TrainConfig.from_dict(ck["extra"]["config"])
        curve = base_rate_curve(cfg, train_set, spec.base_rate)
        outputs.csv("base_rate_curve.csv", ["rate", "class", "mean_lambda"], curve)
        summary["base_rate_curve"] = curve
    outputs.json("diagnostics.json", summary)


def base_rate_curve(config, train_set, base_rate):
    """Retrain ARL per target base rate; mean lambda per class inside the target group."""
    feature, group = base_rate["feature"], base_rate["group"]
    p = train_set.schema.protected_feature(feature)
    code = p.codes.index(group)
    rows = []
    for rate in base_rate["rates"]:
        biased = set_base_rate(train_set, feature, group, rate, config.seed)
        result = train(config, biased)
        diag = weight_diagnostics(result.learner, result.adversary, biased)
        in_group = biased.codes[feature] == code
        for c in (0, 1):
            sel = in_group & (biased.y == c)
            rows.append([rate, c, float(diag.lambdas[sel].mean()) if sel.any() else float("nan")])
    return rows


COMMANDS = ("train", "compare", "bias-sweep", "probe", "diagnose")


def build_parser():
    parser = argparse.ArgumentParser(prog="arl", description="Adversarially reweighted learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--spec", help="experiment spec JSON")
        p.add_argument("--data", help="dataset CSV")
        p.add_argument("--schema", help="schema JSON")
        p.add_argument("--config", help="TrainConfig JSON (merged over the spec's config)")
        p.add_argument("--methods", help="comma-separated method labels")
        p.add_argument("--seeds", type=int, help="number of seeds")
        p.add_argument("--jobs", type=int, help="parallel worker processes")
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "diagnose":
            p.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.time()
    try:
        spec = load_spec(args)
        with Outputs(spec.out) as outputs:
            if args.command == "train":
                cmd_train(spec, outputs)
            elif args.command == "compare":
                cmd_compare(spec, outputs)
            elif args.command == "bias-sweep":
                cmd_bias_sweep(spec, outputs)
            elif args.command == "probe":
                cmd_probe(spec, outputs)
            else:
                cmd_diagnose(spec, outputs, args.checkpoint)
            outputs.json(
                f"{args.command}.meta.json",
                {"command": args.command, "started": started, "elapsed_seconds": time.time() - started,
                 "argv": list(argv) if argv is not None else sys.argv[1:]},
            )
    except (DivergenceError, nx.NumericError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 2
    except (UserError, SchemaError, DataError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
