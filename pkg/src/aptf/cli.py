"""Command line entry point: ``aptf run | compare | sweep``.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import yaml

from . import metrics
from .errors import APTFError, ConfigError, IncompatibleRuns
from .experiment import default_output_dir, get_key, load_config, make_config, run_experiment, set_key
from .experiment import _write_rows

log = logging.getLogger("aptf")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

LOWER_IS_BETTER = {"mse": True, "mae": True, "wmape": True, "accuracy": False}
COMPARE_KEYS = ("dataset", "horizon", "metric")


# ---------------------------------------------------------------- run

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = make_config({**cfg, "seeds": [args.seed_override]})
    out = run_experiment(cfg, args.out, workers=args.workers)
    print(out)
    return 0


# ---------------------------------------------------------------- compare

def load_run(run_dir) -> list[dict]:
    path = Path(run_dir) / "report.csv"
    if not path.is_file():
        raise IncompatibleRuns(f"{run_dir}: no report.csv")
    return metrics.read_csv(path)


def compare_runs(run_dirs) -> list[dict]:
    """Long-format comparison rows: one per (dataset, horizon, metric, run, mode).

    ``best`` is 1 on the winning column of each row group, and 0 everywhere
    when every column ties.
    """
    if len(run_dirs) < 2:
        raise IncompatibleRuns("compare needs at least two run directories")
    per_run = [metrics.aggregate(load_run(d)) for d in run_dirs]
    row_sets = [{tuple(str(r[k]) for k in COMPARE_KEYS) for r in agg} for agg in per_run]
    if any(s != row_sets[0] for s in row_sets[1:]):
        raise IncompatibleRuns("runs report different (dataset, horizon, metric) sets")

    rows = []
    for i, (d, agg) in enumerate(zip(run_dirs, per_run)):
        for r in agg:
            rows.append({
                "dataset": r["dataset"],
                "horizon": str(r["horizon"]),
                "metric": r["metric"],
                "run": f"{i}:{Path(d).name}",
                "mode": r["mode"],
                "n": r["n"],
                "mean": r["mean"],
                "std": r["std"],
                "best": 0,
            })
    for key in sorted(row_sets[0]):
        group = [r for r in rows if tuple(r[k] for k in COMPARE_KEYS) == key]
        means = [r["mean"] for r in group]
        if len(set(means)) > 1:
            pick = min if LOWER_IS_BETTER.get(key[2], True) else max
            target = pick(means)
            for r in group:
                r["best"] = int(r["mean"] == target)
    return rows


def format_table(rows) -> str:
    columns = []
    for r in rows:
        c = f"{r['run']}/{r['mode']}"
        if c not in columns:
            columns.append(c)
    keys = sorted({tuple(r[k] for k in COMPARE_KEYS) for r in rows})
    cells = {(tuple(r[k] for k in COMPARE_KEYS), f"{r['run']}/{r['mode']}"): r for r in rows}
    header = ["dataset", "horizon", "metric", *columns]
    lines = [header]
    for key in keys:
        line = list(key)
        for c in columns:
            r = cells.get((key, c))
            if r is None:
                line.append("-")
            else:
                line.append(f"{r['mean']:.6g} ± {r['std']:.3g}" + (" *" if r["best"] else ""))
        lines.append(line)
    widths = [max(len(str(ln[i])) for ln in lines) for i in range(len(header))]
    return "\n".join("  ".join(str(v).ljust(w) for v, w in zip(ln, widths)).rstrip() for ln in lines)


def cmd_compare(args) -> int:
    rows = compare_runs(args.run_dirs)
    print(format_table(rows))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out, rows, "mean and population std over seeds; best=1 marks the winner of each row")
    print(f"\nwritten {out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- sweep

def parse_values(text: str) -> list:
    """Split ``a,b,c`` and parse each item as a YAML scalar (so ``3`` is an int)."""
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigError("no values given", key="--values")
    return [yaml.safe_load(t) for t in items]


def sweep(cfg: dict, param: str, values: list, out_dir, workers: int = 1) -> Path:
    """One run per value under ``out_dir/<param>=<value>``, plus summary.csv."""
    get_key(cfg, param)
    if not values:
        raise ConfigError("no values given", key="--values")
    configs = []
    for v in values:
        try:
            configs.append((v, make_config(set_key(cfg, param, v))))
        except ConfigError as e:
            raise ConfigError(f"value {v!r} rejected: {e}", key=param) from None
    out = Path(out_dir)
    summary = []
    for v, c in configs:
        run_dir = run_experiment(c, out / f"{param}={v}", workers=workers)
        summary.extend(_final_val_rows(run_dir, param, v))
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "summary.csv", summary, "final-epoch validation metric, mean and population std over seeds")
    return out


def _final_val_rows(run_dir: Path, param: str, value) -> list[dict]:
    plot = metrics.read_csv(run_dir / "plot_data.csv")
    last = {}
    for r in plot:
        key = (r["mode"], r["seed"])
        if key not in last or int(r["epoch"]) > int(last[key]["epoch"]):
            last[key] = r
    recs = [{"mode": m, "value": float(r["val_metric"])} for (m, _), r in last.items() if r["val_metric"] != ""]
    return [
        {"param": param, "param_value": value, "mode": a["mode"], "n": a["n"],
         "final_val_mean": a["mean"], "final_val_std": a["std"]}
        for a in metrics.aggregate(recs, group_keys=("mode",))
    ]


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = make_config({**cfg, "seeds": [args.seed_override]})
    values = parse_values(args.values)
    out = args.out or default_output_dir(cfg).with_name(f"{cfg['name']}-sweep-{args.param}")
    print(sweep(cfg, args.param, values, out, workers=args.workers))
    return 0


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aptf", description="Predictability-aware training experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every (mode, seed) cell of a config")
    r.add_argument("config")
    r.add_argument("--seed-override", type=int, help="replace the config's seed list with this seed")
    r.add_argument("--out", help="run directory (default: $APTF_OUTPUT_ROOT/<name> or runs/<name>)")
    r.add_argument("--workers", type=int, default=1, help="parallel worker threads")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="side-by-side mean ± std of several runs")
    c.add_argument("run_dirs", nargs="+")
    c.add_argument("--out", default="comparison.csv", help="CSV path (default: comparison.csv)")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="one run per value of a config key")
    s.add_argument("config")
    s.add_argument("--param", required=True, help="dotted config key, e.g. hpl.initial_buckets")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seed-override", type=int)
    s.add_argument("--out", help="sweep directory")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    warnings.formatwarning = lambda msg, cat, *_, **__: f"warning: {msg}\n"
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (APTFError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
