"""Experiment configs and the (mode x seed) cell runner behind the CLI.

A config is a YAML mapping; every key has a default (see ``DEFAULTS``) so
a config file only needs the entries it changes. Dotted paths such as
``hpl.initial_buckets`` address nested keys.
"""
from __future__ import annotations

import copy
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import metrics
from .baselines import train_coteaching
from .datasets import (
    SplitSpec,
    SyntheticSpec,
    corrupt_targets,
    direction_labels,
    generate_synthetic,
    load_csv,
    normalize_train_stats,
    split_chrono,
    windowize,
)
from .errors import APTFError, ConfigError
from .models import ModelSpec, init_model, save_checkpoint
from .numeric import Rng
from .predictability import StagePlan, TscBucketConfig
from .trainer import (
    MODES,
    CoteachingConfig,
    SelfPacedConfig,
    TrainerConfig,
    evaluate,
    train_amortized,
    train_single,
    track_separation,
    val_metric_name,
)

OUTPUT_ROOT_ENV = "APTF_OUTPUT_ROOT"

# stream keys for Rng.spawn, kept apart from the per-epoch shuffle keys
INIT_KEY = 1_000_001
AMORT_INIT_KEY = 1_000_002
TARGET_NOISE_KEY = 2_000_001

DEFAULTS = {
    "name": "experiment",
    "task": "forecast",
    "dataset": {
        "name": None,
        "source": "synthetic",
        "seed": None,  # None: regenerate the data for every run seed
        "synthetic": {
            "length": 5000,
            "variables": 1,
            "process": "ar1",
            "noise_std": 0.1,
            "corrupt_frac": 0.0,
            "corrupt_scale": 8.0,
            "ar_coef": 0.9,
            "period": 24,
            "amplitude": 1.0,
            "trend": 1e-4,
            "corrupt_span": [0.0, 1.0],
        },
        "csv": {"path": None, "timestamp_col": None, "value_cols": None, "fill": "reject"},
        "lookback": 24,
        "horizon": 1,
        "classes": 2,
        "split": {"train": 0.7, "val": 0.1, "test": 0.2},
        # heavy noise (std in z-score units) on a share of training targets; inputs stay clean
        "target_corruption": {"frac": 0.0, "std": 1.0},
    },
    "model": {"kind": "LinearForecaster", "hidden": 16},
    "amortization_model": None,  # None: same spec as "model"
    "trainer": {"epochs": 30, "batch_size": 32, "optimizer": "adam", "lr": 1e-3, "shuffle": True},
    "hpl": {"initial_buckets": 9, "bucket_decrement": 1, "epoch_interval": 2, "max_stages": None, "trim_leading": False},
    "tsc": {"low_weight": 0.1, "growth_rate": 0.025, "initial_fraction": 0.0, "epoch_interval": 75},
    "coteaching": {"forget_rate": 0.3, "ramp_epochs": 10},
    "self_paced": {"initial_threshold": 1.0, "growth": 1.3},
    "modes": ["plain", "hpl"],
    "seeds": [0],
    "record_weights": True,
    "output_dir": None,
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for k, v in override.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError("unknown key", key=key)
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML: {e}") from None
    return make_config(raw)


def make_config(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    return cfg


def get_key(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError("unknown key", key=dotted)
        node = node[part]
    return node


def set_key(cfg: dict, dotted: str, value) -> dict:
    get_key(cfg, dotted)
    out = copy.deepcopy(cfg)
    node = out
    *parents, leaf = dotted.split(".")
    for part in parents:
        node = node[part]
    node[leaf] = value
    return out


def validate(cfg: dict) -> None:
    """Raise ConfigError naming the first offending key."""
    if cfg["task"] not in ("forecast", "classify"):
        raise ConfigError(f"must be 'forecast' or 'classify', got {cfg['task']!r}", key="task")
    modes = cfg["modes"]
    if not isinstance(modes, list) or not modes:
        raise ConfigError("must be a nonempty list", key="modes")
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}; expected one of {list(MODES)}", key="modes")
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("must be a nonempty list of non-negative integers", key="seeds")
    ds = cfg["dataset"]
    if ds["source"] not in ("synthetic", "csv"):
        raise ConfigError(f"unknown source {ds['source']!r}", key="dataset.source")
    if ds["source"] == "csv" and not ds["csv"]["path"]:
        raise ConfigError("csv source needs a path", key="dataset.csv.path")
    # building the typed objects runs their own checks
    checks = [
        ("dataset.synthetic", lambda: _synthetic_spec(cfg)),
        ("dataset.split", lambda: _split_spec(cfg)),
        ("model", lambda: _model_spec(cfg, cfg["model"]).validate()),
        ("trainer", lambda: trainer_config(cfg, modes[0], seeds[0])),
        ("tsc", lambda: TscBucketConfig(**{k: v for k, v in cfg["tsc"].items() if k != "epoch_interval"})),
    ]
    if cfg["amortization_model"] is not None:
        checks.append(("amortization_model", lambda: _model_spec(cfg, cfg["amortization_model"]).validate()))
    for key, check in checks:
        try:
            check()
        except ConfigError:
            raise
        except (APTFError, TypeError, ValueError) as e:
            raise ConfigError(str(e), key=key) from None
    if cfg["task"] == "classify" and cfg["model"]["kind"] != "MlpClassifier":
        raise ConfigError("classification needs kind MlpClassifier", key="model.kind")
    if cfg["task"] == "forecast" and cfg["model"]["kind"] == "MlpClassifier":
        raise ConfigError("forecasting needs a forecaster kind", key="model.kind")


def _synthetic_spec(cfg) -> SyntheticSpec:
    s = dict(cfg["dataset"]["synthetic"])
    s["corrupt_span"] = tuple(s["corrupt_span"])
    return SyntheticSpec(**s)


def _split_spec(cfg) -> SplitSpec:
    sp = cfg["dataset"]["split"]
    return SplitSpec(sp["train"], sp["val"], sp["test"])


def _model_spec(cfg, m: dict, n_vars: int | None = None) -> ModelSpec:
    ds = cfg["dataset"]
    if n_vars is None:
        n_vars = ds["synthetic"]["variables"] if ds["source"] == "synthetic" else len(ds["csv"]["value_cols"] or [0])
    return ModelSpec(
        kind=m["kind"],
        lookback=ds["lookback"],
        horizon=ds["horizon"],
        n_vars=n_vars,
        hidden=m.get("hidden", 16),
        classes=m.get("classes", ds["classes"]),
    )


def trainer_config(cfg: dict, mode: str, seed: int) -> TrainerConfig:
    h, t, tsc = cfg["hpl"], cfg["trainer"], cfg["tsc"]
    interval = tsc["epoch_interval"] if mode == "tsc_two_bucket" else h["epoch_interval"]
    plan = StagePlan(
        epoch_interval=interval,
        initial_buckets=h["initial_buckets"],
        bucket_decrement=h["bucket_decrement"],
        max_stages=h["max_stages"],
        trim_leading=h["trim_leading"],
    )
    return TrainerConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        optimizer=t["optimizer"],
        lr=t["lr"],
        shuffle=t["shuffle"],
        plan=plan,
        mode=mode,
        seed=seed,
        tsc=TscBucketConfig(tsc["low_weight"], tsc["initial_fraction"], tsc["growth_rate"]),
        coteaching=CoteachingConfig(**cfg["coteaching"]),
        self_paced=SelfPacedConfig(**cfg["self_paced"]),
        record_weights=bool(cfg["record_weights"]),
    )


@dataclass
class Data:
    train: object
    val: object
    test: object
    name: str


def build_data(cfg: dict, seed: int) -> Data:
    """Generate or load the series, window it, split, normalize, corrupt training targets."""
    ds = cfg["dataset"]
    data_seed = seed if ds["seed"] is None else ds["seed"]
    if ds["source"] == "synthetic":
        table = generate_synthetic(Rng(data_seed), _synthetic_spec(cfg))
        name = ds["name"] or f"synthetic-{ds['synthetic']['process']}"
    else:
        c = ds["csv"]
        table = load_csv(c["path"], c["timestamp_col"], c["value_cols"], c["fill"])
        name = ds["name"] or Path(c["path"]).stem
    L, m = ds["lookback"], ds["horizon"]
    if cfg["task"] == "classify":
        samples = windowize(table, L, m, "classify", direction_labels(table, L, m, ds["classes"]))
    else:
        samples = windowize(table, L, m)
    parts, _ = normalize_train_stats(*split_chrono(samples, _split_spec(cfg)))
    train, val, test = parts
    tc = ds["target_corruption"]
    if tc["frac"] > 0:
        if cfg["task"] != "forecast":
            raise ConfigError("target corruption applies to forecasting", key="dataset.target_corruption")
        train = corrupt_targets(train, Rng(data_seed).spawn(TARGET_NOISE_KEY), tc["frac"], tc["std"])
    return Data(train, val, test, name)


@dataclass
class CellResult:
    mode: str
    seed: int
    test: dict
    log: object
    amort_log: object | None
    source: object
    amort: object | None
    separation: list | None


def run_cell(cfg: dict, mode: str, seed: int, data: Data | None = None) -> CellResult:
    data = data or build_data(cfg, seed)
    tcfg = trainer_config(cfg, mode, seed)
    n_vars = data.train.inputs.shape[-1]
    spec = _model_spec(cfg, cfg["model"], n_vars)
    source = init_model(spec, Rng(seed).spawn(INIT_KEY))
    amort = amort_log = None
    if mode in ("hpl_amortized", "coteaching"):
        aspec = _model_spec(cfg, cfg["amortization_model"] or cfg["model"], n_vars)
        amort = init_model(aspec, Rng(seed).spawn(AMORT_INIT_KEY))
        if mode == "coteaching":
            source, amort, lg, amort_log = train_coteaching(source, amort, data.train, tcfg, data.val)
        else:
            source, amort, lg, amort_log = train_amortized(source, amort, data.train, tcfg, data.val)
    else:
        source, lg = train_single(source, data.train, tcfg, data.val)
    separation = None
    if tcfg.record_weights and data.train.corrupted is not None and data.train.corrupted.any() and not data.train.corrupted.all():
        separation = track_separation(lg, data.train)
    return CellResult(mode, seed, evaluate(source, data.test), lg, amort_log, source, amort, separation)


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def default_output_dir(cfg: dict) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return Path(cfg["output_dir"]) if cfg["output_dir"] else root / cfg["name"]


def run_experiment(cfg: dict, out_dir=None, workers: int = 1) -> Path:
    """Run every (mode, seed) cell and write the run directory.

    Layout: config.yaml, logs/*.jsonl, checkpoints/*.ckpt, report.csv,
    aggregate.csv, plot_data.csv.
    """
    out = Path(out_dir) if out_dir else default_output_dir(cfg)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    _atomic_text(out / "config.yaml", yaml.safe_dump(cfg, sort_keys=True))

    cells = [(mode, seed) for seed in cfg["seeds"] for mode in cfg["modes"]]
    datasets = {seed: build_data(cfg, seed) for seed in cfg["seeds"]}

    def work(cell):
        mode, seed = cell
        return run_cell(cfg, mode, seed, datasets[seed])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]

    records, plot_rows = [], []
    metric_name = val_metric_name(cfg["task"])
    for r in results:
        stem = f"{r.mode}_seed{r.seed}"
        r.log.write_jsonl(out / "logs" / f"{stem}.jsonl")
        save_checkpoint(r.source, out / "checkpoints" / f"{stem}.ckpt", step=cfg["trainer"]["epochs"])
        if r.amort is not None:
            r.amort_log.write_jsonl(out / "logs" / f"{stem}_peer.jsonl")
            save_checkpoint(r.amort, out / "checkpoints" / f"{stem}_peer.ckpt", step=cfg["trainer"]["epochs"])
        for metric, value in r.test.items():
            records.append({
                "dataset": datasets[r.seed].name,
                "model": cfg["model"]["kind"],
                "mode": r.mode,
                "horizon": cfg["dataset"]["horizon"],
                "seed": r.seed,
                "metric": metric,
                "value": value,
            })
        for i, rec in enumerate(r.log.records):
            plot_rows.append({
                "mode": r.mode,
                "seed": r.seed,
                "epoch": rec["epoch"],
                "stage": rec["stage"],
                "train_loss": rec["train_loss"],
                "val_metric": rec.get("val_" + metric_name, ""),
                "separation_auc": r.separation[i] if r.separation else "",
            })
    metrics.write_report(out / "report.csv", records)
    metrics.write_aggregate(out / "aggregate.csv", metrics.aggregate(records))
    _write_rows(out / "plot_data.csv", plot_rows, f"val_metric is validation {metric_name}")
    return out


def _write_rows(path: Path, rows: list[dict], comment: str | None = None) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    os.replace(tmp, path)
