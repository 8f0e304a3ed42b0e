"""Series tables, synthetic generation, CSV ingestion, windows and splits."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import BadSpec, EmptySplit, NonMonotonicTimestamps, ParseError, TooShort
from .numeric import Rng

STD_FLOOR = 1e-8


@dataclass
class SeriesTable:
    timestamps: np.ndarray
    values: np.ndarray  # (t, v)
    mask: np.ndarray | None = None  # (t,) True where a timestep was corrupted
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.timestamps = np.asarray(self.timestamps)
        if len(self.timestamps) != len(self.values):
            raise BadSpec("timestamps and values differ in length")
        if len(self.timestamps) > 1 and not np.all(self.timestamps[1:] > self.timestamps[:-1]):
            raise NonMonotonicTimestamps("timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise BadSpec("series contains NaN/Inf")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
        if not self.columns:
            self.columns = [f"x{i}" for i in range(self.values.shape[1])]

    def __len__(self):
        return len(self.values)

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


@dataclass
class Sample:
    input: np.ndarray  # (L, v)
    target: np.ndarray | int  # (m, v) or class index
    corrupted: bool | None = None


@dataclass
class SampleSet:
    """Array-backed list of samples, ordered by window start.

    ``targets`` is (N, m, v) for forecasting and an int vector of class
    indices for classification. ``starts`` holds the first timestep of each
    window so chronological bookkeeping never needs the source table.
    """

    inputs: np.ndarray
    targets: np.ndarray
    starts: np.ndarray
    task: str
    lookback: int
    horizon: int
    corrupted: np.ndarray | None = None

    def __len__(self):
        return len(self.inputs)

    def __getitem__(self, i) -> Sample:
        flag = None if self.corrupted is None else bool(self.corrupted[i])
        target = int(self.targets[i]) if self.task == "classify" else self.targets[i]
        return Sample(self.inputs[i], target, flag)

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return replace(
            self,
            inputs=self.inputs[idx],
            targets=self.targets[idx],
            starts=self.starts[idx],
            corrupted=None if self.corrupted is None else self.corrupted[idx],
        )

    @property
    def span(self) -> int:
        return self.lookback + self.horizon


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fr) or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise BadSpec(f"split fractions must be non-negative and sum to 1, got {fr}")


@dataclass(frozen=True)
class SyntheticSpec:
    length: int = 5000
    variables: int = 1
    process: str = "ar1"  # "ar1" | "seasonal_trend"
    noise_std: float = 0.1
    corrupt_frac: float = 0.0
    corrupt_scale: float = 8.0
    ar_coef: float = 0.9
    period: int = 24
    amplitude: float = 1.0
    trend: float = 1e-4
    corrupt_span: tuple[float, float] = (0.0, 1.0)  # share of the series where corruption may land


def generate_synthetic(rng: Rng, spec: SyntheticSpec) -> SeriesTable:
    """Clean process plus base noise, with heavy noise added at a random subset of timesteps.

    Exactly ``round(corrupt_frac * length)`` timesteps are corrupted; every
    variable at a corrupted timestep gets extra noise of std
    ``corrupt_scale * noise_std``.
    """
    if spec.length < 2 or spec.variables < 1:
        raise BadSpec("length must be >= 2 and variables >= 1")
    if not 0 <= spec.corrupt_frac <= 0.5:
        raise BadSpec(f"corrupt_frac must lie in [0, 0.5], got {spec.corrupt_frac}")
    if spec.corrupt_frac > 0 and not spec.corrupt_scale > 1:
        raise BadSpec(f"corrupt_scale must exceed 1, got {spec.corrupt_scale}")
    if spec.noise_std < 0:
        raise BadSpec("noise_std must be >= 0")
    n, v = spec.length, spec.variables
    eps = rng.normal((n, v), 0.0, 1.0) * spec.noise_std
    if spec.process == "ar1":
        if not abs(spec.ar_coef) < 1:
            raise BadSpec("ar_coef must satisfy |ar_coef| < 1")
        x = np.empty((n, v))
        # start from the stationary distribution
        x[0] = eps[0] / math.sqrt(1 - spec.ar_coef**2)
        for t in range(1, n):
            x[t] = spec.ar_coef * x[t - 1] + eps[t]
    elif spec.process == "seasonal_trend":
        t = np.arange(n, dtype=np.float64)[:, None]
        phase = rng.uniform(v, 0.0, 2 * math.pi)[None, :]
        x = spec.amplitude * np.sin(2 * math.pi * t / spec.period + phase) + spec.trend * t + eps
    else:
        raise BadSpec(f"unknown process {spec.process!r}")

    lo, hi = (int(round(f * n)) for f in spec.corrupt_span)
    if not 0 <= lo < hi <= n:
        raise BadSpec(f"bad corrupt_span {spec.corrupt_span}")
    mask = np.zeros(n, dtype=bool)
    n_bad = int(round(spec.corrupt_frac * n))
    if n_bad > hi - lo:
        raise BadSpec(f"{n_bad} corrupted timesteps do not fit in corrupt_span {spec.corrupt_span}")
    if n_bad:
        mask[lo + rng.choice(hi - lo, n_bad)] = True
        x = x.copy()
        x[mask] += rng.normal((n_bad, v), 0.0, spec.corrupt_scale * spec.noise_std)
    return SeriesTable(np.arange(n), x, mask)


def _parse_timestamp(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        return np.datetime64(datetime.fromisoformat(text))


def load_csv(path, timestamp_col: str | None = None, value_cols=None, fill: str = "reject") -> SeriesTable:
    """Read a headered CSV. Lines starting with ``#`` are skipped.

    Empty cells raise ``ParseError`` unless ``fill="ffill"``.
    """
    if fill not in ("reject", "ffill"):
        raise BadSpec(f"fill must be 'reject' or 'ffill', got {fill!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, start=1) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ParseError("empty file")
    rows = list(csv.reader([ln for _, ln in lines]))
    lineno = [i for i, _ in lines]
    header = [h.strip() for h in rows[0]]
    ts_col = timestamp_col or header[0]
    if ts_col not in header:
        raise ParseError("missing timestamp column", column=ts_col)
    value_cols = list(value_cols) if value_cols else [h for h in header if h != ts_col]
    for c in value_cols:
        if c not in header:
            raise ParseError("missing value column", column=c)
    ti = header.index(ts_col)
    vi = [header.index(c) for c in value_cols]

    stamps, values = [], []
    prev = None
    for row, ln in zip(rows[1:], lineno[1:]):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=ln)
        try:
            stamps.append(_parse_timestamp(row[ti]))
        except ValueError:
            raise ParseError("bad timestamp", row=ln, column=ts_col) from None
        vals = []
        for c, j in zip(value_cols, vi):
            cell = row[j].strip()
            if cell == "":
                if fill == "ffill" and prev is not None:
                    vals.append(prev[len(vals)])
                    continue
                raise ParseError("missing value", row=ln, column=c)
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"not a number: {cell!r}", row=ln, column=c) from None
        if not all(math.isfinite(x) for x in vals):
            raise ParseError("non-finite value", row=ln)
        values.append(vals)
        prev = vals
    if not values:
        raise ParseError("no data rows")
    kinds = {type(s) for s in stamps}
    if len(kinds) > 1:
        raise ParseError("mixed integer and ISO-8601 timestamps", column=ts_col)
    ts = np.array(stamps)
    if len(ts) > 1 and not np.all(ts[1:] > ts[:-1]):
        bad = int(np.argmin(ts[1:] > ts[:-1])) + 1
        raise NonMonotonicTimestamps(f"timestamp at data row {bad + 1} does not increase")
    return SeriesTable(ts, np.array(values, dtype=np.float64), columns=value_cols)


def write_csv(table: SeriesTable, path, timestamp_col: str = "timestamp") -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([timestamp_col, *table.columns])
        for ts, row in zip(table.timestamps, table.values):
            w.writerow([str(ts), *(repr(float(x)) for x in row)])
    os.replace(tmp, path)


def windowize(table: SeriesTable, lookback: int, horizon: int, task: str = "forecast", labels=None) -> SampleSet:
    """Stride-1 sliding windows.

    A window is flagged corrupted iff any timestep of its input or horizon
    span is masked.
    """
    if lookback < 1 or horizon < 1:
        raise BadSpec("lookback and horizon must be >= 1")
    n = len(table)
    span = lookback + horizon
    if n < span:
        raise TooShort(f"series of length {n} is shorter than lookback+horizon={span}")
    count = n - span + 1
    win = np.lib.stride_tricks.sliding_window_view(table.values, span, axis=0)  # (count, v, span)
    win = np.ascontiguousarray(win.transpose(0, 2, 1))
    inputs = win[:, :lookback].copy()
    if task == "forecast":
        targets = win[:, lookback:].copy()
    elif task == "classify":
        if labels is None:
            raise BadSpec("classification windows need labels")
        targets = np.asarray(labels, dtype=np.int64)
        if targets.shape != (count,):
            raise BadSpec(f"expected {count} labels, got {targets.shape}")
    else:
        raise BadSpec(f"unknown task {task!r}")
    corrupted = None
    if table.mask is not None:
        corrupted = np.lib.stride_tricks.sliding_window_view(table.mask, span).any(axis=1)
    return SampleSet(inputs, targets, np.arange(count), task, lookback, horizon, corrupted)


def direction_labels(table: SeriesTable, lookback: int, horizon: int, classes: int = 2) -> np.ndarray:
    """Class per window from the change of the horizon mean over the last input value.

    Changes of the first variable are binned at quantiles taken over the
    whole series so the classes are balanced.
    """
    if classes < 2:
        raise BadSpec("need at least 2 classes")
    span = lookback + horizon
    n = len(table)
    if n < span:
        raise TooShort(f"series of length {n} is shorter than lookback+horizon={span}")
    x = table.values[:, 0]
    win = np.lib.stride_tricks.sliding_window_view(x, span)
    delta = win[:, lookback:].mean(axis=1) - win[:, lookback - 1]
    edges = np.quantile(delta, np.linspace(0, 1, classes + 1)[1:-1])
    return np.searchsorted(edges, delta, side="right").astype(np.int64)


def corrupt_targets(samples: SampleSet, rng: Rng, frac: float, std: float) -> SampleSet:
    """Add heavy noise to the targets of ``round(frac * N)`` random forecasting samples.

    Inputs stay clean, so corrupted samples still carry usable signal.
    Returns a new set with ``corrupted`` set to exactly those samples.
    """
    if samples.task != "forecast":
        raise BadSpec("target corruption applies to forecasting samples")
    if not 0 <= frac <= 0.5:
        raise BadSpec(f"frac must lie in [0, 0.5], got {frac}")
    n = len(samples)
    k = int(round(frac * n))
    flags = np.zeros(n, dtype=bool)
    targets = samples.targets.copy()
    if k:
        idx = rng.choice(n, k)
        flags[idx] = True
        targets[idx] += rng.normal(targets[idx].shape, 0.0, std)
    return replace(samples, targets=targets, corrupted=flags)


def split_chrono(samples: SampleSet, spec: SplitSpec = SplitSpec()):
    """Contiguous chronological split into (train, val, test).

    Cut points are placed at ``round(N * frac)``; the ``lookback + horizon - 1``
    windows just before each cut are dropped so no timestep of a later split
    appears in an earlier split's windows.
    """
    n = len(samples)
    c1 = int(round(n * spec.train_frac))
    c2 = int(round(n * (spec.train_frac + spec.val_frac)))
    gap = samples.span - 1
    parts = {
        "train": np.arange(0, max(0, c1 - gap)),
        "val": np.arange(c1, max(c1, c2 - gap)),
        "test": np.arange(c2, n),
    }
    for name, idx in parts.items():
        if len(idx) == 0:
            raise EmptySplit(f"{name} split is empty ({n} samples, spec {spec})")
    return tuple(samples.subset(idx) for idx in parts.values())


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray  # (v,)
    std: np.ndarray  # (v,)

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, x):
        return x * self.std + self.mean


def normalize_train_stats(train: SampleSet, val: SampleSet, test: SampleSet):
    """Z-score every split with per-variable statistics of the training inputs."""
    if len(train) == 0:
        raise EmptySplit("cannot normalize with an empty training split")
    flat = train.inputs.reshape(-1, train.inputs.shape[-1])
    norm = Normalizer(flat.mean(axis=0), np.maximum(flat.std(axis=0), STD_FLOOR))

    def _apply(s: SampleSet) -> SampleSet:
        targets = norm.apply(s.targets) if s.task == "forecast" else s.targets
        return replace(s, inputs=norm.apply(s.inputs), targets=targets)

    return (_apply(train), _apply(val), _apply(test)), norm


def denormalize(x, norm: Normalizer):
    return norm.invert(x)
