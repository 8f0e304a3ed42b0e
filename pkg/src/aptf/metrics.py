"""Forecasting/classification metrics and seed aggregation."""
from __future__ import annotations

import csv
import os
from collections import defaultdict
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch, ZeroDenominator

REPORT_COLUMNS = ["dataset", "model", "mode", "horizon", "seed", "metric", "value"]
GROUP_KEYS = ("dataset", "model", "mode", "horizon", "metric")


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def wmape(pred, target) -> float:
    """Weighted MAPE in percent: 100 * sum|pred - target| / sum|target|."""
    pred, target = _pair(pred, target)
    denom = np.abs(target).sum()
    if denom == 0:
        raise ZeroDenominator("WMAPE undefined when every target is zero")
    return float(100.0 * np.abs(pred - target).sum() / denom)


def accuracy(logits, labels) -> float:
    """Share of rows whose argmax equals the label; ties go to the lowest class."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (len(logits),):
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def aggregate(records, group_keys=GROUP_KEYS):
    """Mean and population std (divisor n) of ``value`` per group.

    ``records`` are dicts carrying ``group_keys`` and ``value``. Groups come
    back in first-seen order.
    """
    groups = defaultdict(list)
    for r in records:
        groups[tuple(r[k] for k in group_keys)].append(float(r["value"]))
    out = []
    for key, vals in groups.items():
        v = np.asarray(vals)
        out.append({**dict(zip(group_keys, key)), "n": len(v), "mean": float(v.mean()), "std": float(v.std())})
    return out


def _atomic_csv(path, header, rows, comment=None):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in header})
    os.replace(tmp, path)


def _fmt(x):
    return repr(x) if isinstance(x, float) else x


def write_report(path, records) -> None:
    _atomic_csv(path, REPORT_COLUMNS, records)


def write_aggregate(path, rows, group_keys=GROUP_KEYS) -> None:
    _atomic_csv(path, [*group_keys, "n", "mean", "std"], rows, comment="std is the population std (divisor n) over seeds")


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
