"""Single-model and amortized (dual-model) training loops.

In the amortized loop both models see the same batch. Each one is optimized
on its own per-sample losses, bucketed by the peer's losses on that batch
(computed from the peer's parameters before this step's update).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from . import metrics
from .datasets import SampleSet
from .errors import BadSpec, NoGroundTruth
from .models import Model, Optimizer, backward_weighted, forward, optimizer_step, per_sample_loss
from .numeric import Rng
from .predictability import (
    StagePlan,
    TscBucketConfig,
    advance_stage,
    evolving_pal,
    hierarchical_pal,
    groups_loss,
    stage_cap,
    stage_groups,
    tsc_two_bucket_pal,
)

SINGLE_MODES = ("plain", "basic", "evolving", "hpl", "tsc_two_bucket", "self_paced")
DUAL_MODES = ("hpl_amortized", "coteaching")
MODES = SINGLE_MODES + DUAL_MODES

# which stage rule governs each training mode
_PLAN_MODE = {
    "plain": None,
    "basic": "fixed",
    "evolving": "evolving",
    "hpl": "hierarchical",
    "hpl_amortized": "hierarchical",
    "tsc_two_bucket": "two_bucket",
    "self_paced": "two_bucket",
    "coteaching": None,
}


@dataclass
class CoteachingConfig:
    forget_rate: float = 0.3
    ramp_epochs: int = 10

    def __post_init__(self):
        if not 0 <= self.forget_rate <= 0.5:
            raise BadSpec("forget_rate must lie in [0, 0.5]")
        if self.ramp_epochs < 1:
            raise BadSpec("ramp_epochs must be >= 1")

    def rate(self, epoch: int) -> float:
        """Linear ramp: 0 at epoch 1, ``forget_rate`` from epoch ``ramp_epochs`` on."""
        if self.ramp_epochs == 1:
            return self.forget_rate
        return self.forget_rate * min(1.0, (epoch - 1) / (self.ramp_epochs - 1))


@dataclass
class SelfPacedConfig:
    initial_threshold: float = 1.0
    growth: float = 1.3

    def __post_init__(self):
        if not self.initial_threshold > 0:
            raise BadSpec("initial_threshold must be > 0")
        if not self.growth > 1:
            raise BadSpec("growth must be > 1")


@dataclass
class TrainerConfig:
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    plan: StagePlan = field(default_factory=StagePlan)
    mode: str = "hpl"
    seed: int = 0
    shuffle: bool = True
    tsc: TscBucketConfig = field(default_factory=TscBucketConfig)
    coteaching: CoteachingConfig = field(default_factory=CoteachingConfig)
    self_paced: SelfPacedConfig = field(default_factory=SelfPacedConfig)
    record_weights: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise BadSpec(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise BadSpec("epochs and batch_size must be >= 1")

    def make_optimizer(self) -> Optimizer:
        return Optimizer(kind=self.optimizer, lr=self.lr)

    def stage_plan(self) -> StagePlan | None:
        pm = _PLAN_MODE[self.mode]
        if pm is None:
            return None
        return self.plan if self.plan.mode == pm else replace(self.plan, mode=pm)

    def stage_cap(self) -> int:
        plan = self.stage_plan()
        return 1 if plan is None else stage_cap(plan, self.epochs, self.batch_size)


@dataclass
class TrainLog:
    """One record per epoch.

    With ``record_weights`` each record also keeps the training-set indices
    seen that epoch and the resolved weight each got, rescaled by its batch
    size so batches are comparable (1.0 means "plain mean" weight).
    """

    records: list[dict] = field(default_factory=list)
    weights: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def stages(self) -> list[int]:
        return [r["stage"] for r in self.records]

    def write_jsonl(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        os.replace(tmp, path)


def evaluate(model: Model, data: SampleSet) -> dict[str, float]:
    pred = forward(model, data.inputs)
    if data.task == "classify":
        return {"accuracy": metrics.accuracy(pred, data.targets)}
    out = {"mse": metrics.mse(pred, data.targets), "mae": metrics.mae(pred, data.targets)}
    if np.abs(data.targets).sum() > 0:
        out["wmape"] = metrics.wmape(pred, data.targets)
    return out


def val_metric_name(task: str) -> str:
    return "accuracy" if task == "classify" else "mse"


def epoch_order(cfg: TrainerConfig, n: int, epoch: int) -> np.ndarray:
    """Sample order for ``epoch``, reseeded from the master seed every epoch."""
    if not cfg.shuffle:
        return np.arange(n)
    return Rng(cfg.seed).spawn(epoch).permutation(n)


def batches(order: np.ndarray, batch_size: int):
    for i in range(0, len(order), batch_size):
        yield order[i : i + batch_size]


def resolve_weights(mode: str, cfg: TrainerConfig, stage: int, losses, partition_losses=None):
    """(objective value, per-sample weights) for one batch under ``mode``."""
    losses = np.asarray(losses, dtype=np.float64)
    plan = cfg.stage_plan()
    if mode == "plain":
        w = np.full(len(losses), 1.0 / len(losses))
        return float(w @ losses), w
    if mode == "basic":
        pl = losses if partition_losses is None else partition_losses
        return groups_loss(stage_groups(1, plan, pl), losses)
    if mode == "evolving":
        return evolving_pal(stage, plan, losses, partition_losses)
    if mode in ("hpl", "hpl_amortized"):
        return hierarchical_pal(stage, plan, losses, partition_losses)
    if mode == "tsc_two_bucket":
        if len(losses) < 2:
            w = np.ones(1)
            return float(losses[0]), w
        return tsc_two_bucket_pal(losses, cfg.tsc, stage, partition_losses)
    raise BadSpec(f"mode {mode!r} has no predictability weighting")


# A weigher maps (stage, epoch, [losses per model]) to [weights per model] and
# the objective of the first model. It may return None for a model to skip its step.
Weigher = Callable[[int, int, list], tuple[list, float]]


def _fit(models: list[Model], opts: list[Optimizer], train: SampleSet, cfg: TrainerConfig, weigher: Weigher,
         val: SampleSet | None = None, on_epoch_end=None) -> list[TrainLog]:
    if len(train) == 0:
        raise BadSpec("empty training split")
    logs = [TrainLog() for _ in models]
    cap = cfg.stage_cap()
    stage = 1
    metric = val_metric_name(train.task)
    for epoch in range(1, cfg.epochs + 1):
        order = epoch_order(cfg, len(train), epoch)
        seen = [[] for _ in models]
        sums = np.zeros(len(models))
        objective = 0.0
        skipped = 0
        for idx in batches(order, cfg.batch_size):
            x, y = train.inputs[idx], train.targets[idx]
            losses = [per_sample_loss(forward(m, x), y, train.task) for m in models]
            weights, obj = weigher(stage, epoch, losses)
            objective += obj * len(idx)
            for k, (m, opt, w) in enumerate(zip(models, opts, weights)):
                sums[k] += losses[k].sum()
                if w is None:
                    skipped += 1
                    continue
                if cfg.record_weights:
                    seen[k].append((idx, w * len(idx)))
                optimizer_step(m, opt, backward_weighted(m, x, y, w))
        for k, (m, lg) in enumerate(zip(models, logs)):
            rec = {
                "epoch": epoch,
                "stage": stage,
                "train_loss": float(sums[k] / len(train)),
                "objective": float(objective / len(train)) if k == 0 else None,
            }
            if skipped:
                rec["skipped_steps"] = skipped
            if val is not None and len(val):
                rec["val_" + metric] = evaluate(m, val)[metric]
            lg.records.append(rec)
            if cfg.record_weights:
                if seen[k]:
                    lg.weights.append((np.concatenate([s[0] for s in seen[k]]), np.concatenate([s[1] for s in seen[k]])))
                else:
                    lg.weights.append((np.empty(0, dtype=np.int64), np.empty(0)))
        if on_epoch_end is not None:
            on_epoch_end(epoch, stage)
        plan = cfg.stage_plan()
        if plan is not None:
            stage = advance_stage(plan, stage, epoch, cfg.epochs, cfg.batch_size)
            stage = min(stage, cap)
    return logs


def train_single(model: Model, train: SampleSet, cfg: TrainerConfig, val: SampleSet | None = None,
                 optimizer: Optimizer | None = None):
    """Train one model, weighting each batch by buckets of its own losses.

    Modifies ``model`` in place and returns ``(model, log)``.
    """
    if cfg.mode not in SINGLE_MODES:
        raise BadSpec(f"train_single does not run mode {cfg.mode!r}")
    opt = optimizer or cfg.make_optimizer()
    if cfg.mode == "self_paced":
        from .baselines import self_paced_weigher

        weigher, hook = self_paced_weigher(cfg)
    else:
        def weigher(stage, epoch, losses):
            obj, w = resolve_weights(cfg.mode, cfg, stage, losses[0])
            return [w], obj

        hook = None
    (lg,) = _fit([model], [opt], train, cfg, weigher, val, hook)
    return model, lg


def train_amortized(source: Model, amort: Model, train: SampleSet, cfg: TrainerConfig,
                    val: SampleSet | None = None):
    """Dual training where each model is bucketed by the other's losses.

    ``cfg.mode`` is ``hpl_amortized`` (or any single PAL mode, which is then
    run with exchanged partitions). Returns ``(source, amort, source_log, amort_log)``.
    """
    base = "hpl" if cfg.mode == "hpl_amortized" else cfg.mode
    if base not in ("basic", "evolving", "hpl", "tsc_two_bucket"):
        raise BadSpec(f"mode {cfg.mode!r} cannot be amortized")
    if source.spec.task != amort.spec.task:
        raise BadSpec("source and amortization models must solve the same task")

    def weigher(stage, epoch, losses):
        ls, la = losses
        obj, ws = resolve_weights(base, cfg, stage, ls, partition_losses=la)
        _, wa = resolve_weights(base, cfg, stage, la, partition_losses=ls)
        return [ws, wa], obj

    opts = [cfg.make_optimizer(), cfg.make_optimizer()]
    log_s, log_a = _fit([source, amort], opts, train, cfg, weigher, val)
    return source, amort, log_s, log_a


def separation_auc(corrupted, scores) -> float:
    """P(score of a clean sample > score of a corrupted one), ties counting half.

    With scores = resolved weights this is 1.0 when every corrupted sample
    is weighted below every clean one.
    """
    flags = np.asarray(corrupted, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_bad = int(flags.sum())
    n_ok = len(flags) - n_bad
    if n_bad == 0 or n_ok == 0:
        raise NoGroundTruth("need both corrupted and clean samples")
    ranks = rankdata(scores)
    u = ranks[~flags].sum() - n_ok * (n_ok + 1) / 2
    return float(u / (n_ok * n_bad))


def track_separation(log: TrainLog, data: SampleSet) -> list[float]:
    """Per-epoch AUC of corruption flags against the resolved weights used."""
    if data.corrupted is None:
        raise NoGroundTruth("dataset carries no corruption flags")
    if not log.weights:
        raise BadSpec("training log has no recorded weights; train with record_weights=True")
    return [separation_auc(data.corrupted[idx], w) for idx, w in log.weights]
