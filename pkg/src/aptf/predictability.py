"""Predictability buckets, weight schedules and the predictability-aware losses.

Every loss here is linear in the per-sample losses, so each one also yields
the resolved per-sample weight vector ``w`` with ``loss == w @ losses``; the
trainer feeds ``w`` straight into ``backward_weighted``.

The grouping can come from a different loss vector than the one being
weighted (``partition_losses``), which is how a peer model supplies buckets.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import BadSpec, BadTrim, GroupTooSmall, TooFewSamples
from .numeric import argsort_ascending

MODES = ("fixed", "evolving", "hierarchical", "two_bucket")


@dataclass(frozen=True)
class BucketPartition:
    buckets: tuple[np.ndarray, ...]
    source: str = "self"

    @property
    def K(self) -> int:
        return len(self.buckets)

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.buckets)

    def sizes(self) -> list[int]:
        return [len(b) for b in self.buckets]

    def bucket_of(self) -> np.ndarray:
        """Bucket index (0-based) of every sample."""
        out = np.empty(self.n, dtype=np.int64)
        for j, b in enumerate(self.buckets):
            out[b] = j
        return out


@dataclass(frozen=True)
class BucketGroup:
    partition: BucketPartition
    schedule: np.ndarray

    def __post_init__(self):
        if len(self.schedule) != self.partition.K:
            raise BadSpec(f"schedule has {len(self.schedule)} weights for {self.partition.K} buckets")

    def sample_weights(self) -> np.ndarray:
        """W_j / |B_j| for every sample of bucket j."""
        w = np.zeros(self.partition.n)
        for b, wj in zip(self.partition.buckets, self.schedule):
            w[b] = wj / len(b)
        return w


@dataclass(frozen=True)
class StagePlan:
    epoch_interval: int = 2
    initial_buckets: int = 9
    bucket_decrement: int = 1
    max_stages: int | None = None  # None: derived from the epoch budget
    mode: str = "hierarchical"
    trim_leading: bool = False

    def __post_init__(self):
        if self.epoch_interval < 1:
            raise BadSpec("epoch_interval must be >= 1")
        if self.initial_buckets < 2:
            raise BadSpec("initial_buckets must be >= 2")
        if self.bucket_decrement < 0:
            raise BadSpec("bucket_decrement must be >= 0")
        if self.max_stages is not None and self.max_stages < 1:
            raise BadSpec("max_stages must be >= 1")
        if self.mode not in MODES:
            raise BadSpec(f"unknown stage mode {self.mode!r}")

    def buckets_at(self, group: int) -> int:
        """Bucket count of the 1-based ``group``."""
        return self.initial_buckets - (group - 1) * self.bucket_decrement

    def stages(self, epochs: int | None = None) -> int:
        if self.max_stages is not None:
            return self.max_stages
        if epochs is None:
            raise BadSpec("max_stages unset and no epoch budget to derive it from")
        return max(1, epochs // self.epoch_interval)


@dataclass(frozen=True)
class TscBucketConfig:
    low_weight: float = 0.1
    initial_fraction: float = 0.0
    growth_rate: float = 0.025

    def __post_init__(self):
        if not 0 <= self.initial_fraction <= 0.5:
            raise BadSpec("initial_fraction must lie in [0, 0.5]")
        if self.low_weight < 0 or self.growth_rate < 0:
            raise BadSpec("low_weight and growth_rate must be >= 0")

    def fraction(self, stage: int) -> float:
        return min(0.5, self.initial_fraction + (stage - 1) * self.growth_rate)


def ceil_count(frac: float, n: int) -> int:
    """``ceil(frac * n)`` without float noise turning 3.0000000000000004 into 4."""
    return int(math.ceil(round(frac * n, 9)))


def stage_indicator(epoch: int, epoch_interval: int) -> int:
    return 1 if epoch % epoch_interval == 0 else 0


def partition_buckets(losses, K: int, source: str = "self") -> BucketPartition:
    """Split samples into K buckets by ascending loss.

    The first K-1 buckets get floor(N/K) samples each, the last bucket the rest.
    """
    order = argsort_ascending(losses)
    n = len(order)
    if K < 2:
        raise BadSpec("K must be >= 2")
    if n < K:
        raise TooFewSamples(f"{n} samples cannot fill {K} buckets")
    size = n // K
    buckets = [order[j * size : (j + 1) * size] for j in range(K - 1)]
    buckets.append(order[(K - 1) * size :])
    return BucketPartition(tuple(buckets), source)


def build_weight_schedule(K: int, stage_trim: int = 0) -> np.ndarray:
    """Linearly decreasing weights from 1 in steps of 1/(K-1), last one halved.

    ``stage_trim`` drops that many of the largest weights from the front.
    """
    if K < 2:
        raise BadSpec("K must be >= 2")
    if not 0 <= stage_trim < K:
        raise BadTrim(f"stage_trim must lie in [0, {K - 1}], got {stage_trim}")
    w = 1.0 - np.arange(K) / (K - 1)
    w[-1] = w[-2] / 2
    return w[stage_trim:]


def basic_pal(group: BucketGroup, losses) -> float:
    """Sum over buckets of the bucket's mean loss times its weight."""
    losses = np.asarray(losses, dtype=np.float64)
    return float(sum(wj * losses[b].mean() for b, wj in zip(group.partition.buckets, group.schedule)))


def _group_schedule(plan: StagePlan, K: int) -> np.ndarray:
    if plan.trim_leading and K < plan.initial_buckets:
        return build_weight_schedule(plan.initial_buckets, plan.initial_buckets - K)
    return build_weight_schedule(K)


def _make_group(partition_losses, K: int, plan: StagePlan, source: str) -> BucketGroup:
    n = len(partition_losses)
    if n < K:
        warnings.warn(f"batch of {n} samples is smaller than {K} buckets; clamping", RuntimeWarning, stacklevel=3)
        K = n
    if K < 2:
        # a single sample: one bucket, weight 1
        return BucketGroup(BucketPartition((np.arange(n),), source), np.ones(1))
    part = partition_buckets(partition_losses, K, source)
    return BucketGroup(part, _group_schedule(plan, K))


def stage_groups(stage: int, plan: StagePlan, partition_losses, source: str = "self") -> list[BucketGroup]:
    """Bucket groups active at ``stage`` under ``plan.mode``."""
    if stage < 1:
        raise BadSpec("stage must be >= 1")
    if plan.mode == "fixed":
        wanted = [1]
    elif plan.mode == "evolving":
        wanted = [stage]
    elif plan.mode == "hierarchical":
        wanted = list(range(1, stage + 1))
    else:
        raise BadSpec("two_bucket plans have no bucket groups; use tsc_two_bucket_pal")
    groups = []
    for g in wanted:
        K = plan.buckets_at(g)
        if K < 2:
            raise GroupTooSmall(f"group {g} would have {K} buckets")
        groups.append(_make_group(partition_losses, K, plan, source))
    return groups


def groups_loss(groups: list[BucketGroup], losses) -> tuple[float, np.ndarray]:
    """Mean of basic_pal over the groups, and the matching per-sample weights."""
    G = len(groups)
    loss = sum(basic_pal(g, losses) for g in groups) / G
    weights = sum(g.sample_weights() for g in groups) / G
    return loss, weights


def hierarchical_pal(stage: int, plan: StagePlan, losses, partition_losses=None, source="self"):
    """Average of basic_pal over groups 1..stage, all built on the same batch."""
    plan = _with_mode(plan, "hierarchical")
    pl = losses if partition_losses is None else partition_losses
    return groups_loss(stage_groups(stage, plan, pl, source), losses)


def evolving_pal(stage: int, plan: StagePlan, losses, partition_losses=None, source="self"):
    """basic_pal with only the stage's own group."""
    plan = _with_mode(plan, "evolving")
    pl = losses if partition_losses is None else partition_losses
    return groups_loss(stage_groups(stage, plan, pl, source), losses)


def _with_mode(plan: StagePlan, mode: str) -> StagePlan:
    return plan if plan.mode == mode else replace(plan, mode=mode)


def two_bucket_weights(partition_losses, cfg: TscBucketConfig, stage: int) -> np.ndarray:
    """Per-sample weights (already divided by N) for the two-bucket scheme."""
    n = len(partition_losses)
    if n < 1:
        raise TooFewSamples("empty batch")
    k = ceil_count(cfg.fraction(stage), n)
    order = argsort_ascending(partition_losses)
    w = np.ones(n)
    if k:
        w[order[n - k :]] = cfg.low_weight
    return w / n


def tsc_two_bucket_pal(losses, cfg: TscBucketConfig, stage: int, partition_losses=None):
    """The ceil(f_s*N) highest-loss samples get ``low_weight``; weighted mean over N."""
    losses = np.asarray(losses, dtype=np.float64)
    if len(losses) < 2:
        raise TooFewSamples("two-bucket loss needs N >= 2")
    pl = losses if partition_losses is None else partition_losses
    w = two_bucket_weights(pl, cfg, stage)
    return float(w @ losses), w


def stage_cap(plan: StagePlan, epochs: int | None = None, batch_size: int | None = None) -> int:
    """Largest reachable stage: at most S, and every group up to it must be buildable."""
    S = plan.stages(epochs)
    if plan.mode in ("fixed", "two_bucket"):
        return S
    cap = 1
    for s in range(2, S + 1):
        K = plan.buckets_at(s)
        if K < 2 or (batch_size is not None and batch_size // K < 2):
            break
        cap = s
    return cap


def advance_stage(plan: StagePlan, stage: int, epoch: int, epochs: int | None = None, batch_size: int | None = None) -> int:
    """Stage for the epoch after ``epoch`` ends."""
    if epoch < 1:
        raise BadSpec("epoch must be >= 1")
    if stage_indicator(epoch, plan.epoch_interval):
        return min(stage + 1, stage_cap(plan, epochs, batch_size))
    return stage
