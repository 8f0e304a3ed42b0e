"""Comparison training schemes: Co-teaching sample discarding and self-paced learning."""
from __future__ import annotations

import logging

import numpy as np

from .datasets import SampleSet
from .errors import BadSpec
from .models import Model, backward_weighted, forward, optimizer_step, per_sample_loss
from .numeric import argsort_ascending
from .predictability import ceil_count, stage_indicator
from .trainer import CoteachingConfig, SelfPacedConfig, TrainerConfig, _fit

log = logging.getLogger(__name__)


def keep_weights(peer_losses, rate: float) -> np.ndarray:
    """Uniform weights over the samples the peer ranks lowest; the ceil(rate*N) worst get 0.

    At least one sample is always kept, which only matters for tiny trailing batches.
    """
    n = len(peer_losses)
    n_drop = min(ceil_count(rate, n), n - 1)
    keep = argsort_ascending(peer_losses)[: n - n_drop]
    w = np.zeros(n)
    w[keep] = 1.0 / len(keep)
    return w


def coteaching_step(model_a: Model, opt_a, model_b: Model, opt_b, x, y, rate: float):
    """One Co-teaching update: each model trains on the samples its peer finds easiest.

    Returns the weight vectors used for (a, b).
    """
    task = model_a.spec.task
    la = per_sample_loss(forward(model_a, x), y, task)
    lb = per_sample_loss(forward(model_b, x), y, task)
    wa, wb = keep_weights(lb, rate), keep_weights(la, rate)
    optimizer_step(model_a, opt_a, backward_weighted(model_a, x, y, wa))
    optimizer_step(model_b, opt_b, backward_weighted(model_b, x, y, wb))
    return wa, wb


def train_coteaching(model_a: Model, model_b: Model, train: SampleSet, cfg: TrainerConfig,
                     val: SampleSet | None = None):
    """Co-teaching with a linearly ramped forget rate. Returns ``(a, b, log_a, log_b)``."""
    ct: CoteachingConfig = cfg.coteaching

    def weigher(stage, epoch, losses):
        la, lb = losses
        r = ct.rate(epoch)
        wa, wb = keep_weights(lb, r), keep_weights(la, r)
        return [wa, wb], float(wa @ la)

    opts = [cfg.make_optimizer(), cfg.make_optimizer()]
    log_a, log_b = _fit([model_a, model_b], opts, train, cfg, weigher, val)
    return model_a, model_b, log_a, log_b


def self_paced_weights(losses, threshold: float) -> np.ndarray:
    """1 where the loss is below ``threshold``, else 0."""
    if not threshold > 0:
        raise BadSpec("threshold must be > 0")
    return (np.asarray(losses) < threshold).astype(np.float64)


def self_paced_weigher(cfg: TrainerConfig):
    """Weigher plus epoch-end hook that grows the threshold when the stage indicator fires."""
    sp: SelfPacedConfig = cfg.self_paced
    state = {"threshold": sp.initial_threshold}

    def weigher(stage, epoch, losses):
        (ls,) = losses
        keep = self_paced_weights(ls, state["threshold"])
        if keep.sum() == 0:
            log.info("epoch %d: threshold %.4g below every loss, step skipped", epoch, state["threshold"])
            return [None], 0.0
        w = keep / keep.sum()
        return [w], float(w @ ls)

    def on_epoch_end(epoch, stage):
        if stage_indicator(epoch, cfg.plan.epoch_interval):
            state["threshold"] *= sp.growth

    return weigher, on_epoch_end
