import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aptf.errors import BadSpec, BadTrim, GroupTooSmall, TooFewSamples
from aptf.numeric import Rng
from aptf.predictability import (
    BucketGroup,
    StagePlan,
    TscBucketConfig,
    advance_stage,
    basic_pal,
    build_weight_schedule,
    evolving_pal,
    hierarchical_pal,
    partition_buckets,
    stage_cap,
    stage_groups,
    stage_indicator,
    tsc_two_bucket_pal,
)


# ---- independent reference implementations -------------------------------

def ref_schedule(K):
    """Exact rational schedule: 1 - (j-1)/(K-1) for j < K, last = previous / 2."""
    w = [Fraction(1) - Fraction(j, K - 1) for j in range(K - 1)]
    w.append(w[-1] / 2)
    return w


def ref_bucket_of(losses, K):
    """Bucket index per sample from a sort on (loss, index) pairs and explicit boundaries."""
    n = len(losses)
    ranked = sorted(range(n), key=lambda i: (losses[i], i))
    size = n // K
    bounds = [j * size for j in range(K)] + [n]
    out = [None] * n
    for j in range(K):
        for pos in range(bounds[j], bounds[j + 1]):
            out[ranked[pos]] = j
    return out


def ref_group_weights(losses, K):
    bucket = ref_bucket_of(losses, K)
    sched = [float(x) for x in ref_schedule(K)]
    counts = [bucket.count(j) for j in range(K)]
    return np.array([sched[bucket[i]] / counts[bucket[i]] for i in range(len(losses))])


def ref_hpl(losses, K0, delta, stage):
    w = sum(ref_group_weights(losses, K0 - g * delta) for g in range(stage)) / stage
    return float(sum(wi * li for wi, li in zip(w, losses))), w


def random_instance(rng, n_max=64, k_max=9, s_max=4):
    """(losses, K0, stage) with every group feasible for the batch."""
    while True:
        n = int(rng.integers(2, n_max + 1))
        K0 = int(rng.integers(2, min(k_max, n) + 1))
        stage = int(rng.integers(1, s_max + 1))
        if K0 - (stage - 1) >= 2:
            return rng.uniform(n) * 3, K0, stage


# ---- stage indicator and schedules ---------------------------------------

@pytest.mark.parametrize("epoch,eps,tag", [(4, 2, 1), (3, 2, 0), (75, 75, 1), (1, 1, 1), (74, 75, 0)])
def test_stage_indicator(epoch, eps, tag):
    assert stage_indicator(epoch, eps) == tag


class TestSchedule:
    def test_k9(self):
        assert build_weight_schedule(9).tolist() == [1, 0.875, 0.75, 0.625, 0.5, 0.375, 0.25, 0.125, 0.0625]

    @pytest.mark.parametrize("K", range(2, 13))
    def test_matches_rational_rule(self, K):
        w = build_weight_schedule(K)
        np.testing.assert_allclose(w, [float(x) for x in ref_schedule(K)], atol=1e-15, rtol=0)
        assert np.all(np.diff(w) < 0) and w[0] == 1 and w[-1] > 0

    def test_k2_and_trim(self):
        assert build_weight_schedule(2).tolist() == [1.0, 0.5]
        assert build_weight_schedule(9, 1).tolist() == build_weight_schedule(9).tolist()[1:]

    @pytest.mark.parametrize("K,trim", [(3, 3), (3, -1), (2, 5)])
    def test_bad_trim(self, K, trim):
        with pytest.raises(BadTrim):
            build_weight_schedule(K, trim)


# ---- partition -------------------------------------------------------------

class TestPartition:
    def test_example(self):
        p = partition_buckets([0.5, 0.1, 0.9, 0.3], 2)
        assert [sorted(b.tolist()) for b in p.buckets] == [[1, 3], [0, 2]]

    def test_sizes(self):
        assert partition_buckets(np.arange(10.0), 3).sizes() == [3, 3, 4]

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            partition_buckets([1.0, 2.0], 3)

    def test_ties_follow_index(self):
        p = partition_buckets([1.0, 1.0, 1.0, 1.0], 2)
        assert [b.tolist() for b in p.buckets] == [[0, 1], [2, 3]]

    @pytest.mark.parametrize("seed", range(20))
    def test_against_brute_force(self, seed):
        rng = Rng(seed)
        n = int(rng.integers(5, 65))
        K = int(rng.integers(2, min(9, n) + 1))
        losses = rng.integers(0, 6, size=n).astype(float) if seed % 2 else rng.uniform(n)
        p = partition_buckets(losses, K)
        assert p.bucket_of().tolist() == ref_bucket_of(losses.tolist(), K)
        for j in range(K - 1):
            assert losses[p.buckets[j]].max() <= losses[p.buckets[j + 1]].min()


# ---- losses ----------------------------------------------------------------

def group(losses, schedule):
    return BucketGroup(partition_buckets(losses, len(schedule)), np.asarray(schedule, dtype=float))


class TestBasicPal:
    def test_unit_weights(self):
        assert basic_pal(group([1.0, 2.0, 3.0, 4.0], [1, 1]), [1.0, 2.0, 3.0, 4.0]) == 5.0

    def test_halving(self):
        ls = [0.1, 0.3, 0.5, 0.9]
        assert basic_pal(group(ls, [1, 0.5]), ls) == pytest.approx(0.55, abs=1e-15)

    @pytest.mark.parametrize("seed", range(30))
    def test_sample_weight_oracle(self, seed):
        rng = Rng(seed)
        ls = rng.uniform(int(rng.integers(2, 50)))
        K = int(rng.integers(2, min(9, len(ls)) + 1))
        sched = np.sort(rng.uniform(K))[::-1]
        g = group(ls, sched)
        manual = sum(sched[j] * sum(ls[i] for i in b) / len(b) for j, b in enumerate(g.partition.buckets))
        assert basic_pal(g, ls) == pytest.approx(manual, abs=1e-12)
        assert float(g.sample_weights() @ ls) == pytest.approx(manual, abs=1e-12)


SIX = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]


class TestHierarchical:
    def test_stage1_is_basic(self):
        ls = Rng(1).uniform(20)
        plan = StagePlan(initial_buckets=5)
        loss, _ = hierarchical_pal(1, plan, ls)
        assert loss == basic_pal(group(ls, build_weight_schedule(5)), ls)

    def test_six_loss_example(self):
        loss, w = hierarchical_pal(2, StagePlan(initial_buckets=3), SIX)
        assert loss == pytest.approx(0.45625, abs=1e-12)
        assert float(w @ SIX) == pytest.approx(0.45625, abs=1e-12)

    def test_mean_of_groups(self):
        ls = Rng(2).uniform(30)
        plan = StagePlan(initial_buckets=6)
        per = [basic_pal(g, ls) for g in stage_groups(3, plan, ls)]
        assert hierarchical_pal(3, plan, ls)[0] == pytest.approx(np.mean(per), abs=1e-14)

    def test_group_too_small(self):
        with pytest.raises(GroupTooSmall):
            hierarchical_pal(3, StagePlan(initial_buckets=3), SIX)

    def test_oracle_1000(self):
        rng = Rng(123)
        for _ in range(1000):
            ls, K0, s = random_instance(rng)
            loss, w = hierarchical_pal(s, StagePlan(initial_buckets=K0), ls)
            ref_loss, ref_w = ref_hpl(ls.tolist(), K0, 1, s)
            assert abs(loss - ref_loss) <= 1e-12
            np.testing.assert_allclose(w, ref_w, atol=1e-12, rtol=0)

    def test_delta_two(self):
        ls = Rng(5).uniform(40)
        loss, _ = hierarchical_pal(2, StagePlan(initial_buckets=5, bucket_decrement=2), ls)
        assert loss == pytest.approx(ref_hpl(ls.tolist(), 5, 2, 2)[0], abs=1e-12)


class TestEvolving:
    def test_stage1_same_as_hpl(self):
        ls = Rng(3).uniform(25)
        plan = StagePlan(initial_buckets=4)
        assert evolving_pal(1, plan, ls)[0] == hierarchical_pal(1, plan, ls)[0]

    def test_six_loss_example(self):
        assert evolving_pal(2, StagePlan(initial_buckets=3), SIX)[0] == pytest.approx(0.45, abs=1e-12)

    def test_trim_leading_switch(self):
        # K=2 group under the trimmed K0=3 schedule: [0.5, 0.25]
        loss, _ = evolving_pal(2, StagePlan(initial_buckets=3, trim_leading=True), SIX)
        assert loss == pytest.approx(0.5 * 0.2 + 0.25 * 0.5, abs=1e-12)

    def test_differs_from_hpl(self):
        rng = Rng(4)
        for _ in range(20):
            ls = rng.uniform(40)
            plan = StagePlan(initial_buckets=6)
            assert evolving_pal(3, plan, ls)[0] != hierarchical_pal(3, plan, ls)[0]


class TestTwoBucket:
    def test_stage1_plain_mean(self):
        ls = Rng(0).uniform(10)
        loss, w = tsc_two_bucket_pal(ls, TscBucketConfig(), 1)
        assert loss == pytest.approx(ls.mean(), abs=1e-15)
        assert np.all(w == 0.1)

    def test_top_two_penalized(self):
        ls = np.array([0.3, 0.9, 0.1, 0.8, 0.2, 0.4, 0.5, 0.6])
        cfg = TscBucketConfig(low_weight=0.1, initial_fraction=0.25)
        _, w = tsc_two_bucket_pal(ls, cfg, 1)
        assert np.flatnonzero(w * 8 == 0.1).tolist() == [1, 3]

    def test_growth_and_cap(self):
        cfg = TscBucketConfig(growth_rate=0.025)
        assert cfg.fraction(3) == pytest.approx(0.05)
        assert cfg.fraction(1000) == 0.5

    def test_matches_uneven_two_bucket_basic(self):
        # two buckets of sizes (N-k, k) with weights (1, low) and per-bucket means
        # equals the weighted mean once the bucket means are rescaled by size/N
        rng = Rng(8)
        for _ in range(50):
            n = int(rng.integers(4, 40))
            ls = rng.uniform(n)
            cfg = TscBucketConfig(low_weight=0.01, initial_fraction=float(rng.uniform(1)[0]) * 0.5)
            loss, _ = tsc_two_bucket_pal(ls, cfg, 1)
            k = int(np.ceil(round(cfg.initial_fraction * n, 9)))
            srt = np.sort(ls)
            low, high = srt[: n - k], srt[n - k :]
            ref = (len(low) * low.mean() + (cfg.low_weight * len(high) * high.mean() if k else 0.0)) / n
            assert loss == pytest.approx(ref, abs=1e-12)

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            tsc_two_bucket_pal([1.0], TscBucketConfig(), 1)


# ---- per-sample weight properties ------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=64), st.integers(2, 9), st.integers(1, 4),
       st.sampled_from(["hierarchical", "evolving"]), st.booleans())
def test_weight_anti_monotone(losses, K0, stage, mode, trim):
    n = len(losses)
    K0 = min(K0, n)
    if K0 - (stage - 1) < 2:
        return
    plan = StagePlan(initial_buckets=K0, trim_leading=trim)
    fn = hierarchical_pal if mode == "hierarchical" else evolving_pal
    loss, w = fn(stage, plan, losses)
    ls = np.asarray(losses)
    assert np.all(w >= 0) and np.all(w <= 1)
    assert abs(loss - float(w @ ls)) <= 1e-12 * max(1.0, ls.sum())
    order = np.argsort(ls, kind="stable")
    assert np.all(np.diff(w[order]) <= 1e-15)


def test_partial_batch_clamps_with_warning():
    plan = StagePlan(initial_buckets=9)
    with pytest.warns(RuntimeWarning, match="clamping"):
        loss, w = hierarchical_pal(1, plan, [0.3, 0.1, 0.2])
    assert len(w) == 3 and loss > 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        loss, w = hierarchical_pal(1, plan, [0.7])
    assert loss == 0.7 and w.tolist() == [1.0]


# ---- stage advancement -----------------------------------------------------

def trace(plan, epochs, batch_size=None):
    stage, out = 1, []
    for e in range(1, epochs + 1):
        out.append(stage)
        stage = advance_stage(plan, stage, e, epochs, batch_size)
    return out


# hand-written: the stage used during each of 12 epochs, advancing after epochs divisible by eps
REFERENCE = {
    (1, None): [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12],
    (2, None): [1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6],
    (3, None): [1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4],
}


class TestAdvance:
    @pytest.mark.parametrize("eps", [1, 2, 3])
    def test_reference_table(self, eps):
        plan = StagePlan(epoch_interval=eps, initial_buckets=20, max_stages=12)
        assert trace(plan, 12) == REFERENCE[(eps, None)]

    @pytest.mark.parametrize("eps", [1, 2, 3])
    def test_feasibility_cap(self, eps):
        # K0=4: groups of 4, 3, 2 buckets, so at most 3 stages
        plan = StagePlan(epoch_interval=eps, initial_buckets=4, max_stages=12)
        assert trace(plan, 12) == [min(s, 3) for s in REFERENCE[(eps, None)]]

    def test_batch_size_cap(self):
        # stage 2 adds a 4-bucket group; a batch of 5 cannot give each bucket 2 samples
        plan = StagePlan(epoch_interval=1, initial_buckets=5, max_stages=12)
        assert trace(plan, 6, batch_size=5) == [1, 1, 1, 1, 1, 1]
        assert trace(plan, 6, batch_size=10) == [1, 2, 3, 4, 4, 4]

    def test_eps2_s3(self):
        plan = StagePlan(epoch_interval=2, max_stages=3)
        assert trace(plan, 6) == [1, 1, 2, 2, 3, 3]

    def test_single_stage(self):
        assert trace(StagePlan(epoch_interval=1, max_stages=1), 10) == [1] * 10

    def test_k0_3_never_past_2(self):
        for eps in (1, 2, 5):
            assert max(trace(StagePlan(epoch_interval=eps, initial_buckets=3, max_stages=50), 30)) == 2
        assert stage_cap(StagePlan(initial_buckets=3, max_stages=50)) == 2

    def test_default_stage_count(self):
        assert StagePlan(epoch_interval=2).stages(30) == 15
        with pytest.raises(BadSpec):
            StagePlan().stages()
