import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_trace
from prune_opd.compat import CompatConfig
from prune_opd.errors import InvalidConfigError, InvalidRecordError
from prune_opd.reliability import (
    ReliabilityConfig,
    RewardTensor,
    cumulative_drift,
    effective_length,
    loss_weights,
    process_rollout,
    raw_reliability,
    scale_rewards,
)


def reference_pipeline(events, valid, w_drop, w_base, eps, rewards):
    """Naive scalar loop mirroring the formula chain, used as oracle."""
    t_len = len(events)
    cum, raw, weights = [], [], []
    c = 0
    for tau in range(t_len):
        c += events[tau]
        cum.append(c)
        if valid[tau]:
            r = 1.0 - w_drop * c
            r = min(max(r, 0.0), 1.0)
        else:
            r = 0.0
        raw.append(r)
        weights.append(r + w_base if valid[tau] else 0.0)
    scaled = [[weights[tau] * rewards[tau][j] for j in range(len(rewards[tau]))] for tau in range(t_len)]
    eff = sum(1 for r in raw if r > eps)
    return cum, raw, weights, scaled, eff


# --- unit examples ----------------------------------------------------------

def test_cumulative_drift_prefix_sum():
    assert cumulative_drift([0, 0, 1, 0, 1]).tolist() == [0, 0, 1, 1, 2]
    assert cumulative_drift([0] * 5).tolist() == [0] * 5
    assert cumulative_drift([1, 1, 1]).tolist() == [1, 2, 3]


def test_cumulative_drift_rejects_non_binary():
    with pytest.raises(InvalidRecordError):
        cumulative_drift([0, 2, 1])


def test_raw_reliability_values():
    raw = raw_reliability([30], 0.01, [True])
    assert raw[0] == pytest.approx(0.70, abs=1e-15)
    assert raw_reliability([150], 0.01, [True])[0] == 0.0
    # valid C=0 but masked invalid -> forced to zero
    assert raw_reliability([0], 0.01, [False])[0] == 0.0


def test_raw_reliability_rejects_negative_drop():
    with pytest.raises(InvalidConfigError):
        raw_reliability([1], -0.1, [True])


def test_loss_weights_floor_and_padding():
    assert loss_weights([0.0], 0.5, [True])[0] == 0.5
    assert loss_weights([1.0], 0.5, [True])[0] == 1.5
    assert loss_weights([1.0], 0.5, [False])[0] == 0.0


def test_scale_rewards_broadcast():
    rewards = RewardTensor(np.array([[2.0, -1.0], [4.0, 4.0]]))
    out = scale_rewards(rewards, [1.0, 0.5])
    assert out.values.tolist() == [[2.0, -1.0], [2.0, 2.0]]


def test_scale_rewards_disabled_identity(rng):
    rewards = RewardTensor(rng.normal(size=(7, 3)))
    out = scale_rewards(rewards, rng.uniform(size=7), enabled=False)
    assert out.values.tobytes() == rewards.values.tobytes()


def test_scale_rewards_zero_row():
    rewards = RewardTensor(np.ones((2, 3)))
    out = scale_rewards(rewards, [1.0, 0.0])
    assert out.values[1].tolist() == [0.0, 0.0, 0.0]


def test_scale_rewards_shape_mismatch():
    with pytest.raises(InvalidRecordError):
        scale_rewards(RewardTensor(np.ones((2, 3))), [1.0, 1.0, 1.0])


def test_effective_length_strict():
    assert effective_length([1, 1, 0.5, 0, 0], 1e-6) == 3
    assert effective_length([0.0, 0.0], 1e-6) == 0  # base floor never counts
    eps = 1e-6
    assert effective_length([eps], eps) == 0


def test_composed_example():
    events = [0, 0, 1, 0, 1, 0]
    valid = [True] * 6
    cum = cumulative_drift(events)
    raw = raw_reliability(cum, 0.3, valid)
    weights = loss_weights(raw, 0.1, valid)
    assert raw.tolist() == pytest.approx([1, 1, 0.7, 0.7, 0.4, 0.4], abs=1e-12)
    assert weights.tolist() == pytest.approx([1.1, 1.1, 0.8, 0.8, 0.5, 0.5], abs=1e-12)
    assert effective_length(raw, 1e-6) == 6


def test_all_drift_hits_zero_at_position_100():
    t_len = 120
    events = [1] * t_len
    valid = [True] * t_len
    raw = raw_reliability(cumulative_drift(events), 0.01, valid)
    # scalar reference loop
    c = 0
    ref = []
    for e in events:
        c += e
        ref.append(min(max(1 - 0.01 * c, 0.0), 1.0))
    assert raw.tolist() == pytest.approx(ref, abs=0)
    assert raw[98] > 0 and raw[99] == 0.0  # the 100th position is the first zero
    assert effective_length(raw, 1e-6) == 99


# --- process_rollout --------------------------------------------------------

def overlap_trace(overlaps, k=4, n_padding=0):
    """Trace whose per-position overlaps are exactly the given fractions."""
    from prune_opd.compat import TopKSlice
    from prune_opd.sim import PositionRecord, RolloutTrace

    records = []
    for ov in overlaps:
        shared = int(round(ov * k))
        ids_s = list(range(k))
        ids_t = list(range(shared)) + list(range(40, 40 + k - shared))
        student = TopKSlice(tuple(ids_s), tuple([1.0 / k] * k), k)
        teacher = TopKSlice(tuple(ids_t), tuple([1.0 / k] * k), k)
        records.append(PositionRecord(student, teacher, 0, True))
    t_len = len(records)
    valid = np.ones(t_len, dtype=bool)
    if n_padding:
        valid[t_len - n_padding:] = False
    return RolloutTrace(
        prompt=(0,),
        response=tuple(0 for _ in records),
        records=tuple(records),
        rewards=RewardTensor(np.arange(t_len * k, dtype=float).reshape(t_len, k)),
        valid_mask=valid,
    )


def test_process_rollout_composition():
    # drift (overlap 0 < gamma) at positions 2 and 4
    trace = overlap_trace([1, 1, 0, 1, 0, 1])
    compat = CompatConfig(metric_kind="overlap_ratio", gamma=0.7, k=4)
    rel = ReliabilityConfig(w_drop=0.3, w_base=0.1)
    profile, scaled = process_rollout(trace, compat, rel)
    assert profile.events.tolist() == [0, 0, 1, 0, 1, 0]
    assert profile.raw.tolist() == pytest.approx([1, 1, 0.7, 0.7, 0.4, 0.4], abs=1e-12)
    assert profile.loss_weight.tolist() == pytest.approx([1.1, 1.1, 0.8, 0.8, 0.5, 0.5], abs=1e-12)
    assert profile.effective_length == 6
    np.testing.assert_allclose(scaled.values, trace.rewards.values * profile.loss_weight[:, None])


def test_process_rollout_no_drift():
    trace = overlap_trace([1.0] * 5)
    profile, _ = process_rollout(trace, CompatConfig(k=4), ReliabilityConfig())
    assert profile.raw.tolist() == [1.0] * 5
    assert profile.loss_weight.tolist() == [1.5] * 5
    assert profile.effective_length == 5


def test_process_rollout_padding_accrues_nothing():
    trace = overlap_trace([0.0] * 6, n_padding=3)
    profile, scaled = process_rollout(
        trace, CompatConfig(k=4), ReliabilityConfig(w_drop=0.1, w_base=0.5)
    )
    assert profile.events[3:].tolist() == [0, 0, 0]
    assert profile.cumulative.tolist() == [1, 2, 3, 3, 3, 3]
    assert profile.raw[3:].tolist() == [0.0, 0.0, 0.0]
    assert profile.loss_weight[3:].tolist() == [0.0, 0.0, 0.0]
    assert scaled.values[3:].tolist() == np.zeros((3, 4)).tolist()


def test_process_rollout_oracle_equivalence(rng):
    compat = CompatConfig(metric_kind="overlap_ratio", gamma=0.6, k=8)
    rel = ReliabilityConfig(w_drop=0.05, w_base=0.3)
    for _ in range(200):
        t_len = int(rng.integers(1, 65))
        pad = int(rng.integers(0, t_len))
        trace = random_trace(rng, t_len, 8, 64, n_padding=pad)
        profile, scaled = process_rollout(trace, compat, rel)
        events = profile.events.tolist()  # event computation shares compat path
        cum, raw, weights, scaled_ref, eff = reference_pipeline(
            events, trace.valid_mask.tolist(), rel.w_drop, rel.w_base, rel.epsilon,
            trace.rewards.values.tolist(),
        )
        assert profile.cumulative.tolist() == cum
        assert profile.raw.tolist() == raw
        assert profile.loss_weight.tolist() == weights
        assert scaled.values.tolist() == scaled_ref
        assert profile.effective_length == eff


# --- properties -------------------------------------------------------------

@given(
    arrays(np.int64, st.integers(1, 64), elements=st.integers(0, 1)),
    st.floats(0.0, 1.0),
    st.floats(0.0, 2.0),
)
@settings(max_examples=150)
def test_monotone_and_zero_absorbing(events, w_drop, w_base):
    valid = np.ones(len(events), dtype=bool)
    raw = raw_reliability(cumulative_drift(events), w_drop, valid)
    assert (np.diff(raw) <= 0).all()
    zeros = np.flatnonzero(raw == 0.0)
    if zeros.size:
        assert (raw[zeros[0]:] == 0.0).all()
    weights = loss_weights(raw, w_base, valid)
    np.testing.assert_array_equal(weights, raw + w_base)


@given(st.floats(-10, 10), st.integers(1, 20))
@settings(max_examples=60)
def test_scaling_linearity(c, t_len):
    rng = np.random.default_rng(7)
    values = rng.normal(size=(t_len, 3))
    weights = rng.uniform(0, 1.5, size=t_len)
    a = scale_rewards(RewardTensor(values * c), weights)
    b = scale_rewards(RewardTensor(values), weights)
    np.testing.assert_allclose(a.values, c * b.values, rtol=0, atol=1e-12)


@given(arrays(np.int64, st.integers(1, 64), elements=st.integers(0, 1)), st.integers(0, 10))
@settings(max_examples=100)
def test_effective_length_bounds(events, n_pad):
    n_pad = min(n_pad, len(events))
    valid = np.ones(len(events), dtype=bool)
    if n_pad:
        valid[len(events) - n_pad:] = False
    masked = np.where(valid, events, 0)
    raw = raw_reliability(cumulative_drift(masked), 0.01, valid)
    eff = effective_length(raw, 1e-6)
    assert eff <= int(valid.sum())
    if not masked.any():
        assert eff == int(valid.sum())
