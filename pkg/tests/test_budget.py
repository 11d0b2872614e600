import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prune_opd import budget as budget_ctl
from prune_opd.budget import BudgetConfig, BudgetState, hit_ratio, init, step
from prune_opd.errors import EmptyInputError, InvalidConfigError

PAPER_CFG = BudgetConfig(
    m_init=2048, m_min=1024, m_max=12288, delta=100, margin=100, rho=0.1, patience=3
)


def reference_machine(cfg, hit_ratios):
    """Independent hand-written controller: returns the m_current sequence."""
    m = cfg.m_init
    streak = 0
    out = []
    for h in hit_ratios:
        if h >= cfg.rho:
            m = min(m + cfg.delta, cfg.m_max)
            streak = 0
        else:
            streak += 1
            if streak == cfg.patience:
                m = max(m - cfg.delta, cfg.m_min)
                streak = 0
        out.append(m)
    return out


def test_init_values():
    state = init(PAPER_CFG)
    assert (state.m_current, state.low_hit_streak, state.step_index) == (2048, 0, 0)
    high = BudgetConfig(m_init=6144, m_min=1024, m_max=12288, delta=100, margin=100)
    assert init(high).m_current == 6144


def test_init_rejects_out_of_range():
    with pytest.raises(InvalidConfigError):
        BudgetConfig(m_init=512, m_min=1024, m_max=12288)


def test_hit_ratio_counts_non_strict():
    # threshold is m_current - margin = 1948, counted non-strictly
    assert hit_ratio([2048, 1948, 500, 100], 2048, 100) == 0.5
    assert hit_ratio([1947, 1948], 2048, 100) == 0.5
    assert hit_ratio([2048] * 4, 2048, 100) == 1.0
    assert hit_ratio([0, 0, 0], 2048, 100) == 0.0


def test_hit_ratio_empty_batch():
    with pytest.raises(EmptyInputError):
        hit_ratio([], 2048, 100)


def test_step_expand_branch():
    state = init(PAPER_CFG)
    nxt = step(state, 0.2, PAPER_CFG)
    assert nxt.m_current == 2148 and nxt.low_hit_streak == 0


def test_step_patience_contraction():
    state = init(PAPER_CFG)
    for i in range(3):
        state = step(state, 0.0, PAPER_CFG)
        if i < 2:
            assert state.m_current == 2048 and state.low_hit_streak == i + 1
    assert state.m_current == 1948 and state.low_hit_streak == 0


def test_step_clamps_at_max():
    state = BudgetState(m_current=12288)
    assert step(state, 1.0, PAPER_CFG).m_current == 12288


def test_step_clamps_at_min():
    cfg = BudgetConfig(m_init=1024, m_min=1024, m_max=12288, patience=1)
    state = init(cfg)
    assert step(state, 0.0, cfg).m_current == 1024


def test_expansion_resets_streak_mid_window():
    state = init(PAPER_CFG)
    state = step(state, 0.0, PAPER_CFG)
    state = step(state, 0.0, PAPER_CFG)
    assert state.low_hit_streak == 2
    state = step(state, 0.5, PAPER_CFG)  # expand clears the streak
    assert state.low_hit_streak == 0
    state = step(state, 0.0, PAPER_CFG)
    state = step(state, 0.0, PAPER_CFG)
    assert state.m_current == 2148  # no contraction yet: streak restarted


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60), st.integers(0, 2**16))
@settings(max_examples=200)
def test_matches_reference_machine(hit_ratios, seed):
    rng = np.random.default_rng(seed)
    m_min = int(rng.integers(1, 50)) * 10
    m_max = m_min + int(rng.integers(1, 50)) * 10
    cfg = BudgetConfig(
        m_init=int(rng.integers(m_min, m_max + 1)),
        m_min=m_min,
        m_max=m_max,
        delta=int(rng.integers(1, 200)),
        margin=int(rng.integers(0, 100)),
        rho=float(rng.uniform(0, 1)),
        patience=int(rng.integers(1, 6)),
    )
    state = init(cfg)
    got = []
    for h in hit_ratios:
        state = step(state, h, cfg)
        got.append(state.m_current)
        assert cfg.m_min <= state.m_current <= cfg.m_max
        assert state.low_hit_streak < cfg.patience
    assert got == reference_machine(cfg, hit_ratios)


def test_determinism():
    state = BudgetState(m_current=2000, low_hit_streak=1, step_index=5)
    assert step(state, 0.05, PAPER_CFG) == step(state, 0.05, PAPER_CFG)


def test_saturating_feed_reaches_max_in_exact_steps():
    # feeding E = m_current - margin keeps the hit ratio at 1, so the budget
    # expands by delta every step until it clamps
    cfg = BudgetConfig(m_init=2048, m_min=1024, m_max=12288, delta=100, margin=100)
    state = init(cfg)
    expected_steps = math.ceil((cfg.m_max - cfg.m_init) / cfg.delta)
    steps_taken = 0
    prev = state.m_current
    while state.m_current < cfg.m_max:
        h = hit_ratio([state.m_current - cfg.margin] * 4, state.m_current, cfg.margin)
        assert h == 1.0
        state = step(state, h, cfg)
        assert state.m_current >= prev
        prev = state.m_current
        steps_taken += 1
    assert steps_taken == expected_steps
