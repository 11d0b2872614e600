"""Dynamic response-budget controller.

A single batch-global maximum response length is expanded whenever the batch
hit ratio (fraction of rollouts whose effective reliable length reaches the
current budget up to a margin) clears a threshold, and contracted after a
patience window of consecutive low-hit steps. Both branches reset the
low-hit streak, and the budget is always clamped to [m_min, m_max].

The controller is a pure state machine: ``step`` returns a new state and
never mutates its input, so replays are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyInputError, InvalidConfigError


@dataclass(frozen=True)
class BudgetConfig:
    m_init: int = 1024
    m_min: int = 1024
    m_max: int = 12288
    delta: int = 100
    margin: int = 100
    rho: float = 0.1
    patience: int = 3

    def __post_init__(self):
        if not (self.m_min <= self.m_init <= self.m_max):
            raise InvalidConfigError(
                f"need m_min <= m_init <= m_max, got {self.m_min}, {self.m_init}, {self.m_max}"
            )
        if self.delta <= 0:
            raise InvalidConfigError(f"delta must be > 0, got {self.delta}")
        if self.margin < 0:
            raise InvalidConfigError(f"margin must be >= 0, got {self.margin}")
        if not (0.0 <= self.rho <= 1.0):
            raise InvalidConfigError(f"rho must be in [0, 1], got {self.rho}")
        if self.patience < 1:
            raise InvalidConfigError(f"patience must be >= 1, got {self.patience}")


@dataclass(frozen=True)
class BudgetState:
    m_current: int
    low_hit_streak: int = 0
    step_index: int = 0


def init(cfg: BudgetConfig) -> BudgetState:
    """Fresh state at the configured initial budget."""
    return BudgetState(m_current=cfg.m_init, low_hit_streak=0, step_index=0)


def hit_ratio(effective_lengths: Sequence[int], m_current: int, margin: int) -> float:
    """Fraction of the batch with effective length >= m_current - margin."""
    lengths = list(effective_lengths)
    if not lengths:
        raise EmptyInputError("empty batch of effective lengths")
    threshold = m_current - margin
    hits = sum(1 for e in lengths if e >= threshold)
    return hits / len(lengths)


def step(state: BudgetState, h: float, cfg: BudgetConfig) -> BudgetState:
    """One controller update from the observed batch hit ratio."""
    if not (0.0 <= h <= 1.0):
        raise InvalidConfigError(f"hit ratio must be in [0, 1], got {h}")
    if h >= cfg.rho:
        return BudgetState(
            m_current=min(state.m_current + cfg.delta, cfg.m_max),
            low_hit_streak=0,
            step_index=state.step_index + 1,
        )
    streak = state.low_hit_streak + 1
    if streak >= cfg.patience:
        return BudgetState(
            m_current=max(state.m_current - cfg.delta, cfg.m_min),
            low_hit_streak=0,
            step_index=state.step_index + 1,
        )
    return BudgetState(
        m_current=state.m_current,
        low_hit_streak=streak,
        step_index=state.step_index + 1,
    )
