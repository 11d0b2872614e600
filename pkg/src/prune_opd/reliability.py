"""Cumulative reliability weights and reward scaling.

Drift events accumulate along a rollout into a clipped linear decay
R = clip(1 - w_drop * C, 0, 1); the loss weight adds a base floor on valid
positions, and every candidate reward at a position is multiplied by the
same scalar weight. The effective reliable length counts positions whose
*raw* reliability (not the floored loss weight) exceeds a small tolerance.

All functions operate on a single rollout; there is no cross-rollout state.
Padding positions never fire events, never advance the cumulative count, and
always carry zero raw reliability and zero loss weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compat import CompatConfig, drift_event
from .errors import InvalidConfigError, InvalidRecordError


@dataclass(frozen=True)
class ReliabilityConfig:
    w_drop: float = 0.01
    w_base: float = 0.5
    epsilon: float = 1e-6
    enabled: bool = True

    def __post_init__(self):
        if self.w_drop < 0:
            raise InvalidConfigError(f"w_drop must be >= 0, got {self.w_drop}")
        if self.w_base < 0:
            raise InvalidConfigError(f"w_base must be >= 0, got {self.w_base}")
        if not (0.0 <= self.epsilon < 1.0):
            raise InvalidConfigError(f"epsilon must be in [0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class RewardTensor:
    """Per-position, per-candidate raw distillation rewards, shape [T, k]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidRecordError(f"reward tensor must be 2-D, got shape {values.shape}")
        if values.size and not np.isfinite(values).all():
            raise InvalidRecordError("non-finite entries in reward tensor")
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ReliabilityProfile:
    """All per-position reliability quantities for one rollout."""

    events: np.ndarray        # {0,1} per position
    cumulative: np.ndarray    # prefix sums of events
    raw: np.ndarray           # clipped linear decay, 0 on padding
    loss_weight: np.ndarray   # raw + w_base on valid positions, 0 on padding
    effective_length: int
    valid_mask: np.ndarray


def cumulative_drift(events) -> np.ndarray:
    """Prefix sums of the drift-event sequence."""
    events = np.asarray(events, dtype=np.int64)
    if events.size and not np.isin(events, (0, 1)).all():
        raise InvalidRecordError("drift events must be 0 or 1")
    return np.cumsum(events)


def raw_reliability(cumulative, w_drop: float, valid_mask) -> np.ndarray:
    """clip(1 - w_drop * C, 0, 1) on valid positions, exactly 0 on padding."""
    if w_drop < 0:
        raise InvalidConfigError(f"w_drop must be >= 0, got {w_drop}")
    cumulative = np.asarray(cumulative, dtype=np.int64)
    valid = np.asarray(valid_mask, dtype=bool)
    if cumulative.shape != valid.shape:
        raise InvalidRecordError("cumulative and valid_mask length mismatch")
    raw = np.clip(1.0 - w_drop * cumulative, 0.0, 1.0)
    raw[~valid] = 0.0
    return raw


def loss_weights(raw, w_base: float, valid_mask) -> np.ndarray:
    """raw + w_base on valid positions, 0 on padding."""
    if w_base < 0:
        raise InvalidConfigError(f"w_base must be >= 0, got {w_base}")
    raw = np.asarray(raw, dtype=np.float64)
    valid = np.asarray(valid_mask, dtype=bool)
    if raw.shape != valid.shape:
        raise InvalidRecordError("raw and valid_mask length mismatch")
    weights = np.where(valid, raw + w_base, 0.0)
    return weights


def scale_rewards(rewards: RewardTensor, loss_weight, *, enabled: bool = True) -> RewardTensor:
    """Multiply every candidate reward at a position by that position's weight.

    With ``enabled=False`` the output is bit-identical to the input, so the
    unmodified distillation behavior is preserved.
    """
    if not enabled:
        return RewardTensor(rewards.values.copy())
    loss_weight = np.asarray(loss_weight, dtype=np.float64)
    if loss_weight.shape != (rewards.T,):
        raise InvalidRecordError(
            f"loss_weight length {loss_weight.shape} does not match T={rewards.T}"
        )
    return RewardTensor(rewards.values * loss_weight[:, None])


def effective_length(raw, epsilon: float) -> int:
    """Number of positions whose raw reliability strictly exceeds epsilon."""
    raw = np.asarray(raw, dtype=np.float64)
    return int((raw > epsilon).sum())


def process_rollout(trace, compat_cfg: CompatConfig, rel_cfg: ReliabilityConfig):
    """Full per-rollout pipeline: events -> weights -> scaled rewards.

    Returns ``(ReliabilityProfile, RewardTensor)``. The scaled tensor equals
    the raw tensor bit-for-bit when reliability is disabled; the profile is
    computed either way so diagnostics stay available.
    """
    records = trace.records
    rewards = trace.rewards
    if rewards.T != len(records):
        raise InvalidRecordError(
            f"reward tensor T={rewards.T} does not match {len(records)} records"
        )
    valid = np.asarray(trace.valid_mask, dtype=bool)
    if valid.shape != (len(records),):
        raise InvalidRecordError("valid_mask length does not match records")

    events = np.zeros(len(records), dtype=np.int64)
    for i, record in enumerate(records):
        if valid[i]:
            events[i] = drift_event(record.student, record.teacher, record.sampled_token, compat_cfg)

    cumulative = cumulative_drift(events)
    raw = raw_reliability(cumulative, rel_cfg.w_drop, valid)
    weights = loss_weights(raw, rel_cfg.w_base, valid)
    scaled = scale_rewards(rewards, weights, enabled=rel_cfg.enabled)
    profile = ReliabilityProfile(
        events=events,
        cumulative=cumulative,
        raw=raw,
        loss_weight=weights,
        effective_length=effective_length(raw, rel_cfg.epsilon),
        valid_mask=valid,
    )
    return profile, scaled
