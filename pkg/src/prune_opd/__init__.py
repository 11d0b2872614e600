"""Reliability-aware reward scaling and dynamic rollout budgets for
on-policy distillation, verified at desk scale with tabular policies."""

from .budget import BudgetConfig, BudgetState
from .compat import CompatConfig, TopKSlice, drift_event, entropy_gap, mean_overlap, top_p_accept, topk_overlap
from .reliability import (
    ReliabilityConfig,
    ReliabilityProfile,
    RewardTensor,
    cumulative_drift,
    effective_length,
    loss_weights,
    process_rollout,
    raw_reliability,
    scale_rewards,
)
from .sim import (
    DriftScenario,
    PositionRecord,
    RolloutTrace,
    TabularPolicy,
    build_drift_pair,
    next_dist,
    opd_reward,
    reverse_kl,
    sample_rollout,
    topk_of,
    train_step,
)

__all__ = [
    "BudgetConfig",
    "BudgetState",
    "CompatConfig",
    "DriftScenario",
    "PositionRecord",
    "ReliabilityConfig",
    "ReliabilityProfile",
    "RewardTensor",
    "RolloutTrace",
    "TabularPolicy",
    "TopKSlice",
    "build_drift_pair",
    "cumulative_drift",
    "drift_event",
    "effective_length",
    "entropy_gap",
    "loss_weights",
    "mean_overlap",
    "next_dist",
    "opd_reward",
    "process_rollout",
    "raw_reliability",
    "reverse_kl",
    "sample_rollout",
    "scale_rewards",
    "top_p_accept",
    "topk_of",
    "topk_overlap",
    "train_step",
]

__version__ = "0.1.0"
