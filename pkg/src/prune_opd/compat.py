"""Per-position student/teacher compatibility signals.

Everything here is a pure function of its inputs: top-k candidate overlap,
nucleus acceptance of the sampled token, drift-event indicators, and the
entropy-gap diagnostic. These signals are computed on the *same* student
prefix for both models; callers are responsible for that alignment.

Entropies are computed on the top-k masses renormalized to sum to one,
because only top-k probabilities are observable through the trace interface.
This is an approximation of the full-vocabulary entropy and is documented as
such.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInputError, InvalidConfigError, InvalidRecordError

OVERLAP_RATIO = "overlap_ratio"
TEACHER_TOP_P_ACCEPT = "teacher_top_p_accept"
METRIC_KINDS = (OVERLAP_RATIO, TEACHER_TOP_P_ACCEPT)

_MASS_SLACK = 1e-9  # tolerance on sum(probs) <= 1


@dataclass(frozen=True)
class TopKSlice:
    """Top-k candidate tokens of one model at one position.

    ``probs`` are the model's actual (unrenormalized) probabilities for the
    candidates, sorted non-increasing and aligned with ``token_ids``.
    """

    token_ids: tuple[int, ...]
    probs: tuple[float, ...]
    k: int

    def __post_init__(self):
        ids = tuple(int(t) for t in self.token_ids)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "token_ids", ids)
        object.__setattr__(self, "probs", probs)
        if len(ids) != len(probs):
            raise InvalidRecordError(
                f"token_ids and probs length mismatch: {len(ids)} != {len(probs)}"
            )
        if self.k < 1:
            raise InvalidConfigError(f"k must be >= 1, got {self.k}")
        if len(ids) > self.k:
            raise InvalidRecordError(f"slice holds {len(ids)} candidates but k={self.k}")
        if len(set(ids)) != len(ids):
            raise InvalidRecordError("duplicate token ids in slice")
        total = 0.0
        prev = 1.0
        for p in probs:
            if not (0.0 < p <= 1.0):
                raise InvalidRecordError(f"prob {p} outside (0, 1]")
            if p > prev:
                raise InvalidRecordError("probs not sorted non-increasing")
            prev = p
            total += p
        if total > 1.0 + _MASS_SLACK:
            raise InvalidRecordError(f"probs sum to {total} > 1")

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class CompatConfig:
    """Which compatibility metric fires drift events, and its thresholds."""

    metric_kind: str = OVERLAP_RATIO
    gamma: float = 0.7
    p: float = 0.95
    k: int = 16

    def __post_init__(self):
        if self.metric_kind not in METRIC_KINDS:
            raise InvalidConfigError(f"unknown metric_kind {self.metric_kind!r}")
        if not (0.0 <= self.gamma <= 1.0):
            raise InvalidConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if not (0.0 < self.p <= 1.0):
            raise InvalidConfigError(f"p must be in (0, 1], got {self.p}")
        if self.k < 1:
            raise InvalidConfigError(f"k must be >= 1, got {self.k}")


def topk_overlap(student: TopKSlice, teacher: TopKSlice, k: int) -> float:
    """Fraction of candidate ids shared by the two slices: |S ∩ T| / k."""
    if k < 1:
        raise InvalidConfigError(f"k must be >= 1, got {k}")
    shared = set(student.token_ids) & set(teacher.token_ids)
    return len(shared) / k


def top_p_accept(sampled_token: int, teacher: TopKSlice, p: float) -> bool:
    """Is the sampled token inside the teacher's visible nucleus?

    The nucleus is the shortest prefix of the (sorted) teacher candidates
    whose cumulative mass reaches ``p``. If the returned top-k mass never
    reaches ``p``, the true nucleus extends beyond the observed set, so the
    whole returned set is used conservatively.
    """
    if len(teacher) == 0:
        raise InvalidRecordError("empty teacher slice")
    if not (0.0 < p <= 1.0):
        raise InvalidConfigError(f"p must be in (0, 1], got {p}")
    cumulative = 0.0
    m = len(teacher)
    for i, prob in enumerate(teacher.probs):
        cumulative += prob
        if cumulative >= p:
            m = i + 1
            break
    return sampled_token in teacher.token_ids[:m]


def drift_event(
    student: TopKSlice, teacher: TopKSlice, sampled_token: int, cfg: CompatConfig
) -> int:
    """Drift indicator at one position: 1 when compatibility fails.

    Overlap kind fires on overlap strictly below gamma; the top-p kind fires
    when the sampled token is rejected by the teacher's nucleus.
    """
    if cfg.metric_kind == OVERLAP_RATIO:
        return int(topk_overlap(student, teacher, cfg.k) < cfg.gamma)
    return int(not top_p_accept(sampled_token, teacher, cfg.p))


def _renormalized_entropy(probs: Sequence[float]) -> float:
    total = math.fsum(probs)
    if total <= 0.0:
        raise InvalidRecordError("all-zero mass in slice")
    return -math.fsum((p / total) * math.log(p / total) for p in probs if p > 0.0)


def entropy_gap(student: TopKSlice, teacher: TopKSlice) -> float:
    """|H(teacher) - H(student)| over renormalized top-k masses, in nats."""
    return abs(_renormalized_entropy(teacher.probs) - _renormalized_entropy(student.probs))


def mean_overlap(traces: Iterable, k: int) -> float:
    """Mean per-position top-k overlap over all valid positions of all traces."""
    total = 0.0
    count = 0
    for trace in traces:
        for record in trace.records:
            if not record.valid:
                continue
            total += topk_overlap(record.student, record.teacher, k)
            count += 1
    if count == 0:
        raise EmptyInputError("no valid positions across traces")
    return total / count
