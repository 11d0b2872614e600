"""Desk-scale stand-in for LLM student/teacher pairs.

Tabular autoregressive softmax policies over a small vocabulary, with an
optional prefix-length band dimension so a synthetic teacher can change its
next-token preferences at scheduled depths. That gives rollouts whose
student/teacher top-k overlap follows a known curve, which is what the
reliability machinery is tested against.

The distillation reward at a position is the student-probability-weighted
log-ratio over the student's top-k candidates:

    r_j = w_j * (log q(v_j) - log p(v_j)),   w_j = p(v_j) / sum_i p(v_i)

with p the student and q the teacher distribution on the shared prefix.
``train_step`` ascends the surrogate sum of (scaled reward * log-prob) with
the rewards held fixed, so the scaled reward acts directly as the per-token,
per-candidate advantage. When the candidate set covers the whole vocabulary
this surrogate gradient equals the exact negative reverse-KL gradient.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .compat import TopKSlice
from .errors import InvalidConfigError, InvalidRecordError
from .reliability import RewardTensor


@dataclass(eq=False)
class TabularPolicy:
    """Softmax policy with a logits table indexed by (band, Markov context).

    The context row for a prefix combines the prefix-length band (from
    ``band_starts``) with the last ``context_order`` tokens; prefixes shorter
    than the order are left-padded with token 0. Logits are treated as
    immutable after construction — ``train_step`` returns a new policy.
    """

    vocab_size: int
    context_order: int
    logits: np.ndarray
    temperature: float = 1.0
    band_starts: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.vocab_size < 1:
            raise InvalidConfigError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.context_order < 0:
            raise InvalidConfigError(f"context_order must be >= 0, got {self.context_order}")
        if self.temperature <= 0:
            raise InvalidConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.band_starts[0] != 0 or list(self.band_starts) != sorted(set(self.band_starts)):
            raise InvalidConfigError("band_starts must start at 0 and strictly increase")
        logits = np.asarray(self.logits, dtype=np.float64)
        expected = (self.n_rows, self.vocab_size)
        if logits.shape != expected:
            raise InvalidConfigError(f"logits shape {logits.shape} != expected {expected}")
        self.logits = logits
        self._prob_table = None
        self._cdf_table = None
        self._log_table = None
        self._topk_cache = {}
        self._reward_cache = {}

    @property
    def n_bands(self) -> int:
        return len(self.band_starts)

    @property
    def n_rows(self) -> int:
        return self.n_bands * self.vocab_size**self.context_order

    def context_row(self, prefix: Sequence[int]) -> int:
        band = bisect_right(self.band_starts, len(prefix)) - 1
        idx = 0
        v = self.vocab_size
        for i in range(self.context_order):
            tok = prefix[-1 - i] if i < len(prefix) else 0
            idx += int(tok) * v**i
        return band * v**self.context_order + idx

    def prob_table(self) -> np.ndarray:
        if self._prob_table is None:
            z = self.logits / self.temperature
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            self._prob_table = e / e.sum(axis=1, keepdims=True)
        return self._prob_table

    def log_table(self) -> np.ndarray:
        if self._log_table is None:
            with np.errstate(divide="ignore"):
                self._log_table = np.log(self.prob_table())
        return self._log_table

    def cdf_table(self) -> np.ndarray:
        if self._cdf_table is None:
            self._cdf_table = np.cumsum(self.prob_table(), axis=1)
        return self._cdf_table

    def topk_slices(self, k: int) -> list[TopKSlice]:
        """Top-k slice per context row; probability ties break by lower id."""
        if k > self.vocab_size:
            raise InvalidConfigError(f"k={k} exceeds vocab_size={self.vocab_size}")
        if k not in self._topk_cache:
            probs = self.prob_table()
            # stable sort on -probs breaks probability ties by ascending id
            order = np.argsort(-probs, axis=1, kind="stable")
            slices = []
            for row in range(self.n_rows):
                ids = order[row, :k]
                slices.append(TopKSlice(tuple(ids.tolist()), tuple(probs[row, ids].tolist()), k))
            self._topk_cache[k] = slices
        return self._topk_cache[k]


@dataclass(frozen=True)
class PositionRecord:
    student: TopKSlice
    teacher: TopKSlice
    sampled_token: int
    valid: bool = True


@dataclass(frozen=True)
class RolloutTrace:
    prompt: tuple[int, ...]
    response: tuple[int, ...]
    records: tuple[PositionRecord, ...]
    rewards: RewardTensor
    valid_mask: np.ndarray

    def __post_init__(self):
        valid = np.asarray(self.valid_mask, dtype=bool)
        object.__setattr__(self, "valid_mask", valid)
        if not (len(self.records) == len(self.response) == self.rewards.T == valid.shape[0]):
            raise InvalidRecordError("records, response, rewards and valid_mask lengths differ")


def next_dist(policy: TabularPolicy, prefix: Sequence[int]) -> np.ndarray:
    """Full next-token probability vector at the given prefix."""
    for tok in prefix:
        if not (0 <= int(tok) < policy.vocab_size):
            raise InvalidRecordError(f"token {tok} outside vocabulary of size {policy.vocab_size}")
    return policy.prob_table()[policy.context_row(prefix)].copy()


def topk_of(policy: TabularPolicy, prefix: Sequence[int], k: int) -> TopKSlice:
    """Top-k candidates at the prefix, ties broken by ascending token id."""
    for tok in prefix:
        if not (0 <= int(tok) < policy.vocab_size):
            raise InvalidRecordError(f"token {tok} outside vocabulary of size {policy.vocab_size}")
    return policy.topk_slices(k)[policy.context_row(prefix)]


def opd_reward(student_slice: TopKSlice, teacher_logprobs_at_ids) -> np.ndarray:
    """Per-candidate reward row: renormalized-student-weighted log-ratio."""
    logq = np.asarray(teacher_logprobs_at_ids, dtype=np.float64)
    if logq.shape != (len(student_slice),):
        raise InvalidRecordError("teacher logprob count does not match candidate count")
    if not np.isfinite(logq).all():
        raise InvalidRecordError("non-finite teacher log-probability")
    p = np.asarray(student_slice.probs, dtype=np.float64)
    w = p / p.sum()
    return w * (logq - np.log(p))


def reverse_kl(student: TabularPolicy, teacher: TabularPolicy, prefix: Sequence[int]) -> float:
    """KL(student || teacher) at one prefix; inf where the teacher has holes."""
    p = next_dist(student, prefix)
    q = next_dist(teacher, prefix)
    support = p > 0.0
    if np.any(support & (q == 0.0)):
        return math.inf
    p = p[support]
    q = q[support]
    return float(np.sum(p * (np.log(p) - np.log(q))))


def sample_rollout(
    student: TabularPolicy,
    teacher: TabularPolicy,
    prompt: Sequence[int],
    max_length: int,
    k: int,
    seed: int,
) -> RolloutTrace:
    """Sample one response from the student, recording both models' top-k
    slices and the raw reward row on every (shared) prefix."""
    if max_length < 1:
        raise InvalidConfigError(f"max_length must be >= 1, got {max_length}")
    prompt = tuple(int(t) for t in prompt)
    for tok in prompt:
        if not (0 <= tok < student.vocab_size):
            raise InvalidRecordError(f"prompt token {tok} outside vocabulary")
    rng = np.random.default_rng(seed)
    uniforms = rng.random(max_length)

    s_cdf = student.cdf_table()
    s_slices = student.topk_slices(k)
    t_slices = teacher.topk_slices(k)
    t_log = teacher.log_table()
    reward_cache = student._reward_cache

    prefix = list(prompt)
    response: list[int] = []
    records: list[PositionRecord] = []
    reward_rows: list[np.ndarray] = []
    for tau in range(max_length):
        srow = student.context_row(prefix)
        trow = teacher.context_row(prefix)
        student_slice = s_slices[srow]
        teacher_slice = t_slices[trow]
        key = (srow, trow, id(teacher), k)
        row = reward_cache.get(key)
        if row is None:
            row = opd_reward(student_slice, t_log[trow, list(student_slice.token_ids)])
            reward_cache[key] = row
        token = int(np.searchsorted(s_cdf[srow], uniforms[tau], side="right"))
        token = min(token, student.vocab_size - 1)  # guard against cdf rounding
        records.append(PositionRecord(student_slice, teacher_slice, token, True))
        reward_rows.append(row)
        response.append(token)
        prefix.append(token)

    rewards = RewardTensor(np.stack(reward_rows))
    return RolloutTrace(
        prompt=prompt,
        response=tuple(response),
        records=tuple(records),
        rewards=rewards,
        valid_mask=np.ones(max_length, dtype=bool),
    )


def train_step(student: TabularPolicy, batch, learning_rate: float) -> TabularPolicy:
    """Policy-gradient update using scaled rewards as per-candidate advantages.

    ``batch`` is a sequence of ``(RolloutTrace, RewardTensor)`` pairs where
    the tensor holds the (possibly scaled) rewards for that trace. Returns a
    new policy; the input policy is left untouched.
    """
    batch = list(batch)
    if not batch:
        return TabularPolicy(
            student.vocab_size,
            student.context_order,
            student.logits.copy(),
            student.temperature,
            student.band_starts,
        )
    probs = student.prob_table()
    grad = np.zeros_like(student.logits)
    for trace, scaled in batch:
        if scaled.T != len(trace.records) or scaled.k != trace.rewards.k:
            raise InvalidRecordError("scaled reward tensor shape does not match trace")
        prefix = list(trace.prompt)
        for tau, record in enumerate(trace.records):
            if trace.valid_mask[tau]:
                row = student.context_row(prefix)
                r = scaled.values[tau]
                ids = list(record.student.token_ids)
                grad[row, ids] += r
                grad[row] -= r.sum() * probs[row]
            prefix.append(trace.response[tau])
    grad /= student.temperature * len(batch)
    return TabularPolicy(
        student.vocab_size,
        student.context_order,
        student.logits + learning_rate * grad,
        student.temperature,
        student.band_starts,
    )


@dataclass(frozen=True)
class DriftScenario:
    """Generative spec for a student/teacher pair with scheduled overlap.

    ``target_overlap_curve`` is a step function given as (response position,
    target overlap) breakpoints; the first breakpoint must sit at position 0
    and each target holds until the next breakpoint.
    """

    seed: int
    prompt_length: int
    max_length: int
    target_overlap_curve: tuple[tuple[int, float], ...]
    k: int = 16
    vocab_size: int = 64

    def __post_init__(self):
        curve = tuple((int(p), float(t)) for p, t in self.target_overlap_curve)
        object.__setattr__(self, "target_overlap_curve", curve)
        if not curve or curve[0][0] != 0:
            raise InvalidConfigError("overlap curve must start at position 0")
        positions = [p for p, _ in curve]
        if positions != sorted(set(positions)):
            raise InvalidConfigError("overlap curve positions must strictly increase")
        for _, target in curve:
            if not (0.0 <= target <= 1.0):
                raise InvalidConfigError(f"overlap target {target} outside [0, 1]")
        if self.k < 1 or self.vocab_size < 2 * self.k:
            raise InvalidConfigError("need vocab_size >= 2 * k for the drift construction")
        if self.prompt_length < 0 or self.max_length < 1:
            raise InvalidConfigError("prompt_length must be >= 0 and max_length >= 1")

    def target_at(self, position: int) -> float:
        value = self.target_overlap_curve[0][1]
        for start, target in self.target_overlap_curve:
            if position >= start:
                value = target
        return value


def build_drift_pair(scenario: DriftScenario) -> tuple[TabularPolicy, TabularPolicy]:
    """Construct a student and a banded teacher realizing the overlap curve.

    Within each position band the teacher's top-k shares exactly
    round(k * target) candidates with the student's top-k at every context,
    so the realized overlap is round(k * target) / k, within 1/(2k) of the
    target.
    """
    rng = np.random.default_rng(scenario.seed)
    v = scenario.vocab_size
    k = scenario.k
    student = TabularPolicy(
        vocab_size=v,
        context_order=1,
        logits=rng.normal(0.0, 1.0, size=(v, v)),
    )
    student_topk = student.topk_slices(k)

    band_starts = (0,) + tuple(
        scenario.prompt_length + pos for pos, _ in scenario.target_overlap_curve[1:]
    )
    targets = [t for _, t in scenario.target_overlap_curve]
    teacher_logits = np.empty((len(band_starts) * v, v))
    high = np.linspace(6.0, 4.0, k)
    for b, target in enumerate(targets):
        for ctx in range(v):
            row_index = b * v + ctx
            if target == 1.0:
                teacher_logits[row_index] = student.logits[ctx]
                continue
            j = round(k * target)
            student_ids = student_topk[ctx].token_ids
            shared = list(student_ids[:j])
            pool = np.setdiff1d(np.arange(v), np.asarray(student_ids, dtype=np.int64))
            novel = rng.choice(pool, size=k - j, replace=False).tolist()
            row = np.minimum(rng.normal(0.0, 0.5, size=v), 2.0)
            row[shared + novel] = high
            teacher_logits[row_index] = row
    teacher = TabularPolicy(
        vocab_size=v,
        context_order=1,
        logits=teacher_logits,
        band_starts=band_starts,
    )
    return student, teacher
