"""Framework-side array container.

A FrameworkDump holds one batch of rollouts the way a training framework
hands them over: dense [B, T, k] top-k id/logprob arrays for student and
teacher, the sampled tokens, the raw per-candidate reward tensor, and a
[B, T] validity mask marking padding. Everything is plain numpy; ``.npz``
save/load covers the wire format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShimError(Exception):
    """Base for shim failures."""


class DumpShapeError(ShimError):
    """An array in the dump has an inconsistent shape or dtype."""


_ARRAY_FIELDS = (
    "student_ids",
    "student_logprobs",
    "teacher_ids",
    "teacher_logprobs",
    "sampled_tokens",
    "raw_rewards",
    "valid",
)


@dataclass(frozen=True)
class FrameworkDump:
    student_ids: np.ndarray       # [B, T, k] int
    student_logprobs: np.ndarray  # [B, T, k] float, descending along k
    teacher_ids: np.ndarray       # [B, T, k] int
    teacher_logprobs: np.ndarray  # [B, T, k] float, descending along k
    sampled_tokens: np.ndarray    # [B, T] int
    raw_rewards: np.ndarray       # [B, T, k] float
    valid: np.ndarray             # [B, T] bool

    def __post_init__(self):
        for name in ("student_ids", "teacher_ids", "sampled_tokens"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        for name in ("student_logprobs", "teacher_logprobs", "raw_rewards"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        valid = np.asarray(self.valid)
        if valid.dtype != np.bool_:
            raise DumpShapeError(f"valid mask must be boolean, got dtype {valid.dtype}")
        object.__setattr__(self, "valid", valid)

        if self.student_ids.ndim != 3:
            raise DumpShapeError(
                f"student_ids must be [B, T, k], got {self.student_ids.ndim} axes"
            )
        b, t, k = self.student_ids.shape
        for name in ("student_logprobs", "teacher_ids", "teacher_logprobs", "raw_rewards"):
            shape = getattr(self, name).shape
            if shape != (b, t, k):
                axis = next(i for i in range(max(len(shape), 3))
                            if i >= len(shape) or shape[i] != (b, t, k)[i])
                raise DumpShapeError(
                    f"{name} shape {shape} disagrees with student_ids {(b, t, k)} on axis {axis}"
                )
        for name in ("sampled_tokens", "valid"):
            shape = getattr(self, name).shape
            if shape != (b, t):
                raise DumpShapeError(f"{name} shape {shape} must be [B, T] = {(b, t)}")

    @property
    def batch_size(self) -> int:
        return self.student_ids.shape[0]

    @property
    def length(self) -> int:
        return self.student_ids.shape[1]

    @property
    def k(self) -> int:
        return self.student_ids.shape[2]

    def save(self, path) -> None:
        np.savez(path, **{name: getattr(self, name) for name in _ARRAY_FIELDS})

    @classmethod
    def load(cls, path) -> "FrameworkDump":
        with np.load(path) as data:
            missing = [name for name in _ARRAY_FIELDS if name not in data]
            if missing:
                raise DumpShapeError(f"dump file {path} missing arrays: {missing}")
            return cls(**{name: data[name] for name in _ARRAY_FIELDS})
