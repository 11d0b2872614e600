"""Bit-exact serialization of rollout traces and metric streams.

Traces are JSON lines: a schema header, one meta line per rollout carrying
the prompt, then one line per (rollout, position). Floats go through
Python's shortest round-trip decimal repr, so read(write(x)) reproduces the
exact bit patterns; ``strict_hex=True`` additionally embeds hex-float copies
of every float list for audits, and readers prefer those when present.

Metrics are CSV with a schema-version comment line and a fixed column order
(plus an optional JSONL mirror). Only finite values are accepted.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .compat import TopKSlice
from .errors import InvalidRecordError, TraceParseError
from .reliability import RewardTensor
from .sim import PositionRecord, RolloutTrace

TRACE_SCHEMA = "prune-opd-trace/1"
METRICS_SCHEMA = "prune-opd-metrics/1"

_METRIC_COLUMNS = (
    "step_index",
    "mean_overlap",
    "mean_effective_length",
    "m_current",
    "hit_ratio",
    "tokens_generated",
    "tokens_scored",
)


@dataclass(frozen=True)
class MetricsRow:
    step_index: int
    mean_overlap: float
    mean_effective_length: float
    m_current: int
    hit_ratio: float
    tokens_generated: int
    tokens_scored: int
    mean_loss_weight_by_band: tuple[float, ...]

    def __post_init__(self):
        bands = tuple(float(b) for b in self.mean_loss_weight_by_band)
        object.__setattr__(self, "mean_loss_weight_by_band", bands)
        numbers = (
            self.mean_overlap,
            self.mean_effective_length,
            self.hit_ratio,
            *bands,
        )
        for value in numbers:
            if not np.isfinite(value):
                raise InvalidRecordError(f"non-finite metric value {value}")
        if self.tokens_scored > self.tokens_generated:
            raise InvalidRecordError("tokens_scored exceeds tokens_generated")
        for ratio in (self.mean_overlap, self.hit_ratio):
            if not (0.0 <= ratio <= 1.0):
                raise InvalidRecordError(f"ratio {ratio} outside [0, 1]")


def _float_list(values) -> list[float]:
    return [float(v) for v in values]


def _hex_list(values) -> list[str]:
    return [float(v).hex() for v in values]


def _floats_from(obj: dict, key: str) -> list[float]:
    if key + "_hex" in obj:
        return [float.fromhex(h) for h in obj[key + "_hex"]]
    return [float(v) for v in obj[key]]


def write_traces(traces, path, *, strict_hex: bool = False) -> int:
    """Write traces as JSON lines; returns the byte count written."""
    lines = [json.dumps({"schema": TRACE_SCHEMA})]
    for rollout_id, trace in enumerate(traces):
        lines.append(json.dumps({"rollout_id": rollout_id, "prompt": list(trace.prompt)}))
        for position, record in enumerate(trace.records):
            obj = {
                "rollout_id": rollout_id,
                "position": position,
                "student_ids": list(record.student.token_ids),
                "student_probs": _float_list(record.student.probs),
                "teacher_ids": list(record.teacher.token_ids),
                "teacher_probs": _float_list(record.teacher.probs),
                "sampled_token": int(record.sampled_token),
                "valid": bool(trace.valid_mask[position]),
                "raw_rewards": _float_list(trace.rewards.values[position]),
            }
            if strict_hex:
                obj["student_probs_hex"] = _hex_list(record.student.probs)
                obj["teacher_probs_hex"] = _hex_list(record.teacher.probs)
                obj["raw_rewards_hex"] = _hex_list(trace.rewards.values[position])
            lines.append(json.dumps(obj))
    payload = "\n".join(lines) + "\n"
    with open(path, "w", newline="\n") as fh:
        fh.write(payload)
    return len(payload.encode())


def read_traces(path) -> list[RolloutTrace]:
    """Parse a trace file back into RolloutTrace objects."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceParseError("empty trace file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid JSON: {exc}", 1) from exc
    if header.get("schema") != TRACE_SCHEMA:
        raise TraceParseError(f"unexpected schema {header.get('schema')!r}", 1)

    prompts: dict[int, tuple[int, ...]] = {}
    positions: dict[int, dict[int, dict]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"invalid JSON: {exc}", lineno) from exc
        rid = obj.get("rollout_id")
        if rid is None:
            raise TraceParseError("missing rollout_id", lineno)
        if "position" not in obj:
            if rid in prompts:
                raise TraceParseError(f"duplicate prompt line for rollout {rid}", lineno)
            prompts[rid] = tuple(int(t) for t in obj["prompt"])
            continue
        pos = int(obj["position"])
        per_rollout = positions.setdefault(rid, {})
        if pos in per_rollout:
            raise InvalidRecordError(
                f"duplicate (rollout_id, position) = ({rid}, {pos})"
            )
        per_rollout[pos] = obj

    traces = []
    for rid in sorted(positions):
        if rid not in prompts:
            raise InvalidRecordError(f"rollout {rid} has no prompt line")
        per_rollout = positions[rid]
        count = len(per_rollout)
        if sorted(per_rollout) != list(range(count)):
            raise InvalidRecordError(f"rollout {rid} positions not contiguous from 0")
        records = []
        reward_rows = []
        valid = []
        response = []
        for pos in range(count):
            obj = per_rollout[pos]
            student = TopKSlice(
                tuple(obj["student_ids"]),
                tuple(_floats_from(obj, "student_probs")),
                k=len(obj["student_ids"]),
            )
            teacher = TopKSlice(
                tuple(obj["teacher_ids"]),
                tuple(_floats_from(obj, "teacher_probs")),
                k=len(obj["teacher_ids"]),
            )
            records.append(
                PositionRecord(student, teacher, int(obj["sampled_token"]), bool(obj["valid"]))
            )
            reward_rows.append(_floats_from(obj, "raw_rewards"))
            valid.append(bool(obj["valid"]))
            response.append(int(obj["sampled_token"]))
        traces.append(
            RolloutTrace(
                prompt=prompts[rid],
                response=tuple(response),
                records=tuple(records),
                rewards=RewardTensor(np.array(reward_rows, dtype=np.float64)),
                valid_mask=np.asarray(valid, dtype=bool),
            )
        )
    return traces


def _format_number(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _metric_header(n_bands: int) -> str:
    bands = [f"lw_band_{i}" for i in range(n_bands)]
    return ",".join(_METRIC_COLUMNS + tuple(bands))


def _metric_line(row: MetricsRow) -> str:
    values = [
        row.step_index,
        row.mean_overlap,
        row.mean_effective_length,
        row.m_current,
        row.hit_ratio,
        row.tokens_generated,
        row.tokens_scored,
        *row.mean_loss_weight_by_band,
    ]
    return ",".join(_format_number(v) for v in values)


def write_metrics(rows, path, *, jsonl_mirror: bool = False) -> None:
    """Write a metrics CSV (schema comment + header + rows)."""
    rows = list(rows)
    n_bands = len(rows[0].mean_loss_weight_by_band) if rows else 0
    lines = [f"# {METRICS_SCHEMA}", _metric_header(n_bands)]
    for row in rows:
        if len(row.mean_loss_weight_by_band) != n_bands:
            raise InvalidRecordError("inconsistent band count across metric rows")
        lines.append(_metric_line(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    if jsonl_mirror:
        mirror = os.fspath(path) + ".jsonl"
        with open(mirror, "w", newline="\n") as fh:
            for row in rows:
                fh.write(json.dumps(_row_dict(row)) + "\n")


def append_metrics(row: MetricsRow, path, *, jsonl_mirror: bool = False) -> None:
    """Append one row, writing the schema header only on a fresh file."""
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a", newline="\n") as fh:
        if not exists:
            fh.write(f"# {METRICS_SCHEMA}\n")
            fh.write(_metric_header(len(row.mean_loss_weight_by_band)) + "\n")
        fh.write(_metric_line(row) + "\n")
    if jsonl_mirror:
        with open(os.fspath(path) + ".jsonl", "a", newline="\n") as fh:
            fh.write(json.dumps(_row_dict(row)) + "\n")


def _row_dict(row: MetricsRow) -> dict:
    return {
        "step_index": row.step_index,
        "mean_overlap": row.mean_overlap,
        "mean_effective_length": row.mean_effective_length,
        "m_current": row.m_current,
        "hit_ratio": row.hit_ratio,
        "tokens_generated": row.tokens_generated,
        "tokens_scored": row.tokens_scored,
        "mean_loss_weight_by_band": list(row.mean_loss_weight_by_band),
    }


def read_metrics(path) -> list[MetricsRow]:
    """Parse a metrics CSV back into rows."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# {METRICS_SCHEMA}":
        raise TraceParseError(f"missing metrics schema header {METRICS_SCHEMA!r}", 1)
    if len(lines) < 2:
        raise TraceParseError("missing column header", 2)
    columns = lines[1].split(",")
    n_fixed = len(_METRIC_COLUMNS)
    if tuple(columns[:n_fixed]) != _METRIC_COLUMNS:
        raise TraceParseError("unexpected metric columns", 2)
    n_bands = len(columns) - n_fixed
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(columns):
            raise TraceParseError(f"expected {len(columns)} fields, got {len(parts)}", lineno)
        try:
            rows.append(
                MetricsRow(
                    step_index=int(parts[0]),
                    mean_overlap=float(parts[1]),
                    mean_effective_length=float(parts[2]),
                    m_current=int(parts[3]),
                    hit_ratio=float(parts[4]),
                    tokens_generated=int(parts[5]),
                    tokens_scored=int(parts[6]),
                    mean_loss_weight_by_band=tuple(float(p) for p in parts[n_fixed:]),
                )
            )
        except ValueError as exc:
            raise TraceParseError(str(exc), lineno) from exc
    return rows
