"""Dump <-> trace-file conversion and the CLI hop.

The trace file format ("prune-opd-trace/1" JSON lines) is the contract with
the scaling tool; this module writes and reads it directly instead of
linking against the library, and shells out to the ``prune-opd scale``
subcommand for the actual reward scaling.
"""

from __future__ import annotations

import json
import shutil
import subprocess
import sys

import numpy as np

from .dump import DumpShapeError, FrameworkDump, ShimError

TRACE_SCHEMA = "prune-opd-trace/1"


class ScaleToolError(ShimError):
    """The scaling CLI failed or produced an inconsistent file."""


def export_traces(dump: FrameworkDump, path, *, expected_k: int | None = None) -> int:
    """Write the dump as a trace file; returns the number of rollouts.

    ``expected_k`` guards against feeding a dump recorded under a different
    top-k than the scaling configuration expects.
    """
    if expected_k is not None and dump.k != expected_k:
        raise DumpShapeError(
            f"dump has k={dump.k} but the scaling configuration expects k={expected_k}"
        )
    lines = [json.dumps({"schema": TRACE_SCHEMA})]
    for b in range(dump.batch_size):
        # the prompt is framework-side context the scaler never inspects
        lines.append(json.dumps({"rollout_id": b, "prompt": []}))
        for t in range(dump.length):
            lines.append(
                json.dumps(
                    {
                        "rollout_id": b,
                        "position": t,
                        "student_ids": dump.student_ids[b, t].tolist(),
                        "student_probs": np.exp(dump.student_logprobs[b, t]).tolist(),
                        "teacher_ids": dump.teacher_ids[b, t].tolist(),
                        "teacher_probs": np.exp(dump.teacher_logprobs[b, t]).tolist(),
                        "sampled_token": int(dump.sampled_tokens[b, t]),
                        "valid": bool(dump.valid[b, t]),
                        "raw_rewards": dump.raw_rewards[b, t].tolist(),
                    }
                )
            )
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return dump.batch_size


def import_scaled(path, dump: FrameworkDump) -> tuple[np.ndarray, np.ndarray]:
    """Read a scaled trace file back into ``([B, T, k] rewards, [B, T] weights)``.

    The file must cover exactly the dump's rollout ids and positions;
    anything else means it was produced from a different export.
    """
    scaled = np.zeros((dump.batch_size, dump.length, dump.k))
    weights = np.zeros((dump.batch_size, dump.length))
    seen = set()
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or json.loads(lines[0]).get("schema") != TRACE_SCHEMA:
        raise ScaleToolError(f"{path} is not a {TRACE_SCHEMA} file")
    for line in lines[1:]:
        if not line.strip():
            continue
        obj = json.loads(line)
        if "position" not in obj:
            continue
        b, t = obj["rollout_id"], obj["position"]
        if not (0 <= b < dump.batch_size):
            raise ScaleToolError(
                f"rollout_id {b} not in the dump's batch of {dump.batch_size}"
            )
        if not (0 <= t < dump.length):
            raise ScaleToolError(f"position {t} outside dump length {dump.length}")
        if "scaled_rewards" not in obj or "loss_weight" not in obj:
            raise ScaleToolError(f"record ({b}, {t}) carries no scaled rewards")
        row = obj["scaled_rewards"]
        if len(row) != dump.k:
            raise ScaleToolError(f"record ({b}, {t}) has {len(row)} candidates, dump has k={dump.k}")
        scaled[b, t] = row
        weights[b, t] = obj["loss_weight"]
        seen.add((b, t))
    expected = dump.batch_size * dump.length
    if len(seen) != expected:
        raise ScaleToolError(f"scaled file covers {len(seen)} positions, dump has {expected}")
    return scaled, weights


def _cli_argv() -> list[str]:
    exe = shutil.which("prune-opd")
    if exe:
        return [exe]
    return [sys.executable, "-m", "prune_opd"]


def run_scale_tool(trace_path, out_path, config_path) -> None:
    """Invoke ``prune-opd scale`` on an exported trace file."""
    argv = _cli_argv() + [
        "scale",
        "--traces", str(trace_path),
        "--out", str(out_path),
        "--config", str(config_path),
    ]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ScaleToolError(
            f"scale tool exited {proc.returncode}: {proc.stderr.strip() or proc.stdout.strip()}"
        )


def scale_dump(dump: FrameworkDump, config_path, workdir, *, expected_k: int | None = None):
    """Full hop: export, run the CLI, import. Returns (scaled, weights)."""
    trace_path = f"{workdir}/traces.jsonl"
    scaled_path = f"{workdir}/traces.scaled.jsonl"
    export_traces(dump, trace_path, expected_k=expected_k)
    run_scale_tool(trace_path, scaled_path, config_path)
    return import_scaled(scaled_path, dump)
