"""End-to-end experiment runner and run comparison tools.

A run executes the full training loop on a synthetic drift scenario: sample
student rollouts under the current response budget, compute per-position
reliability profiles, scale (or not) the distillation rewards according to
the selected mode, update the student, and step the budget controller when
it is active. Every step appends one metrics row; loss-weight profiles are
dumped at a configurable stride; a summary JSON lands in the output
directory at the end.

Modes:
  opd_baseline        raw rewards, fixed budget at the scenario max length
  fixed_truncate      raw rewards, fixed budget at ``truncate_length``
  random_prune_tokens raw rewards with a random token subset retained,
                      matched to a reference run's scored-token count
  random_prune_mass   like above but matching retained absolute reward mass
  prune_opd           reliability-scaled rewards + active budget controller

Rollout prompts and per-rollout sampling streams are drawn from substreams
that do not depend on the mode, so runs under the same seed see comparable
rollouts and metric files are byte-identical across repeats.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import budget as budget_ctl
from .compat import CompatConfig, mean_overlap
from .errors import InvalidConfigError, TraceParseError
from .reliability import ReliabilityConfig, RewardTensor, process_rollout
from .sim import DriftScenario, build_drift_pair, reverse_kl, sample_rollout, train_step
from .trace_io import MetricsRow, append_metrics

log = logging.getLogger("prune_opd")

SUMMARY_SCHEMA = "prune-opd-summary/1"

MODES = (
    "opd_baseline",
    "fixed_truncate",
    "random_prune_tokens",
    "random_prune_mass",
    "prune_opd",
)

METRIC_BANDS = 8       # coarse bands for metrics rows and KL-by-band
PROFILE_BAND_SIZE = 8  # fine position bands for weight-profile dumps
N_EVAL_ROLLOUTS = 8


@dataclass
class ExperimentConfig:
    scenario: DriftScenario
    mode: str
    compat: CompatConfig = field(default_factory=CompatConfig)
    reliability: ReliabilityConfig = field(default_factory=ReliabilityConfig)
    budget: budget_ctl.BudgetConfig = field(default_factory=budget_ctl.BudgetConfig)
    batch_size: int = 2
    rollouts_per_prompt: int = 2
    steps: int = 50
    learning_rate: float = 0.05
    seed: int = 0
    output_dir: str = "runs/out"
    truncate_length: int | None = None
    match_fraction: float | None = None
    reference_run: str | None = None
    profile_stride: int = 10
    metrics_jsonl: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.compat.k != self.scenario.k:
            raise InvalidConfigError(
                f"compat.k={self.compat.k} must match scenario.k={self.scenario.k}"
            )
        if self.mode == "fixed_truncate":
            if self.truncate_length is None:
                # the paper-scale fixed budget is meaningless here; default to
                # half the scenario length
                self.truncate_length = max(1, self.scenario.max_length // 2)
            if self.truncate_length < 1:
                raise InvalidConfigError("truncate_length must be >= 1")
        if self.mode in ("random_prune_tokens", "random_prune_mass"):
            if self.match_fraction is None and self.reference_run is None:
                raise InvalidConfigError(
                    f"mode {self.mode} needs match_fraction or reference_run"
                )
            if self.match_fraction is not None and not (0.0 <= self.match_fraction <= 1.0):
                raise InvalidConfigError("match_fraction must be in [0, 1]")
        for name in ("batch_size", "rollouts_per_prompt", "steps", "profile_stride"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1")
        if self.learning_rate < 0:
            raise InvalidConfigError("learning_rate must be >= 0")


# Desk-scale presets. The collapse preset mirrors the drift regime (high
# early overlap, collapse past position 64); high_compat mirrors the
# persistently compatible pair, where the controller should open the budget.
PRESETS: dict[str, dict] = {
    "collapse": {
        "scenario.seed": 11,
        "scenario.prompt_length": 8,
        "scenario.max_length": 256,
        "scenario.k": 16,
        "scenario.vocab_size": 64,
        "scenario.target_overlap_curve": [[0, 0.95], [64, 0.78], [68, 0.62], [72, 0.46], [76, 0.3]],
        "compat.metric_kind": "overlap_ratio",
        "compat.gamma": 0.7,
        "compat.p": 0.95,
        "compat.k": 16,
        "reliability.w_drop": 0.01,
        "reliability.w_base": 0.5,
        "reliability.epsilon": 1e-6,
        "reliability.enabled": True,
        "budget.m_init": 160,
        "budget.m_min": 32,
        "budget.m_max": 256,
        "budget.delta": 8,
        "budget.margin": 0,
        "budget.rho": 0.1,
        "budget.patience": 3,
        "batch_size": 2,
        "rollouts_per_prompt": 2,
        "steps": 300,
        "learning_rate": 0.05,
        "seed": 7,
    },
    "high_compat": {
        "scenario.seed": 23,
        "scenario.prompt_length": 8,
        "scenario.max_length": 256,
        "scenario.k": 16,
        "scenario.vocab_size": 64,
        "scenario.target_overlap_curve": [[0, 0.94]],
        "compat.metric_kind": "overlap_ratio",
        "compat.gamma": 0.7,
        "compat.p": 0.95,
        "compat.k": 16,
        "reliability.w_drop": 0.01,
        "reliability.w_base": 0.5,
        "reliability.epsilon": 1e-6,
        "reliability.enabled": True,
        "budget.m_init": 192,
        "budget.m_min": 64,
        "budget.m_max": 256,
        "budget.delta": 8,
        "budget.margin": 0,
        "budget.rho": 0.1,
        "budget.patience": 3,
        "batch_size": 2,
        "rollouts_per_prompt": 2,
        "steps": 300,
        "learning_rate": 0.05,
        "seed": 7,
    },
}

_SECTION_TYPES = {
    "scenario": DriftScenario,
    "compat": CompatConfig,
    "reliability": ReliabilityConfig,
    "budget": budget_ctl.BudgetConfig,
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a flat dotted-key (or nested) dict.

    A ``preset`` key pulls in one of the named presets; any other keys
    override it. Unknown keys are rejected with a diagnostic.
    """
    flat: dict[str, object] = {}

    def flatten(prefix: str, value):
        if isinstance(value, dict):
            for key, sub in value.items():
                flatten(f"{prefix}.{key}" if prefix else key, sub)
        else:
            flat[prefix] = value

    flatten("", raw)
    preset = flat.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise InvalidConfigError(
                f"unknown preset {preset!r}; available: {sorted(PRESETS)}"
            )
        merged = dict(PRESETS[preset])
        merged.update(flat)
        flat = merged

    sections: dict[str, dict] = {name: {} for name in _SECTION_TYPES}
    top: dict[str, object] = {}
    top_fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, value in flat.items():
        if "." in key:
            section, _, leaf = key.partition(".")
            if section not in sections:
                raise InvalidConfigError(f"unknown config section in key {key!r}")
            sections[section][leaf] = value
        elif key in top_fields - set(_SECTION_TYPES):
            top[key] = value
        else:
            raise InvalidConfigError(f"unknown config key {key!r}")

    built = {}
    for name, cls in _SECTION_TYPES.items():
        kwargs = sections[name]
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(kwargs) - known
        if unknown:
            raise InvalidConfigError(f"unknown {name} keys: {sorted(unknown)}")
        if name == "scenario":
            if "target_overlap_curve" in kwargs:
                kwargs["target_overlap_curve"] = tuple(
                    (int(p), float(t)) for p, t in kwargs["target_overlap_curve"]
                )
            if not kwargs:
                raise InvalidConfigError("config must define a scenario (or a preset)")
        try:
            built[name] = cls(**kwargs)
        except TypeError as exc:
            raise InvalidConfigError(f"invalid {name} config: {exc}") from exc
    if "mode" not in top:
        raise InvalidConfigError("config must set mode")
    return ExperimentConfig(
        scenario=built["scenario"],
        compat=built["compat"],
        reliability=built["reliability"],
        budget=built["budget"],
        **top,
    )


def _scenario_dict(scenario: DriftScenario) -> dict:
    return {
        "seed": scenario.seed,
        "prompt_length": scenario.prompt_length,
        "max_length": scenario.max_length,
        "target_overlap_curve": [list(pair) for pair in scenario.target_overlap_curve],
        "k": scenario.k,
        "vocab_size": scenario.vocab_size,
    }


def _load_summary(run_dir: str) -> dict:
    path = os.path.join(run_dir, "summary.json")
    if not os.path.exists(path):
        raise TraceParseError(f"no summary.json in {run_dir}")
    with open(path) as fh:
        return json.load(fh)


def _match_fraction(config: ExperimentConfig) -> float:
    """Retention target for the random-pruning controls."""
    if config.match_fraction is not None:
        return config.match_fraction
    ref = _load_summary(config.reference_run)
    if config.mode == "random_prune_mass":
        return float(ref["reward_mass_retained"])
    n_rollouts = config.batch_size * config.rollouts_per_prompt
    expected_generated = config.steps * n_rollouts * config.scenario.max_length
    return min(1.0, float(ref["tokens_scored"]) / expected_generated)


def _eval_prefixes(config: ExperimentConfig, student0, teacher):
    """Held-out prefixes sampled once from the *initial* student, so the
    evaluation set is identical across modes under the same seed."""
    scenario = config.scenario
    prompt_rng = np.random.default_rng([config.seed, 5])
    rollouts = []
    for i in range(N_EVAL_ROLLOUTS):
        prompt = prompt_rng.integers(0, scenario.vocab_size, size=scenario.prompt_length)
        rollouts.append(
            sample_rollout(
                student0, teacher, prompt, scenario.max_length, scenario.k, [config.seed, 4, i]
            )
        )
    prefixes = []
    for trace in rollouts:
        tokens = list(trace.prompt)
        for tau, tok in enumerate(trace.response):
            prefixes.append((tau, tuple(tokens)))
            tokens.append(tok)
    return prefixes


def _eval_kl(student, teacher, prefixes, max_length: int):
    band_size = max(1, max_length // METRIC_BANDS)
    sums = np.zeros(METRIC_BANDS)
    counts = np.zeros(METRIC_BANDS, dtype=np.int64)
    total = 0.0
    for tau, prefix in prefixes:
        kl = reverse_kl(student, teacher, prefix)
        total += kl
        band = min(tau // band_size, METRIC_BANDS - 1)
        sums[band] += kl
        counts[band] += 1
    by_band = [float(sums[b] / counts[b]) if counts[b] else 0.0 for b in range(METRIC_BANDS)]
    return total / len(prefixes), by_band


def run(config: ExperimentConfig) -> dict:
    """Execute one experiment; returns the summary dict (also written to disk)."""
    scenario = config.scenario
    os.makedirs(config.output_dir, exist_ok=True)
    metrics_path = os.path.join(config.output_dir, "metrics.csv")
    profiles_path = os.path.join(config.output_dir, "profiles.jsonl")
    summary_path = os.path.join(config.output_dir, "summary.json")
    for path in (metrics_path, profiles_path):
        if os.path.exists(path):
            os.remove(path)

    student0, teacher = build_drift_pair(scenario)
    student = student0
    eval_prefixes = _eval_prefixes(config, student0, teacher)

    n_rollouts = config.batch_size * config.rollouts_per_prompt
    prompt_rng = np.random.default_rng([config.seed, 1])
    prune_rng = np.random.default_rng([config.seed, 3])
    state = budget_ctl.init(config.budget)
    retain = None
    if config.mode in ("random_prune_tokens", "random_prune_mass"):
        retain = _match_fraction(config)
        log.info("random-prune retention target: %.4f", retain)

    coarse_edges = np.arange(METRIC_BANDS) * max(1, scenario.max_length // METRIC_BANDS)
    tokens_generated = 0
    tokens_scored = 0
    mass_raw = 0.0
    mass_kept = 0.0
    profiles_fh = open(profiles_path, "w", newline="\n")
    try:
        for t in range(config.steps):
            if config.mode == "prune_opd":
                m_t = state.m_current
            elif config.mode == "fixed_truncate":
                m_t = config.truncate_length
            else:
                m_t = scenario.max_length

            prompts = prompt_rng.integers(
                0, scenario.vocab_size, size=(config.batch_size, scenario.prompt_length)
            )
            traces = []
            for b in range(config.batch_size):
                for r in range(config.rollouts_per_prompt):
                    idx = b * config.rollouts_per_prompt + r
                    traces.append(
                        sample_rollout(
                            student, teacher, prompts[b], m_t, scenario.k,
                            [config.seed, 2, t, idx],
                        )
                    )
            processed = [process_rollout(tr, config.compat, config.reliability) for tr in traces]

            batch = []
            step_scored = 0
            for trace, (profile, scaled) in zip(traces, processed):
                raw_abs = np.abs(trace.rewards.values).sum()
                if config.mode == "prune_opd":
                    train_rewards = scaled
                    step_scored += int(
                        ((profile.loss_weight > 0.0) & profile.valid_mask).sum()
                    )
                elif config.mode in ("opd_baseline", "fixed_truncate"):
                    train_rewards = trace.rewards
                    step_scored += int(profile.valid_mask.sum())
                else:
                    keep = _random_keep_mask(trace, retain, config.mode, prune_rng)
                    values = trace.rewards.values * keep[:, None]
                    train_rewards = RewardTensor(values)
                    step_scored += int(keep.sum())
                mass_raw += raw_abs
                mass_kept += np.abs(train_rewards.values).sum()
                batch.append((trace, train_rewards))

            student = train_step(student, batch, config.learning_rate)

            lengths = [profile.effective_length for profile, _ in processed]
            h = budget_ctl.hit_ratio(lengths, m_t, config.budget.margin)
            if config.mode == "prune_opd":
                state = budget_ctl.step(state, h, config.budget)

            tokens_generated += sum(len(tr.response) for tr in traces)
            tokens_scored += step_scored

            weights = np.concatenate([profile.loss_weight for profile, _ in processed])
            valids = np.concatenate([profile.valid_mask for profile, _ in processed])
            positions = np.concatenate(
                [np.arange(len(profile.loss_weight)) for profile, _ in processed]
            )
            lw_bands = _band_means_at(weights, valids, positions, coarse_edges)
            row = MetricsRow(
                step_index=t,
                mean_overlap=mean_overlap(traces, scenario.k),
                mean_effective_length=float(np.mean(lengths)),
                m_current=m_t,
                hit_ratio=h,
                tokens_generated=tokens_generated,
                tokens_scored=tokens_scored,
                mean_loss_weight_by_band=tuple(lw_bands),
            )
            append_metrics(row, metrics_path, jsonl_mirror=config.metrics_jsonl)

            if t % config.profile_stride == 0 or t == config.steps - 1:
                fine_edges = np.arange(0, m_t, PROFILE_BAND_SIZE)
                profile_means = _band_means_at(weights, valids, positions, fine_edges)
                profiles_fh.write(
                    json.dumps(
                        {
                            "step": t,
                            "band_size": PROFILE_BAND_SIZE,
                            "mean_weight": [float(x) for x in profile_means],
                        }
                    )
                    + "\n"
                )
    finally:
        profiles_fh.close()

    final_kl, kl_by_band = _eval_kl(student, teacher, eval_prefixes, scenario.max_length)
    summary = {
        "schema": SUMMARY_SCHEMA,
        "mode": config.mode,
        "seed": config.seed,
        "steps": config.steps,
        "scenario": _scenario_dict(scenario),
        "final_kl": final_kl,
        "final_kl_by_band": kl_by_band,
        "kl_band_size": max(1, scenario.max_length // METRIC_BANDS),
        "tokens_generated": tokens_generated,
        "tokens_scored": tokens_scored,
        "reward_mass_retained": float(mass_kept / mass_raw) if mass_raw else 1.0,
        "metrics_path": metrics_path,
        "profiles_path": profiles_path,
    }
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    log.info(
        "run complete: mode=%s final_kl=%.4f tokens_scored=%d",
        config.mode, final_kl, tokens_scored,
    )
    return summary


def _band_means_at(values, valids, positions, band_edges) -> list[float]:
    values = np.asarray(values, dtype=np.float64)
    valids = np.asarray(valids, dtype=bool)
    positions = np.asarray(positions)
    band_of = np.searchsorted(band_edges, positions, side="right") - 1
    means = []
    for band in range(len(band_edges)):
        mask = (band_of == band) & valids
        count = int(mask.sum())
        means.append(float(values[mask].sum() / count) if count else 0.0)
    return means


def _random_keep_mask(trace, retain: float, mode: str, rng) -> np.ndarray:
    """Choose retained positions independently of compatibility."""
    t_len = len(trace.records)
    keep = np.zeros(t_len, dtype=np.float64)
    order = rng.permutation(t_len)
    if mode == "random_prune_tokens":
        n_keep = int(round(retain * t_len))
        keep[order[:n_keep]] = 1.0
        return keep
    # mass-matched: keep random positions until their |reward| mass reaches
    # the target fraction of the rollout's total mass
    mass = np.abs(trace.rewards.values).sum(axis=1)
    target = retain * mass.sum()
    acc = 0.0
    for pos in order:
        if acc >= target:
            break
        keep[pos] = 1.0
        acc += mass[pos]
    return keep


def compare(run_dirs: list[str]):
    """Compare runs on final KL and scored tokens; reduction is vs the first.

    Returns ``(rows, text_table, csv_text)`` where rows are dicts.
    """
    if len(run_dirs) < 2:
        raise InvalidConfigError("compare needs at least 2 run directories")
    summaries = [_load_summary(d) for d in run_dirs]
    reference = summaries[0]
    for run_dir, summary in zip(run_dirs[1:], summaries[1:]):
        if summary["scenario"] != reference["scenario"] or summary["seed"] != reference["seed"]:
            raise InvalidConfigError(
                f"run {run_dir} has a different scenario or seed than {run_dirs[0]}"
            )
    rows = []
    base_scored = reference["tokens_scored"]
    for run_dir, summary in zip(run_dirs, summaries):
        rows.append(
            {
                "run": run_dir,
                "mode": summary["mode"],
                "final_kl": summary["final_kl"],
                "tokens_scored": summary["tokens_scored"],
                "reduction_pct": 100.0 * (1.0 - summary["tokens_scored"] / base_scored),
            }
        )
    header = ["run", "mode", "final_kl", "tokens_scored", "reduction_pct"]
    csv_lines = [",".join(header)]
    for row in rows:
        csv_lines.append(
            f"{row['run']},{row['mode']},{row['final_kl']!r},"
            f"{row['tokens_scored']},{row['reduction_pct']!r}"
        )
    widths = [max(len(h), *(len(_cell(r[h])) for r in rows)) for h in header]
    text_lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        text_lines.append("  ".join(_cell(row[h]).ljust(w) for h, w in zip(header, widths)))
    return rows, "\n".join(text_lines) + "\n", "\n".join(csv_lines) + "\n"


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def scale_trace_file(
    in_path: str,
    out_path: str,
    compat_cfg: CompatConfig,
    rel_cfg: ReliabilityConfig,
) -> int:
    """Apply reliability scaling to a serialized trace file.

    Reads traces, runs the per-rollout pipeline, and writes the same lines
    augmented with ``loss_weight`` and ``scaled_rewards`` fields. This is the
    file-level integration surface for external trainers. Returns the number
    of rollouts processed.
    """
    from .trace_io import TRACE_SCHEMA, read_traces

    traces = read_traces(in_path)
    lines = [json.dumps({"schema": TRACE_SCHEMA})]
    for rollout_id, trace in enumerate(traces):
        profile, scaled = process_rollout(trace, compat_cfg, rel_cfg)
        lines.append(json.dumps({"rollout_id": rollout_id, "prompt": list(trace.prompt)}))
        for position, record in enumerate(trace.records):
            lines.append(
                json.dumps(
                    {
                        "rollout_id": rollout_id,
                        "position": position,
                        "student_ids": list(record.student.token_ids),
                        "student_probs": [float(p) for p in record.student.probs],
                        "teacher_ids": list(record.teacher.token_ids),
                        "teacher_probs": [float(p) for p in record.teacher.probs],
                        "sampled_token": int(record.sampled_token),
                        "valid": bool(trace.valid_mask[position]),
                        "raw_rewards": [float(v) for v in trace.rewards.values[position]],
                        "loss_weight": float(profile.loss_weight[position]),
                        "scaled_rewards": [float(v) for v in scaled.values[position]],
                    }
                )
            )
    with open(out_path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(traces)


def emit_weight_profile(run_dir: str, step_stride: int):
    """Write strided mean loss-weight-by-position curves as a CSV.

    Rows are position bands, one column per recorded step whose index is a
    multiple of ``step_stride``. Returns the CSV path.
    """
    if step_stride < 1:
        raise InvalidConfigError("step_stride must be >= 1")
    profiles_path = os.path.join(run_dir, "profiles.jsonl")
    if not os.path.exists(profiles_path):
        raise TraceParseError(f"no profile dumps at {profiles_path}")
    entries = []
    with open(profiles_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    entries.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise TraceParseError(f"invalid JSON: {exc}", lineno) from exc
    if not entries:
        raise TraceParseError(f"profile dump {profiles_path} is empty")
    selected = [e for e in entries if e["step"] % step_stride == 0]
    if not selected:
        selected = [entries[0]]
    band_size = selected[0]["band_size"]
    n_bands = max(len(e["mean_weight"]) for e in selected)
    header = ["band_start"] + [f"step_{e['step']}" for e in selected]
    lines = [",".join(header)]
    for band in range(n_bands):
        cells = [str(band * band_size)]
        for entry in selected:
            weights = entry["mean_weight"]
            cells.append(repr(float(weights[band])) if band < len(weights) else "")
        lines.append(",".join(cells))
    out_path = os.path.join(run_dir, f"weight_profile_stride{step_stride}.csv")
    with open(out_path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_path
