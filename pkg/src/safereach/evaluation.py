"""Metric suite, reward ablation runner and shield comparison.

The safety-violation rate is reported with two denominators: the primary
``sv_rate`` divides the violation count by the number of episodes that made
contact (a violation presupposes a contact), ``sv_rate_episodes`` divides
by all episodes.  Completion-time statistics cover successful episodes
only; force statistics cover contact episodes only.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .env import EnvConfig
from .rewards import PRESETS, RewardWeights
from .rollout import EpisodeTrace, batch_rollout
from .shield import ShieldConfig


@dataclass(frozen=True)
class Metrics:
    n_episodes: int
    n_success: int
    n_contact: int
    success_rate: float         # percent of episodes
    t_mean: float               # seconds, successful episodes
    t_std: float
    f_mean: float               # newtons, contact episodes
    f_std: float
    f_max: float
    violations: int
    sv_rate: float              # percent of contact episodes (primary)
    sv_rate_episodes: float     # percent of all episodes
    rms_jerk_mean: float        # m/s^3, across episodes
    rms_jerk_std: float


def rms_jerk(velocities: np.ndarray, dt: float) -> float:
    """Root-mean-square jerk of an executed velocity series.

    Acceleration is the first difference of velocity over ``dt`` and jerk
    the first difference of acceleration over ``dt`` (a second difference
    of velocity, i.e. a third difference of position).
    """
    velocities = np.asarray(velocities, dtype=float)
    if velocities.ndim == 1:
        velocities = velocities[:, None]
    if len(velocities) < 3:
        raise ValueError("need at least 3 velocity samples for a jerk estimate")
    acc = np.diff(velocities, axis=0) / dt
    jerk = np.diff(acc, axis=0) / dt
    mag = np.linalg.norm(jerk, axis=1)
    return float(np.sqrt(np.mean(mag**2)))


def compute_metrics(traces: Sequence[EpisodeTrace], dt: float) -> Metrics:
    if not traces:
        raise ValueError("cannot compute metrics over an empty trace list")

    n = len(traces)
    successes = [t for t in traces if t.success]
    contacts = [t for t in traces if not math.isnan(t.f_contact)]
    violations = sum(1 for t in traces if t.violation)

    times = np.array([t.steps * dt for t in successes])
    forces = np.array([t.f_contact for t in contacts])

    jerks = []
    for t in traces:
        if t.steps >= 3:
            jerks.append(rms_jerk(t.v_exec, dt))
    jerks = np.array(jerks)

    def mean_or_nan(x: np.ndarray) -> float:
        return float(np.mean(x)) if x.size else math.nan

    def std_or_nan(x: np.ndarray) -> float:
        return float(np.std(x)) if x.size else math.nan

    return Metrics(
        n_episodes=n,
        n_success=len(successes),
        n_contact=len(contacts),
        success_rate=100.0 * len(successes) / n,
        t_mean=mean_or_nan(times),
        t_std=std_or_nan(times),
        f_mean=mean_or_nan(forces),
        f_std=std_or_nan(forces),
        f_max=float(np.max(forces)) if forces.size else math.nan,
        violations=violations,
        sv_rate=100.0 * violations / len(contacts) if contacts else 0.0,
        sv_rate_episodes=100.0 * violations / n,
        rms_jerk_mean=mean_or_nan(jerks),
        rms_jerk_std=std_or_nan(jerks),
    )


# ----------------------------------------------------------------- ablation
@dataclass
class AblationRow:
    preset: str
    weights: RewardWeights
    metrics: Optional[Metrics]
    return_mean: float
    return_std: float
    error: Optional[str] = None


def evaluate_policy(
    policy,
    env_cfg: EnvConfig,
    weights: RewardWeights,
    n_episodes: int,
    seed0: int,
    mode: str = "deterministic",
    shield_cfg: Optional[ShieldConfig] = None,
    out_dir: str | Path | None = None,
) -> tuple[Metrics, List[EpisodeTrace]]:
    """Roll out a policy and score it; traces carry episodic returns."""
    traces = batch_rollout(
        policy, env_cfg, shield_cfg,
        n_episodes=n_episodes, seed0=seed0, mode=mode,
        reward_weights=weights, out_dir=out_dir,
    )
    return compute_metrics(traces, env_cfg.dt), traces


def run_ablation(
    policies: Dict[str, Sequence[object]],
    env_cfg: EnvConfig,
    n_eval: int = 200,
    seed0: int = 1_000_000,
    mode: str = "deterministic",
    shield_cfg: Optional[ShieldConfig] = None,
    presets: Optional[Sequence[str]] = None,
) -> List[AblationRow]:
    """Score the trained policies of each reward preset.

    ``policies`` maps preset names to the per-seed rollout policies of that
    preset; every policy is evaluated on the same ``n_eval`` episode seeds
    and the traces are pooled.  Presets without a policy produce an error
    row; the remaining presets still run.
    """
    rows: List[AblationRow] = []
    for preset in presets if presets is not None else sorted(PRESETS):
        weights = RewardWeights.from_preset(preset)
        preset_policies = policies.get(preset) or []
        if not preset_policies:
            rows.append(
                AblationRow(preset, weights, metrics=None, return_mean=math.nan,
                            return_std=math.nan, error="no trained policy")
            )
            continue
        traces: List[EpisodeTrace] = []
        for policy in preset_policies:
            _, policy_traces = evaluate_policy(
                policy, env_cfg, weights, n_episodes=n_eval, seed0=seed0,
                mode=mode, shield_cfg=shield_cfg,
            )
            traces.extend(policy_traces)
        returns = np.array([t.episode_return for t in traces])
        rows.append(
            AblationRow(preset, weights, compute_metrics(traces, env_cfg.dt),
                        return_mean=float(np.mean(returns)),
                        return_std=float(np.std(returns)))
        )
    return rows


# ----------------------------------------------------------------- shielding
@dataclass
class ShieldConditionSummary:
    n_episodes: int
    ke_exceedance_episodes: int     # episodes with any step over the budget
    ke_exceedance_steps: int
    ke_max: float
    spd_max: float
    success_rate: float
    t_mean: float                   # seconds, successful episodes
    ke_envelope_max: List[float]    # per step index, max over episodes
    spd_envelope_max: List[float]


def _condition_summary(traces: Sequence[EpisodeTrace], e_max: float, dt: float
                       ) -> ShieldConditionSummary:
    metrics = compute_metrics(traces, dt)
    horizon = max(t.steps for t in traces)
    ke_env = np.zeros(horizon)
    spd_env = np.zeros(horizon)
    for t in traces:
        ke_env[: t.steps] = np.maximum(ke_env[: t.steps], t.ke)
        spd_env[: t.steps] = np.maximum(spd_env[: t.steps], t.spd)
    exceed_eps = sum(1 for t in traces if np.any(t.ke > e_max))
    exceed_steps = int(sum(int(np.sum(t.ke > e_max)) for t in traces))
    return ShieldConditionSummary(
        n_episodes=len(traces),
        ke_exceedance_episodes=exceed_eps,
        ke_exceedance_steps=exceed_steps,
        ke_max=float(max(t.max_ke() for t in traces)),
        spd_max=float(max(np.max(t.spd) for t in traces)),
        success_rate=metrics.success_rate,
        t_mean=metrics.t_mean,
        ke_envelope_max=[float(x) for x in ke_env],
        spd_envelope_max=[float(x) for x in spd_env],
    )


@dataclass
class ShieldComparison:
    e_max: float
    unshielded: ShieldConditionSummary
    shielded: ShieldConditionSummary
    completion_time_delta: float    # shielded minus unshielded mean T [s]


def compare_shield(
    policy,
    env_cfg: EnvConfig,
    shield_cfg: ShieldConfig,
    n_episodes: int = 100,
    seed0: int = 2_000_000,
    mode: str = "stochastic",
    out_dir: str | Path | None = None,
) -> tuple[ShieldComparison, List[EpisodeTrace], List[EpisodeTrace]]:
    """Paired unshielded/shielded rollouts on matched episode seeds."""
    out_unshielded = Path(out_dir) / "unshielded" if out_dir is not None else None
    out_shielded = Path(out_dir) / "shielded" if out_dir is not None else None
    plain = batch_rollout(
        policy, env_cfg, None, n_episodes=n_episodes, seed0=seed0, mode=mode,
        out_dir=out_unshielded,
    )
    guarded = batch_rollout(
        policy, env_cfg, shield_cfg, n_episodes=n_episodes, seed0=seed0, mode=mode,
        out_dir=out_shielded,
    )
    summary_plain = _condition_summary(plain, shield_cfg.e_max, env_cfg.dt)
    summary_guarded = _condition_summary(guarded, shield_cfg.e_max, env_cfg.dt)
    delta = summary_guarded.t_mean - summary_plain.t_mean
    return (
        ShieldComparison(shield_cfg.e_max, summary_plain, summary_guarded, delta),
        plain,
        guarded,
    )


# ----------------------------------------------------------------- reporting
def _jsonable(obj):
    """Recursively convert dataclasses/arrays; NaN becomes null."""
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, (int, str, bool)) or obj is None:
        return obj
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    raise TypeError(f"cannot serialise {type(obj)!r}")


def dump_json(payload, path: str | Path) -> None:
    """Stable JSON: sorted keys, newline-terminated, null for NaN."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n")


ABLATION_CSV_COLUMNS = (
    "preset", "w_r", "w_s", "w_j", "w_p",
    "return_mean", "return_std",
    "success_pct", "t_mean_s", "t_std_s",
    "f_mean_n", "f_std_n", "f_max_n",
    "violations", "sv_rate_pct", "sv_rate_episodes_pct",
    "rms_jerk_mean", "rms_jerk_std",
    "error",
)


def write_ablation_csv(rows: Sequence[AblationRow], path: str | Path) -> None:
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def fmt(x) -> str:
        if isinstance(x, float):
            return format(x, ".17g")
        return str(x)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_CSV_COLUMNS)
        for row in rows:
            m = row.metrics
            writer.writerow(
                [
                    row.preset,
                    fmt(row.weights.w_r), fmt(row.weights.w_s),
                    fmt(row.weights.w_j), fmt(row.weights.w_p),
                    fmt(row.return_mean), fmt(row.return_std),
                ]
                + (
                    [
                        fmt(m.success_rate), fmt(m.t_mean), fmt(m.t_std),
                        fmt(m.f_mean), fmt(m.f_std), fmt(m.f_max),
                        m.violations, fmt(m.sv_rate), fmt(m.sv_rate_episodes),
                        fmt(m.rms_jerk_mean), fmt(m.rms_jerk_std),
                    ]
                    if m is not None
                    else [""] * 11
                )
                + [row.error or ""]
            )


def emit_report(
    out_dir: str | Path,
    traces: Sequence[EpisodeTrace],
    metrics: Optional[Metrics] = None,
    ablation: Optional[Sequence[AblationRow]] = None,
    shield_comparison: Optional[ShieldComparison] = None,
    make_plots: bool = True,
) -> List[Path]:
    """Write summary JSON, per-preset CSV and SVG plots into ``out_dir``.

    Refuses to write anything for an empty trace set, so a failed run never
    leaves a partial report behind.
    """
    if not traces:
        raise ValueError("refusing to emit a report for an empty trace set")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    summary: Dict[str, object] = {
        "n_traces": len(traces),
    }
    if metrics is not None:
        summary["metrics"] = metrics
    if ablation is not None:
        summary["ablation"] = [
            {
                "preset": r.preset,
                "weights": r.weights,
                "metrics": r.metrics,
                "return_mean": r.return_mean,
                "return_std": r.return_std,
                "error": r.error,
            }
            for r in ablation
        ]
    if shield_comparison is not None:
        summary["shield_comparison"] = shield_comparison

    summary_path = out / "summary.json"
    dump_json(summary, summary_path)
    written.append(summary_path)

    if ablation is not None:
        csv_path = out / "ablation.csv"
        write_ablation_csv(ablation, csv_path)
        written.append(csv_path)

    if make_plots:
        from . import plots

        written.extend(plots.render_report_plots(out, traces, ablation, shield_comparison))
    return written
