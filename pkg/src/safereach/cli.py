"""Command-line entry point.

Subcommands: train, eval, ablate, shield-compare, replay, report.  Every
command takes ``--config`` and writes its artifacts under the run's output
directory (override with ``--out``):

    <out>/resolved_config.yaml    exact config of the run
    <out>/checkpoints/            <PRESET>_seed<k>.pol policy files
    <out>/curves.csv              learning curves (seed, episode, steps, return, length)
    <out>/traces/<label>/         per-episode trace CSVs
    <out>/reports/                summary.json, ablation.csv, SVG plots

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .agent.checkpoint import load_policy
from .agent.sac import TorchPolicy, curve_summary, train
from .config import ConfigError, RunConfig, load_config, write_resolved_config
from .evaluation import (
    compare_shield,
    compute_metrics,
    emit_report,
    evaluate_policy,
    run_ablation,
)
from .rewards import PRESETS, RewardWeights
from .rollout import read_trace
from .shield import EnergyShield

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config file (YAML)")
    parser.add_argument("--out", help="output directory (overrides run.out_dir)")
    parser.add_argument("--seeds", help="comma-separated training seeds, e.g. 0,1,2")
    parser.add_argument("--workers", type=int, help="parallel training jobs")


def _parse_seeds(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ConfigError(f"--seeds: expected comma-separated integers, got {text!r}") from None


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    updates = {}
    if getattr(args, "out", None):
        updates["out_dir"] = Path(args.out)
    if getattr(args, "seeds", None):
        updates["seeds"] = tuple(_parse_seeds(args.seeds))
    if getattr(args, "workers", None):
        updates["workers"] = args.workers
    if getattr(args, "shield", None):
        updates["shield"] = dataclasses.replace(cfg.shield, enabled=args.shield == "on")
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg


def _label(cfg: RunConfig) -> str:
    return cfg.reward_preset or "custom"


def _checkpoint_paths(cfg: RunConfig, label: str) -> Dict[int, Path]:
    found = {}
    for seed in cfg.seeds:
        path = cfg.out_dir / "checkpoints" / f"{label}_seed{seed}.pol"
        if path.exists():
            found[seed] = path
    return found


def _load_policies(paths: Dict[int, Path]) -> List[TorchPolicy]:
    return [TorchPolicy.from_params(load_policy(paths[s])) for s in sorted(paths)]


def _shield_cfg(cfg: RunConfig):
    return cfg.shield.config if cfg.shield.enabled else None


# ----------------------------------------------------------------- commands
def cmd_train(args) -> int:
    cfg = _load(args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, cfg.out_dir / "resolved_config.yaml")
    results = train(
        cfg.env, cfg.reward_weights, cfg.agent,
        seeds=cfg.seeds, contact_bonus=cfg.contact_bonus,
        out_dir=cfg.out_dir, label=_label(cfg), workers=cfg.workers,
    )
    failed = {seed: r.error for seed, r in results.items() if r.error}
    for seed, error in failed.items():
        print(f"seed {seed}: diverged: {error}", file=sys.stderr)
    summary = curve_summary(results)
    print(
        f"trained {_label(cfg)} on seeds {list(cfg.seeds)}: "
        f"tail return {summary['return_mean']:.2f} +/- {summary['return_std']:.2f} "
        f"({summary['n_seeds']} seeds ok)"
    )
    return EXIT_RUNTIME if len(failed) == len(cfg.seeds) else EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    label = _label(cfg)
    paths = _checkpoint_paths(cfg, label)
    if not paths:
        print(f"no checkpoints for {label} under {cfg.out_dir / 'checkpoints'}", file=sys.stderr)
        return EXIT_RUNTIME
    n = args.episodes or cfg.eval.n_episodes
    traces = []
    for seed in sorted(paths):
        policy = TorchPolicy.from_params(load_policy(paths[seed]))
        _, t = evaluate_policy(
            policy, cfg.env, cfg.reward_weights, n_episodes=n,
            seed0=cfg.eval.seed0, mode=cfg.eval.mode, shield_cfg=_shield_cfg(cfg),
            out_dir=cfg.out_dir / "traces" / f"{label}_seed{seed}",
        )
        traces.extend(t)
    metrics = compute_metrics(traces, cfg.env.dt)
    emit_report(cfg.out_dir / "reports", traces, metrics=metrics)
    print(
        f"{label}: success {metrics.success_rate:.1f}% over {metrics.n_episodes} episodes, "
        f"sv_rate {metrics.sv_rate:.2f}% ({metrics.violations} violations), "
        f"F_max {metrics.f_max:.2f} N"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    presets = (
        [p.strip().upper() for p in args.preset.split(",")]
        if args.preset
        else sorted(PRESETS)
    )
    for preset in presets:
        if preset not in PRESETS:
            raise ConfigError(f"--preset: unknown preset {preset!r}")
    n = args.episodes or cfg.eval.n_episodes

    policies: Dict[str, Sequence[TorchPolicy]] = {}
    for preset in presets:
        paths = _checkpoint_paths(cfg, preset)
        if not paths:
            print(f"training {preset} (no checkpoints found)")
            train(
                cfg.env, RewardWeights.from_preset(preset), cfg.agent,
                seeds=cfg.seeds, contact_bonus=cfg.contact_bonus,
                out_dir=cfg.out_dir, label=preset, workers=cfg.workers,
            )
            paths = _checkpoint_paths(cfg, preset)
        policies[preset] = _load_policies(paths)

    rows = run_ablation(
        policies, cfg.env, n_eval=n, seed0=cfg.eval.seed0,
        mode=cfg.eval.mode, shield_cfg=_shield_cfg(cfg), presets=presets,
    )
    # Plots need raw traces; use the first scored preset's first policy.
    plotted = next((r for r in rows if r.metrics is not None), None)
    traces_for_plots = []
    if plotted is not None:
        _, traces_for_plots = evaluate_policy(
            policies[plotted.preset][0], cfg.env,
            RewardWeights.from_preset(plotted.preset),
            n_episodes=min(n, 100), seed0=cfg.eval.seed0,
            mode=cfg.eval.mode, shield_cfg=_shield_cfg(cfg),
        )
    emit_report(cfg.out_dir / "reports", traces_for_plots, ablation=rows)
    for row in rows:
        if row.metrics is None:
            print(f"{row.preset}: {row.error}")
        else:
            print(
                f"{row.preset}: success {row.metrics.success_rate:.1f}%, "
                f"sv_rate {row.metrics.sv_rate:.2f}%, return {row.return_mean:.1f}"
            )
    return EXIT_OK


def cmd_shield_compare(args) -> int:
    cfg = _load(args)
    label = _label(cfg)
    paths = _checkpoint_paths(cfg, label)
    if not paths:
        print(f"no checkpoints for {label} under {cfg.out_dir / 'checkpoints'}", file=sys.stderr)
        return EXIT_RUNTIME
    policy = _load_policies(paths)[0]
    n = args.episodes or 100
    comparison, plain, guarded = compare_shield(
        policy, cfg.env, cfg.shield.config, n_episodes=n,
        seed0=cfg.eval.seed0, mode="stochastic",
        out_dir=cfg.out_dir / "traces" / "compare",
    )
    emit_report(
        cfg.out_dir / "reports", list(plain) + list(guarded),
        shield_comparison=comparison,
    )
    u, s = comparison.unshielded, comparison.shielded
    print(
        f"unshielded: {u.ke_exceedance_episodes}/{u.n_episodes} episodes over budget "
        f"(ke_max {u.ke_max:.3f} J); shielded: {s.ke_exceedance_episodes}/{s.n_episodes} "
        f"(ke_max {s.ke_max:.3f} J); completion-time delta {comparison.completion_time_delta:+.3f} s"
    )
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _load(args)
    trace = read_trace(args.trace)
    shield = EnergyShield(
        mass=cfg.shield.config.mass,
        e_max=cfg.shield.config.e_max,
        f_c=cfg.shield.config.f_c,
        dt=cfg.shield.config.dt,
        alpha_h=cfg.shield.config.alpha_h,
        enabled=cfg.shield.enabled,
    )
    dt = cfg.shield.config.dt
    v_raw = trace.actions_raw / dt
    v_safe = shield.transform(v_raw)
    a_safe = v_safe * dt

    out_path = Path(args.out) if args.out else Path(args.trace).with_suffix(".replay.csv")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    import csv

    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "ax_raw", "ay_raw", "az_raw", "ax_safe", "ay_safe", "az_safe", "intervened"]
        )
        for t in range(trace.steps):
            writer.writerow(
                [t]
                + [format(x, ".17g") for x in trace.actions_raw[t]]
                + [format(x, ".17g") for x in a_safe[t]]
                + [int(shield.interventions_[t])]
            )
    n_hit = int(np.sum(shield.interventions_))
    print(
        f"replayed {trace.steps} steps through shield "
        f"(enabled={cfg.shield.enabled}): {n_hit} interventions -> {out_path}"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load(args)
    trace_dir = Path(args.traces) if args.traces else cfg.out_dir / "traces"
    files = sorted(trace_dir.rglob("ep_*.csv"))
    if not files:
        print(f"no trace files under {trace_dir}", file=sys.stderr)
        return EXIT_RUNTIME
    traces = [read_trace(f) for f in files]
    metrics = compute_metrics(traces, cfg.env.dt)
    written = emit_report(cfg.out_dir / "reports", traces, metrics=metrics)
    print(f"wrote {len(written)} report files to {cfg.out_dir / 'reports'}")
    return EXIT_OK


# ----------------------------------------------------------------- dispatch
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safereach",
        description="Safe reach-to-contact lab: train, shield and evaluate reaching policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one policy per seed")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained policies")
    _add_common(p)
    p.add_argument("--episodes", type=int, help="evaluation episodes per policy")
    p.add_argument("--shield", choices=["on", "off"], help="override shield.enabled")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="evaluate the reward-preset ladder")
    _add_common(p)
    p.add_argument("--preset", help="comma-separated presets (default all five)")
    p.add_argument("--episodes", type=int, help="evaluation episodes per policy")
    p.add_argument("--shield", choices=["on", "off"], help="override shield.enabled")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("shield-compare", help="paired unshielded vs shielded rollouts")
    _add_common(p)
    p.add_argument("--episodes", type=int, help="episodes per condition (default 100)")
    p.set_defaults(func=cmd_shield_compare)

    p = sub.add_parser("replay", help="re-run a trace's raw actions through a shield")
    _add_common(p)
    p.add_argument("--trace", required=True, help="episode trace CSV")
    p.add_argument("--shield", choices=["on", "off"], help="override shield.enabled")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="recompute metrics and plots from saved traces")
    _add_common(p)
    p.add_argument("--traces", help="trace directory (default <out>/traces)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure contract: exit 1, message on stderr
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
