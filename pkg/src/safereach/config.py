"""Run configuration: strict YAML schema with environment overrides.

Unknown keys are rejected with their full path so a typo in a safety
parameter cannot silently fall back to a default.  Every value can be
overridden from the environment with ``SAFEREACH_<SECTION>__<KEY>=value``
(values parsed as YAML scalars), e.g. ``SAFEREACH_SHIELD__E_MAX=0.25``.

``env.k_v`` accepts the string ``calibrated`` (the default), which derives
the impact gain from the shield mass, energy budget and force threshold so
that the energy bound implies the force bound exactly.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import yaml

from .agent.sac import AgentConfig
from .env import DEFAULT_HOME, DEFAULT_WORKSPACE, EnvConfig, calibrated_impact_gain
from .rewards import DEFAULT_CONTACT_BONUS, PRESETS, RewardWeights
from .shield import HARDWARE_DT, ClfConfig, ShieldConfig

ENV_PREFIX = "SAFEREACH_"


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class ShieldSettings:
    enabled: bool
    profile: str                # "sim" (shield runs at the env rate) or "hardware"
    config: ShieldConfig
    qp_mode: bool
    clf: ClfConfig


@dataclass(frozen=True)
class EvalSettings:
    n_episodes: int = 200
    mode: str = "deterministic"
    seed0: int = 1_000_000


@dataclass(frozen=True)
class RunConfig:
    name: str
    out_dir: Path
    seeds: Tuple[int, ...]
    workers: int
    env: EnvConfig
    reward_preset: Optional[str]
    reward_weights: RewardWeights
    contact_bonus: float
    agent: AgentConfig
    shield: ShieldSettings
    eval: EvalSettings


def _check_keys(section: str, mapping: dict, allowed: set) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        keys = ", ".join(sorted(f"{section}.{k}" for k in unknown))
        raise ConfigError(f"unknown config key(s): {keys}")


def _require(mapping: dict, section: str, key: str, kind, default):
    value = mapping.get(key, default)
    if value is None and default is None and key not in mapping:
        raise ConfigError(f"missing required config key {section}.{key}")
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind in (int, float) and isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got a boolean")
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(
            f"{section}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}"
        )
    return value


def apply_env_overrides(raw: dict, environ: Optional[Dict[str, str]] = None) -> dict:
    """Merge ``SAFEREACH_<SECTION>__<KEY>`` environment variables into ``raw``."""
    environ = os.environ if environ is None else environ
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for name, text in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        spec = name[len(ENV_PREFIX):]
        if "__" not in spec:
            raise ConfigError(f"override {name} must look like {ENV_PREFIX}SECTION__KEY")
        section, key = (part.lower() for part in spec.split("__", 1))
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {name}: cannot parse value {text!r}: {exc}") from exc
        out.setdefault(section, {})
        if not isinstance(out[section], dict):
            raise ConfigError(f"override {name}: section {section!r} is not a mapping")
        out[section][key] = value
    return out


def _parse_env(section: dict, shield: dict) -> EnvConfig:
    allowed = {
        "dt", "delta_max", "grasp_tol", "horizon", "hand_mass", "object_mass",
        "mu_hand", "mu_object", "f_tau", "k_v", "workspace", "home",
    }
    _check_keys("env", section, allowed)
    workspace = section.get("workspace", None)
    if workspace is None:
        ws = DEFAULT_WORKSPACE
    else:
        if not isinstance(workspace, dict) or set(workspace) != {"x", "y", "z"}:
            raise ConfigError("env.workspace must be a mapping with x, y and z bounds")
        ws = tuple(
            (float(workspace[axis][0]), float(workspace[axis][1])) for axis in ("x", "y", "z")
        )
    home = section.get("home", None)
    home = tuple(float(v) for v in home) if home is not None else DEFAULT_HOME
    if len(home) != 3:
        raise ConfigError("env.home must have three components")

    f_tau = _require(section, "env", "f_tau", float, 50.0)
    k_v = section.get("k_v", "calibrated")
    if isinstance(k_v, str):
        if k_v != "calibrated":
            raise ConfigError(f"env.k_v: expected a number or 'calibrated', got {k_v!r}")
        mass = float(shield.get("mass", 0.93))
        e_max = float(shield.get("e_max", 0.30))
        k_v = calibrated_impact_gain(f_tau, mass, e_max)
    try:
        return EnvConfig(
            dt=_require(section, "env", "dt", float, 1.0 / 60.0),
            delta_max=_require(section, "env", "delta_max", float, 0.02),
            grasp_tol=_require(section, "env", "grasp_tol", float, 0.01),
            horizon=_require(section, "env", "horizon", int, 150),
            hand_mass=_require(section, "env", "hand_mass", float, 0.5),
            object_mass=_require(section, "env", "object_mass", float, 0.002),
            mu_hand=_require(section, "env", "mu_hand", float, 1.0),
            mu_object=_require(section, "env", "mu_object", float, 0.5),
            f_tau=f_tau,
            k_v=float(k_v),
            workspace=ws,
            home=home,
        )
    except ValueError as exc:
        raise ConfigError(f"env: {exc}") from exc


def _parse_reward(section: dict) -> tuple[Optional[str], RewardWeights, float]:
    _check_keys("reward", section, {"preset", "weights", "contact_bonus"})
    preset = section.get("preset")
    weights_map = section.get("weights")
    if preset is not None and weights_map is not None:
        raise ConfigError("reward: give either a preset or explicit weights, not both")
    if preset is not None:
        if not isinstance(preset, str) or preset.upper() not in PRESETS:
            raise ConfigError(f"reward.preset: expected one of {sorted(PRESETS)}, got {preset!r}")
        preset = preset.upper()
        weights = RewardWeights.from_preset(preset)
    elif weights_map is not None:
        _check_keys("reward.weights", weights_map, {"w_r", "w_s", "w_j", "w_p"})
        weights = RewardWeights(
            w_r=float(weights_map.get("w_r", 0.0)),
            w_s=float(weights_map.get("w_s", 0.0)),
            w_j=float(weights_map.get("w_j", 0.0)),
            w_p=float(weights_map.get("w_p", 0.0)),
        )
    else:
        preset = "RF5"
        weights = RewardWeights.from_preset(preset)
    bonus = _require(section, "reward", "contact_bonus", float, DEFAULT_CONTACT_BONUS)
    return preset, weights, bonus


def _parse_agent(section: dict) -> AgentConfig:
    allowed = {
        "gamma", "lr_actor", "lr_critic", "lr_temperature", "batch_size",
        "tau_polyak", "buffer_capacity", "updates_per_step", "hidden_sizes",
        "total_env_steps", "start_steps", "target_entropy", "seeds",
    }
    _check_keys("agent", section, allowed)
    hidden = section.get("hidden_sizes", [256, 256])
    if not isinstance(hidden, (list, tuple)) or not all(isinstance(h, int) for h in hidden):
        raise ConfigError("agent.hidden_sizes must be a list of integers")
    seeds = section.get("seeds", [0, 1, 2, 3, 4])
    if not isinstance(seeds, (list, tuple)) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("agent.seeds must be a list of integers")
    target_entropy = section.get("target_entropy")
    if target_entropy is not None:
        target_entropy = float(target_entropy)
    try:
        return AgentConfig(
            gamma=_require(section, "agent", "gamma", float, 0.99),
            lr_actor=_require(section, "agent", "lr_actor", float, 3e-4),
            lr_critic=_require(section, "agent", "lr_critic", float, 3e-4),
            lr_temperature=_require(section, "agent", "lr_temperature", float, 3e-4),
            batch_size=_require(section, "agent", "batch_size", int, 256),
            tau_polyak=_require(section, "agent", "tau_polyak", float, 0.005),
            buffer_capacity=_require(section, "agent", "buffer_capacity", int, 100_000),
            updates_per_step=_require(section, "agent", "updates_per_step", int, 1),
            hidden_sizes=tuple(hidden),
            total_env_steps=_require(section, "agent", "total_env_steps", int, 150_000),
            start_steps=_require(section, "agent", "start_steps", int, 1_000),
            target_entropy=target_entropy,
            seeds=tuple(seeds),
        )
    except ValueError as exc:
        raise ConfigError(f"agent: {exc}") from exc


def _parse_shield(section: dict, env_cfg: EnvConfig) -> ShieldSettings:
    allowed = {"enabled", "mass", "e_max", "f_c", "alpha_h", "profile", "qp_mode", "clf"}
    _check_keys("shield", section, allowed)
    profile = section.get("profile", "sim")
    if profile not in ("sim", "hardware"):
        raise ConfigError(f"shield.profile: expected 'sim' or 'hardware', got {profile!r}")
    dt = env_cfg.dt if profile == "sim" else HARDWARE_DT
    clf_map = section.get("clf", {})
    _check_keys("shield.clf", clf_map, {"decay", "slack_penalty"})
    try:
        cfg = ShieldConfig(
            mass=_require(section, "shield", "mass", float, 0.93),
            e_max=_require(section, "shield", "e_max", float, 0.30),
            f_c=_require(section, "shield", "f_c", float, 25.0),
            dt=dt,
            alpha_h=_require(section, "shield", "alpha_h", float, 1.0),
        )
        clf = ClfConfig(
            decay=_require(clf_map, "shield.clf", "decay", float, 1.0),
            slack_penalty=_require(clf_map, "shield.clf", "slack_penalty", float, 100.0),
        )
    except ValueError as exc:
        raise ConfigError(f"shield: {exc}") from exc
    return ShieldSettings(
        enabled=_require(section, "shield", "enabled", bool, True),
        profile=profile,
        config=cfg,
        qp_mode=_require(section, "shield", "qp_mode", bool, False),
        clf=clf,
    )


def _parse_eval(section: dict) -> EvalSettings:
    _check_keys("eval", section, {"n_episodes", "mode", "seed0"})
    mode = section.get("mode", "deterministic")
    if mode not in ("deterministic", "stochastic"):
        raise ConfigError(f"eval.mode: expected deterministic or stochastic, got {mode!r}")
    n_episodes = _require(section, "eval", "n_episodes", int, 200)
    if n_episodes < 1:
        raise ConfigError("eval.n_episodes must be at least 1")
    return EvalSettings(
        n_episodes=n_episodes,
        mode=mode,
        seed0=_require(section, "eval", "seed0", int, 1_000_000),
    )


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("<root>", raw, {"run", "env", "reward", "agent", "shield", "eval"})
    for name in ("run", "env", "reward", "agent", "shield", "eval"):
        if name in raw and not isinstance(raw[name], dict):
            raise ConfigError(f"{name}: expected a mapping")

    run = raw.get("run", {})
    _check_keys("run", run, {"name", "out_dir", "seeds", "workers"})
    name = _require(run, "run", "name", str, "run")
    out_dir = Path(_require(run, "run", "out_dir", str, f"runs/{name}"))
    if base_dir is not None and not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    seeds = run.get("seeds")
    workers = _require(run, "run", "workers", int, 1)
    if workers < 1:
        raise ConfigError("run.workers must be at least 1")

    env_cfg = _parse_env(raw.get("env", {}), raw.get("shield", {}))
    preset, weights, bonus = _parse_reward(raw.get("reward", {}))
    agent_cfg = _parse_agent(raw.get("agent", {}))
    shield = _parse_shield(raw.get("shield", {}), env_cfg)
    eval_cfg = _parse_eval(raw.get("eval", {}))

    if seeds is None:
        seeds = agent_cfg.seeds
    elif not isinstance(seeds, (list, tuple)) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("run.seeds must be a list of integers")

    return RunConfig(
        name=name,
        out_dir=out_dir,
        seeds=tuple(seeds),
        workers=workers,
        env=env_cfg,
        reward_preset=preset,
        reward_weights=weights,
        contact_bonus=bonus,
        agent=agent_cfg,
        shield=shield,
        eval=eval_cfg,
    )


def load_config(path: str | Path, use_env_overrides: bool = True) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if use_env_overrides:
        raw = apply_env_overrides(raw)
    return parse_config(raw, base_dir=path.resolve().parent)


def resolved_dict(cfg: RunConfig) -> dict:
    """Fully materialised config, suitable for bit-exact re-runs."""
    return {
        "run": {
            "name": cfg.name,
            "out_dir": str(cfg.out_dir),
            "seeds": list(cfg.seeds),
            "workers": cfg.workers,
        },
        "env": {
            "dt": cfg.env.dt,
            "delta_max": cfg.env.delta_max,
            "grasp_tol": cfg.env.grasp_tol,
            "horizon": cfg.env.horizon,
            "hand_mass": cfg.env.hand_mass,
            "object_mass": cfg.env.object_mass,
            "mu_hand": cfg.env.mu_hand,
            "mu_object": cfg.env.mu_object,
            "f_tau": cfg.env.f_tau,
            "k_v": cfg.env.k_v,
            "workspace": {
                "x": list(cfg.env.workspace[0]),
                "y": list(cfg.env.workspace[1]),
                "z": list(cfg.env.workspace[2]),
            },
            "home": list(cfg.env.home),
        },
        "reward": (
            {"preset": cfg.reward_preset, "contact_bonus": cfg.contact_bonus}
            if cfg.reward_preset is not None
            else {
                "weights": {
                    "w_r": cfg.reward_weights.w_r,
                    "w_s": cfg.reward_weights.w_s,
                    "w_j": cfg.reward_weights.w_j,
                    "w_p": cfg.reward_weights.w_p,
                },
                "contact_bonus": cfg.contact_bonus,
            }
        ),
        "agent": {
            "gamma": cfg.agent.gamma,
            "lr_actor": cfg.agent.lr_actor,
            "lr_critic": cfg.agent.lr_critic,
            "lr_temperature": cfg.agent.lr_temperature,
            "batch_size": cfg.agent.batch_size,
            "tau_polyak": cfg.agent.tau_polyak,
            "buffer_capacity": cfg.agent.buffer_capacity,
            "updates_per_step": cfg.agent.updates_per_step,
            "hidden_sizes": list(cfg.agent.hidden_sizes),
            "total_env_steps": cfg.agent.total_env_steps,
            "start_steps": cfg.agent.start_steps,
            "target_entropy": cfg.agent.target_entropy,
            "seeds": list(cfg.agent.seeds),
        },
        "shield": {
            "enabled": cfg.shield.enabled,
            "mass": cfg.shield.config.mass,
            "e_max": cfg.shield.config.e_max,
            "f_c": cfg.shield.config.f_c,
            "alpha_h": cfg.shield.config.alpha_h,
            "profile": cfg.shield.profile,
            "qp_mode": cfg.shield.qp_mode,
            "clf": {
                "decay": cfg.shield.clf.decay,
                "slack_penalty": cfg.shield.clf.slack_penalty,
            },
        },
        "eval": {
            "n_episodes": cfg.eval.n_episodes,
            "mode": cfg.eval.mode,
            "seed0": cfg.eval.seed0,
        },
    }


def write_resolved_config(cfg: RunConfig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(resolved_dict(cfg), sort_keys=True))
