"""Shielded episode execution and trace logging.

One evaluation episode runs the loop: query the policy, convert the
displacement command to a velocity command, low-pass filter it, project it
onto the kinetic-energy budget, execute, and log distance, kinetic energy
and speed.  At the terminal step the contact force and the kinetic energy
held from the previous step are captured.

With the shield disabled the filter is bypassed entirely and the raw
policy action is executed, which is the unshielded reference condition.

Trace CSV format (one file per episode)::

    t,d,ke,spd,ax_raw,ay_raw,az_raw,ax_safe,ay_safe,az_safe,intervened
    0,...
    ...
    #END,<f_contact>,<ke_contact>,<success>,<violation>

Floats are written with 17 significant digits; ``f_contact`` is ``nan``
for episodes that never made contact.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .env import EnvConfig, ReachEnv, distance_to_goal
from .rewards import DEFAULT_CONTACT_BONUS, RewardContext, RewardWeights, total_reward
from .shield import ShieldConfig, ShieldPipeline

TRACE_COLUMNS = (
    "t", "d", "ke", "spd",
    "ax_raw", "ay_raw", "az_raw",
    "ax_safe", "ay_safe", "az_safe",
    "intervened",
)


@dataclass
class EpisodeTrace:
    """Per-step logs plus terminal contact data for one episode."""

    seed: int
    shielded: bool
    d: np.ndarray           # distance to goal after each step [m]
    ke: np.ndarray          # executed kinetic energy [J]
    spd: np.ndarray         # executed speed [m/s]
    actions_raw: np.ndarray     # policy displacement commands (n, 3) [m]
    actions_filtered: np.ndarray  # post-LPF commands (n, 3) [m]; = raw when unshielded
    actions_safe: np.ndarray    # post-projection commands (n, 3) [m]
    v_exec: np.ndarray          # executed velocities (n, 3) [m/s]
    intervened: np.ndarray      # projector flags (n,) bool
    f_contact: float            # terminal contact force [N]; nan without contact
    ke_contact: float           # KE held from the step before contact [J]
    success: bool
    violation: bool
    steps: int
    wall_time: float
    episode_return: Optional[float] = None

    def max_ke(self) -> float:
        return float(np.max(self.ke)) if self.steps else 0.0


class _PolicyAdapter:
    """Accept objects with ``act`` and bare callables alike."""

    def __init__(self, policy) -> None:
        self._act = policy.act if hasattr(policy, "act") else policy

    def act(self, obs, rng, deterministic):
        return np.asarray(self._act(obs, rng, deterministic), dtype=float).reshape(3)


def run_episode(
    policy,
    env: ReachEnv,
    shield_cfg: Optional[ShieldConfig] = None,
    mode: str = "deterministic",
    seed: int = 0,
    reward_weights: Optional[RewardWeights] = None,
    contact_bonus: float = DEFAULT_CONTACT_BONUS,
) -> EpisodeTrace:
    """Run one episode, optionally shielded; returns its trace.

    ``shield_cfg=None`` disables the shield.  ``mode`` selects stochastic
    or deterministic policy actions; stochastic draws come from a generator
    derived from ``seed`` so the whole episode is a function of its inputs.
    When ``reward_weights`` is given the episodic return is accumulated and
    stored on the trace.
    """
    if mode not in ("deterministic", "stochastic"):
        raise ValueError(f"unknown mode {mode!r}")
    deterministic = mode == "deterministic"
    policy = _PolicyAdapter(policy)
    dt = env.config.dt
    log_cfg = shield_cfg if shield_cfg is not None else ShieldConfig(dt=dt)
    mass = log_cfg.mass

    started = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0x5AFE)))
    state = env.reset(seed)
    obs = state.observation()

    pipeline: Optional[ShieldPipeline] = None
    if shield_cfg is not None:
        # Warm-start the filter on an initial policy query so a steady
        # command passes through unchanged from the first step.
        a0 = policy.act(obs, rng, deterministic)
        pipeline = ShieldPipeline(shield_cfg, v0=a0 / dt)

    d_log: List[float] = []
    ke_log: List[float] = []
    spd_log: List[float] = []
    raw_log: List[np.ndarray] = []
    filt_log: List[np.ndarray] = []
    safe_log: List[np.ndarray] = []
    vexec_log: List[np.ndarray] = []
    hit_log: List[bool] = []

    ke_prev = 0.0
    f_contact = math.nan
    ke_contact = 0.0
    success = False
    violation = False
    ep_return = 0.0
    delta_prev: Optional[np.ndarray] = None

    while True:
        a_raw = policy.act(obs, rng, deterministic)
        if pipeline is not None:
            v_f, v_safe, hit = pipeline.step(a_raw / dt)
            a_filt = v_f * dt
            a_safe = v_safe * dt
        else:
            a_filt = a_raw
            a_safe = a_raw
            hit = False

        result = env.step(a_safe)
        v_exec = result.state.v_r
        spd = float(np.linalg.norm(v_exec))
        ke = 0.5 * mass * spd * spd
        d = distance_to_goal(result.state)

        d_log.append(d)
        ke_log.append(ke)
        spd_log.append(spd)
        raw_log.append(a_raw)
        filt_log.append(a_filt)
        safe_log.append(a_safe)
        vexec_log.append(v_exec)
        hit_log.append(hit)

        if reward_weights is not None:
            executed = result.executed_delta
            prev = executed if delta_prev is None else delta_prev
            ep_return += total_reward(
                RewardContext(
                    p_r=result.state.p_r, p_h=result.state.p_h,
                    contact=result.done,
                    f_n=result.contact.f_n if result.contact else 0.0,
                    f_tau=env.config.f_tau,
                    delta_t=executed, delta_prev=prev,
                    contact_bonus=contact_bonus,
                ),
                reward_weights,
            )
            delta_prev = executed

        if result.done or result.truncated:
            if result.contact is not None:
                f_contact = result.contact.f_n
                violation = result.contact.violation
            ke_contact = ke_prev
            success = result.done
            break
        ke_prev = ke
        obs = result.state.observation()

    return EpisodeTrace(
        seed=seed,
        shielded=shield_cfg is not None,
        d=np.array(d_log),
        ke=np.array(ke_log),
        spd=np.array(spd_log),
        actions_raw=np.array(raw_log),
        actions_filtered=np.array(filt_log),
        actions_safe=np.array(safe_log),
        v_exec=np.array(vexec_log),
        intervened=np.array(hit_log, dtype=bool),
        f_contact=f_contact,
        ke_contact=ke_contact,
        success=success,
        violation=violation,
        steps=len(d_log),
        wall_time=time.perf_counter() - started,
        episode_return=ep_return if reward_weights is not None else None,
    )


def batch_rollout(
    policy,
    env_cfg: EnvConfig,
    shield_cfg: Optional[ShieldConfig] = None,
    n_episodes: int = 1,
    seed0: int = 0,
    mode: str = "deterministic",
    reward_weights: Optional[RewardWeights] = None,
    contact_bonus: float = DEFAULT_CONTACT_BONUS,
    out_dir: str | Path | None = None,
) -> List[EpisodeTrace]:
    """Run episodes with seeds ``seed0 .. seed0 + n_episodes - 1``.

    With ``out_dir`` set, every trace is written to disk as soon as its
    episode finishes, so an interrupted batch leaves exactly the completed
    episodes behind.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    env = ReachEnv(env_cfg)
    traces = []
    for i in range(n_episodes):
        trace = run_episode(
            policy, env, shield_cfg, mode=mode, seed=seed0 + i,
            reward_weights=reward_weights, contact_bonus=contact_bonus,
        )
        if out is not None:
            write_trace(trace, out / f"ep_{seed0 + i:06d}.csv")
        traces.append(trace)
    return traces


# ----------------------------------------------------------------- trace I/O
def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trace(trace: EpisodeTrace, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for t in range(trace.steps):
            writer.writerow(
                [
                    t,
                    _fmt(trace.d[t]), _fmt(trace.ke[t]), _fmt(trace.spd[t]),
                    _fmt(trace.actions_raw[t][0]), _fmt(trace.actions_raw[t][1]),
                    _fmt(trace.actions_raw[t][2]),
                    _fmt(trace.actions_safe[t][0]), _fmt(trace.actions_safe[t][1]),
                    _fmt(trace.actions_safe[t][2]),
                    int(trace.intervened[t]),
                ]
            )
        writer.writerow(
            ["#END", _fmt(trace.f_contact), _fmt(trace.ke_contact),
             int(trace.success), int(trace.violation)]
        )


def read_trace(path: str | Path, seed: int = -1, shielded: bool = False) -> EpisodeTrace:
    """Load a trace CSV back into memory.

    Executed velocities are reconstructed from the safe-action directions
    and the logged speeds (the environment clamp is radial, so the executed
    velocity is collinear with the safe command).  The file does not record
    whether the shield was enabled; pass ``shielded`` if that matters.
    """
    path = Path(path)
    rows: List[list] = []
    end_row = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {header!r}")
        for row in reader:
            if row and row[0] == "#END":
                end_row = row
                break
            rows.append(row)
    if end_row is None:
        raise ValueError(f"{path}: trace has no #END summary row")

    n = len(rows)
    d = np.array([float(r[1]) for r in rows])
    ke = np.array([float(r[2]) for r in rows])
    spd = np.array([float(r[3]) for r in rows])
    raw = np.array([[float(r[4]), float(r[5]), float(r[6])] for r in rows]).reshape(n, 3)
    safe = np.array([[float(r[7]), float(r[8]), float(r[9])] for r in rows]).reshape(n, 3)
    hit = np.array([bool(int(r[10])) for r in rows], dtype=bool)

    v_exec = np.zeros((n, 3))
    for t in range(n):
        norm = float(np.linalg.norm(safe[t]))
        if norm > 0.0:
            v_exec[t] = safe[t] / norm * spd[t]

    return EpisodeTrace(
        seed=seed,
        shielded=shielded,
        d=d, ke=ke, spd=spd,
        actions_raw=raw, actions_filtered=safe.copy(), actions_safe=safe,
        v_exec=v_exec, intervened=hit,
        f_contact=float(end_row[1]),
        ke_contact=float(end_row[2]),
        success=bool(int(end_row[3])),
        violation=bool(int(end_row[4])),
        steps=n,
        wall_time=0.0,
    )
