"""Kinematic reach-to-contact environment.

A point end-effector moves through free space toward a randomly placed,
palm-up hand holding a small object.  Dynamics are purely kinematic: each
step applies a norm-bounded Cartesian displacement and the velocity is the
displacement divided by the control period.  Contact is resolved with an
impact-speed force model, ``F_N = k_v * v_n``, where ``v_n`` is the normal
approach speed at the grasp event.  With the calibrated gain
``k_v = f_tau / sqrt(2 * e_max / m)`` a kinetic-energy bound of ``e_max``
implies a force bound of ``f_tau`` exactly, which makes the shield's safety
claim checkable to machine precision.

Randomness: the hand pose is drawn uniformly inside the workspace box by a
``numpy.random.default_rng`` (PCG64) generator seeded at ``reset``.  The
same seed always reproduces the same episode, bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

# Palm-up hand: the contact plane normal points straight up.
HAND_NORMAL = np.array([0.0, 0.0, 1.0])

# Hand poses are sampled uniformly inside this box (metres).
DEFAULT_WORKSPACE = ((-0.25, 0.25), (-0.30, -0.15), (0.15, 0.40))

# Fixed home pose of the end-effector, above the workspace so the approach
# is always descending.
DEFAULT_HOME = (0.0, 0.0, 0.45)


def calibrated_impact_gain(f_tau: float, mass: float, energy_budget: float) -> float:
    """Impact gain that maps the budget speed onto the force limit.

    Returns ``k_v`` such that ``k_v * sqrt(2 * energy_budget / mass)``
    equals ``f_tau``: an end-effector respecting the kinetic-energy budget
    can never produce a contact force above ``f_tau``.
    """
    if f_tau <= 0 or mass <= 0 or energy_budget <= 0:
        raise ValueError("f_tau, mass and energy_budget must be positive")
    return f_tau / math.sqrt(2.0 * energy_budget / mass)


@dataclass(frozen=True)
class EnvConfig:
    """Environment constants.

    ``hand_mass``, ``object_mass``, ``mu_hand`` and ``mu_object`` are kept
    for fidelity with the physical setup being modelled but are inert: the
    simplified impact force law does not use them.
    """

    dt: float = 1.0 / 60.0              # control period [s]
    delta_max: float = 0.02             # per-step displacement norm bound [m]
    grasp_tol: float = 0.01             # grasp success radius [m]
    horizon: int = 150                  # truncation length [steps]
    hand_mass: float = 0.5              # [kg], inert
    object_mass: float = 0.002          # [kg], inert
    mu_hand: float = 1.0                # lateral friction, inert
    mu_object: float = 0.5              # lateral friction, inert
    f_tau: float = 50.0                 # safe contact force threshold [N]
    k_v: float = calibrated_impact_gain(50.0, 0.93, 0.30)  # impact gain [N*s/m]
    workspace: Tuple[Tuple[float, float], ...] = DEFAULT_WORKSPACE
    home: Tuple[float, float, float] = DEFAULT_HOME

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.delta_max <= 0:
            raise ValueError("delta_max must be positive")
        if self.grasp_tol <= 0:
            raise ValueError("grasp_tol must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.f_tau <= 0:
            raise ValueError("f_tau must be positive")
        if self.k_v <= 0:
            raise ValueError("k_v must be positive")
        if len(self.workspace) != 3:
            raise ValueError("workspace needs one (min, max) pair per axis")
        for lo, hi in self.workspace:
            if not lo < hi:
                raise ValueError(f"workspace bounds must satisfy min < max, got ({lo}, {hi})")

    @property
    def max_speed(self) -> float:
        """Kinematic speed cap delta_max / dt [m/s]."""
        return self.delta_max / self.dt


@dataclass
class EnvState:
    """End-effector and hand state; observation is ``[p_r, p_h, v_r]``."""

    p_r: np.ndarray
    p_h: np.ndarray
    v_r: np.ndarray
    step_index: int = 0

    def observation(self) -> np.ndarray:
        """9-vector observation: EE position, hand position, EE velocity."""
        return np.concatenate([self.p_r, self.p_h, self.v_r])

    def copy(self) -> "EnvState":
        return EnvState(self.p_r.copy(), self.p_h.copy(), self.v_r.copy(), self.step_index)


@dataclass(frozen=True)
class ContactEvent:
    """First-contact record produced at the grasp event."""

    occurred: bool
    v_n: float          # normal approach speed [m/s], >= 0
    f_n: float          # normal contact force [N]
    violation: bool     # f_n > f_tau
    step_index: int


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    contact: Optional[ContactEvent]
    done: bool
    truncated: bool
    executed_delta: np.ndarray


def distance_to_goal(state: EnvState) -> float:
    """Euclidean distance between end-effector and hand [m]."""
    return float(np.linalg.norm(state.p_r - state.p_h))


def contact_force(
    v_approach: np.ndarray,
    hand_normal: np.ndarray,
    k_v: float,
    f_tau: float,
    step_index: int = 0,
) -> ContactEvent:
    """Resolve a contact with the impact-speed force model.

    The normal approach speed is the component of the approach velocity
    into the hand plane, ``v_n = max(0, -v_approach . n)``; the force is
    ``F_N = k_v * v_n`` and a violation is any force above ``f_tau``.
    """
    hand_normal = np.asarray(hand_normal, dtype=float)
    if abs(float(np.linalg.norm(hand_normal)) - 1.0) > 1e-9:
        raise ValueError("hand_normal must be unit-norm")
    v_approach = np.asarray(v_approach, dtype=float)
    v_n = max(0.0, -float(np.dot(v_approach, hand_normal)))
    f_n = k_v * v_n
    return ContactEvent(
        occurred=True,
        v_n=v_n,
        f_n=f_n,
        violation=f_n > f_tau,
        step_index=step_index,
    )


def clamp_delta(delta: np.ndarray, delta_max: float) -> np.ndarray:
    """Radially clamp a displacement to norm <= delta_max (direction kept)."""
    delta = np.asarray(delta, dtype=float)
    norm = float(np.linalg.norm(delta))
    if norm > delta_max:
        return delta * (delta_max / norm)
    return delta.copy()


class ReachEnv:
    """Deterministic reach-to-contact environment.

    Usage::

        env = ReachEnv(EnvConfig())
        state = env.reset(seed=0)
        result = env.step(np.array([0.0, 0.0, -0.02]))

    The episode terminates when the end-effector enters the grasp-tolerance
    ball around the hand (``done``, with a :class:`ContactEvent`) and
    truncates at the horizon otherwise.  Instances are single-threaded and
    independent; all randomness flows from the seed passed to ``reset``.
    """

    def __init__(self, config: EnvConfig | None = None) -> None:
        self.config = config or EnvConfig()
        self._state: Optional[EnvState] = None
        self._finished = False

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise RuntimeError("environment not reset")
        return self._state

    @property
    def dt(self) -> float:
        return self.config.dt

    def reset(self, seed: int) -> EnvState:
        """Start a fresh episode with the hand pose drawn from ``seed``."""
        rng = np.random.default_rng(seed)
        lows = np.array([lo for lo, _ in self.config.workspace])
        highs = np.array([hi for _, hi in self.config.workspace])
        p_h = rng.uniform(lows, highs)
        self._state = EnvState(
            p_r=np.array(self.config.home, dtype=float),
            p_h=p_h,
            v_r=np.zeros(3),
            step_index=0,
        )
        self._finished = False
        return self._state

    def step(self, action: np.ndarray) -> StepResult:
        """Apply a displacement command and advance one control period."""
        if self._state is None:
            raise RuntimeError("environment not reset")
        if self._finished:
            raise RuntimeError("episode is over; call reset")
        action = np.asarray(action, dtype=float).reshape(3)
        if not np.all(np.isfinite(action)):
            raise ValueError(f"action has non-finite components: {action!r}")

        cfg = self.config
        delta = clamp_delta(action, cfg.delta_max)
        prev = self._state
        state = EnvState(
            p_r=prev.p_r + delta,
            p_h=prev.p_h,
            v_r=delta / cfg.dt,
            step_index=prev.step_index + 1,
        )

        done = distance_to_goal(state) <= cfg.grasp_tol
        truncated = (not done) and state.step_index >= cfg.horizon
        contact = None
        if done:
            contact = contact_force(
                state.v_r, HAND_NORMAL, cfg.k_v, cfg.f_tau, step_index=state.step_index
            )
        self._state = state
        self._finished = done or truncated
        return StepResult(state, contact, done, truncated, delta)

    def distance_to_goal(self, state: EnvState | None = None) -> float:
        return distance_to_goal(state if state is not None else self.state)
