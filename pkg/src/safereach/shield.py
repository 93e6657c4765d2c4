"""Runtime kinetic-energy safety shield.

The shield sits between the policy and the actuator.  Each velocity
command is first smoothed by a first-order low-pass filter,

    v_f(k) = alpha * v_f(k-1) + (1 - alpha) * v_raw(k),
    alpha  = exp(-2 * pi * f_c * dt),

and then projected onto the admissible set of the energy barrier

    h(v) = e_max - 0.5 * m * ||v||^2 >= 0.

The projection is radial: commands whose speed exceeds
``v_max = sqrt(2 * e_max / m)`` are scaled back onto the sphere of radius
``v_max`` with their direction preserved, everything else passes through
unchanged.  Forward invariance of the energy set follows directly because
the executed speed can never exceed ``v_max``.

An optional quadratic program combines the same barrier constraint (via
the forward-invariance inequality ``-m v.u + alpha_h h(v) >= 0``) with a
slack-softened goal-tracking decrease condition.  The deployed shield is
the filter-plus-projector pipeline; the QP is provided for experimentation
and is off by default.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

SIM_DT = 1.0 / 60.0     # simulator control period [s]
HARDWARE_DT = 0.004     # hardware control period [s]

PROFILES = {"sim": SIM_DT, "hardware": HARDWARE_DT}


def lpf_coefficient(f_c: float, dt: float) -> float:
    """First-order low-pass coefficient alpha = exp(-2 pi f_c dt)."""
    return math.exp(-2.0 * math.pi * f_c * dt)


@dataclass(frozen=True)
class ShieldConfig:
    """Shield constants; ``alpha`` and ``v_max`` are derived.

    ``mass`` is the effective moving mass of the end-effector assembly and
    ``e_max`` the kinetic-energy budget.  ``alpha_h`` is the class-K gain
    of the forward-invariance inequality; the radial projector itself does
    not depend on it.
    """

    mass: float = 0.93          # [kg]
    e_max: float = 0.30         # [J]
    f_c: float = 25.0           # LPF cutoff [Hz]
    dt: float = SIM_DT          # control period [s]
    alpha_h: float = 1.0        # class-K gain [1/s]

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.e_max <= 0:
            raise ValueError("e_max must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.f_c <= 0:
            raise ValueError("f_c must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("derived alpha must lie strictly inside (0, 1)")

    @property
    def alpha(self) -> float:
        """LPF coefficient for the active control period."""
        return lpf_coefficient(self.f_c, self.dt)

    @property
    def v_max(self) -> float:
        """Speed of the energy budget, sqrt(2 e_max / m) [m/s]."""
        return math.sqrt(2.0 * self.e_max / self.mass)

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> "ShieldConfig":
        """Config with the control period of a named profile (sim | hardware)."""
        try:
            dt = PROFILES[profile]
        except KeyError:
            raise ValueError(
                f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}"
            ) from None
        return cls(dt=dt, **overrides)


class LowPassFilter:
    """First-order IIR low-pass filter over 3-vectors.

    With ``v0=None`` the state warm-starts at the first input, so a
    constant signal passes through unchanged from the first sample.
    """

    def __init__(self, alpha: float, v0: Optional[np.ndarray] = None) -> None:
        self.alpha = float(alpha)
        self.v_f: Optional[np.ndarray] = None if v0 is None else np.asarray(v0, dtype=float).copy()

    def step(self, v_raw: np.ndarray) -> np.ndarray:
        v_raw = np.asarray(v_raw, dtype=float)
        if self.v_f is None:
            self.v_f = v_raw.copy()
        else:
            self.v_f = self.alpha * self.v_f + (1.0 - self.alpha) * v_raw
        return self.v_f.copy()

    def reset(self, v0: Optional[np.ndarray] = None) -> None:
        self.v_f = None if v0 is None else np.asarray(v0, dtype=float).copy()


def h_value(v: np.ndarray, cfg: ShieldConfig) -> float:
    """Energy barrier value e_max - 0.5 m ||v||^2 [J]; safe iff >= 0."""
    v = np.asarray(v, dtype=float)
    return cfg.e_max - 0.5 * cfg.mass * float(np.dot(v, v))


def nagumo_ok(v: np.ndarray, u: np.ndarray, cfg: ShieldConfig) -> bool:
    """Forward-invariance inequality -m v.u + alpha_h h(v) >= 0."""
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    return -cfg.mass * float(np.dot(v, u)) + cfg.alpha_h * h_value(v, cfg) >= 0.0


def ke_project(v_cmd: np.ndarray, cfg: ShieldConfig) -> np.ndarray:
    """Radial projection onto the ball of radius v_max.

    In-budget commands are returned as an unchanged copy, so applying the
    projection twice is a bit-for-bit no-op.  Over-speed commands are
    rescaled until the computed norm is within the budget (one extra pass
    at most, to absorb rounding of the first rescale).
    """
    v = np.asarray(v_cmd, dtype=float).copy()
    v_max = cfg.v_max
    norm = float(np.linalg.norm(v))
    while norm > v_max:
        scaled = v * (v_max / norm)
        if np.array_equal(scaled, v):
            break  # rescale is below float resolution
        v = scaled
        norm = float(np.linalg.norm(v))
    return v


class ShieldPipeline:
    """Stateful per-stream shield: low-pass filter then energy projector.

    One instance per control stream; ``step`` consumes one raw velocity
    command per control period and returns the safe command plus whether
    the projector had to intervene.
    """

    def __init__(self, cfg: ShieldConfig, v0: Optional[np.ndarray] = None) -> None:
        self.cfg = cfg
        self.lpf = LowPassFilter(cfg.alpha, v0=v0)

    def step(self, v_raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
        """Returns (v_filtered, v_safe, intervened)."""
        v_f = self.lpf.step(v_raw)
        v_safe = ke_project(v_f, self.cfg)
        intervened = not np.array_equal(v_safe, v_f)
        return v_f, v_safe, intervened

    def reset(self, v0: Optional[np.ndarray] = None) -> None:
        self.lpf.reset(v0)


@dataclass(frozen=True)
class ClfConfig:
    """Goal-tracking decrease condition for the QP shield.

    ``decay`` is the requested exponential decrease rate of the tracking
    certificate V = 0.5 ||p_r - p_h||^2 and ``slack_penalty`` the quadratic
    weight on the slack that softens it.
    """

    decay: float = 1.0
    slack_penalty: float = 100.0

    def __post_init__(self) -> None:
        if self.decay <= 0:
            raise ValueError("decay must be positive")
        if self.slack_penalty <= 0:
            raise ValueError("slack_penalty must be positive")


QP_CONSTRAINT_TOL = 1e-9


def shield_qp(
    v: np.ndarray,
    u_cmd: np.ndarray,
    p_r: np.ndarray,
    p_h: np.ndarray,
    cfg: ShieldConfig,
    clf: ClfConfig,
) -> np.ndarray:
    """Minimally modify ``u_cmd`` to satisfy the barrier constraint.

    Solves

        min_{u, s}  ||u - u_cmd||^2 + slack_penalty * s^2
        s.t.        m v.u <= alpha_h * h(v)          (hard barrier)
                    (p_r - p_h).u <= -decay * V + s   (soft tracking)
                    s >= 0

    with V = 0.5 ||p_r - p_h||^2 and the input treated as a velocity-level
    command.  The problem is a strictly convex QP in four variables and is
    solved exactly by enumerating active sets of its three inequality
    constraints.  Feasibility is structural: the barrier half-space always
    contains u = -v, and the tracking condition is softened by the slack.
    """
    v = np.asarray(v, dtype=float).reshape(3)
    u_cmd = np.asarray(u_cmd, dtype=float).reshape(3)
    g = np.asarray(p_r, dtype=float).reshape(3) - np.asarray(p_h, dtype=float).reshape(3)
    big_v = 0.5 * float(np.dot(g, g))

    # Constraints in row form  c . x <= b  over x = (u, s).
    rows = np.array(
        [
            [cfg.mass * v[0], cfg.mass * v[1], cfg.mass * v[2], 0.0],
            [g[0], g[1], g[2], -1.0],
            [0.0, 0.0, 0.0, -1.0],
        ]
    )
    bounds = np.array([cfg.alpha_h * h_value(v, cfg), -clf.decay * big_v, 0.0])

    hessian = np.diag([2.0, 2.0, 2.0, 2.0 * clf.slack_penalty])
    linear = np.array([2.0 * u_cmd[0], 2.0 * u_cmd[1], 2.0 * u_cmd[2], 0.0])

    feas_tol = 1e-10
    best_x = None
    best_obj = math.inf
    for active in itertools.chain.from_iterable(
        itertools.combinations(range(3), k) for k in range(4)
    ):
        n_active = len(active)
        kkt = np.zeros((4 + n_active, 4 + n_active))
        kkt[:4, :4] = hessian
        rhs = np.zeros(4 + n_active)
        rhs[:4] = linear
        for i, ci in enumerate(active):
            kkt[:4, 4 + i] = rows[ci]
            kkt[4 + i, :4] = rows[ci]
            rhs[4 + i] = bounds[ci]
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            continue  # degenerate active set (e.g. zero-velocity barrier row)
        x, mult = sol[:4], sol[4:]
        if np.any(mult < -feas_tol):
            continue
        residual = rows @ x - bounds
        if np.any(residual > feas_tol):
            continue
        obj = float((x[:3] - u_cmd) @ (x[:3] - u_cmd) + clf.slack_penalty * x[3] ** 2)
        if obj < best_obj:
            best_obj = obj
            best_x = x

    if best_x is None:
        raise RuntimeError("QP active-set search failed to produce a feasible point")
    u = best_x[:3]
    barrier_residual = cfg.mass * float(np.dot(v, u)) - bounds[0]
    if barrier_residual > QP_CONSTRAINT_TOL:
        raise RuntimeError(
            f"QP solution violates the barrier constraint by {barrier_residual:.3e}"
        )
    return u


class EnergyShield(BaseEstimator, TransformerMixin):
    """Batch interface to the shield for offline command streams.

    ``transform`` treats the rows of ``X`` as the consecutive raw velocity
    commands of one control stream and returns the safe commands the
    pipeline would have executed.  The filter warm-starts at the first row.
    After a call, ``interventions_`` holds the per-row projector flags and
    ``filtered_`` the post-filter commands.

    With ``enabled=False`` the transform is the identity, which is the
    reference behaviour for unshielded replay.
    """

    def __init__(
        self,
        mass: float = 0.93,
        e_max: float = 0.30,
        f_c: float = 25.0,
        dt: float = SIM_DT,
        alpha_h: float = 1.0,
        enabled: bool = True,
    ) -> None:
        self.mass = mass
        self.e_max = e_max
        self.f_c = f_c
        self.dt = dt
        self.alpha_h = alpha_h
        self.enabled = enabled

    def fit(self, X=None, y=None) -> "EnergyShield":
        # Stateless: nothing to learn, present for pipeline compatibility.
        return self

    def config(self) -> ShieldConfig:
        return ShieldConfig(
            mass=self.mass, e_max=self.e_max, f_c=self.f_c, dt=self.dt, alpha_h=self.alpha_h
        )

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 3:
            raise ValueError(f"expected an (n, 3) array of velocity commands, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("velocity commands must be finite")
        if not self.enabled:
            self.filtered_ = X.copy()
            self.interventions_ = np.zeros(len(X), dtype=bool)
            return X.copy()
        pipeline = ShieldPipeline(self.config(), v0=X[0] if len(X) else None)
        out = np.empty_like(X)
        filtered = np.empty_like(X)
        flags = np.zeros(len(X), dtype=bool)
        for i, row in enumerate(X):
            v_f, v_safe, hit = pipeline.step(row)
            filtered[i] = v_f
            out[i] = v_safe
            flags[i] = hit
        self.filtered_ = filtered
        self.interventions_ = flags
        return out
