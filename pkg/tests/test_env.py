import math

import numpy as np
import pytest

from safereach.env import (
    HAND_NORMAL,
    ContactEvent,
    EnvConfig,
    EnvState,
    ReachEnv,
    calibrated_impact_gain,
    clamp_delta,
    contact_force,
    distance_to_goal,
)

# Independent calibration arithmetic: k_v = f_tau / sqrt(2 e_max / m).
V_BUDGET = math.sqrt(2.0 * 0.30 / 0.93)          # 0.8032193289024988
K_V = 50.0 / V_BUDGET                             # 62.24949798994366


def test_calibrated_gain_matches_hand_arithmetic():
    assert calibrated_impact_gain(50.0, 0.93, 0.30) == pytest.approx(62.24949798994366, rel=1e-15)
    assert EnvConfig().k_v == pytest.approx(K_V, rel=1e-15)


class TestReset:
    def test_same_seed_bit_exact(self):
        env = ReachEnv()
        a = env.reset(0)
        b = env.reset(0)
        assert np.array_equal(a.p_r, b.p_r)
        assert np.array_equal(a.p_h, b.p_h)
        assert np.array_equal(a.v_r, b.v_r)
        assert a.step_index == b.step_index == 0

    def test_initial_state_contract(self):
        env = ReachEnv()
        s = env.reset(7)
        assert np.array_equal(s.p_r, np.array([0.0, 0.0, 0.45]))
        assert np.array_equal(s.v_r, np.zeros(3))
        obs = s.observation()
        assert obs.shape == (9,)
        assert np.array_equal(obs, np.concatenate([s.p_r, s.p_h, s.v_r]))

    def test_hand_inside_workspace_10000_seeds(self):
        env = ReachEnv()
        for seed in range(10_000):
            p_h = env.reset(seed).p_h
            assert -0.25 <= p_h[0] <= 0.25
            assert -0.30 <= p_h[1] <= -0.15
            assert 0.15 <= p_h[2] <= 0.40

    def test_different_seeds_differ(self):
        env = ReachEnv()
        a = env.reset(0).p_h
        b = env.reset(1).p_h
        assert not np.array_equal(a, b)

    def test_hand_poses_distinct_across_seeds(self):
        env = ReachEnv()
        poses = {tuple(env.reset(seed).p_h) for seed in range(1000)}
        assert len(poses) == 1000


class TestStep:
    def test_zero_delta_identity(self):
        env = ReachEnv()
        s0 = env.reset(3)
        res = env.step(np.zeros(3))
        assert np.array_equal(res.state.p_r, s0.p_r)
        assert np.array_equal(res.state.v_r, np.zeros(3))
        assert res.contact is None and not res.done

    def test_clamp_preserves_direction_and_norm(self):
        cfg = EnvConfig()
        requested = np.array([1.0, -2.0, 0.5])
        requested *= 2.0 * cfg.delta_max / np.linalg.norm(requested)
        executed = clamp_delta(requested, cfg.delta_max)
        assert np.linalg.norm(executed) == pytest.approx(cfg.delta_max, rel=1e-12)
        # Direction preserved: component ratios match the request.
        ratios = executed / requested
        assert np.all(np.abs(ratios - ratios[0]) < 1e-12)

    def test_inside_bound_not_modified(self):
        cfg = EnvConfig()
        requested = np.array([0.001, 0.002, -0.003])
        assert np.array_equal(clamp_delta(requested, cfg.delta_max), requested)

    def test_grasp_produces_done_and_contact(self):
        env = ReachEnv()
        env.reset(11)
        # Walk straight at the hand at full speed until the grasp event.
        for _ in range(1000):
            direction = env.state.p_h - env.state.p_r
            step = direction if np.linalg.norm(direction) <= env.config.delta_max else (
                env.config.delta_max * direction / np.linalg.norm(direction)
            )
            res = env.step(step)
            if res.done:
                break
        assert res.done
        assert res.contact is not None and res.contact.occurred
        assert distance_to_goal(res.state) <= env.config.grasp_tol

    def test_non_finite_action_rejected(self):
        env = ReachEnv()
        env.reset(0)
        with pytest.raises(ValueError, match="non-finite"):
            env.step(np.array([np.nan, 0.0, 0.0]))

    def test_step_after_end_rejected(self):
        env = ReachEnv(EnvConfig(horizon=1))
        env.reset(0)
        res = env.step(np.zeros(3))
        assert res.truncated
        with pytest.raises(RuntimeError):
            env.step(np.zeros(3))

    def test_speed_cap_invariant(self):
        env = ReachEnv()
        env.reset(5)
        rng = np.random.default_rng(5)
        cap = env.config.delta_max / env.config.dt
        for _ in range(149):
            res = env.step(rng.uniform(-0.1, 0.1, 3))
            assert np.linalg.norm(res.state.v_r) <= cap * (1 + 1e-12)
            if res.done or res.truncated:
                break

    def test_episode_length_and_flags(self):
        env = ReachEnv()
        env.reset(9)
        steps = 0
        while True:
            res = env.step(np.zeros(3))
            steps += 1
            assert not (res.done and res.truncated)
            if res.done or res.truncated:
                break
        assert steps == env.config.horizon
        assert res.truncated and not res.done


class TestContactForce:
    def test_zero_velocity_contact(self):
        ev = contact_force(np.zeros(3), HAND_NORMAL, K_V, 50.0)
        assert ev.f_n == 0.0 and not ev.violation and ev.v_n == 0.0

    def test_boundary_speed_gives_threshold_exactly(self):
        # v_n at the energy-budget speed maps onto the force limit exactly.
        ev = contact_force(np.array([0.0, 0.0, -V_BUDGET]), HAND_NORMAL, K_V, 50.0)
        assert ev.v_n == pytest.approx(V_BUDGET, rel=1e-15)
        assert ev.f_n == 50.0
        assert not ev.violation

    def test_overspeed_contact_violates(self):
        ev = contact_force(np.array([0.0, 0.0, -1.0]), HAND_NORMAL, K_V, 50.0)
        assert ev.f_n == pytest.approx(62.24949798994366, rel=1e-12)
        assert ev.violation

    def test_receding_velocity_no_force(self):
        ev = contact_force(np.array([0.0, 0.0, +1.0]), HAND_NORMAL, K_V, 50.0)
        assert ev.f_n == 0.0 and ev.v_n == 0.0

    def test_non_unit_normal_rejected(self):
        with pytest.raises(ValueError, match="unit-norm"):
            contact_force(np.zeros(3), np.array([0.0, 0.0, 2.0]), K_V, 50.0)

    def test_force_monotone_in_speed(self):
        speeds = np.linspace(0.0, 2.0, 200)
        forces = [
            contact_force(np.array([0.0, 0.0, -s]), HAND_NORMAL, K_V, 50.0).f_n for s in speeds
        ]
        assert forces[0] == 0.0
        assert all(b >= a for a, b in zip(forces, forces[1:]))

    def test_violation_flag_matches_definition(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            v = rng.uniform(-2, 2, 3)
            ev = contact_force(v, HAND_NORMAL, K_V, 50.0)
            assert ev.violation == (ev.f_n > 50.0)
            assert ev.f_n >= 0.0

    def test_energy_budget_implies_force_bound_10000_contacts(self):
        # If every executed speed satisfies 0.5 m v^2 <= e_max, the
        # calibrated gain keeps every contact force at or below the limit.
        rng = np.random.default_rng(42)
        for _ in range(10_000):
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            speed = rng.uniform(0.0, V_BUDGET)
            assert 0.5 * 0.93 * speed**2 <= 0.30 + 1e-12
            ev = contact_force(speed * direction, HAND_NORMAL, K_V, 50.0)
            assert ev.f_n <= 50.0


class TestDeterminism:
    def test_identical_seed_and_actions_identical_trajectory(self):
        rng = np.random.default_rng(123)
        actions = rng.uniform(-0.02, 0.02, size=(150, 3))

        def rollout():
            env = ReachEnv()
            env.reset(17)
            states, contacts = [], []
            for a in actions:
                res = env.step(a)
                states.append(res.state)
                contacts.append(res.contact)
                if res.done or res.truncated:
                    break
            return states, contacts

        sa, ca = rollout()
        sb, cb = rollout()
        assert len(sa) == len(sb)
        for x, y in zip(sa, sb):
            assert np.array_equal(x.p_r, y.p_r)
            assert np.array_equal(x.v_r, y.v_r)
        assert ca[-1] == cb[-1]


class TestDistance:
    def test_coincident_points(self):
        s = EnvState(np.zeros(3), np.zeros(3), np.zeros(3))
        assert distance_to_goal(s) == 0.0

    def test_axis_aligned(self):
        s = EnvState(np.zeros(3), np.array([0.0, 0.0, 0.3]), np.zeros(3))
        assert distance_to_goal(s) == pytest.approx(0.3, rel=1e-15)

    def test_matches_manual_norm(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            p_r = rng.uniform(-1, 1, 3)
            p_h = rng.uniform(-1, 1, 3)
            s = EnvState(p_r, p_h, np.zeros(3))
            manual = math.sqrt(sum((a - b) ** 2 for a, b in zip(p_r, p_h)))
            assert distance_to_goal(s) == pytest.approx(manual, rel=1e-12)


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"dt": 0.0},
            {"delta_max": -1.0},
            {"grasp_tol": 0.0},
            {"horizon": 0},
            {"f_tau": 0.0},
            {"k_v": 0.0},
            {"workspace": ((0.2, -0.2), (-0.3, -0.15), (0.15, 0.4))},
        ],
    )
    def test_bad_config_rejected(self, kwargs):
        with pytest.raises(ValueError):
            EnvConfig(**kwargs)
