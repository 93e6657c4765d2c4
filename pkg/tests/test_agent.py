import numpy as np
import pytest
import torch

from safereach.agent.checkpoint import (
    ArchitectureError,
    CheckpointError,
    ChecksumError,
    PolicyParams,
    load_policy,
    save_policy,
)
from safereach.agent.cem import CemConfig, cem_update, episode_return, train_cem
from safereach.agent.networks import (
    SquashedGaussianActor,
    flat_parameters,
    load_flat_parameters,
)
from safereach.agent.replay import ReplayBuffer
from safereach.agent.sac import (
    AgentConfig,
    SacAgent,
    TorchPolicy,
    TrainingDiverged,
    train,
)
from safereach.env import EnvConfig, ReachEnv
from safereach.policies import LinearPolicy
from safereach.rewards import RewardWeights

RF5 = RewardWeights.from_preset("RF5")


def tiny_agent(**overrides) -> SacAgent:
    kwargs = dict(
        hidden_sizes=(16, 16), total_env_steps=0, start_steps=0,
        buffer_capacity=512, batch_size=32, seed=0,
    )
    kwargs.update(overrides)
    agent = SacAgent(**kwargs)
    agent.fit(ReachEnv(), RF5)
    return agent


def fill_buffer(agent: SacAgent, n: int, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    for _ in range(n):
        s = rng.standard_normal(9).astype(np.float32)
        a = rng.uniform(-0.02, 0.02, 3).astype(np.float32)
        agent.buffer_.add(s, a, float(rng.uniform(-1, 1)), s + 0.01, False)


class TestReplayBuffer:
    def test_fifo_eviction_matches_naive_oracle(self):
        capacity = 50
        buf = ReplayBuffer(capacity, obs_dim=2, act_dim=1)
        naive = []
        rng = np.random.default_rng(0)
        for i in range(capacity + 23):
            s = rng.standard_normal(2).astype(np.float32)
            a = rng.standard_normal(1).astype(np.float32)
            r = float(i)
            buf.add(s, a, r, s + 1, i % 7 == 0)
            naive.append((s, a, r))
            naive = naive[-capacity:]
        assert len(buf) == capacity
        stored = buf.contents()
        assert np.array_equal(stored["s"], np.stack([t[0] for t in naive]))
        assert np.array_equal(stored["r"], np.array([t[2] for t in naive], dtype=np.float32))

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(100)
        rng = np.random.default_rng(1)
        for i in range(100):
            buf.add(np.full(9, i, dtype=np.float32), np.zeros(3), float(i), np.zeros(9), False)
        batch = buf.sample(64, rng)
        ids = batch["r"].astype(int)
        assert len(set(ids.tolist())) == 64  # no duplicates within a batch

    def test_sampling_reaches_all_entries(self):
        buf = ReplayBuffer(20)
        rng = np.random.default_rng(2)
        for i in range(20):
            buf.add(np.zeros(9), np.zeros(3), float(i), np.zeros(9), False)
        seen = set()
        for _ in range(200):
            seen.update(buf.sample(5, rng)["r"].astype(int).tolist())
        assert seen == set(range(20))

    def test_oversized_batch_rejected(self):
        buf = ReplayBuffer(10)
        buf.add(np.zeros(9), np.zeros(3), 0.0, np.zeros(9), False)
        with pytest.raises(ValueError):
            buf.sample(2, np.random.default_rng(0))


class TestActor:
    def test_deterministic_action_repeatable(self):
        agent = tiny_agent()
        obs = np.arange(9, dtype=float) / 10.0
        rng = np.random.default_rng(0)
        a1 = agent.select_action(obs, rng, deterministic=True)
        a2 = agent.select_action(obs, rng, deterministic=True)
        assert np.array_equal(a1, a2)

    def test_actions_respect_component_bound(self):
        agent = tiny_agent()
        rng = np.random.default_rng(3)
        for _ in range(2000):
            obs = rng.uniform(-1, 1, 9)
            a = agent.select_action(obs, rng, deterministic=bool(rng.integers(2)))
            assert np.all(np.abs(a) <= 0.02 + 1e-12)

    def test_stochastic_mean_matches_monte_carlo_oracle(self):
        agent = tiny_agent()
        obs = np.linspace(-0.5, 0.5, 9)
        rng = np.random.default_rng(4)
        n = 20_000
        samples = np.stack([agent.select_action(obs, rng) for _ in range(n)])

        # Oracle: sample the same squashed Gaussian directly from its
        # mean/std via an independent generator.
        with torch.no_grad():
            mu, log_std = agent.actor_(torch.as_tensor(obs, dtype=torch.float32).unsqueeze(0))
        mu = mu.numpy()[0]
        std = np.exp(log_std.numpy()[0])
        oracle_rng = np.random.default_rng(5)
        z = mu + std * oracle_rng.standard_normal((n, 3))
        oracle = 0.02 * np.tanh(z)

        se = np.sqrt(oracle.var(axis=0) / n + samples.var(axis=0) / n)
        assert np.all(np.abs(samples.mean(axis=0) - oracle.mean(axis=0)) <= 3.0 * se + 1e-9)


class TestUpdateStep:
    def test_requires_filled_buffer(self):
        agent = tiny_agent()
        with pytest.raises(ValueError, match="buffer"):
            agent.update_step(np.random.default_rng(0))

    def test_polyak_full_copy(self):
        agent = tiny_agent(tau_polyak=1.0)
        fill_buffer(agent, 64)
        agent.update_step(np.random.default_rng(1))
        for tp, p in zip(agent.q1_target_.parameters(), agent.q1_.parameters()):
            assert torch.equal(tp, p)

    def test_polyak_zero_keeps_targets(self):
        agent = tiny_agent(tau_polyak=0.0)
        before = [p.clone() for p in agent.q1_target_.parameters()]
        fill_buffer(agent, 64)
        agent.update_step(np.random.default_rng(1))
        for b, tp in zip(before, agent.q1_target_.parameters()):
            assert torch.equal(b, tp)

    def test_temperature_stays_positive(self):
        agent = tiny_agent()
        fill_buffer(agent, 200)
        rng = np.random.default_rng(2)
        for _ in range(30):
            losses = agent.update_step(rng)
            assert losses["alpha"] > 0.0

    def test_divergence_detected(self):
        agent = tiny_agent()
        fill_buffer(agent, 64)
        agent.buffer_.add(np.zeros(9), np.zeros(3), float("inf"), np.zeros(9), False)
        rng = np.random.default_rng(3)
        with pytest.raises(TrainingDiverged):
            for _ in range(50):
                agent.update_step(rng)

    def test_twin_critic_minimum_changes_target(self):
        # Removing the min (using a single critic) must change the Bellman
        # target on a fixed batch, i.e. the twin minimum is load-bearing.
        agent = tiny_agent(seed=11)
        fill_buffer(agent, 64, seed=11)
        raw = agent.buffer_.sample(32, np.random.default_rng(0))
        s_next = torch.as_tensor(raw["s_next"])
        noise = torch.zeros(32, 3)
        with torch.no_grad():
            a_next, _ = agent.actor_.sample(s_next, noise=noise)
            q1 = agent.q1_target_(s_next, a_next)
            q2 = agent.q2_target_(s_next, a_next)
            twin = torch.min(q1, q2)
        assert not torch.equal(twin, q1)
        assert torch.all(twin <= q1) and torch.all(twin <= q2)


class TestGradients:
    def _fd_check(self, loss_fn, params, h=1e-6, tol=1e-4):
        """Central finite differences against autograd on a flat vector."""
        flat = torch.cat([p.detach().reshape(-1) for p in params]).clone()

        def set_flat(vec):
            offset = 0
            with torch.no_grad():
                for p in params:
                    n = p.numel()
                    p.copy_(vec[offset:offset + n].reshape(p.shape))
                    offset += n

        set_flat(flat)
        loss = loss_fn()
        grads = torch.autograd.grad(loss, params, allow_unused=False)
        analytic = torch.cat([g.reshape(-1) for g in grads])

        numeric = torch.zeros_like(flat)
        for i in range(flat.numel()):
            bump = flat.clone()
            bump[i] += h
            set_flat(bump)
            up = loss_fn().item()
            bump[i] -= 2 * h
            set_flat(bump)
            down = loss_fn().item()
            numeric[i] = (up - down) / (2 * h)
        set_flat(flat)

        denom = torch.maximum(analytic.abs(), torch.full_like(analytic, 1e-6))
        rel = ((analytic - numeric).abs() / denom).max().item()
        assert rel < tol, f"max relative gradient error {rel:.3e}"

    @pytest.fixture()
    def double_agent(self):
        agent = tiny_agent(hidden_sizes=(2,), batch_size=4, buffer_capacity=16)
        agent.actor_.double()
        agent.q1_.double()
        agent.q2_.double()
        agent.q1_target_.double()
        agent.q2_target_.double()
        rng = np.random.default_rng(6)
        batch = {
            "s": torch.as_tensor(rng.standard_normal((4, 9))),
            "a": torch.as_tensor(rng.uniform(-0.02, 0.02, (4, 3))),
            "r": torch.as_tensor(rng.standard_normal((4, 1))),
            "s_next": torch.as_tensor(rng.standard_normal((4, 9))),
            "done": torch.zeros(4, 1, dtype=torch.float64),
        }
        noise = torch.as_tensor(rng.standard_normal((4, 3)))
        return agent, batch, noise

    def test_critic_gradient_matches_finite_differences(self, double_agent):
        agent, batch, noise = double_agent
        params = list(agent.q1_.parameters()) + list(agent.q2_.parameters())
        self._fd_check(lambda: agent._critic_loss(batch, next_noise=noise), params)

    def test_actor_gradient_matches_finite_differences(self, double_agent):
        agent, batch, noise = double_agent
        params = list(agent.actor_.parameters())
        self._fd_check(lambda: agent._actor_loss(batch, noise=noise)[0], params)


class TestCheckpoint:
    def _params(self) -> PolicyParams:
        actor = SquashedGaussianActor((8, 8), act_scale=0.02)
        return PolicyParams(arch=actor.arch_descriptor(),
                            values=flat_parameters(actor).numpy())

    def test_round_trip_bit_exact(self, tmp_path):
        params = self._params()
        path = tmp_path / "p.pol"
        save_policy(params, path)
        loaded = load_policy(path)
        assert loaded.arch == params.arch
        assert np.array_equal(loaded.values, params.values)

    def test_truncated_file_is_checksum_error(self, tmp_path):
        params = self._params()
        path = tmp_path / "p.pol"
        save_policy(params, path)
        data = path.read_bytes()
        path.write_bytes(data[:-20])
        with pytest.raises(ChecksumError):
            load_policy(path)

    def test_corrupted_byte_is_checksum_error(self, tmp_path):
        params = self._params()
        path = tmp_path / "p.pol"
        save_policy(params, path)
        data = bytearray(path.read_bytes())
        data[40] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(ChecksumError):
            load_policy(path)

    def test_architecture_mismatch_distinct_error(self, tmp_path):
        params = self._params()
        path = tmp_path / "p.pol"
        save_policy(params, path)
        other = SquashedGaussianActor((4,), act_scale=0.02).arch_descriptor()
        with pytest.raises(ArchitectureError) as err:
            load_policy(path, expected_arch=other)
        assert not isinstance(err.value, ChecksumError)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "p.pol"
        path.write_bytes(b"NOTAPOLICYFILE__" * 4)
        with pytest.raises(CheckpointError):
            load_policy(path)

    def test_policy_round_trip_same_actions(self, tmp_path):
        agent = tiny_agent(seed=5)
        params = agent.policy_params()
        path = tmp_path / "agent.pol"
        save_policy(params, path)
        restored = TorchPolicy.from_params(load_policy(path))
        rng = np.random.default_rng(0)
        for _ in range(20):
            obs = rng.uniform(-1, 1, 9)
            a = agent.select_action(obs, rng, deterministic=True)
            b = restored.act(obs, rng, deterministic=True)
            assert np.array_equal(a, b)

    def test_flat_parameter_round_trip(self):
        actor = SquashedGaussianActor((8, 8), act_scale=0.02)
        flat = flat_parameters(actor)
        other = SquashedGaussianActor((8, 8), act_scale=0.02)
        load_flat_parameters(other, flat)
        assert torch.equal(flat_parameters(other), flat)


class TestTrainingLoop:
    def test_zero_steps_returns_initial_params_and_empty_curve(self):
        agent = tiny_agent(total_env_steps=0)
        assert agent.curve_ == []
        assert agent.policy_params().values.size > 0

    def test_seeded_determinism(self):
        def run():
            agent = SacAgent(hidden_sizes=(16, 16), total_env_steps=400,
                             start_steps=50, buffer_capacity=1000, batch_size=32, seed=3)
            agent.fit(ReachEnv(), RF5)
            return agent

        a = run()
        b = run()
        assert a.curve_ == b.curve_
        assert np.array_equal(a.policy_params().values, b.policy_params().values)

    def test_action_bound_during_training(self):
        env = ReachEnv()
        agent = SacAgent(hidden_sizes=(8, 8), total_env_steps=300, start_steps=100,
                         buffer_capacity=500, batch_size=32, seed=1)
        agent.fit(env, RF5)
        stored = agent.buffer_.contents()
        n = min(300, len(agent.buffer_))
        assert np.all(np.abs(stored["a"][:n]) <= 0.02 + 1e-6)

    def test_multi_seed_train_continues_after_divergence(self, tmp_path, monkeypatch):
        from safereach.agent import sac as sac_module

        original = sac_module.SacAgent.fit

        def sabotaged(self, env, weights, contact_bonus=500.0):
            if self.seed == 1:
                raise TrainingDiverged("injected failure")
            return original(self, env, weights, contact_bonus=contact_bonus)

        monkeypatch.setattr(sac_module.SacAgent, "fit", sabotaged)
        cfg = AgentConfig(hidden_sizes=(8, 8), total_env_steps=200, start_steps=200,
                          buffer_capacity=512, batch_size=32)
        results = train(EnvConfig(), RF5, cfg, seeds=[0, 1, 2], out_dir=tmp_path,
                        label="t", workers=1)
        assert results[1].error is not None and results[1].params is None
        assert results[0].params is not None and results[2].params is not None
        assert (tmp_path / "checkpoints" / "t_seed0.pol").exists()
        assert not (tmp_path / "checkpoints" / "t_seed1.pol").exists()
        assert (tmp_path / "curves.csv").exists()

    def test_agent_config_validation(self):
        with pytest.raises(ValueError):
            AgentConfig(gamma=1.5)
        with pytest.raises(ValueError):
            AgentConfig(batch_size=100, buffer_capacity=10)
        with pytest.raises(ValueError):
            AgentConfig(tau_polyak=-0.1)

    def test_get_params_estimator_contract(self):
        from sklearn.base import clone

        agent = SacAgent(gamma=0.95, seed=7)
        params = agent.get_params()
        assert params["gamma"] == 0.95 and params["seed"] == 7
        cloned = clone(agent)
        assert cloned.get_params() == params


class TestCem:
    def test_update_moves_toward_elites(self):
        mu = np.zeros(3)
        sigma = np.ones(3)
        samples = np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [-5.0, -5.0, -5.0]])
        scores = np.array([1.0, 2.0, -10.0])
        mu2, sigma2 = cem_update(mu, sigma, samples, scores, n_elite=2, sigma_floor=0.01)
        assert np.allclose(mu2, [1.5, 1.5, 1.5])
        assert np.all(sigma2 >= 0.01)

    def test_full_elite_fraction_is_identity(self):
        mu = np.array([0.3, -0.2])
        sigma = np.array([0.5, 0.7])
        samples = np.random.default_rng(0).standard_normal((8, 2))
        scores = np.arange(8.0)
        mu2, sigma2 = cem_update(mu, sigma, samples, scores, n_elite=8, sigma_floor=0.01)
        assert np.array_equal(mu2, mu)
        assert np.array_equal(sigma2, sigma)

    def test_flat_objective_no_improvement(self):
        cfg = CemConfig(population=8, iterations=3, episodes_per_candidate=1, seed=0)
        best_scores = []
        train_cem(EnvConfig(), RewardWeights(0, 0, 0, 0), cfg,
                  callback=lambda it, top, best: best_scores.append(best))
        assert all(b == best_scores[0] for b in best_scores)

    def test_reach_only_learns_at_desk_scale(self):
        env_cfg = EnvConfig()
        cfg = CemConfig(population=32, elite_frac=0.125, iterations=40,
                        episodes_per_candidate=2, seed=0)
        policy = train_cem(env_cfg, RewardWeights.from_preset("RF1"), cfg)
        env = ReachEnv(env_cfg)
        successes = 0
        for seed in range(40):
            _, success = episode_return(policy, env, 50_000 + seed,
                                        RewardWeights.from_preset("RF1"))
            successes += int(success)
        assert successes / 40 > 0.5
