from dataclasses import replace

import numpy as np
import pytest

import earlbo.optimizer as opt
from earlbo.errors import ConfigError, EpisodeError, ShapeError
from earlbo.env import env_reset, env_step
from earlbo.gp import Dataset, GPModel, KernelParams, fit
from earlbo.optimizer import EarlBoConfig, earlbo_step, suggest, train_agent
from earlbo.ppo import Agent


def _pinned(y0):
    # noise-free observation at 0.2, so the posterior draw there is y0
    data = Dataset([[0.2], [0.9]], [y0, -10.0], [0.0], [1.0])
    return data, GPModel.from_dataset(data, KernelParams(0.2, 1.0, 1e-10))


def test_reward_improvement_and_new_best():
    data, model = _pinned(5.0)
    state = replace(env_reset(data, model, 3), best=3.0)
    new, r = env_step(state, [0.2], np.random.default_rng(0))
    assert r == pytest.approx(2.0, abs=1e-4)
    assert new.best == pytest.approx(5.0, abs=1e-4)


def test_reward_clamped_when_worse():
    data, model = _pinned(2.0)
    state = replace(env_reset(data, model, 3), best=3.0)
    new, r = env_step(state, [0.2], np.random.default_rng(0))
    assert r == 0.0 and new.best == 3.0


def test_dataset_grows_by_one_and_overflow():
    rng = np.random.default_rng(1)
    data = Dataset(rng.uniform(size=(4, 2)), rng.normal(size=4), [0, 0], [1, 1])
    state = env_reset(data, fit(data, n_restarts=2), 2)
    for k in range(2):
        state, _ = env_step(state, rng.uniform(size=2), rng)
        assert len(state.data) == 5 + k and state.extra.shape == (k + 1, 3)
    with pytest.raises(EpisodeError):
        env_step(state, [0.5, 0.5], rng)


def test_reset_needs_data():
    data = Dataset(np.zeros((0, 1)), np.zeros(0), [0], [1])
    with pytest.raises(ShapeError):
        env_reset(data, None, 3)


def test_episode_rewards_telescope():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(6, 1))
    data = Dataset(X, np.sin(6 * X[:, 0]), [0], [1])
    model = fit(data, n_restarts=3)
    for _ in range(30):
        state = env_reset(data, model, 4)
        total = 0.0
        for _ in range(4):
            state, r = env_step(state, rng.uniform(size=1), rng)
            total += r
        assert total == pytest.approx(max(state.best - data.incumbent, 0.0), abs=1e-12)


def _small(**kw):
    base = dict(max_episodes=12, update_episodes=3, off_policy_episodes=6, epochs=3, horizon=2,
                hidden=16, zero_reward_patience=15)
    base.update(kw)
    return EarlBoConfig(**base)


@pytest.fixture(scope="module")
def bowl():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, size=(10, 2))
    return Dataset(X, -np.sum(X ** 2, 1), [-2, -2], [2, 2])


def test_config_validation():
    with pytest.raises(ConfigError):
        EarlBoConfig(update_episodes=0)
    with pytest.raises(ConfigError):
        EarlBoConfig(max_episodes=10, off_policy_episodes=20)
    cfg = EarlBoConfig.desk_scale()
    assert (cfg.max_episodes, cfg.off_policy_episodes, cfg.horizon) == (400, 50, 3)


def test_phase_boundary_and_log(bowl):
    cfg = _small(abort_reward=0.0)
    model = fit(bowl)
    entries, _ = train_agent(Agent.create(2, np.random.default_rng(0), cfg.ppo_settings(), 16),
                             bowl, model, cfg, np.random.default_rng(0))
    assert [e["phase"] for e in entries] == ["off", "off", "on", "on"]
    assert [e["episode"] for e in entries] == [3, 6, 9, 12]
    assert {"mean_reward", "policy_loss", "value_loss", "entropy"} <= set(entries[0])


def test_frozen_layers_constant_after_boundary(bowl):
    model = fit(bowl)

    def trained(max_episodes):
        cfg = _small(max_episodes=max_episodes, abort_reward=0.0)
        agent = Agent.create(2, np.random.default_rng(4), cfg.ppo_settings(), 16)
        train_agent(agent, bowl, model, cfg, np.random.default_rng(4))
        return [p.copy() for net in (agent.actor.mlp, agent.critic.mlp)
                for l in net.layers[:2] for p in (l.W, l.b)], agent.actor.log_std.copy()

    at_boundary, ls0 = trained(6)
    later, ls1 = trained(12)
    assert all(np.array_equal(a, b) for a, b in zip(at_boundary, later))
    assert not np.array_equal(ls0, ls1)


def test_suggestion_within_bounds_and_deterministic(bowl):
    cfg = _small(abort_reward=0.0, seed=5)
    a = earlbo_step(bowl, cfg)
    b = earlbo_step(bowl, cfg)
    assert np.array_equal(a.x, b.x)
    assert np.all(a.x >= bowl.lb) and np.all(a.x <= bowl.ub)
    assert not a.used_fallback
    x = suggest(bowl, (np.array([-1.0, -1.0]), np.array([1.0, 1.0])), cfg)
    assert np.all(np.abs(x) <= 1.0)


def test_constant_objective_falls_back_to_turbo():
    rng = np.random.default_rng(6)
    data = Dataset(rng.uniform(size=(8, 2)), np.full(8, 3.0), [0, 0], [1, 1])
    cfg = _small(max_episodes=60, update_episodes=2, off_policy_episodes=4)
    res = earlbo_step(data, cfg)
    assert res.used_fallback
    assert "15 consecutive" in res.reason
    assert len(res.log) == 15
    assert np.array_equal(res.x, res.fallback_x)


def test_low_final_reward_falls_back(bowl):
    res = earlbo_step(bowl, _small(abort_reward=np.inf))
    assert res.used_fallback and "below" in res.reason


def test_training_error_degrades_to_fallback(bowl, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("nan in loss")

    monkeypatch.setattr(opt, "ppo_update", boom)
    res = earlbo_step(bowl, _small())
    assert res.used_fallback and "nan in loss" in res.reason
    assert np.array_equal(res.x, res.fallback_x)


def test_empty_data_rejected():
    with pytest.raises(ValueError):
        earlbo_step(Dataset(np.zeros((0, 1)), np.zeros(0), [0], [1]), _small())
