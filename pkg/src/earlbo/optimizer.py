"""The EARL-BO suggestion procedure.

One call fits a GP to the real data, trains a fresh encoder + PPO agent in
the GP virtual environment (TuRBO-driven warm start, then on-policy PPO with
frozen early layers) and returns the trained actor's deterministic action on
the real data. If training stalls it falls back to the TuRBO suggestion.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import encode, encode_batch, normalized_points, precompute_base
from .env import env_reset, env_step
from .errors import ConfigError
from .gp import Dataset, GPModel, fit
from .ppo import (Agent, MemoryBuffer, PPOSettings, Transition, act, deterministic_action,
                  freeze_layers, log_prob, ppo_update, pretrain_update, unsquash)
from .turbo import TrustRegion, tr_suggest, tr_update

log = logging.getLogger(__name__)


@dataclass
class EarlBoConfig:
    horizon: int = 3
    max_episodes: int = 4000
    update_episodes: int = 50
    off_policy_episodes: int = 400
    zero_reward_patience: int = 15
    abort_reward: float = 1e-5
    epochs: int = 100
    clip: float = 0.2
    gamma: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.1
    n_frozen: int = 2
    rl_lr: float = 1e-3
    encoder_lr: float = 1e-2
    hidden: int = 64
    latent: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("horizon", "max_episodes", "update_episodes", "epochs", "zero_reward_patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.off_policy_episodes <= self.max_episodes:
            raise ConfigError("off_policy_episodes must lie in [0, max_episodes]")

    @classmethod
    def desk_scale(cls, **kw) -> "EarlBoConfig":
        kw.setdefault("max_episodes", 400)
        kw.setdefault("off_policy_episodes", 50)
        return cls(**kw)

    def ppo_settings(self) -> PPOSettings:
        return PPOSettings(self.clip, self.gamma, self.value_coef, self.entropy_coef, self.epochs,
                           self.rl_lr, self.encoder_lr)


@dataclass
class SuggestResult:
    x: np.ndarray
    used_fallback: bool
    reason: str
    fallback_x: np.ndarray
    log: list[dict] = field(default_factory=list)


def _training_log_entry(episode, phase, mean_reward, stats) -> dict:
    return {"episode": episode, "phase": phase, "mean_reward": mean_reward,
            "policy_loss": stats["policy_loss"], "value_loss": stats["value_loss"],
            "entropy": stats["entropy"]}


def train_agent(agent: Agent, data: Dataset, model: GPModel, config: EarlBoConfig,
                rng: np.random.Generator) -> tuple[list[dict], str | None]:
    """Run the episode loop. Returns the per-update log and an abort reason
    (``None`` when training ran to completion)."""
    lb, ub = data.lb, data.ub
    reward_scale = model.y_scale if model.y_scale > 0 else 1.0
    base_points = normalized_points(model, data.X, data.y)
    buffer = MemoryBuffer(config.horizon, config.update_episodes)
    best_x = data.X[int(np.argmax(data.y))]
    entries: list[dict] = []
    zero_streak = 0
    base_cache = precompute_base(agent.encoder, base_points)

    def encode_state(extra):
        lat, _ = encode_batch(agent.encoder, base_cache, extra[None], np.ones((1, extra.shape[0]), bool))
        return lat[0]

    for episode in range(1, config.max_episodes + 1):
        off_policy = episode <= config.off_policy_episodes
        state = env_reset(data, model, config.horizon, reward_scale)
        tr = TrustRegion(best_x.copy())
        buffer.start_episode()
        latent = encode_state(state.extra)
        for _ in range(config.horizon):
            value = float(agent.critic.value(latent))
            if off_policy:
                action = tr_suggest(state.model, tr, lb, ub, rng)
                raw = unsquash(action, lb, ub)
                logp = float(log_prob(raw, agent.actor.mlp(latent), agent.actor.log_std, lb, ub))
            else:
                action, logp, raw = act(agent.actor, latent, lb, ub, rng)
            next_state, reward = env_step(state, action, rng)
            if off_policy:
                fx = next_state.data.X[int(np.argmax(next_state.data.y))]
                tr = tr_update(tr, reward > 0, center=fx)
                if tr.restart:
                    tr = tr.restarted(fx)
            next_latent = encode_state(next_state.extra)
            buffer.add(Transition(latent, action, next_latent, reward, logp, value, raw,
                                  state.extra))
            state, latent = next_state, next_latent
        buffer.end_episode()

        if episode % config.update_episodes == 0:
            mean_reward = buffer.mean_reward()
            if off_policy:
                stats = pretrain_update(agent, buffer, base_points, lb, ub)
                phase = "off"
            else:
                stats = ppo_update(agent, buffer, base_points, lb, ub, train_encoder=True)
                phase = "on"
                base_cache = precompute_base(agent.encoder, base_points)
            buffer.clear()
            entry = _training_log_entry(episode, phase, mean_reward, stats)
            entries.append(entry)
            log.debug("update %s", entry)
            if episode == config.off_policy_episodes:
                freeze_layers(agent.actor, agent.critic, config.n_frozen)
            zero_streak = zero_streak + 1 if mean_reward == 0.0 else 0
            if zero_streak >= config.zero_reward_patience:
                return entries, f"average reward zero for {zero_streak} consecutive updates"
        elif episode == config.off_policy_episodes:
            freeze_layers(agent.actor, agent.critic, config.n_frozen)
    if buffer.episodes:
        buffer.clear()
    if entries and entries[-1]["mean_reward"] < config.abort_reward:
        return entries, f"final average reward {entries[-1]['mean_reward']:.3g} below {config.abort_reward:g}"
    if not entries:
        return entries, "no update was performed"
    return entries, None


def earlbo_step(data: Dataset, config: EarlBoConfig, model: GPModel | None = None) -> SuggestResult:
    """Full procedure with diagnostics; see :func:`suggest`."""
    if len(data) == 0:
        raise ValueError("EARL-BO needs a non-empty dataset")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = fit(data, seed=config.seed)
    agent = Agent.create(data.dim, rng, config.ppo_settings(), config.hidden, config.latent)
    best_x = data.X[int(np.argmax(data.y))]
    fallback_x = tr_suggest(model, TrustRegion(best_x.copy()), data.lb, data.ub, rng)
    try:
        entries, reason = train_agent(agent, data, model, config, rng)
    except Exception as exc:  # any training failure degrades to the teacher
        log.warning("EARL-BO training failed, using TuRBO suggestion: %s", exc)
        return SuggestResult(fallback_x, True, f"training error: {exc}", fallback_x, [])
    if reason is not None:
        log.info("EARL-BO fallback: %s", reason)
        return SuggestResult(fallback_x, True, reason, fallback_x, entries)
    latent, _ = encode(agent.encoder, normalized_points(model, data.X, data.y))
    x = deterministic_action(agent.actor, latent, data.lb, data.ub)
    return SuggestResult(np.clip(x, data.lb, data.ub), False, "", fallback_x, entries)


def suggest(data: Dataset, bounds=None, config: EarlBoConfig | None = None) -> np.ndarray:
    """Next query point for maximizing the objective behind ``data``."""
    config = config or EarlBoConfig()
    if bounds is not None:
        lb, ub = bounds
        data = Dataset(data.X, data.y, lb, ub)
    return earlbo_step(data, config).x
