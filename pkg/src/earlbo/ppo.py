"""Actor-critic PPO with a tanh-squashed Gaussian policy, trained end to end
through the set encoder, plus behaviour-cloning warm start and layer freezing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import Encoder, encode_batch, encode_batch_backward, precompute_base
from .errors import ConfigError, MemoryBufferError, NumericError
from .numerics import MLP, AdamState, adam_step

LOG_STD_INIT = math.log(0.5)
LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


class Actor:
    def __init__(self, mlp: MLP, log_std: np.ndarray):
        self.mlp = mlp
        self.log_std = log_std
        self.n_frozen = 0

    @classmethod
    def create(cls, latent_dim: int, action_dim: int, rng: np.random.Generator,
               hidden: int = 64) -> "Actor":
        mlp = MLP.create([latent_dim, hidden, hidden, action_dim], ["tanh", "tanh", "identity"],
                         rng, last_scale=0.01)
        return cls(mlp, np.full(action_dim, LOG_STD_INIT))

    def params(self) -> list[np.ndarray]:
        return self.mlp.params() + [self.log_std]

    def trainable_mask(self) -> list[bool]:
        return _layer_mask(self.mlp, self.n_frozen) + [True]


class Critic:
    def __init__(self, mlp: MLP):
        self.mlp = mlp
        self.n_frozen = 0

    @classmethod
    def create(cls, latent_dim: int, rng: np.random.Generator, hidden: int = 64) -> "Critic":
        return cls(MLP.create([latent_dim, hidden, hidden, 1], ["tanh", "tanh", "identity"], rng))

    def params(self) -> list[np.ndarray]:
        return self.mlp.params()

    def trainable_mask(self) -> list[bool]:
        return _layer_mask(self.mlp, self.n_frozen)

    def value(self, latent: np.ndarray) -> np.ndarray:
        return self.mlp(latent)[..., 0]


def _layer_mask(mlp: MLP, n_frozen: int) -> list[bool]:
    mask = []
    for i, _ in enumerate(mlp.layers):
        mask.extend([i >= n_frozen] * 2)
    return mask


# ---------------------------------------------------------------------------
# squashed Gaussian policy


def squash(raw: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    return lb + (ub - lb) * (np.tanh(raw) + 1.0) / 2.0


def unsquash(action: np.ndarray, lb: np.ndarray, ub: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    u = 2.0 * (np.asarray(action, dtype=float) - lb) / (ub - lb) - 1.0
    return np.arctanh(np.clip(u, -1.0 + eps, 1.0 - eps))


def _log_one_minus_tanh_sq(raw: np.ndarray) -> np.ndarray:
    # log(1 - tanh(x)^2) = 2 * (log 2 - x - softplus(-2x))
    return 2.0 * (_LOG2 - raw - np.logaddexp(0.0, -2.0 * raw))


def log_prob(raw: np.ndarray, mean: np.ndarray, log_std: np.ndarray, lb: np.ndarray,
             ub: np.ndarray) -> np.ndarray:
    """Log density of the squashed action whose pre-squash value is ``raw``."""
    z = (raw - mean) / np.exp(log_std)
    gauss = -0.5 * z * z - log_std - _HALF_LOG_2PI
    log_jac = np.log((ub - lb) / 2.0) + _log_one_minus_tanh_sq(raw)
    return np.sum(gauss - log_jac, axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    """Entropy of the pre-squash Gaussian."""
    return float(np.sum(0.5 + _HALF_LOG_2PI + log_std))


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(32)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)


def squashed_entropy(mean: np.ndarray, log_std: np.ndarray, lb, ub
                     ) -> tuple[float, np.ndarray, np.ndarray]:
    """Entropy of the squashed action distribution, averaged over the rows of
    ``mean``, with its gradients w.r.t. ``mean`` and ``log_std``.

    The Jacobian expectation factorizes per dimension, so a 32-node
    Gauss-Hermite rule evaluates it deterministically.
    """
    mean = np.atleast_2d(mean)
    n = mean.shape[0]
    std = np.exp(log_std)
    x = mean[..., None] + std[:, None] * _GH_NODES  # (n, d, q)
    e_log_jac = _log_one_minus_tanh_sq(x) @ _GH_WEIGHTS  # (n, d)
    dg = -2.0 * np.tanh(x)
    g_mean = (dg @ _GH_WEIGHTS) / n
    g_log_std = np.sum((dg * _GH_NODES) @ _GH_WEIGHTS, axis=0) * std / n + 1.0
    ent = (np.sum(0.5 + _HALF_LOG_2PI + log_std + np.log((np.asarray(ub, float)
                                                           - np.asarray(lb, float)) / 2.0))
           + float(np.sum(e_log_jac)) / n)
    return float(ent), g_mean, g_log_std


def squashed_entropy_mc(mean: np.ndarray, log_std: np.ndarray, lb, ub,
                        rng: np.random.Generator, n: int = 20000) -> float:
    """Monte-Carlo entropy of the squashed action distribution (diagnostics)."""
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    raw = mean + np.exp(log_std) * rng.standard_normal((n, np.size(mean)))
    return float(-np.mean(log_prob(raw, mean, log_std, lb, ub)))


def act(actor: Actor, latent: np.ndarray, lb, ub, rng: np.random.Generator
        ) -> tuple[np.ndarray, float, np.ndarray]:
    """Sample an action. Returns ``(action, log_prob, raw)``; ``raw`` is the
    pre-squash draw, kept so the log-density can be re-evaluated exactly."""
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    latent = np.asarray(latent, dtype=float)
    if not np.all(np.isfinite(latent)):
        raise NumericError("non-finite latent state")
    mean = actor.mlp(latent)
    raw = mean + np.exp(actor.log_std) * rng.standard_normal(mean.shape)
    return squash(raw, lb, ub), float(log_prob(raw, mean, actor.log_std, lb, ub)), raw


def deterministic_action(actor: Actor, latent: np.ndarray, lb, ub) -> np.ndarray:
    return squash(actor.mlp(latent), np.asarray(lb, float), np.asarray(ub, float))


# ---------------------------------------------------------------------------
# memory


@dataclass
class Transition:
    state: np.ndarray  # latent at s
    action: np.ndarray
    next_state: np.ndarray
    reward: float
    log_prob: float
    value: float
    raw: np.ndarray
    extra: np.ndarray  # fantasy points making up s beyond the shared base, (t, d+1)


@dataclass
class MemoryBuffer:
    horizon: int
    capacity_episodes: int
    episodes: list[list[Transition]] = field(default_factory=list)
    _open: list[Transition] | None = None

    def start_episode(self) -> None:
        if self._open is not None:
            raise MemoryBufferError("previous episode was not finished")
        if len(self.episodes) >= self.capacity_episodes:
            raise MemoryBufferError("memory buffer is full")
        self._open = []

    def add(self, tr: Transition) -> None:
        if self._open is None:
            self.start_episode()
        if len(self._open) >= self.horizon:
            raise MemoryBufferError("episode longer than the horizon")
        if tr.reward < 0 or not np.isfinite(tr.reward):
            raise MemoryBufferError("rewards must be finite and non-negative")
        self._open.append(tr)

    def end_episode(self) -> None:
        if self._open is None:
            raise MemoryBufferError("no open episode")
        self.episodes.append(self._open)
        self._open = None

    def transitions(self) -> list[Transition]:
        return [t for ep in self.episodes for t in ep]

    def __len__(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def clear(self) -> None:
        self.episodes = []
        self._open = None

    def mean_reward(self) -> float:
        trs = self.transitions()
        return float(np.mean([t.reward for t in trs])) if trs else 0.0


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    running = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        running = rewards[i] + gamma * running
        out[i] = running
    return out


def compute_returns_advantages(buffer: MemoryBuffer, gamma: float = 0.95
                               ) -> tuple[np.ndarray, np.ndarray]:
    """Per-transition discounted returns and raw advantages ``R - V(s)``.

    Advantages are not standardized here; :func:`standardize` does that.
    """
    if buffer._open is not None:
        raise MemoryBufferError("buffer holds an unfinished episode")
    for ep in buffer.episodes:
        if len(ep) != buffer.horizon:
            raise MemoryBufferError(f"episode has {len(ep)} steps, horizon is {buffer.horizon}")
    returns = np.concatenate([discounted_returns([t.reward for t in ep], gamma)
                              for ep in buffer.episodes]) if buffer.episodes else np.zeros(0)
    values = np.array([t.value for t in buffer.transitions()])
    return returns, returns - values


def standardize(a: np.ndarray) -> np.ndarray:
    std = a.std()
    return (a - a.mean()) / std if std > 1e-12 else a - a.mean()


def clipped_objective(ratio, advantage, eps: float = 0.2) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


# ---------------------------------------------------------------------------
# agent and updates


@dataclass
class PPOSettings:
    clip: float = 0.2
    gamma: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.1
    epochs: int = 100
    rl_lr: float = 1e-3
    encoder_lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999


class Agent:
    """Encoder, actor and critic plus one Adam state each."""

    def __init__(self, encoder: Encoder, actor: Actor, critic: Critic,
                 settings: PPOSettings | None = None):
        self.encoder = encoder
        self.actor = actor
        self.critic = critic
        self.settings = settings or PPOSettings()
        s = self.settings
        self.opt_actor = AdamState.for_params(actor.params(), s.beta1, s.beta2)
        self.opt_critic = AdamState.for_params(critic.params(), s.beta1, s.beta2)
        self.opt_encoder = AdamState.for_params(encoder.params(), s.beta1, s.beta2)

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator, settings: PPOSettings | None = None,
               hidden: int = 64, latent: int = 16) -> "Agent":
        enc = Encoder.create(dim, rng, hidden, latent)
        return cls(enc, Actor.create(latent, dim, rng, hidden), Critic.create(latent, rng, hidden),
                   settings)


def freeze_layers(actor: Actor, critic: Critic, n_frozen: int = 2
                  ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Freeze the first ``n_frozen`` layers of both networks.

    Returns ``(frozen, trainable)`` parameter lists covering actor and critic.
    """
    for net in (actor.mlp, critic.mlp):
        if n_frozen >= len(net.layers) or n_frozen < 0:
            raise ConfigError(f"cannot freeze {n_frozen} of {len(net.layers)} layers")
    actor.n_frozen = n_frozen
    critic.n_frozen = n_frozen
    frozen, trainable = [], []
    for params, mask in ((actor.params(), actor.trainable_mask()),
                         (critic.params(), critic.trainable_mask())):
        for p, m in zip(params, mask):
            (trainable if m else frozen).append(p)
    return frozen, trainable


@dataclass
class Batch:
    """Padded arrays for a set of transitions sharing one base set."""
    extra: np.ndarray
    mask: np.ndarray
    raw: np.ndarray
    old_log_prob: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray


def build_batch(buffer: MemoryBuffer, gamma: float) -> Batch:
    trs = buffer.transitions()
    if not trs:
        raise MemoryBufferError("empty buffer")
    returns, adv = compute_returns_advantages(buffer, gamma)
    m = max(t.extra.shape[0] for t in trs)
    width = trs[0].extra.shape[1] if trs[0].extra.ndim == 2 else trs[0].raw.size + 1
    extra = np.zeros((len(trs), m, width))
    mask = np.zeros((len(trs), m), dtype=bool)
    for i, t in enumerate(trs):
        n = t.extra.shape[0]
        extra[i, :n] = t.extra
        mask[i, :n] = True
    return Batch(extra, mask, np.array([t.raw for t in trs]),
                 np.array([t.log_prob for t in trs]), returns, adv)


def _policy_grads(raw, mean, log_std, dlogp):
    """Chain d(loss)/d(log_prob) into mean and log-std."""
    std2 = np.exp(2.0 * log_std)
    diff = raw - mean
    g_mean = dlogp[:, None] * diff / std2
    g_log_std = np.sum(dlogp[:, None] * (diff * diff / std2 - 1.0), axis=0)
    return g_mean, g_log_std


def _apply(agent: Agent, g_actor, g_critic, g_encoder=None) -> None:
    s = agent.settings
    for g in (g_actor or []) + g_critic + (g_encoder or []):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient during update")
    if g_actor is not None:
        adam_step(agent.actor.params(), g_actor, agent.opt_actor, s.rl_lr,
                  agent.actor.trainable_mask())
    adam_step(agent.critic.params(), g_critic, agent.opt_critic, s.rl_lr,
              agent.critic.trainable_mask())
    if g_encoder is not None:
        adam_step(agent.encoder.params(), g_encoder, agent.opt_encoder, s.encoder_lr)
    np.clip(agent.actor.log_std, LOG_STD_MIN, LOG_STD_MAX, out=agent.actor.log_std)


def ppo_loss_and_grads(agent: Agent, batch: Batch, adv: np.ndarray, old_logp: np.ndarray | None,
                       base_points: np.ndarray | None, lb, ub, train_encoder: bool = True):
    """Clipped PPO loss with value and entropy terms, and its exact gradients.

    ``old_logp=None`` means "old policy = current policy" (ratio one).
    Returns ``(loss, stats, (g_actor, g_critic, g_encoder), logp)``;
    ``g_encoder`` is ``None`` when the encoder is not trained.
    """
    s = agent.settings
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    n = adv.size
    base = (precompute_base(agent.encoder, base_points)
            if base_points is not None and len(base_points) else None)
    latent, enc_cache = encode_batch(agent.encoder, base, batch.extra, batch.mask)
    mean, a_cache = agent.actor.mlp.forward(latent)
    value, c_cache = agent.critic.mlp.forward(latent)
    value = value[:, 0]
    logp = log_prob(batch.raw, mean, agent.actor.log_std, lb, ub)
    ratio = np.ones(n) if old_logp is None else np.exp(logp - old_logp)
    surr = clipped_objective(ratio, adv, s.clip)
    policy_loss = -float(np.mean(surr))
    value_loss = float(np.mean((value - batch.returns) ** 2))
    entropy, ge_mean, ge_log_std = squashed_entropy(mean, agent.actor.log_std, lb, ub)
    loss = policy_loss + s.value_coef * value_loss - s.entropy_coef * entropy
    stats = {"loss": loss, "policy_loss": policy_loss, "value_loss": value_loss,
             "entropy": entropy, "ratio_max_dev": float(np.max(np.abs(ratio - 1.0)))}

    clipped = ((adv > 0) & (ratio > 1.0 + s.clip)) | ((adv < 0) & (ratio < 1.0 - s.clip))
    dlogp = np.where(clipped, 0.0, -adv * ratio / n)
    g_mean, g_log_std = _policy_grads(batch.raw, mean, agent.actor.log_std, dlogp)
    g_mean = g_mean - s.entropy_coef * ge_mean
    g_log_std = g_log_std - s.entropy_coef * ge_log_std
    g_actor_mlp, g_lat_a = agent.actor.mlp.backward(a_cache, g_mean)
    g_value = (s.value_coef * 2.0 / n) * (value - batch.returns)
    g_critic, g_lat_c = agent.critic.mlp.backward(c_cache, g_value[:, None])
    g_encoder = None
    if train_encoder:
        g_encoder = encode_batch_backward(agent.encoder, enc_cache, g_lat_a + g_lat_c)
    return loss, stats, (g_actor_mlp + [g_log_std], g_critic, g_encoder), logp


def ppo_update(agent: Agent, buffer: MemoryBuffer, base_points: np.ndarray | None, lb, ub,
               train_encoder: bool = True) -> dict:
    """Run ``epochs`` full-batch PPO steps on the buffer.

    Old log-probabilities are re-evaluated with the batched encoder before the
    first step (the parameters have not moved since collection), so the first
    epoch's ratio is exactly one.
    """
    s = agent.settings
    batch = build_batch(buffer, s.gamma)
    adv = standardize(batch.advantages)
    # with every return zero the policy gradient vanishes in expectation; what
    # standardization leaves is critic noise, so only the critic steps
    informative = bool(np.any(batch.returns > 0))
    old_logp = None
    history = []
    for epoch in range(s.epochs):
        loss, stats, grads, logp = ppo_loss_and_grads(agent, batch, adv, old_logp, base_points,
                                                      lb, ub, train_encoder and informative)
        if not np.isfinite(loss):
            raise NumericError("non-finite PPO loss")
        if old_logp is None:
            old_logp = logp.copy()
        history.append({"epoch": epoch, **stats})
        g_actor, g_critic, g_encoder = grads
        _apply(agent, g_actor if informative else None, g_critic, g_encoder)
    last = history[-1]
    return {"policy_loss": last["policy_loss"], "value_loss": last["value_loss"],
            "entropy": last["entropy"], "loss": last["loss"],
            "first_epoch_ratio_max_dev": history[0]["ratio_max_dev"], "policy_step": informative,
            "history": history}


def pretrain_loss_and_grads(agent: Agent, latent: np.ndarray, batch: Batch, lb, ub):
    """Behaviour-cloning loss on teacher actions plus value and entropy terms.

    Returns ``(loss, stats, (g_actor, g_critic))``.
    """
    s = agent.settings
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    n = latent.shape[0]
    mean, a_cache = agent.actor.mlp.forward(latent)
    value, c_cache = agent.critic.mlp.forward(latent)
    value = value[:, 0]
    logp = log_prob(batch.raw, mean, agent.actor.log_std, lb, ub)
    bc_loss = -float(np.mean(logp))
    value_loss = float(np.mean((value - batch.returns) ** 2))
    entropy, ge_mean, ge_log_std = squashed_entropy(mean, agent.actor.log_std, lb, ub)
    loss = bc_loss + s.value_coef * value_loss - s.entropy_coef * entropy
    g_mean, g_log_std = _policy_grads(batch.raw, mean, agent.actor.log_std, np.full(n, -1.0 / n))
    g_mean = g_mean - s.entropy_coef * ge_mean
    g_log_std = g_log_std - s.entropy_coef * ge_log_std
    g_actor_mlp, _ = agent.actor.mlp.backward(a_cache, g_mean)
    g_value = (s.value_coef * 2.0 / n) * (value - batch.returns)
    g_critic, _ = agent.critic.mlp.backward(c_cache, g_value[:, None])
    stats = {"loss": loss, "policy_loss": bc_loss, "value_loss": value_loss, "entropy": entropy}
    return loss, stats, (g_actor_mlp + [g_log_std], g_critic)


def pretrain_update(agent: Agent, buffer: MemoryBuffer, base_points: np.ndarray | None, lb, ub
                    ) -> dict:
    """Warm start the actor and critic on teacher transitions.

    The policy term is the negative log-likelihood of the teacher's action
    (behaviour cloning); the encoder is held fixed, so latents are computed
    once.
    """
    s = agent.settings
    if len(buffer) == 0:
        raise MemoryBufferError("empty teacher buffer")
    batch = build_batch(buffer, s.gamma)
    base = (precompute_base(agent.encoder, base_points)
            if base_points is not None and len(base_points) else None)
    latent, _ = encode_batch(agent.encoder, base, batch.extra, batch.mask)
    history = []
    for epoch in range(s.epochs):
        loss, stats, grads = pretrain_loss_and_grads(agent, latent, batch, lb, ub)
        if not np.isfinite(loss):
            raise NumericError("non-finite pretraining loss")
        history.append({"epoch": epoch, **stats})
        _apply(agent, *grads)
    last = history[-1]
    return {"policy_loss": last["policy_loss"], "value_loss": last["value_loss"],
            "entropy": last["entropy"], "loss": last["loss"], "history": history}
