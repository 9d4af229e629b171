"""GP virtual environment: fantasy rollouts against posterior samples."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .encoder import normalized_points
from .errors import EpisodeError, ShapeError
from .gp import Dataset, GPModel, fantasy_extend, sample_posterior


@dataclass(frozen=True)
class EnvState:
    data: Dataset  # real data plus fantasies, problem units
    model: GPModel
    best: float
    step: int
    horizon: int
    extra: np.ndarray  # normalized fantasy points appended so far, (step, d+1)
    reward_scale: float = 1.0


def env_reset(data: Dataset, model: GPModel, horizon: int, reward_scale: float = 1.0) -> EnvState:
    if len(data) == 0:
        raise ShapeError("the virtual environment needs initial data")
    return EnvState(data, model, data.incumbent, 0, horizon,
                    np.zeros((0, data.dim + 1)), reward_scale)


def env_step(state: EnvState, x, rng: np.random.Generator) -> tuple[EnvState, float]:
    """Query ``x`` against a posterior draw; reward is the clamped improvement
    over the best value so far, divided by ``reward_scale``."""
    if state.step >= state.horizon:
        raise EpisodeError(f"episode already has {state.horizon} steps")
    x = np.asarray(x, dtype=float).ravel()
    y = sample_posterior(state.model, x, rng)
    reward = max(y - state.best, 0.0) / state.reward_scale
    model = fantasy_extend(state.model, x, y)
    point = normalized_points(state.model, x, y)
    new = replace(state, data=state.data.add(x, y), model=model, best=max(state.best, y),
                  step=state.step + 1, extra=np.vstack([state.extra, point]))
    return new, reward
