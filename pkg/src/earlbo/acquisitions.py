"""One-step acquisitions, a Monte-Carlo rollout acquisition, and the shared
multi-start pattern-search maximizer."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .gp import Dataset, GPModel, fantasy_extend, sample_posterior

SIGMA_FLOOR = 1e-12  # normalized output units
N_MC_DEFAULT = 128

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

Acquisition = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AcquisitionContext:
    model: GPModel
    incumbent: float
    lb: np.ndarray
    ub: np.ndarray

    @classmethod
    def from_data(cls, model: GPModel, data: Dataset) -> "AcquisitionContext":
        return cls(model, data.incumbent, data.lb, data.ub)

    def moments(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mean, std (problem units) and a mask of degenerate std."""
        mn, vn = self.model.predict_normalized(self.model.to_unit(np.atleast_2d(X)))
        sn = np.sqrt(vn)
        scale = self.model.y_scale
        degenerate = (sn < SIGMA_FLOOR) | (scale == 0.0)
        return self.model.y_mean + scale * mn, scale * sn, degenerate


def ei_closed_form(mean, std, incumbent, degenerate=None) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if degenerate is None:
        degenerate = std < SIGMA_FLOOR
    improvement = mean - incumbent
    safe = np.where(degenerate, 1.0, std)
    z = improvement / safe
    ei = safe * (z * ndtr(z) + _INV_SQRT_2PI * np.exp(-0.5 * z * z))
    return np.where(degenerate, np.maximum(improvement, 0.0), np.maximum(ei, 0.0))


def pi_closed_form(mean, std, incumbent, degenerate=None) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if degenerate is None:
        degenerate = std < SIGMA_FLOOR
    improvement = mean - incumbent
    safe = np.where(degenerate, 1.0, std)
    return np.where(degenerate, (improvement > 0).astype(float), ndtr(improvement / safe))


def ei_batch(ctx: AcquisitionContext, X: np.ndarray) -> np.ndarray:
    mean, std, deg = ctx.moments(X)
    return ei_closed_form(mean, std, ctx.incumbent, deg)


def pi_batch(ctx: AcquisitionContext, X: np.ndarray) -> np.ndarray:
    mean, std, deg = ctx.moments(X)
    return pi_closed_form(mean, std, ctx.incumbent, deg)


def expected_improvement(ctx: AcquisitionContext, x) -> float:
    return float(ei_batch(ctx, np.asarray(x, dtype=float).reshape(1, -1))[0])


def probability_of_improvement(ctx: AcquisitionContext, x) -> float:
    return float(pi_batch(ctx, np.asarray(x, dtype=float).reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# maximization


def pattern_search(acq: Acquisition, lb: np.ndarray, ub: np.ndarray, starts: np.ndarray,
                   n_steps: int = 50, init_step: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Bounded coordinate-wise pattern search run on all starts at once.

    Each step tries +/- the current step along every coordinate in turn and
    keeps the better move; a start whose full sweep fails to improve halves
    its step. Returns final points and their values.
    """
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    X = np.clip(np.array(starts, dtype=float), lb, ub)
    n, d = X.shape
    vals = np.nan_to_num(acq(X), nan=-np.inf)
    step = np.full(n, init_step)
    width = ub - lb
    for _ in range(n_steps):
        improved = np.zeros(n, dtype=bool)
        for j in range(d):
            delta = step * width[j]
            up = X.copy()
            up[:, j] = np.minimum(up[:, j] + delta, ub[j])
            down = X.copy()
            down[:, j] = np.maximum(down[:, j] - delta, lb[j])
            v = np.nan_to_num(acq(np.vstack([up, down])), nan=-np.inf)
            v_up, v_down = v[:n], v[n:]
            take_up = (v_up > vals) & (v_up >= v_down)
            take_down = (v_down > vals) & ~take_up
            X[take_up] = up[take_up]
            vals[take_up] = v_up[take_up]
            X[take_down] = down[take_down]
            vals[take_down] = v_down[take_down]
            improved |= take_up | take_down
        step = np.where(improved, step, 0.5 * step)
    return X, vals


def maximize_acquisition(acq: Acquisition, lb, ub, rng: np.random.Generator,
                         n_seeds: int = 256, n_steps: int = 50) -> np.ndarray:
    """Best point of ``n_seeds`` uniform starts refined by pattern search."""
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    starts = rng.uniform(lb, ub, size=(n_seeds, lb.size))
    X, vals = pattern_search(acq, lb, ub, starts, n_steps)
    return X[int(np.argmax(vals))].copy()


def random_suggest(lb, ub, rng: np.random.Generator) -> np.ndarray:
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    return rng.uniform(lb, ub)


# ---------------------------------------------------------------------------
# multi-step rollout


def rollout_samples(ctx: AcquisitionContext, x, horizon: int, n_mc: int,
                    rng: np.random.Generator, inner_seeds: int = 64,
                    inner_steps: int = 20) -> np.ndarray:
    """Undiscounted cumulative improvement of each of ``n_mc`` fantasy trajectories.

    The first query is ``x``; later queries follow the EI-maximizing base
    policy on the fantasized model. Each trajectory owns an rng stream spawned
    from ``rng``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x0 = np.asarray(x, dtype=float).ravel()
    streams = np.random.SeedSequence(int(rng.integers(2**63))).spawn(n_mc)
    totals = np.empty(n_mc)
    for i, ss in enumerate(streams):
        r = np.random.default_rng(ss)
        model, best, xq, total = ctx.model, ctx.incumbent, x0, 0.0
        for n in range(horizon):
            y = sample_posterior(model, xq, r)
            total += max(y - best, 0.0)
            best = max(best, y)
            if n + 1 < horizon:
                model = fantasy_extend(model, xq, y)
                inner = AcquisitionContext(model, best, ctx.lb, ctx.ub)
                xq = maximize_acquisition(lambda X, c=inner: ei_batch(c, X), ctx.lb, ctx.ub, r,
                                          n_seeds=inner_seeds, n_steps=inner_steps)
        totals[i] = total
    return totals


def rollout_acquisition_mc(ctx: AcquisitionContext, x, horizon: int, n_mc: int = N_MC_DEFAULT,
                           rng: np.random.Generator | None = None) -> float:
    rng = np.random.default_rng() if rng is None else rng
    return float(rollout_samples(ctx, x, horizon, n_mc, rng).mean())


def rollout_suggest(ctx: AcquisitionContext, horizon: int, rng: np.random.Generator,
                    n_mc: int = N_MC_DEFAULT, n_candidates: int = 8) -> np.ndarray:
    """Pick the best of a few EI local optima under the rollout value.

    Full pattern search over the rollout value is far too costly, so the
    candidates are the top distinct EI optima and each is scored with the
    same rng seed (common random numbers).
    """
    starts = rng.uniform(ctx.lb, ctx.ub, size=(256, ctx.lb.size))
    X, vals = pattern_search(lambda Z: ei_batch(ctx, Z), ctx.lb, ctx.ub, starts, 50)
    order = np.argsort(-vals, kind="stable")
    cands: list[np.ndarray] = []
    tol = 1e-3 * np.max(ctx.ub - ctx.lb)
    for i in order:
        if all(np.max(np.abs(X[i] - c)) > tol for c in cands):
            cands.append(X[i])
        if len(cands) == n_candidates:
            break
    seed = int(rng.integers(2**63))
    scores = [rollout_samples(ctx, c, horizon, n_mc, np.random.default_rng(seed)).mean()
              for c in cands]
    return cands[int(np.argmax(scores))].copy()
