"""Single trust-region BO (TuRBO-1 style) with Thompson sampling.

Serves both as a baseline optimizer and as the teacher policy during the
off-policy warm start.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import qmc

from .gp import GPModel, sample_joint

LENGTH_INIT = 0.8
LENGTH_MIN = 2.0 ** -7
LENGTH_MAX = 1.6
SUCCESS_TOL = 3


@dataclass(frozen=True)
class TrustRegion:
    center: np.ndarray  # problem units
    length: float = LENGTH_INIT  # unit-cube side length
    successes: int = 0
    failures: int = 0
    restart: bool = False

    @property
    def dim(self) -> int:
        return int(np.asarray(self.center).size)

    @property
    def failure_tol(self) -> int:
        return max(4, self.dim)

    def restarted(self, center) -> "TrustRegion":
        return TrustRegion(np.asarray(center, dtype=float).copy())


def tr_update(tr: TrustRegion, improved: bool, center=None) -> TrustRegion:
    """Count a success or failure and resize the region when a threshold is hit."""
    length = tr.length
    succ, fail = (tr.successes + 1, 0) if improved else (0, tr.failures + 1)
    if succ >= SUCCESS_TOL:
        length = min(2.0 * length, LENGTH_MAX)
        succ = 0
    elif fail >= tr.failure_tol:
        length = length / 2.0
        fail = 0
    new_center = tr.center if center is None else np.asarray(center, dtype=float).copy()
    return replace(tr, center=new_center, length=length, successes=succ, failures=fail,
                   restart=length < LENGTH_MIN)


def tr_bounds(model: GPModel, tr: TrustRegion) -> tuple[np.ndarray, np.ndarray]:
    """Trust-region box in unit-cube coordinates, clipped to the cube."""
    d = model.dim
    # the kernel is isotropic, so per-dimension weights collapse to one
    ls = np.full(d, model.params.lengthscale)
    weights = ls / ls.mean()
    weights = weights / np.prod(weights) ** (1.0 / d)
    c = model.to_unit(tr.center)
    half = 0.5 * weights * tr.length
    return np.clip(c - half, 0.0, 1.0), np.clip(c + half, 0.0, 1.0)


def tr_candidates(model: GPModel, tr: TrustRegion, rng: np.random.Generator,
                  n: int | None = None) -> np.ndarray:
    d = model.dim
    n = 100 * d if n is None else n
    lo, hi = tr_bounds(model, tr)
    sobol = qmc.Sobol(d, scramble=True, seed=rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pert = sobol.random_base2(max(1, math.ceil(math.log2(n))))[:n]
    unit = lo + (hi - lo) * pert
    return model.lb + unit * (model.ub - model.lb)


def tr_suggest(model: GPModel, tr: TrustRegion, lb, ub, rng: np.random.Generator,
               candidates: np.ndarray | None = None) -> np.ndarray:
    """Thompson-sampling winner among candidates in the trust region."""
    if candidates is None:
        candidates = tr_candidates(model, tr, rng)
    f = sample_joint(model, candidates, rng)
    x = candidates[int(np.argmax(f))]
    return np.clip(x, np.asarray(lb, float), np.asarray(ub, float))
