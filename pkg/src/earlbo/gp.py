"""Gaussian-process regression with an RBF + white-noise kernel.

Inputs are mapped to the unit cube using the search bounds and outputs are
standardized; the GP itself works in that normalized space with a zero prior
mean. Public prediction methods report problem units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import FactorizationError, ShapeError
from .numerics import cho_solve_lower, cholesky_jitter

LENGTHSCALE_BOUNDS = (1e-2, 1e2)
NOISE_BOUNDS = (1e-10, 1e1)
SIGNAL_BOUNDS = (1e-3, 1e3)

N_RESTARTS = 20
GOLDEN_TOL = 1e-5
MAX_SWEEPS = 12
DUPLICATE_NOISE = 1e-8

_LOG2PI = math.log(2.0 * math.pi)
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Dataset:
    """Observed pairs inside a box ``[lb, ub]``."""

    X: np.ndarray
    y: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        lb = np.asarray(self.lb, dtype=float).ravel()
        ub = np.asarray(self.ub, dtype=float).ravel()
        if X.size == 0:
            X = X.reshape(0, lb.size)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if X.shape[1] != lb.size or ub.size != lb.size:
            raise ShapeError("bounds do not match input dimension")
        if np.any(ub <= lb):
            raise ShapeError("need lb < ub in every dimension")
        if not np.all(np.isfinite(y)):
            raise ValueError("objective values must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @classmethod
    def empty(cls, lb, ub) -> "Dataset":
        lb = np.asarray(lb, dtype=float).ravel()
        return cls(np.zeros((0, lb.size)), np.zeros(0), lb, ub)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.lb.size

    def add(self, x, y) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return Dataset(np.vstack([self.X, x]), np.concatenate([self.y, y]), self.lb, self.ub)

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lb) / (self.ub - self.lb)

    def from_unit(self, u) -> np.ndarray:
        return self.lb + np.asarray(u, dtype=float) * (self.ub - self.lb)

    @property
    def y_mean(self) -> float:
        return float(self.y.mean()) if len(self) else 0.0

    @property
    def y_scale(self) -> float:
        """Output standardization scale.

        A constant objective seen at two or more points gets scale 0, so the
        model carries no variance at all; a single point gets scale 1.
        """
        if len(self) < 2:
            return 1.0
        return float(self.y.std())

    @property
    def incumbent(self) -> float:
        return float(self.y.max())


@dataclass(frozen=True)
class KernelParams:
    lengthscale: float
    signal_var: float
    noise_var: float

    def as_log(self) -> np.ndarray:
        return np.log([self.lengthscale, self.signal_var, self.noise_var])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        # exp(log(b)) can land one ulp outside b; clamp so the boxes hold exactly
        lo = (LENGTHSCALE_BOUNDS[0], SIGNAL_BOUNDS[0], NOISE_BOUNDS[0])
        hi = (LENGTHSCALE_BOUNDS[1], SIGNAL_BOUNDS[1], NOISE_BOUNDS[1])
        return cls(*(float(min(max(v, a), b)) for v, a, b in zip(np.exp(theta), lo, hi)))


LOG_BOUNDS = np.log(np.array([LENGTHSCALE_BOUNDS, SIGNAL_BOUNDS, NOISE_BOUNDS]))


def rbf(A: np.ndarray, B: np.ndarray, lengthscale: float, signal_var: float) -> np.ndarray:
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return signal_var * np.exp(-0.5 * sq / lengthscale ** 2)


def _sq_dists(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _lml_from_sq(sq: np.ndarray, y: np.ndarray, params: KernelParams) -> float:
    k = y.size
    K = params.signal_var * np.exp(-0.5 * sq / params.lengthscale ** 2)
    K[np.diag_indices(k)] += params.noise_var
    try:
        L = cholesky_jitter(K)
    except FactorizationError:
        return -np.inf
    alpha = cho_solve_lower(L, y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * k * _LOG2PI)


def _dedupe(Xu: np.ndarray) -> np.ndarray:
    """Nudge exact duplicate rows apart by uniform noise of size 1e-8."""
    _, first, counts = np.unique(Xu, axis=0, return_index=True, return_counts=True)
    if np.all(counts == 1):
        return Xu
    rng = np.random.default_rng(0)
    seen = set()
    out = Xu.copy()
    for i, row in enumerate(Xu):
        key = row.tobytes()
        if key in seen:
            out[i] = row + rng.uniform(-DUPLICATE_NOISE, DUPLICATE_NOISE, size=row.shape)
        seen.add(key)
    return out


@dataclass(frozen=True)
class GPModel:
    """Conditioned GP. Immutable; :func:`fantasy_extend` returns a new model."""

    params: KernelParams
    lb: np.ndarray
    ub: np.ndarray
    y_mean: float
    y_scale: float
    Xn: np.ndarray  # unit-cube inputs, (k, d)
    yn: np.ndarray  # standardized outputs, (k,)
    L: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @classmethod
    def condition(cls, Xn, yn, params: KernelParams, lb, ub, y_mean: float = 0.0,
                  y_scale: float = 1.0) -> "GPModel":
        """Factor ``K + noise*I`` for the given normalized data from scratch."""
        Xn = np.asarray(Xn, dtype=float).reshape(-1, np.asarray(lb).size)
        yn = np.asarray(yn, dtype=float).ravel()
        k = yn.size
        if k:
            K = rbf(Xn, Xn, params.lengthscale, params.signal_var)
            K[np.diag_indices(k)] += params.noise_var
            L = cholesky_jitter(K)
            alpha = cho_solve_lower(L, yn)
        else:
            L = np.zeros((0, 0))
            alpha = np.zeros(0)
        return cls(params, np.asarray(lb, float), np.asarray(ub, float), float(y_mean),
                   float(y_scale), Xn, yn, L, alpha)

    @classmethod
    def from_dataset(cls, data: Dataset, params: KernelParams) -> "GPModel":
        Xn = _dedupe(data.to_unit(data.X)) if len(data) else data.X
        return cls.condition(Xn, _standardize(data), params, data.lb, data.ub,
                             data.y_mean, data.y_scale)

    def __len__(self) -> int:
        return self.yn.size

    @property
    def dim(self) -> int:
        return self.lb.size

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lb) / (self.ub - self.lb)

    def normalize_y(self, y) -> np.ndarray | float:
        if self.y_scale == 0.0:
            return np.zeros_like(np.asarray(y, dtype=float)) if np.ndim(y) else 0.0
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def log_marginal_likelihood(self) -> float:
        k = len(self)
        if k == 0:
            return 0.0
        return float(-0.5 * self.yn @ self.alpha - np.sum(np.log(np.diag(self.L)))
                     - 0.5 * k * _LOG2PI)

    def predict_normalized(self, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance in normalized units at unit-cube points."""
        Xq = np.atleast_2d(Xq)
        sf = self.params.signal_var
        if len(self) == 0:
            return np.zeros(Xq.shape[0]), np.full(Xq.shape[0], sf)
        Kq = rbf(Xq, self.Xn, self.params.lengthscale, sf)
        mean = Kq @ self.alpha
        V = solve_triangular(self.L, Kq.T, lower=True, check_finite=False)
        var = sf - np.sum(V * V, axis=0)
        return mean, np.clip(var, 0.0, sf)

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of f in problem units, batched."""
        m, v = self.predict_normalized(self.to_unit(np.atleast_2d(X)))
        return self.y_mean + self.y_scale * m, self.y_scale ** 2 * v

    def posterior_cov_normalized(self, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Xq = np.atleast_2d(Xq)
        Kqq = rbf(Xq, Xq, self.params.lengthscale, self.params.signal_var)
        if len(self) == 0:
            return np.zeros(Xq.shape[0]), Kqq
        Kq = rbf(Xq, self.Xn, self.params.lengthscale, self.params.signal_var)
        V = solve_triangular(self.L, Kq.T, lower=True, check_finite=False)
        return Kq @ self.alpha, Kqq - V.T @ V


def _standardize(data: Dataset) -> np.ndarray:
    if len(data) == 0:
        return np.zeros(0)
    scale = data.y_scale
    if scale == 0.0:
        return np.zeros(len(data))
    return (data.y - data.y_mean) / scale


def golden_section_max(f, lo: float, hi: float, tol: float = GOLDEN_TOL) -> tuple[float, float]:
    """Maximize a scalar function on ``[lo, hi]``; the endpoints are also checked."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    best_x, best_f = (c, fc) if fc >= fd else (d, fd)
    for x_end in (lo, hi):
        f_end = f(x_end)
        if f_end > best_f:
            best_x, best_f = x_end, f_end
    return best_x, best_f


def maximize_lml(Xn: np.ndarray, yn: np.ndarray, rng: np.random.Generator,
                 n_restarts: int = N_RESTARTS) -> tuple[KernelParams, float]:
    """Multi-start coordinate-wise golden-section search in log space."""
    sq = _sq_dists(Xn)
    lo, hi = LOG_BOUNDS[:, 0], LOG_BOUNDS[:, 1]

    def lml(theta):
        return _lml_from_sq(sq, yn, KernelParams.from_log(theta))

    best_theta, best_val = None, -np.inf
    starts = rng.uniform(lo, hi, size=(n_restarts, 3))
    for theta in starts:
        val = lml(theta)
        for sweep in range(MAX_SWEEPS):
            prev = val
            for j in range(3):
                if sweep == 0:
                    a, b = lo[j], hi[j]
                else:
                    a, b = max(lo[j], theta[j] - 1.0), min(hi[j], theta[j] + 1.0)

                def line(t, j=j):
                    th = theta.copy()
                    th[j] = t
                    return lml(th)

                t_new, v_new = golden_section_max(line, a, b)
                if v_new >= val:
                    theta = theta.copy()
                    theta[j] = t_new
                    val = v_new
            if val - prev < 1e-10:
                break
        if val > best_val:
            best_theta, best_val = theta, val
    return KernelParams.from_log(best_theta), best_val


def fit(data: Dataset, seed: int = 0, n_restarts: int = N_RESTARTS) -> GPModel:
    """Fit kernel hyperparameters by maximum marginal likelihood and condition."""
    if len(data) < 1:
        raise ShapeError("fit needs at least one observation")
    Xn = _dedupe(data.to_unit(data.X))
    yn = _standardize(data)
    params, _ = maximize_lml(Xn, yn, np.random.default_rng(seed), n_restarts)
    return GPModel.condition(Xn, yn, params, data.lb, data.ub, data.y_mean, data.y_scale)


def posterior(model: GPModel, x) -> tuple[float, float]:
    """Posterior mean and variance of f at a single point, problem units."""
    m, v = model.predict(np.asarray(x, dtype=float).reshape(1, -1))
    return float(m[0]), float(v[0])


def sample_posterior(model: GPModel, x, rng: np.random.Generator) -> float:
    mean, var = posterior(model, x)
    return mean + math.sqrt(var) * rng.standard_normal()


def sample_joint(model: GPModel, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One joint posterior draw of f over the rows of ``X`` (problem units)."""
    X = np.atleast_2d(X)
    mean, cov = model.posterior_cov_normalized(model.to_unit(X))
    cov = 0.5 * (cov + cov.T)
    cov[np.diag_indices_from(cov)] += 1e-10 * model.params.signal_var
    L = cholesky_jitter(cov)
    f = mean + L @ rng.standard_normal(X.shape[0])
    return model.y_mean + model.y_scale * f


def fantasy_extend(model: GPModel, x, y_tilde: float) -> GPModel:
    """Condition on one extra pair with hyperparameters held fixed.

    Uses a bordered Cholesky update, which is algebraically identical to
    refactoring from scratch; falls back to a full refactor when the new
    pivot is not safely positive.
    """
    xn = model.to_unit(np.asarray(x, dtype=float).reshape(1, -1))
    yn_new = float(model.normalize_y(y_tilde))
    Xn = np.vstack([model.Xn, xn])
    yn = np.append(model.yn, yn_new)
    p = model.params
    if len(model) == 0:
        return GPModel.condition(Xn, yn, p, model.lb, model.ub, model.y_mean, model.y_scale)
    kvec = rbf(model.Xn, xn, p.lengthscale, p.signal_var)[:, 0]
    ell = solve_triangular(model.L, kvec, lower=True, check_finite=False)
    pivot = p.signal_var + p.noise_var - ell @ ell
    if pivot <= 1e-12 * (p.signal_var + p.noise_var):
        return GPModel.condition(Xn, yn, p, model.lb, model.ub, model.y_mean, model.y_scale)
    k = len(model)
    L = np.zeros((k + 1, k + 1))
    L[:k, :k] = model.L
    L[k, :k] = ell
    L[k, k] = math.sqrt(pivot)
    alpha = cho_solve_lower(L, yn)
    return GPModel(p, model.lb, model.ub, model.y_mean, model.y_scale, Xn, yn, L, alpha)
