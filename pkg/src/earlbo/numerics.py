"""Dense linear algebra, a small feed-forward network with exact reverse-mode
gradients, and Adam.

Networks here are tiny (a few layers, at most 64 units), so backprop is done
layer by layer with explicit forward caches rather than a general autodiff
graph. Every forward accepts arbitrary leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import FactorizationError, NumericError, ShapeError

ACTIVATIONS = ("tanh", "relu", "identity", "softmax")

JITTER_START = 1e-10
JITTER_MAX = 1e-4


def cholesky_jitter(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``A``, escalating diagonal jitter on failure.

    Jitter goes 1e-10, 1e-9, ..., 1e-4 (absolute, added to the diagonal).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(A.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(A + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        f"matrix of size {A.shape[0]} is not positive definite even with jitter {JITTER_MAX:g}"
    )


def cho_solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = b`` given the lower factor."""
    z = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, z, lower=False, check_finite=False)


def cholesky_solve(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor SPD ``A`` and solve ``A x = b``. Returns ``(L, x)``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.shape[0] < 1:
        raise ShapeError("cholesky_solve needs k >= 1")
    if b.shape[0] != A.shape[0]:
        raise ShapeError(f"rhs length {b.shape[0]} does not match matrix size {A.shape[0]}")
    L = cholesky_jitter(A)
    return L, cho_solve_lower(L, b)


# ---------------------------------------------------------------------------
# feed-forward networks


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    if kind == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {kind!r}")


def _activate_backward(z: np.ndarray, a: np.ndarray, grad_a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return grad_a * (1.0 - a * a)
    if kind == "relu":
        return grad_a * (z > 0.0)
    if kind == "identity":
        return grad_a
    if kind == "softmax":
        # J^T g for softmax: a * (g - <g, a>)
        return a * (grad_a - np.sum(grad_a * a, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"layer shapes W{self.W.shape} b{self.b.shape} do not agree")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


@dataclass
class MLPCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


class MLP:
    """Plain stack of dense layers.

    Parameters are exposed as a flat list ``[W0, b0, W1, b1, ...]`` of arrays
    that are updated in place by :class:`Adam`.
    """

    def __init__(self, layers: Sequence[Layer]):
        layers = list(layers)
        if not layers:
            raise ShapeError("an MLP needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ShapeError(f"layer dims do not chain: {prev.n_out} -> {nxt.n_in}")
        self.layers = layers

    @classmethod
    def create(cls, sizes: Sequence[int], activations: Sequence[str],
               rng: np.random.Generator, last_scale: float = 1.0) -> "MLP":
        """Glorot-uniform weights, zero biases. ``last_scale`` shrinks the head."""
        if len(sizes) != len(activations) + 1:
            raise ShapeError("need one activation per layer")
        layers = []
        for i, (n_in, n_out, act) in enumerate(zip(sizes[:-1], sizes[1:], activations)):
            limit = np.sqrt(6.0 / (n_in + n_out))
            W = rng.uniform(-limit, limit, size=(n_out, n_in))
            if i == len(activations) - 1:
                W *= last_scale
            layers.append(Layer(W, np.zeros(n_out), act))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.W, layer.b])
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "MLP":
        return MLP([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, MLPCache]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"input dim {x.shape[-1]} does not match first layer ({self.n_in})")
        cache = MLPCache()
        h = x
        for layer in self.layers:
            cache.inputs.append(h)
            z = h @ layer.W.T + layer.b
            h = _activate(z, layer.activation)
            cache.pre.append(z)
            cache.post.append(h)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: MLPCache, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` wrt params and input.

        Parameter gradients are summed over all leading batch axes and returned
        in the same order as :meth:`params`.
        """
        g = np.asarray(grad_out, dtype=float)
        grads: list[np.ndarray] = []
        for layer, h_in, z, a in zip(reversed(self.layers), reversed(cache.inputs),
                                     reversed(cache.pre), reversed(cache.post)):
            gz = _activate_backward(z, a, g, layer.activation)
            gz2 = gz.reshape(-1, layer.n_out)
            grads.append(gz2.sum(axis=0))
            grads.append(gz2.T @ h_in.reshape(-1, layer.n_in))
            g = gz @ layer.W
        grads.reverse()
        return grads, g


def mlp_eval_grad(params: MLP, x: np.ndarray, upstream_grad: np.ndarray
                  ) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """Forward pass plus exact gradients of ``upstream_grad . output``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError("mlp_eval_grad takes a single input vector")
    out, cache = params.forward(x)
    upstream_grad = np.asarray(upstream_grad, dtype=float)
    if upstream_grad.shape != out.shape:
        raise ShapeError(f"upstream grad shape {upstream_grad.shape} != output shape {out.shape}")
    grads, gx = params.backward(cache, upstream_grad)
    return out, grads, gx


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, beta1, beta2, eps)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, trainable: Sequence[bool] | None = None) -> None:
    """Bias-corrected Adam update, in place.

    Entries with ``trainable[i] == False`` are skipped entirely: neither the
    parameter nor its moment buffers are touched.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state must have equal length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"param {i} shape {p.shape} != grad shape {g.shape}")
        if trainable is not None and not trainable[i]:
            continue
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
