"""Attention-DeepSets encoder: a variable-size set of (x, y) points to a
fixed 16-d latent vector.

    latent = rho( sum_i alpha_i * psi(x_i, y_i) ),  alpha = softmax_i(f_att(psi(x_i, y_i)))

Training batches are built from one shared base set (the real data) plus a
few per-state extra points (fantasies), so the base part is computed once per
batch instead of once per state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import MLP

HIDDEN = 64
LATENT = 16


class Encoder:
    def __init__(self, psi: MLP, att: MLP, rho: MLP):
        self.psi = psi
        self.att = att
        self.rho = rho

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator, hidden: int = HIDDEN,
               latent: int = LATENT) -> "Encoder":
        psi = MLP.create([dim + 1, hidden, hidden], ["tanh", "tanh"], rng)
        att = MLP.create([hidden, hidden, 1], ["tanh", "identity"], rng)
        rho = MLP.create([hidden, latent], ["identity"], rng)
        return cls(psi, att, rho)

    @property
    def point_dim(self) -> int:
        return self.psi.n_in

    @property
    def out_dim(self) -> int:
        return self.rho.n_out

    def params(self) -> list[np.ndarray]:
        return self.psi.params() + self.att.params() + self.rho.params()

    def copy(self) -> "Encoder":
        return Encoder(self.psi.copy(), self.att.copy(), self.rho.copy())


@dataclass
class BaseCache:
    points: np.ndarray
    psi: np.ndarray  # (k, H)
    scores: np.ndarray  # (k,)
    psi_cache: object = None
    att_cache: object = None


@dataclass
class EncodeCache:
    base: BaseCache | None
    extra: np.ndarray
    mask: np.ndarray
    psi_e: np.ndarray
    psi_e_cache: object
    att_e_cache: object
    alpha_b: np.ndarray
    alpha_e: np.ndarray
    pooled: np.ndarray
    rho_cache: object


def precompute_base(enc: Encoder, points: np.ndarray) -> BaseCache:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != enc.point_dim:
        raise ShapeError(f"expected base points of shape (k, {enc.point_dim}), got {points.shape}")
    psi, psi_cache = enc.psi.forward(points)
    s, att_cache = enc.att.forward(psi)
    return BaseCache(points, psi, s[:, 0], psi_cache, att_cache)


def encode_batch(enc: Encoder, base: BaseCache | np.ndarray | None, extra: np.ndarray,
                 mask: np.ndarray) -> tuple[np.ndarray, EncodeCache]:
    """Encode B sets, each the shared ``base`` plus its masked rows of ``extra``.

    ``extra`` has shape (B, m, d+1) and ``mask`` (B, m). Returns latents (B, 16).
    """
    extra = np.asarray(extra, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if extra.ndim != 3 or extra.shape[2] != enc.point_dim or mask.shape != extra.shape[:2]:
        raise ShapeError("extra must be (B, m, d+1) with a (B, m) mask")
    if base is not None and not isinstance(base, BaseCache):
        base = precompute_base(enc, base) if len(base) else None
    B, m = mask.shape
    n_base = 0 if base is None else base.scores.size
    if n_base == 0 and np.any(mask.sum(axis=1) == 0):
        raise ShapeError("cannot encode an empty dataset")

    psi_e, psi_e_cache = enc.psi.forward(extra)
    s_e, att_e_cache = enc.att.forward(psi_e)
    s_e = np.where(mask, s_e[..., 0], -np.inf)
    top = s_e.max(axis=1) if m else np.full(B, -np.inf)
    if n_base:
        top = np.maximum(top, base.scores.max())
        w_b = np.exp(base.scores[None, :] - top[:, None])
    else:
        w_b = np.zeros((B, 0))
    w_e = np.where(mask, np.exp(s_e - top[:, None]), 0.0)
    Z = w_b.sum(axis=1) + w_e.sum(axis=1)
    alpha_b = w_b / Z[:, None]
    alpha_e = w_e / Z[:, None]
    pooled = np.einsum("bm,bmh->bh", alpha_e, psi_e)
    if n_base:
        pooled = alpha_b @ base.psi + pooled
    latent, rho_cache = enc.rho.forward(pooled)
    cache = EncodeCache(base, extra, mask, psi_e, psi_e_cache, att_e_cache, alpha_b, alpha_e,
                        pooled, rho_cache)
    return latent, cache


def encode_batch_backward(enc: Encoder, cache: EncodeCache, grad_latent: np.ndarray
                          ) -> list[np.ndarray]:
    """Gradients of ``sum(grad_latent * latent)`` wrt encoder params, in
    :meth:`Encoder.params` order."""
    g_rho, g_pooled = enc.rho.backward(cache.rho_cache, grad_latent)
    gp_dot = np.sum(g_pooled * cache.pooled, axis=1)  # (B,)

    # extras
    g_psi_e = cache.alpha_e[..., None] * g_pooled[:, None, :]
    ds_e = cache.alpha_e * (np.einsum("bmh,bh->bm", cache.psi_e, g_pooled) - gp_dot[:, None])
    g_att, g_psi_from_att = enc.att.backward(cache.att_e_cache, ds_e[..., None])
    g_psi_e = g_psi_e + g_psi_from_att
    g_psi, _ = enc.psi.backward(cache.psi_e_cache, g_psi_e)

    base = cache.base
    if base is not None:
        g_psi_b = cache.alpha_b.T @ g_pooled
        ds_b = np.sum(cache.alpha_b * (g_pooled @ base.psi.T - gp_dot[:, None]), axis=0)
        g_att_b, g_psi_b_att = enc.att.backward(base.att_cache, ds_b[:, None])
        g_psi_b, _ = enc.psi.backward(base.psi_cache, g_psi_b + g_psi_b_att)
        g_att = [a + b for a, b in zip(g_att, g_att_b)]
        g_psi = [a + b for a, b in zip(g_psi, g_psi_b)]
    return g_psi + g_att + g_rho


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Rows sorted lexicographically, so summation order ignores input order."""
    points = np.asarray(points, dtype=float)
    return points[np.lexsort(points.T[::-1])]


def encode(enc: Encoder, points: np.ndarray) -> tuple[np.ndarray, EncodeCache]:
    """Encode one normalized set of shape (k, d+1) to a latent of shape (16,)."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ShapeError("encode needs a non-empty (k, d+1) array of points")
    base = precompute_base(enc, canonical_order(points))
    latent, cache = encode_batch(enc, base, np.zeros((1, 0, enc.point_dim)),
                                 np.zeros((1, 0), dtype=bool))
    return latent[0], cache


def attention_weights(enc: Encoder, points: np.ndarray) -> np.ndarray:
    """Softmax weights for ``points`` in their given order."""
    psi = enc.psi(np.asarray(points, dtype=float))
    s = enc.att(psi)[:, 0]
    w = np.exp(s - s.max())
    return w / w.sum()


def normalized_points(model, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(unit-cube x, standardized y) rows using a fitted model's normalization."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([model.to_unit(X), np.atleast_1d(model.normalize_y(y))])
