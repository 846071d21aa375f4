"""Hyperbolic transformer layers on the Lorentz model.

Every layer applies a Euclidean operation to coordinates and re-attaches a
time component with :func:`~hyperdense.manifold.lift_from_spatial` (or
rescales a timelike combination with the Lorentz norm), so outputs always
sit on the target hyperboloid.

Parameters are plain dataclasses whose fields may hold numpy arrays or
autodiff tensors; the forward functions are agnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad
from .manifold import (
    DEFAULT_KAPPA,
    GeometryError,
    NonTimelikeError,
    check_kappa,
    geodesic_distance,
    lift_from_spatial,
    lorentz_inner,
)

LN_EPS = 1e-5

Array = Any  # numpy array or autodiff Tensor


@dataclass
class HLTParams:
    """Lorentz linear map: ``weight`` is ``(..., n + 1, m)``, ``bias`` is ``(..., m)``."""

    weight: Array
    bias: Array
    kappa_in: float = DEFAULT_KAPPA
    kappa_out: float = DEFAULT_KAPPA


@dataclass
class LayerNormParams:
    gain: Array
    shift: Array
    kappa_in: float = DEFAULT_KAPPA
    kappa_out: float = DEFAULT_KAPPA


@dataclass
class ResidualWeights:
    """``w`` holds ``(w1, w2)`` as a length-2 array."""

    w: Array

    def __post_init__(self):
        w = ad.value(self.w)
        if w.shape != (2,) or np.all(w == 0.0):
            raise GeometryError("residual weights must be a nonzero pair")


@dataclass
class AttentionParams:
    """Per-head Q/K/V maps stacked on a leading head axis, plus the output map."""

    query: HLTParams
    key: HLTParams
    value: HLTParams
    out: HLTParams
    num_heads: int
    head_dim: int


@dataclass
class MLRPrototypes:
    """Class prototypes stored by spatial coordinates; time is recomputed."""

    spatial: Array
    bias: Array
    kappa: float = DEFAULT_KAPPA

    def points(self):
        return lift_from_spatial(self.spatial, self.kappa)


def _check_shapes(x, p: HLTParams):
    w = np.shape(ad.value(p.weight))
    if np.shape(ad.value(x))[-1] != w[-2] or np.shape(ad.value(p.bias))[-1] != w[-1]:
        raise ValueError(
            f"HLT shape mismatch: input {np.shape(ad.value(x))}, weight {w}, "
            f"bias {np.shape(ad.value(p.bias))}")


def hlt_forward(x, p: HLTParams):
    """``z = |W^T x + b|`` lifted onto the output hyperboloid."""
    _check_shapes(x, p)
    z = ad.abs_(x @ p.weight + p.bias)
    return lift_from_spatial(z, p.kappa_out)


def hyp_layer_norm(x, p: LayerNormParams):
    s = x[..., 1:]
    mu = s.mean(axis=-1, keepdims=True)
    c = s - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    z = c / ad.sqrt(var + LN_EPS) * p.gain + p.shift
    scale = math.sqrt(check_kappa(p.kappa_in) / check_kappa(p.kappa_out))
    if scale != 1.0:
        z = z * scale
    return lift_from_spatial(z, p.kappa_out)


def lorentz_normalize(u, kappa: float = DEFAULT_KAPPA, strict: bool = True):
    """Rescale a timelike vector by ``sqrt(kappa) * |u|_L`` onto the sheet."""
    kappa = check_kappa(kappa)
    q = -lorentz_inner(u, u)
    if strict and not isinstance(u, ad.Tensor):
        if np.any(q <= 0.0) or np.any(u[..., 0] <= 0.0):
            raise NonTimelikeError("combination is not future-pointing timelike")
    norm = ad.sqrt(ad.clamp_min(q, 1e-300)) * math.sqrt(kappa)
    return u / norm.reshape(np.shape(ad.value(norm)) + (1,))


def lorentz_residual(x, fx, w: ResidualWeights, kappa: float = DEFAULT_KAPPA):
    """``(w1 x + w2 f(x))`` normalized back onto the hyperboloid."""
    return lorentz_normalize(w.w[0] * x + w.w[1] * fx, kappa)


def _split_heads(x, p: HLTParams):
    # x: (..., n, D+1) -> (..., h, n, m+1); bias (h, m) broadcasts over positions
    b = p.bias
    bshape = np.shape(ad.value(b))
    if len(bshape) >= 2:
        b = b.reshape(bshape[:-1] + (1, bshape[-1]))
    return hlt_forward(x[..., None, :, :], HLTParams(p.weight, b, p.kappa_in, p.kappa_out))


def attention_weights(q, k, head_dim: int, mask=None, kappa: float = DEFAULT_KAPPA):
    """Softmax over keys of ``-d^2(q_i, k_j) / sqrt(m)``; masked keys get zero weight."""
    qi = q[..., :, None, :]
    kj = k[..., None, :, :]
    d = geodesic_distance(qi, kj, kappa)
    scores = -(d * d) / math.sqrt(head_dim)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(mask.any(axis=-1)):
            raise ValueError("attention row has no unmasked keys")
        # mask: (batch..., n) over keys; insert axes for heads and queries
        extra = np.ndim(ad.value(scores)) - mask.ndim
        keep = mask.reshape(mask.shape[:-1] + (1,) * extra + mask.shape[-1:])
        scores = ad.where(np.broadcast_to(keep, np.shape(ad.value(scores))), scores, -np.inf)
    return ad.softmax(scores, axis=-1)


def lorentz_midpoint(values, weights, kappa: float = DEFAULT_KAPPA):
    """Weighted midpoint ``sum_j w_ij lambda_j v_j`` normalized onto the sheet."""
    lam = values[..., 0]
    agg = (weights * lam[..., None, :]) @ values
    return lorentz_normalize(agg, kappa, strict=False)


def hyp_self_attention(x, p: AttentionParams, mask=None, kappa: float = DEFAULT_KAPPA,
                       return_weights: bool = False):
    """Multi-head geodesic attention over a sequence ``(..., n, D + 1)``.

    Heads are merged by concatenating their spatial parts, lifting, and
    applying the output Lorentz linear map.
    """
    if np.shape(ad.value(x))[-2] == 0:
        raise ValueError("empty sequence")
    q = _split_heads(x, p.query)
    k = _split_heads(x, p.key)
    v = _split_heads(x, p.value)
    nu = attention_weights(q, k, p.head_dim, mask, p.query.kappa_out)
    heads = lorentz_midpoint(v, nu, p.value.kappa_out)  # (..., h, n, m+1)
    spatial = heads[..., 1:]
    nd = spatial.ndim
    # (..., h, n, m) -> (..., n, h*m)
    merged = spatial.swapaxes(nd - 3, nd - 2)
    shape = np.shape(ad.value(merged))
    merged = merged.reshape(shape[:-2] + (shape[-2] * shape[-1],))
    out = hlt_forward(lift_from_spatial(merged, p.value.kappa_out), p.out)
    if return_weights:
        return out, nu
    return out


def feed_forward(x, first: HLTParams, second: HLTParams):
    """HLT, ReLU on the spatial part, re-lift, HLT."""
    h = hlt_forward(x, first)
    h = lift_from_spatial(ad.relu(h[..., 1:]), first.kappa_out)
    return hlt_forward(h, second)


def mlr_logits(x, p: MLRPrototypes):
    """Logits ``-kappa <x, p_c>_L + b_c`` for every class prototype."""
    kappa = check_kappa(p.kappa)
    protos = p.points()
    inner = x[..., 1:] @ protos[:, 1:].T - x[..., 0:1] * protos[:, 0]
    return -kappa * inner + p.bias
