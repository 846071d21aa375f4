"""Sequence-to-point pooling on the hyperboloid.

Tokens are ``(..., n, d + 1)`` arrays; optional weights are ``(..., n)`` and
nonnegative.  A zero weight removes a token entirely, which is how padding
is handled by the encoder.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from . import autodiff as ad
from .manifold import DEFAULT_KAPPA, GeometryError, check_kappa, project_to_hyperboloid

DEFAULT_P = 2.0


def _weights(tokens, weights):
    shape = np.shape(ad.value(tokens))
    if len(shape) < 2 or shape[-2] == 0:
        raise GeometryError("pooling needs at least one token")
    if weights is None:
        return np.ones(shape[:-1])
    w = weights
    wv = ad.value(w)
    if np.shape(wv) != shape[:-1]:
        raise GeometryError(f"weights shape {np.shape(wv)} does not match tokens {shape[:-1]}")
    if np.any(wv < 0) or not np.all(np.isfinite(wv)):
        raise GeometryError("pooling weights must be finite and nonnegative")
    if np.any(wv.sum(axis=-1) <= 0):
        raise GeometryError("degenerate pooling weights (all zero)")
    return w


def radial_combination(tokens, weights, exponent: float):
    """``sum_i a_i x_i`` with ``a_i ~ w_i x_i0^exponent``, normalized to sum to one."""
    w = _weights(tokens, weights)
    a = w * tokens[..., 0] ** exponent
    a = a / a.sum(axis=-1, keepdims=True)
    return (a[..., :, None] * tokens).sum(axis=-2)


def oem_pre_projection(tokens, weights=None, p: float = DEFAULT_P):
    """Normalized OEM combination ``sum_i w~_i x_i`` with ``w~_i ~ w_i x_i0^(p+1)``."""
    if p < 0:
        raise ValueError("OEM exponent p must be nonnegative")
    return radial_combination(tokens, weights, p + 1.0)


def outward_einstein_midpoint(tokens, weights=None, p: float = DEFAULT_P,
                              kappa: float = DEFAULT_KAPPA):
    return project_to_hyperboloid(oem_pre_projection(tokens, weights, p), kappa)


def einstein_midpoint(tokens, weights=None, kappa: float = DEFAULT_KAPPA):
    """Lorentz-factor-weighted barycenter; the ``p = 0`` OEM."""
    return outward_einstein_midpoint(tokens, weights, 0.0, kappa)


def euclidean_mean_pool(tokens, weights=None, kappa: float = DEFAULT_KAPPA):
    """Unweighted ambient mean followed by projection.  ``weights`` only masks tokens.

    Nonzero weights are treated as membership so padded positions drop out;
    their magnitudes are ignored.
    """
    w = _weights(tokens, weights)
    member = ad.value(w) > 0
    m = member.astype(np.float64)
    mean = (m[..., :, None] * tokens).sum(axis=-2) / m.sum(axis=-1)[..., None]
    return project_to_hyperboloid(mean, kappa)


def weighted_mean_pool(tokens, weights=None, kappa: float = DEFAULT_KAPPA):
    w = _weights(tokens, weights)
    a = w / w.sum(axis=-1, keepdims=True)
    return project_to_hyperboloid((a[..., :, None] * tokens).sum(axis=-2), kappa)


def weighted_mean_radius(tokens, weights=None):
    w = ad.value(_weights(tokens, weights))
    x0 = ad.value(tokens)[..., 0]
    return (w * x0).sum(axis=-1) / w.sum(axis=-1)


def log_ball_volume(rho: float, d: int, kappa: float = DEFAULT_KAPPA) -> float:
    """log Vol(B_rho) in d-dimensional hyperbolic space, by quadrature.

    The integrand ``sinh^(d-1)(sqrt(kappa) t)`` is rescaled by its value at
    ``rho`` so large radii do not overflow.
    """
    kappa = check_kappa(kappa)
    if d < 1 or rho <= 0:
        raise ValueError("need rho > 0 and d >= 1")
    s = math.sqrt(kappa)
    log_peak = (d - 1) * math.log(math.sinh(s * rho)) if d > 1 else 0.0

    def scaled(t):
        if d == 1:
            return 1.0
        if t == 0.0:
            return 0.0
        return math.exp((d - 1) * math.log(math.sinh(s * t)) - log_peak)

    val, _ = integrate.quad(scaled, 0.0, rho, epsabs=0.0, epsrel=1e-13, limit=200)
    sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    return math.log(sphere) - 0.5 * (d - 1) * math.log(kappa) + log_peak + math.log(val)


def lorentz_factor(rho, kappa: float = DEFAULT_KAPPA):
    """Time component of a point at geodesic distance ``rho`` from the origin."""
    s = math.sqrt(check_kappa(kappa))
    return np.cosh(s * np.asarray(rho, dtype=np.float64)) / s


def lorentz_factor_deficit(rho: float, d: int, kappa: float = DEFAULT_KAPPA,
                           step: float = 1e-3) -> tuple[float, float, float]:
    """Lorentz factor, ball volume, and local log-slope of their ratio at ``rho``.

    The slope approaches ``(d - 2) sqrt(kappa)`` for large ``rho``.
    """
    if rho <= 0 or d < 2:
        raise ValueError("need rho > 0 and d >= 2")
    if rho <= step:
        step = rho / 2

    def log_ratio(r):
        return log_ball_volume(r, d, kappa) - math.log(float(lorentz_factor(r, kappa)))

    slope = (log_ratio(rho + step) - log_ratio(rho - step)) / (2 * step)
    return float(lorentz_factor(rho, kappa)), math.exp(log_ball_volume(rho, d, kappa)), slope


def fitted_deficit_slope(d: int, kappa: float = DEFAULT_KAPPA, rho_lo: float = 8.0,
                         rho_hi: float = 12.0, num: int = 41) -> float:
    """Least-squares slope of log(volume / Lorentz factor) over ``[rho_lo, rho_hi]``."""
    rhos = np.linspace(rho_lo, rho_hi, num)
    ratios = [log_ball_volume(r, d, kappa) - math.log(float(lorentz_factor(r, kappa)))
              for r in rhos]
    slope, _ = np.polyfit(rhos, ratios, 1)
    return float(slope)
