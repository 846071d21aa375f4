"""Lorentz-model geometry on the upper sheet of the hyperboloid.

Points are arrays of shape ``(..., d + 1)`` with the time component first.
Curvature is carried as a positive magnitude ``kappa`` (sectional curvature
``-kappa``), so every point satisfies ``<x, x>_L = -1 / kappa`` and the time
component is ``sqrt(|spatial|^2 + 1 / kappa)``.

All functions broadcast over leading axes.  They accept plain float64
arrays or :class:`hyperdense.autodiff.Tensor` values; input validation is
only performed on plain arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DEFAULT_KAPPA = 1.0
POINT_TOL = 1e-6


class GeometryError(ValueError):
    """Raised when an input violates a geometric precondition."""


class NonTimelikeError(GeometryError):
    """An ambient vector cannot be rescaled onto the hyperboloid."""


def check_kappa(kappa) -> float:
    kappa = float(kappa)
    if not (kappa > 0.0 and math.isfinite(kappa)):
        raise GeometryError(f"curvature magnitude must be positive and finite, got {kappa}")
    return kappa


def _plain(x) -> bool:
    return not isinstance(x, ad.Tensor)


def _check_dims(x, y):
    if np.shape(ad.value(x))[-1] != np.shape(ad.value(y))[-1]:
        raise GeometryError(
            f"dimension mismatch: {np.shape(ad.value(x))[-1]} vs {np.shape(ad.value(y))[-1]}")


def lorentz_inner(x, y):
    """Minkowski bilinear form ``-x0*y0 + sum_i xi*yi`` over the last axis."""
    _check_dims(x, y)
    prod = x * y
    return prod[..., 1:].sum(axis=-1) - prod[..., 0]


def geodesic_distance(x, y, kappa: float = DEFAULT_KAPPA):
    kappa = check_kappa(kappa)
    if _plain(x) and _plain(y):
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise GeometryError("non-finite coordinates")
    arg = ad.clamp_min(-kappa * lorentz_inner(x, y), 1.0)
    d = ad.acosh(arg) / math.sqrt(kappa)
    # acosh amplifies rounding near 1; identical points are exactly 0 apart
    same = np.all(ad.value(x) == ad.value(y), axis=-1)
    if np.any(same):
        d = ad.where(np.broadcast_to(same, np.shape(ad.value(d))), 0.0, d)
    return d


def scaled_inner(x, y, kappa: float = DEFAULT_KAPPA):
    """``K<x, y>_L = -kappa <x, y>_L``; at least 1 for points on the sheet."""
    return -check_kappa(kappa) * lorentz_inner(x, y)


def project_to_hyperboloid(v, kappa: float = DEFAULT_KAPPA):
    """Rescale a future-pointing timelike vector onto the hyperboloid."""
    kappa = check_kappa(kappa)
    q = -kappa * lorentz_inner(v, v)
    if _plain(v):
        v = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise GeometryError("non-finite coordinates")
        if np.any(q <= 0.0):
            raise NonTimelikeError("vector is not timelike (<v, v>_L >= 0)")
        if np.any(v[..., 0] <= 0.0):
            raise NonTimelikeError("vector is not future-pointing (v0 <= 0)")
        return v / np.sqrt(q)[..., None]
    scale = ad.sqrt(ad.clamp_min(q, 1e-300))
    return v / scale.reshape(scale.shape + (1,))


def lift_from_spatial(z, kappa: float = DEFAULT_KAPPA):
    """Attach the time component ``sqrt(|z|^2 + 1/kappa)`` to spatial coords."""
    kappa = check_kappa(kappa)
    if _plain(z):
        z = np.asarray(z, dtype=np.float64)
    sq = (z * z).sum(axis=-1, keepdims=True)
    return ad.concat([ad.sqrt(sq + 1.0 / kappa), z], axis=-1)


def origin(dim: int, kappa: float = DEFAULT_KAPPA) -> np.ndarray:
    o = np.zeros(dim + 1)
    o[0] = 1.0 / math.sqrt(check_kappa(kappa))
    return o


def radial_depth(x):
    """Time component ``x0``; increasing in distance from the origin."""
    return x[..., 0]


def distance_from_origin(x, kappa: float = DEFAULT_KAPPA):
    kappa = check_kappa(kappa)
    arg = ad.clamp_min(math.sqrt(kappa) * radial_depth(x), 1.0)
    return ad.acosh(arg) / math.sqrt(kappa)


def poincare_radius(x, kappa: float = DEFAULT_KAPPA):
    """Euclidean norm of the point's image in the Poincare ball of radius 1/sqrt(kappa)."""
    kappa = check_kappa(kappa)
    x = np.asarray(x, dtype=np.float64)
    spatial = np.linalg.norm(x[..., 1:], axis=-1)
    return spatial / (1.0 + math.sqrt(kappa) * x[..., 0])


def tangent_norm(v):
    """Riemannian norm of a tangent vector: ``sqrt(<v, v>_L)``."""
    return ad.sqrt(ad.clamp_min(lorentz_inner(v, v), 0.0))


def project_to_tangent(x, u, kappa: float = DEFAULT_KAPPA):
    """Orthogonal projection of an ambient vector onto the tangent space at x."""
    kappa = check_kappa(kappa)
    c = kappa * lorentz_inner(x, u)
    return u + c[..., None] * x


def exp_map(x, v, kappa: float = DEFAULT_KAPPA, tol: float = POINT_TOL):
    kappa = check_kappa(kappa)
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_dims(x, v)
    # max-abs scale: a Euclidean norm would underflow for tiny tangent vectors
    scale = np.abs(v).max(axis=-1) * np.maximum(1.0, x[..., 0])
    if np.any(np.abs(lorentz_inner(x, v)) > tol * np.maximum(scale, 1e-300)):
        raise GeometryError("vector is not tangent at the base point")
    norm = np.sqrt(np.maximum(lorentz_inner(v, v), 0.0))
    theta = math.sqrt(kappa) * norm
    safe = np.where(theta > 0.0, theta, 1.0)
    coef = np.where(theta > 0.0, np.sinh(safe) / safe, 1.0)
    out = np.cosh(theta)[..., None] * x + coef[..., None] * v
    # exact re-lift of the time component removes drift from cosh/sinh rounding
    return lift_from_spatial(out[..., 1:], kappa)


def log_map(x, y, kappa: float = DEFAULT_KAPPA):
    kappa = check_kappa(kappa)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(x, y)
    dist = geodesic_distance(x, y, kappa)
    u = project_to_tangent(x, y, kappa)
    theta = math.sqrt(kappa) * dist
    safe = np.where(theta > 0.0, theta, 1.0)
    # |u|_L = sinh(theta) / sqrt(kappa) on the sheet
    coef = np.where(theta > 0.0, safe / np.sinh(safe), 0.0)
    return coef[..., None] * u


def random_points(rng: np.random.Generator, shape, dim: int, kappa: float = DEFAULT_KAPPA,
                  max_distance: float = 10.0) -> np.ndarray:
    """Points with geodesic radius uniform in [0, max_distance] and isotropic direction."""
    kappa = check_kappa(kappa)
    shape = tuple(np.atleast_1d(shape))
    rho = rng.uniform(0.0, max_distance, size=shape)
    u = rng.normal(size=shape + (dim,))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    s = math.sqrt(kappa)
    spatial = (np.sinh(s * rho) / s)[..., None] * u
    return lift_from_spatial(spatial, kappa)


@dataclass(frozen=True)
class PointReport:
    ok: bool
    residual: float
    time_positive: bool
    finite: bool


def constraint_residual(x, kappa: float = DEFAULT_KAPPA) -> np.ndarray:
    """``|kappa * (x0^2 - |xs|^2) - 1|`` relative to ``max(1, kappa * x0^2)``."""
    kappa = check_kappa(kappa)
    x = np.asarray(x, dtype=np.float64)
    x0sq = x[..., 0] ** 2
    raw = np.abs(kappa * (x0sq - (x[..., 1:] ** 2).sum(axis=-1)) - 1.0)
    return raw / np.maximum(1.0, kappa * x0sq)


def validate_point(x, kappa: float = DEFAULT_KAPPA, tol: float = POINT_TOL) -> PointReport:
    """Check the hyperboloid constraint for one point or a batch (worst case reported)."""
    x = np.asarray(x, dtype=np.float64)
    finite = bool(np.all(np.isfinite(x)))
    if not finite:
        return PointReport(False, float("inf"), bool(np.all(x[..., 0] > 0)), False)
    residual = float(np.max(constraint_residual(x, kappa)))
    time_positive = bool(np.all(x[..., 0] > 0))
    return PointReport(residual <= tol and time_positive, residual, time_positive, True)


def validate_tangent(x, v, tol: float = POINT_TOL) -> bool:
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    bound = tol * np.linalg.norm(v, axis=-1) * np.maximum(1.0, x[..., 0])
    return bool(np.all(np.abs(lorentz_inner(x, v)) <= bound))
