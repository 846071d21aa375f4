import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperdense import manifold as M


def point_at(rho, direction, kappa=1.0):
    """Independent closed form: the point at geodesic radius ``rho`` along a unit direction."""
    s = math.sqrt(kappa)
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    return np.concatenate([[math.cosh(s * rho) / s], math.sinh(s * rho) / s * u])


kappas = st.sampled_from([0.25, 0.5, 1.0, 2.0, 4.0])
radii = st.floats(0.0, 8.0)


def test_origin_is_on_sheet_and_at_zero_distance():
    for kappa in (0.5, 1.0, 3.0):
        o = M.origin(4, kappa)
        assert M.validate_point(o, kappa).ok
        assert M.geodesic_distance(o, o, kappa) == 0.0
        assert M.lorentz_inner(o, o) == pytest.approx(-1.0 / kappa, rel=1e-15)


@given(radii, kappas)
def test_distance_from_origin_matches_closed_form(rho, kappa):
    x = point_at(rho, [1.0, 2.0, -0.5], kappa)
    o = M.origin(3, kappa)
    assert M.geodesic_distance(o, x, kappa) == pytest.approx(rho, abs=1e-7)
    assert M.distance_from_origin(x, kappa) == pytest.approx(rho, abs=1e-7)


@given(radii, radii, kappas)
def test_distance_along_one_geodesic_is_additive(a, b, kappa):
    x = point_at(a, [1.0, 0.0], kappa)
    y = point_at(b, [-1.0, 0.0], kappa)
    assert M.geodesic_distance(x, y, kappa) == pytest.approx(a + b, abs=1e-6)


def test_worked_distance_value():
    # (cosh 1, sinh 1, 0) and (cosh 1, -sinh 1, 0) on kappa = 1 are 2 apart
    x = np.array([math.cosh(1), math.sinh(1), 0.0])
    y = np.array([math.cosh(1), -math.sinh(1), 0.0])
    assert M.geodesic_distance(x, y) == pytest.approx(2.0, abs=1e-12)


def test_distance_is_symmetric_and_satisfies_triangle(rng):
    for kappa in (0.5, 1.0, 2.0):
        p = M.random_points(rng, (300, 3), 5, kappa, max_distance=6.0 / math.sqrt(kappa))
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        dxy = M.geodesic_distance(x, y, kappa)
        assert np.array_equal(dxy, M.geodesic_distance(y, x, kappa))
        assert np.all(dxy <= M.geodesic_distance(x, z, kappa) + M.geodesic_distance(z, y, kappa) + 1e-9)


def test_lift_satisfies_constraint(rng):
    for kappa in (0.1, 1.0, 5.0):
        z = rng.normal(scale=3.0, size=(200, 7))
        x = M.lift_from_spatial(z, kappa)
        assert M.validate_point(x, kappa).ok
        assert np.array_equal(x[:, 1:], z)


def test_projection_scales_timelike_vectors(rng):
    v = np.array([3.0, 1.0, 2.0])
    x = M.project_to_hyperboloid(v)
    assert np.allclose(x, v / 2.0)
    with pytest.raises(M.NonTimelikeError):
        M.project_to_hyperboloid(np.array([1.0, 2.0, 0.0]))
    with pytest.raises(M.NonTimelikeError):
        M.project_to_hyperboloid(np.array([-3.0, 1.0, 0.0]))


@given(st.floats(0.0, 3.0), st.floats(0.0, 5.0), kappas)
def test_exp_log_round_trip(base_r, step, kappa):
    rng = np.random.default_rng(7)
    x = point_at(base_r, rng.normal(size=3), kappa)
    u = M.project_to_tangent(x, rng.normal(size=4), kappa)
    n = float(M.tangent_norm(u))
    if n == 0:
        return
    v = u / n * step
    y = M.exp_map(x, v, kappa)
    assert M.validate_point(y, kappa).ok
    assert M.geodesic_distance(x, y, kappa) == pytest.approx(step, abs=1e-6)
    back = M.log_map(x, y, kappa)
    assert np.allclose(back, v, atol=1e-6 * max(1.0, x[0] * step))


def test_exp_rejects_non_tangent_vectors():
    x = M.origin(2)
    with pytest.raises(M.GeometryError):
        M.exp_map(x, np.array([1.0, 0.0, 0.0]))


def test_poincare_radius_closed_form():
    # Poincare radius of a point at distance rho is tanh(rho/2) for kappa = 1
    for rho in (0.0, 0.5, 2.0, 5.0):
        x = point_at(rho, [0.0, 1.0])
        assert M.poincare_radius(x) == pytest.approx(math.tanh(rho / 2), abs=1e-12)


def test_kappa_validation():
    for bad in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(M.GeometryError):
            M.check_kappa(bad)


def test_dimension_mismatch_and_nonfinite():
    with pytest.raises(M.GeometryError):
        M.lorentz_inner(np.ones(3), np.ones(4))
    with pytest.raises(M.GeometryError):
        M.geodesic_distance(np.array([np.nan, 0.0]), M.origin(1))
    assert not M.validate_point(np.array([np.inf, 0.0])).ok


def test_constraint_residual_flags_off_sheet_points():
    x = M.origin(3)
    assert M.constraint_residual(x) == 0.0
    assert not M.validate_point(x * 1.1).ok
