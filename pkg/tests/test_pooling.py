import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperdense import manifold as M
from hyperdense import pooling as P
from hyperdense.manifold import GeometryError


def tokens_with_depths(depths, rng, dim=3):
    z = rng.normal(size=(len(depths), dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    depths = np.asarray(depths, dtype=float)
    return np.concatenate([depths[:, None], np.sqrt(depths ** 2 - 1)[:, None] * z], axis=1)


def test_worked_pre_projection_value(rng):
    x = tokens_with_depths([1.0, 2.0, 3.0], rng)
    v = P.oem_pre_projection(x, p=1.0)
    assert v[0] == 36 / 14


def test_einstein_is_oem_at_p_zero(rng):
    x = M.random_points(rng, 5, 4, 1.0, 4.0)
    w = rng.uniform(0.1, 1.0, 5)
    assert np.array_equal(P.einstein_midpoint(x, w), P.outward_einstein_midpoint(x, w, 0.0))


def test_einstein_matches_lorentz_factor_barycenter(rng):
    x = M.random_points(rng, 6, 3, 1.0, 3.0)
    w = rng.uniform(0.1, 1.0, 6)
    a = w * x[:, 0]
    v = (a[:, None] * x).sum(0) / a.sum()
    assert np.allclose(P.einstein_midpoint(x, w), v / math.sqrt(v[0] ** 2 - (v[1:] ** 2).sum()))


def test_single_token_is_fixed_point(rng):
    x = M.random_points(rng, 1, 4, 1.0, 5.0)
    for pool in (P.einstein_midpoint, P.euclidean_mean_pool, P.weighted_mean_pool):
        assert np.allclose(pool(x), x[0])
    assert np.allclose(P.outward_einstein_midpoint(x, p=3.0), x[0])


@given(st.integers(2, 8), st.integers(1, 6), st.sampled_from([0.5, 1.0, 2.0]), st.integers(0, 10 ** 6))
def test_euclidean_mean_contracts(n, d, kappa, seed):
    rng = np.random.default_rng(seed)
    x = M.random_points(rng, n, d, kappa, 6.0 / math.sqrt(kappa))
    r = P.euclidean_mean_pool(x, kappa=kappa)[0]
    assert r <= x[:, 0].mean() * (1 + 1e-12)


@given(st.integers(1, 8), st.floats(0.0, 4.0), st.integers(0, 10 ** 6))
def test_pre_projection_at_least_weighted_mean_depth(n, p, seed):
    rng = np.random.default_rng(seed)
    x = M.random_points(rng, n, 3, 1.0, 6.0)
    w = rng.uniform(0.0, 1.0, n) + 1e-3
    v0 = P.oem_pre_projection(x, w, p)[0]
    assert v0 >= P.weighted_mean_radius(x, w) * (1 - 1e-12)


def test_oem_radius_can_fall_below_einstein_midpoint():
    # two far tokens on opposite sides and one near token; raising p moves
    # weight onto the opposed pair, whose ambient average has a small norm
    a = np.array([math.cosh(3), math.sinh(3), 0.0])
    b = np.array([math.cosh(3), -math.sinh(3), 0.0])
    c = np.array([math.cosh(1), 0.0, math.sinh(1)])
    x = np.stack([a, b, c])
    r_ein = P.einstein_midpoint(x)[0]
    r_oem = P.outward_einstein_midpoint(x, p=2.0)[0]
    assert r_oem < r_ein


def test_masked_weights_drop_tokens(rng):
    x = M.random_points(rng, 4, 3, 1.0, 3.0)
    w = np.array([1.0, 1.0, 0.0, 0.0])
    assert np.allclose(P.outward_einstein_midpoint(x, w), P.outward_einstein_midpoint(x[:2]))
    assert np.allclose(P.euclidean_mean_pool(x, w), P.euclidean_mean_pool(x[:2]))


def test_weight_validation(rng):
    x = M.random_points(rng, 3, 2)
    with pytest.raises(GeometryError):
        P.outward_einstein_midpoint(x, np.array([1.0, -1.0, 1.0]))
    with pytest.raises(GeometryError):
        P.outward_einstein_midpoint(x, np.zeros(3))
    with pytest.raises(GeometryError):
        P.outward_einstein_midpoint(x, np.ones(2))
    with pytest.raises(GeometryError):
        P.einstein_midpoint(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        P.oem_pre_projection(x, p=-1.0)


def test_batched_pooling_matches_per_row(rng):
    x = M.random_points(rng, (4, 5), 3, 1.0, 3.0)
    w = rng.uniform(0.1, 1.0, (4, 5))
    batch = P.outward_einstein_midpoint(x, w, 2.0)
    for i in range(4):
        assert np.allclose(batch[i], P.outward_einstein_midpoint(x[i], w[i], 2.0))


def test_log_ball_volume_closed_forms():
    # d = 2, kappa = 1: area = 2 pi (cosh rho - 1); d = 3: pi (sinh 2rho - 2rho)
    for rho in (0.5, 2.0, 6.0):
        assert P.log_ball_volume(rho, 2) == pytest.approx(math.log(2 * math.pi * (math.cosh(rho) - 1)), rel=1e-10)
        assert P.log_ball_volume(rho, 3) == pytest.approx(math.log(math.pi * (math.sinh(2 * rho) - 2 * rho)), rel=1e-10)
    assert P.log_ball_volume(3.0, 1) == pytest.approx(math.log(6.0))


def test_volume_deficit_slopes():
    assert P.fitted_deficit_slope(3) == pytest.approx(1.0, rel=0.01)
    assert abs(P.fitted_deficit_slope(2)) <= 0.01
    assert P.fitted_deficit_slope(5) == pytest.approx(3.0, rel=0.01)
    _, _, slope = P.lorentz_factor_deficit(10.0, 3)
    assert slope == pytest.approx(1.0, rel=0.01)
