import json
import math
from fractions import Fraction

import numpy as np
import pytest

from hyperdense import verify as V
from hyperdense.pooling import radial_combination

CASES = 300


@pytest.fixture(scope="module")
def clean():
    return {r.name: r for r in V.run_all(seed=0, cases=CASES)}


@pytest.fixture(scope="module")
def faulty():
    return {r.name: r for r in V.run_all(seed=0, cases=CASES, fault="oem-sign")}


@pytest.mark.parametrize("name", ["manifold_closure", "lorentz_inner_bound", "euclidean_mean_contracts",
                                  "oem_pre_projection_bound", "lorentz_factor_deficit"])
def test_sound_suites_pass(clean, name):
    r = clean[name]
    assert r.passed and r.violations == 0 and r.gating
    assert r.cases == (3 if name == "lorentz_factor_deficit" else CASES)


def test_outward_bias_reports_counterexample(clean):
    # projected OEM depth is not monotone in p; the suite must surface this
    r = clean["oem_outward_bias"]
    assert not r.passed and r.violations > 0
    assert r.counterexample is not None and "depth_by_q" in r.counterexample
    assert not V.all_passed(list(clean.values()))


def test_informational_suite_never_gates(clean):
    r = clean["oem_post_projection_outward_rate"]
    assert not r.gating and r.passed


def test_injected_fault_is_detected(clean, faulty):
    assert not faulty["oem_pre_projection_bound"].passed
    assert faulty["oem_pre_projection_bound"].violations > clean["oem_pre_projection_bound"].violations
    # suites that do not touch the combination are unaffected
    for name in ("lorentz_inner_bound", "euclidean_mean_contracts", "lorentz_factor_deficit"):
        assert faulty[name].passed
    with pytest.raises(ValueError):
        V.run_all(cases=1, fault="nope")


def test_worked_example_exact():
    radii = [1, 2, 3]
    want = Fraction(sum(r ** 3 for r in radii), sum(r ** 2 for r in radii))
    assert want == Fraction(36, 14)
    pts = np.array([[r, math.sqrt(r * r - 1)] for r in radii])
    assert radial_combination(pts, np.ones(3), 2.0)[0] == float(want)


def test_results_are_deterministic_and_serializable(clean):
    again = {r.name: r for r in V.run_all(seed=0, cases=CASES)}
    assert again == clean
    json.dumps([r.to_dict() for r in clean.values()])


def test_closure_sweep_detects_off_manifold_op(monkeypatch):
    real = V.hlt_forward

    def drifting(x, p):
        y = real(x, p)
        return y * np.array([1.0 + 1e-5] + [1.0] * (y.shape[-1] - 1))

    monkeypatch.setattr(V, "hlt_forward", drifting)
    r = V.suite_closure(np.random.default_rng(0), 2000)
    assert not r.passed and r.counterexample["residual"] > V.CLOSURE_TOL
