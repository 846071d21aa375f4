"""Randomized certification of the pooling and inner-product bounds.

Each suite evaluates the package's float64 implementation on random
inputs and recomputes the same quantities in extended precision
(``numpy.longdouble``) from the defining formulas.  A case fails if the
implementation violates the bound beyond a relative slack, or if it
disagrees with the extended-precision reference.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .layers import (
    AttentionParams,
    HLTParams,
    LayerNormParams,
    ResidualWeights,
    feed_forward,
    hlt_forward,
    hyp_layer_norm,
    hyp_self_attention,
    lorentz_residual,
)
from .manifold import (
    constraint_residual,
    exp_map,
    project_to_hyperboloid,
    project_to_tangent,
    random_points,
    scaled_inner,
)
from .pooling import (
    einstein_midpoint,
    euclidean_mean_pool,
    fitted_deficit_slope,
    lorentz_factor,
    outward_einstein_midpoint,
    radial_combination,
    weighted_mean_pool,
)

LD = np.longdouble
SLACK = 1e-12
REF_TOL = 1e-9
DEFAULT_CASES = 10_000
KAPPAS = (0.5, 1.0, 2.0)
DIMS = (1, 2, 3, 5, 8)
MAX_RHO = 10.0  # scaled geodesic radius; sqrt(kappa) * x0 <= cosh(10)
Q_GRID = (0.0, 0.5, 1.0, 2.0, 4.0)
FAULTS = ("oem-sign",)
CLOSURE_TOL = 1e-6
CLOSURE_BATCH = 200


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    violations: int
    max_violation: float
    gating: bool = True
    counterexample: dict | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class _Tracker:
    def __init__(self, name: str, gating: bool = True):
        self.name = name
        self.gating = gating
        self.cases = 0
        self.violations = 0
        self.max_violation = 0.0
        self.counterexample: dict | None = None
        self.notes: list[str] = []

    def check(self, violation: float, context: Callable[[], dict]):
        """Record one comparison; ``violation > 0`` means the bound failed."""
        if violation > 0:
            self.violations += 1
            if violation > self.max_violation:
                self.max_violation = float(violation)
                self.counterexample = context()

    def result(self, extra_ok: bool = True) -> SuiteResult:
        return SuiteResult(self.name, self.violations == 0 and extra_ok, self.cases,
                           self.violations, self.max_violation, self.gating,
                           self.counterexample, self.notes)


def _rel_excess(lower: float, upper: float) -> float:
    """How far ``lower <= upper`` is violated, relative, beyond the slack."""
    scale = max(1.0, abs(float(upper)))
    return (float(lower) - float(upper)) / scale - SLACK


_EPS = float(np.finfo(np.float64).eps)


def _mismatch(value: float, reference, cond: float = 1.0) -> float:
    """Relative disagreement beyond ``REF_TOL`` plus rounding amplified by ``cond``."""
    err = abs(float(value) - float(reference)) / max(1.0, abs(float(reference)))
    return err - (REF_TOL + 64 * _EPS * cond)


def _projection_cond(v: np.ndarray, kappa: float) -> float:
    """Condition number of the radial depth of ``Pi(v)`` with respect to rounding in ``v``."""
    v = np.asarray(v, dtype=np.float64)
    q = kappa * (v[0] ** 2 - float((v[1:] ** 2).sum()))
    return kappa * float(v[0] ** 2) / q if q > 0 else float("inf")


# -- extended-precision references ---------------------------------------

def _ld_points(spatial: np.ndarray, kappa: float) -> np.ndarray:
    s = spatial.astype(LD)
    x0 = np.sqrt((s * s).sum(axis=-1) + LD(1) / LD(kappa))
    return np.concatenate([x0[..., None], s], axis=-1)


def _ld_depth_of(v: np.ndarray, kappa: float):
    """Radial depth of the projection of ``v``."""
    v = v.astype(LD)
    q = LD(kappa) * (v[0] * v[0] - (v[1:] * v[1:]).sum())
    return v[0] / np.sqrt(q)


def _ld_combination(x: np.ndarray, w: np.ndarray, exponent: float) -> np.ndarray:
    x = x.astype(LD)
    a = w.astype(LD) * x[:, 0] ** LD(exponent)
    a = a / a.sum()
    return (a[:, None] * x).sum(axis=0)


# -- sampling -------------------------------------------------------------

@dataclass
class _Case:
    tokens: np.ndarray
    weights: np.ndarray
    kappa: float

    def context(self) -> dict:
        return {"kappa": self.kappa, "tokens": self.tokens.tolist(), "weights": self.weights.tolist()}


def _sample(rng: np.random.Generator, uniform_weights: bool = False, equal_radii: bool = False) -> _Case:
    kappa = float(rng.choice(KAPPAS))
    d = int(rng.choice(DIMS))
    n = int(rng.integers(2, 9))
    tokens = random_points(rng, n, d, kappa, MAX_RHO / math.sqrt(kappa))
    if equal_radii:
        # same geodesic radius, independent directions
        rho = rng.uniform(0.0, MAX_RHO / math.sqrt(kappa))
        u = rng.normal(size=(n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        s = math.sqrt(kappa)
        spatial = (math.sinh(s * rho) / s) * u
        tokens = np.concatenate([np.full((n, 1), math.cosh(s * rho) / s), spatial], axis=1)
    weights = np.ones(n) if uniform_weights else rng.uniform(0.05, 1.0, size=n)
    return _Case(tokens, weights, kappa)


# -- suites ---------------------------------------------------------------

def suite_inner_bound(rng: np.random.Generator, cases: int = DEFAULT_CASES) -> SuiteResult:
    """``-kappa <x, y>_L >= 1``, with equality only for coincident points.

    The float64 check allows the rounding error of the bilinear form, which
    scales with ``kappa * x0 * y0``; the equality case is checked on points
    lifted in extended precision.
    """
    t = _Tracker("lorentz_inner_bound")
    eps = float(np.finfo(np.float64).eps)
    for c in range(cases):
        kappa = float(rng.choice(KAPPAS))
        d = int(rng.choice(DIMS))
        xy = random_points(rng, 2, d, kappa, MAX_RHO / math.sqrt(kappa))
        same = c % 10 == 0
        if same:
            xy[1] = xy[0]
        value = float(scaled_inner(xy[0], xy[1], kappa))
        cond = kappa * xy[0, 0] * xy[1, 0]
        xl = xy.astype(LD)
        ref_same_coords = -LD(kappa) * (-(xl[0, 0] * xl[1, 0]) + (xl[0, 1:] * xl[1, 1:]).sum())
        lifted = _ld_points(xy[:, 1:], kappa)
        ref = -LD(kappa) * (-(lifted[0, 0] * lifted[1, 0]) + (lifted[0, 1:] * lifted[1, 1:]).sum())
        t.cases += 1
        ctx = lambda: {"kappa": kappa, "x": xy[0].tolist(), "y": xy[1].tolist(), "value": value}  # noqa: E731
        t.check(1.0 - value - (SLACK + 8 * (d + 1) * eps * cond), ctx)
        if same:
            t.check(float(abs(ref - 1)) - REF_TOL, ctx)
        else:
            t.check(float(1 + LD(REF_TOL) - ref), ctx)
        t.check(abs(value - float(ref_same_coords)) / max(1.0, cond) - REF_TOL, ctx)
    return t.result()


def suite_euclidean_mean(rng: np.random.Generator, cases: int = DEFAULT_CASES) -> SuiteResult:
    """Ambient averaging then projection never increases the mean radial depth."""
    t = _Tracker("euclidean_mean_contracts")
    strict_checked = 0
    for _ in range(cases):
        case = _sample(rng, uniform_weights=True)
        x, kappa = case.tokens, case.kappa
        out = euclidean_mean_pool(x, kappa=kappa)
        mean_depth = float(x[:, 0].mean())
        ref_mean = x[:, 0].astype(LD).mean()
        ref_out = _ld_depth_of(x.astype(LD).mean(axis=0), kappa)
        t.cases += 1
        ctx = lambda: {**case.context(), "pooled_depth": float(out[0]), "mean_depth": mean_depth}  # noqa: E731
        t.check(_rel_excess(out[0], mean_depth), ctx)
        t.check(_mismatch(out[0], ref_out, _projection_cond(x.mean(axis=0), kappa)), ctx)
        spread = max(float(np.arccosh(max(float(scaled_inner(x[i], x[j], kappa)), 1.0)))
                     for i in range(len(x)) for j in range(i + 1, len(x))) / math.sqrt(kappa)
        if spread > 1e-6:
            strict_checked += 1
            t.check(float(ref_out - ref_mean) if ref_out >= ref_mean else -1.0, ctx)
    t.notes.append(f"strict inequality checked on {strict_checked} non-degenerate sets")
    return t.result()


def _combination(fault: str | None):
    if fault == "oem-sign":
        return lambda x, w, p: radial_combination(x, w, -(p + 1.0))
    return lambda x, w, p: radial_combination(x, w, p + 1.0)


def suite_pre_projection(rng: np.random.Generator, cases: int = DEFAULT_CASES,
                         fault: str | None = None) -> SuiteResult:
    """OEM pre-projection time component dominates the weighted mean radius."""
    t = _Tracker("oem_pre_projection_bound")
    combine = _combination(fault)
    equal_cases = 0
    for c in range(cases):
        equal = c % 20 == 0
        case = _sample(rng, equal_radii=equal)
        p = float(rng.uniform(0.0, 4.0))
        x, w = case.tokens, case.weights
        v0 = float(combine(x, w, p)[0])
        rbar = float((w * x[:, 0]).sum() / w.sum())
        xl, wl = x[:, 0].astype(LD), w.astype(LD)
        ref = (wl * xl ** LD(p + 2)).sum() / (wl * xl ** LD(p + 1)).sum()
        t.cases += 1
        ctx = lambda: {**case.context(), "p": p, "v0": v0, "weighted_mean_radius": rbar}  # noqa: E731
        t.check(_rel_excess(rbar, v0), ctx)
        t.check(_mismatch(v0, ref), ctx)
        if equal:
            equal_cases += 1
            t.check(abs(v0 - rbar) / max(1.0, rbar) - SLACK, ctx)
    # worked example: radii 1, 2, 3 in H^1 with uniform weights and p = 1
    radii = [1, 2, 3]
    pts = np.array([[r, math.sqrt(r * r - 1)] for r in radii], dtype=np.float64)
    exact = Fraction(sum(r ** 3 for r in radii), sum(r ** 2 for r in radii))
    got = float(combine(pts, np.ones(3), 1.0)[0])
    worked_ok = exact == Fraction(36, 14) and got == float(exact)
    t.notes.append(f"worked example v0 = {got!r}, exact 36/14 = {float(exact)!r}")
    t.notes.append(f"equality checked on {equal_cases} equal-radius sets")
    if not worked_ok:
        t.violations += 1
        t.counterexample = t.counterexample or {"worked_example": got, "expected": float(exact)}
    return t.result()


def _oem_depth(x, w, q, kappa, combine) -> float:
    return float(project_to_hyperboloid(combine(x, w, q), kappa)[0])


def suite_outward_bias(rng: np.random.Generator, cases: int = DEFAULT_CASES,
                       fault: str | None = None) -> SuiteResult:
    """Depth of the OEM (``p`` in 1, 2, 4) versus the Einstein midpoint, and monotonicity in ``q``."""
    t = _Tracker("oem_outward_bias")
    combine = _combination(fault)
    dominance = monotone = 0
    pre_monotone_viol = 0
    for _ in range(cases):
        case = _sample(rng)
        x, w, kappa = case.tokens, case.weights, case.kappa
        depth = {q: _oem_depth(x, w, q, kappa, combine) for q in Q_GRID}
        ref = {q: _ld_depth_of(_ld_combination(x, w, q + 1.0 if fault is None else -(q + 1.0)), kappa)
               for q in Q_GRID}
        t.cases += 1
        ctx = lambda: {**case.context(), "depth_by_q": {str(q): depth[q] for q in Q_GRID}}  # noqa: E731
        for q in Q_GRID:
            cond = _projection_cond(combine(x, w, q), kappa)
            t.check(_mismatch(depth[q], ref[q], cond), ctx)
        bad_dom = False
        for p in (1.0, 2.0, 4.0):
            ex = _rel_excess(depth[0.0], depth[p])
            if ex > 0 and ref[p] < ref[0.0]:
                bad_dom = True
                t.check(ex, ctx)
        dominance += bad_dom
        bad_mon = False
        for a, b in zip(Q_GRID, Q_GRID[1:]):
            ex = _rel_excess(depth[a], depth[b])
            if ex > 0 and ref[b] < ref[a]:
                bad_mon = True
                t.check(ex, ctx)
        monotone += bad_mon
        v0 = [float(combine(x, w, q)[0]) for q in Q_GRID]
        pre_monotone_viol += any(_rel_excess(a, b) > 0 for a, b in zip(v0, v0[1:]))
    t.notes.append(f"cases with r(OEM_p) < r(Einstein) for some p in (1, 2, 4): {dominance}")
    t.notes.append(f"cases where depth is not nondecreasing over q in {Q_GRID}: {monotone}")
    t.notes.append(f"cases where the pre-projection v0 is not nondecreasing in q: {pre_monotone_viol}")
    return t.result()


def suite_outward_biased_post(rng: np.random.Generator, cases: int = DEFAULT_CASES) -> SuiteResult:
    """Informational: how often the projected OEM depth falls below the weighted mean radius."""
    t = _Tracker("oem_post_projection_outward_rate", gating=False)
    for _ in range(cases):
        case = _sample(rng)
        x, w, kappa = case.tokens, case.weights, case.kappa
        out = outward_einstein_midpoint(x, w, 2.0, kappa)
        rbar = float((w * x[:, 0]).sum() / w.sum())
        t.cases += 1
        t.check(_rel_excess(rbar, out[0]), lambda: {**case.context(), "depth": float(out[0]), "rbar": rbar})
    t.notes.append(f"p = 2 outputs below the weighted mean radius: {t.violations} of {t.cases}")
    res = t.result()
    res.passed = True
    return res


def suite_volume_deficit() -> SuiteResult:
    """Lorentz factor grows like exp(sqrt(k) rho); ball volume like exp((d-1) sqrt(k) rho)."""
    t = _Tracker("lorentz_factor_deficit")
    s3 = fitted_deficit_slope(3, 1.0)
    s2 = fitted_deficit_slope(2, 1.0)
    ratio = float(lorentz_factor(10.0, 1.0)) * 2.0 * math.exp(-10.0)
    checks = [
        ("d=3 slope", s3, abs(s3 - 1.0) - 0.01),
        ("d=2 slope", s2, abs(s2) - 0.01),
        ("rho=10 asymptotic ratio", ratio, abs(ratio - 1.0) - 0.001),
    ]
    for label, value, excess in checks:
        t.cases += 1
        t.notes.append(f"{label} = {value:.6f}")
        t.check(excess, lambda label=label, value=value: {"check": label, "value": value})
    return t.result()


# -- manifold closure -------------------------------------------------------

def _closure_hlt(rng, dim, kappa):
    w = rng.normal(size=(dim + 1, dim)) / math.sqrt(dim + 1)
    return HLTParams(w, rng.normal(scale=0.5, size=dim), kappa, kappa)


def _closure_ops(rng, dim: int, kappa: float, mask: np.ndarray) -> dict[str, Callable]:
    heads, hd = 2, max(1, dim // 2)

    def head_map():
        w = rng.normal(size=(heads, dim + 1, hd)) / math.sqrt(dim + 1)
        return HLTParams(w, rng.normal(scale=0.5, size=(heads, hd)), kappa, kappa)

    out = HLTParams(rng.normal(size=(heads * hd + 1, dim)) / math.sqrt(heads * hd + 1),
                    rng.normal(scale=0.5, size=dim), kappa, kappa)
    attn = AttentionParams(head_map(), head_map(), head_map(), out, heads, hd)
    hlt = _closure_hlt(rng, dim, kappa)
    ffn = (_closure_hlt(rng, dim, kappa), _closure_hlt(rng, dim, kappa))
    ln = LayerNormParams(rng.uniform(0.5, 2.0, dim), rng.normal(size=dim), kappa, kappa)
    res = ResidualWeights(rng.uniform(0.1, 2.0, 2))
    step = rng.normal(size=(1, 1, dim + 1))

    def exp_step(x):
        v = project_to_tangent(x, np.broadcast_to(step, x.shape), kappa)
        return exp_map(x, v / np.maximum(1.0, x[..., :1]), kappa)

    return {
        "hlt": lambda x: hlt_forward(x, hlt),
        "layer_norm": lambda x: hyp_layer_norm(x, ln),
        "residual": lambda x: lorentz_residual(x, hlt_forward(x, hlt), res, kappa),
        "attention": lambda x: hyp_self_attention(x, attn, kappa=kappa),
        "masked_attention": lambda x: hyp_self_attention(x, attn, mask, kappa),
        "feed_forward": lambda x: feed_forward(x, *ffn),
        "exp_map": exp_step,
    }


def _closure_pools(rng, kappa: float) -> dict[str, Callable]:
    p = float(rng.uniform(0.0, 4.0))
    return {
        "oem": lambda x, w: outward_einstein_midpoint(x, w, p, kappa),
        "einstein": lambda x, w: einstein_midpoint(x, w, kappa),
        "euclidean_mean": lambda x, w: euclidean_mean_pool(x, w, kappa),
        "weighted_mean": lambda x, w: weighted_mean_pool(x, w, kappa),
    }


def suite_closure(rng: np.random.Generator, compositions: int = DEFAULT_CASES,
                  batch: int = CLOSURE_BATCH) -> SuiteResult:
    """Random chains of layer ops ending in a pooling op stay on the hyperboloid.

    Each batch shares one random chain and parameter draw over ``batch``
    independent token sets; every token set counts as one composition.  The
    residual of every intermediate tensor is checked.
    """
    t = _Tracker("manifold_closure")
    worst = 0.0
    while t.cases < compositions:
        b = min(batch, compositions - t.cases)
        kappa = float(rng.choice(KAPPAS))
        dim = int(rng.choice(DIMS[1:]))
        n = int(rng.integers(2, 9))
        x = random_points(rng, (b, n), dim, kappa, MAX_RHO / math.sqrt(kappa))
        mask = np.ones((b, n), dtype=bool)
        mask[:, 1:] = rng.random((b, n - 1)) < 0.7
        ops = _closure_ops(rng, dim, kappa, mask)
        pools = _closure_pools(rng, kappa)
        chain = [str(o) for o in rng.choice(sorted(ops), size=int(rng.integers(1, 5)))]
        pool = str(rng.choice(sorted(pools)))
        done = []
        for name in chain + [pool]:
            x = pools[name](x, mask.astype(np.float64)) if name == pool else ops[name](x)
            done.append(name)
            r = constraint_residual(x, kappa).reshape(b, -1).max(axis=1)
            bad = ~np.isfinite(x).reshape(b, -1).all(axis=1) | (x[..., 0] <= 0).reshape(b, -1).any(axis=1)
            r = np.where(bad, np.inf, r)
            worst = max(worst, float(r.max()))
            i = int(np.argmax(r))
            t.check(float(r[i]) - CLOSURE_TOL,
                    lambda i=i, chain=list(done): {"kappa": kappa, "dim": dim, "chain": chain,
                                                    "residual": float(r[i])})
        t.cases += b
    t.notes.append(f"worst constraint residual {worst:.3e} (tolerance {CLOSURE_TOL:g})")
    return t.result()


def run_all(seed: int = 0, cases: int = DEFAULT_CASES, fault: str | None = None) -> list[SuiteResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    rng = np.random.default_rng(seed)
    streams = rng.spawn(6)
    return [
        suite_closure(streams[5], cases),
        suite_inner_bound(streams[0], cases),
        suite_euclidean_mean(streams[1], cases),
        suite_pre_projection(streams[2], cases, fault),
        suite_outward_bias(streams[3], cases, fault),
        suite_volume_deficit(),
        suite_outward_biased_post(streams[4], cases),
    ]


def all_passed(results: list[SuiteResult]) -> bool:
    return all(r.passed for r in results if r.gating)
