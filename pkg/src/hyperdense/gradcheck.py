"""Registry of differentiable operations and random instances for gradient checks.

Each entry builds a scalar objective from one random instance: the op's
output is contracted with a fixed random tensor so every output component
contributes to the gradient.  Instances that put an ``|.|`` argument at a
kink are skipped by :func:`hyperdense.training.grad_check` and reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, encode_batch, init_params
from .layers import (
    AttentionParams,
    HLTParams,
    LayerNormParams,
    MLRPrototypes,
    ResidualWeights,
    _split_heads,
    attention_weights,
    feed_forward,
    hlt_forward,
    hyp_layer_norm,
    hyp_self_attention,
    lorentz_midpoint,
    lorentz_residual,
    mlr_logits,
)
from .manifold import geodesic_distance, lift_from_spatial, lorentz_inner, project_to_hyperboloid
from .pooling import einstein_midpoint, euclidean_mean_pool, outward_einstein_midpoint
from .training import GradCheckReport, cross_entropy, grad_check, info_nce, supervised_contrastive


@dataclass
class Instance:
    fn: Callable[[Mapping[str, Any]], Any]
    inputs: dict[str, np.ndarray]
    kinks: Callable[[Mapping[str, np.ndarray]], np.ndarray] | None = None


def _contract(out, probe: np.ndarray):
    return (out * probe).sum()


def _spatial_points(rng, shape, d, scale=1.0):
    return rng.normal(scale=scale, size=tuple(np.atleast_1d(shape)) + (d,))


def _hlt(rng, d: int) -> Instance:
    n, m = 4, max(2, d // 2)
    z = _spatial_points(rng, n, d)
    probe = rng.normal(size=(n, m + 1))

    def pre(p):
        return lift_from_spatial(p["z"]) @ p["w"] + p["b"]

    def fn(p):
        return _contract(hlt_forward(lift_from_spatial(p["z"]), HLTParams(p["w"], p["b"])), probe)

    inputs = {"z": z, "w": rng.normal(size=(d + 1, m)) / math.sqrt(d), "b": rng.normal(size=m)}
    return Instance(fn, inputs, lambda p: ad.value(pre(p)))


def _layer_norm(rng, d: int) -> Instance:
    z = _spatial_points(rng, 3, d, 2.0)
    probe = rng.normal(size=(3, d + 1))

    def fn(p):
        return _contract(hyp_layer_norm(lift_from_spatial(p["z"]), LayerNormParams(p["g"], p["s"])), probe)

    return Instance(fn, {"z": z, "g": rng.uniform(0.5, 1.5, d), "s": rng.normal(size=d)})


def _residual(rng, d: int) -> Instance:
    probe = rng.normal(size=(3, d + 1))

    def fn(p):
        x, fx = lift_from_spatial(p["x"]), lift_from_spatial(p["f"])
        return _contract(lorentz_residual(x, fx, ResidualWeights(p["w"])), probe)

    return Instance(fn, {"x": _spatial_points(rng, 3, d), "f": _spatial_points(rng, 3, d),
                         "w": rng.uniform(0.5, 1.5, 2)})


def _attention(rng, d: int) -> Instance:
    h, m, n = 2, max(2, d // 2), 4
    probe = rng.normal(size=(n, d + 1))

    def params(p):
        hl = lambda k: HLTParams(p[k + ".w"], p[k + ".b"])  # noqa: E731
        return AttentionParams(hl("q"), hl("k"), hl("v"), hl("o"), h, m)

    def heads_pre(p):
        x = lift_from_spatial(p["z"])
        vals = [np.einsum("ni,hij->hnj", ad.value(x), p[k + ".w"]) + p[k + ".b"][:, None, :]
                for k in ("q", "k", "v")]
        return np.concatenate([v.ravel() for v in vals])

    def kinks(p):
        # arguments of every |.|: the three head maps and the output map
        a = params(p)
        x = lift_from_spatial(p["z"])
        inner = [heads_pre(p)]
        q, k, v = (_split_heads(x, t) for t in (a.query, a.key, a.value))
        heads = lorentz_midpoint(v, attention_weights(q, k, m), 1.0)
        merged = np.swapaxes(heads[..., 1:], 0, 1).reshape(n, h * m)
        inner.append((lift_from_spatial(merged) @ p["o.w"] + p["o.b"]).ravel())
        return np.concatenate(inner)

    inputs = {"z": _spatial_points(rng, n, d)}
    for k in ("q", "k", "v"):
        inputs[k + ".w"] = rng.normal(size=(h, d + 1, m)) / math.sqrt(d)
        inputs[k + ".b"] = rng.normal(scale=0.3, size=(h, m))
    inputs["o.w"] = rng.normal(size=(h * m + 1, d)) / math.sqrt(h * m)
    inputs["o.b"] = rng.normal(scale=0.3, size=d)
    return Instance(lambda p: _contract(hyp_self_attention(lift_from_spatial(p["z"]), params(p)), probe),
                    inputs, kinks)


def _ffn(rng, d: int) -> Instance:
    F = 2 * d
    probe = rng.normal(size=(3, d + 1))

    def kinks(p):
        x = lift_from_spatial(p["z"])
        a = x @ p["w1"] + p["b1"]
        hdn = lift_from_spatial(np.abs(a))
        return np.concatenate([a.ravel(), (hdn @ p["w2"] + p["b2"]).ravel()])

    def fn(p):
        out = feed_forward(lift_from_spatial(p["z"]), HLTParams(p["w1"], p["b1"]), HLTParams(p["w2"], p["b2"]))
        return _contract(out, probe)

    inputs = {"z": _spatial_points(rng, 3, d), "w1": rng.normal(size=(d + 1, F)) / math.sqrt(d),
              "b1": rng.normal(size=F), "w2": rng.normal(size=(F + 1, d)) / math.sqrt(F),
              "b2": rng.normal(size=d)}
    return Instance(fn, inputs, kinks)


def _pool(pool):
    def make(rng, d: int) -> Instance:
        n = 5
        probe = rng.normal(size=d + 1)

        def fn(p):
            return _contract(pool(lift_from_spatial(p["z"]), p["w"]), probe)

        return Instance(fn, {"z": _spatial_points(rng, n, d, 1.5), "w": rng.uniform(0.2, 1.0, n)})
    return make


def _distance(rng, d: int) -> Instance:
    return Instance(lambda p: geodesic_distance(lift_from_spatial(p["x"]), lift_from_spatial(p["y"])).sum(),
                    {"x": _spatial_points(rng, 4, d), "y": _spatial_points(rng, 4, d)})


def _inner(rng, d: int) -> Instance:
    return Instance(lambda p: lorentz_inner(p["x"], p["y"]).sum(),
                    {"x": rng.normal(size=(4, d + 1)), "y": rng.normal(size=(4, d + 1))})


def _projection(rng, d: int) -> Instance:
    probe = rng.normal(size=(3, d + 1))
    s = _spatial_points(rng, 3, d)
    t = np.linalg.norm(s, axis=1, keepdims=True) + rng.uniform(0.5, 2.0, (3, 1))
    return Instance(lambda p: _contract(project_to_hyperboloid(p["v"]), probe),
                    {"v": np.concatenate([t, s], axis=1)})


def _mlr(rng, d: int) -> Instance:
    C = 6
    probe = rng.normal(size=(3, C))
    return Instance(lambda p: _contract(mlr_logits(lift_from_spatial(p["x"]), MLRPrototypes(p["c"], p["b"])), probe),
                    {"x": _spatial_points(rng, 3, d), "c": _spatial_points(rng, C, d), "b": rng.normal(size=C)})


def _info_nce(rng, d: int) -> Instance:
    return Instance(lambda p: info_nce(lift_from_spatial(p["q"]), lift_from_spatial(p["d"]), 0.5),
                    {"q": _spatial_points(rng, 4, d), "d": _spatial_points(rng, 4, d)})


def _supervised(rng, d: int) -> Instance:
    pos = rng.random((3, 5)) < 0.4
    pos[:, 0] = True
    neg = ~pos & (rng.random((3, 5)) < 0.7)
    return Instance(lambda p: supervised_contrastive(lift_from_spatial(p["q"]), lift_from_spatial(p["d"]),
                                                     pos, neg, 0.5),
                    {"q": _spatial_points(rng, 3, d), "d": _spatial_points(rng, 5, d)})


def _cross_entropy(rng, d: int) -> Instance:
    t = rng.integers(0, d, size=4)
    return Instance(lambda p: cross_entropy(p["z"], t), {"z": rng.normal(size=(4, d))})


def _encoder(rng, d: int) -> Instance:
    cfg = EncoderConfig(model_dim=d, num_layers=1, num_heads=2, head_dim=max(2, d // 2),
                        ffn_dim=2 * d, vocab_size=8, max_seq_len=4)
    base = init_params(cfg, int(rng.integers(2 ** 31)), embed_scale=0.5)
    ids = rng.integers(4, 8, size=(2, 4))
    ids[:, 0] = 2
    mask = np.ones_like(ids, dtype=bool)
    mask[1, 3] = False
    probe = rng.normal(size=(2, d + 1))
    free = ("embed.token", "layers.0.ln2.gain", "layers.0.res1")

    def fn(p):
        return _contract(encode_batch(ids, mask, {**base, **p}, cfg), probe)

    return Instance(fn, {k: base[k] for k in free})


GRAD_OPS: dict[str, Callable[[np.random.Generator, int], Instance]] = {
    "lorentz_inner": _inner,
    "geodesic_distance": _distance,
    "project_to_hyperboloid": _projection,
    "hlt": _hlt,
    "layer_norm": _layer_norm,
    "lorentz_residual": _residual,
    "self_attention": _attention,
    "feed_forward": _ffn,
    "oem": _pool(lambda x, w: outward_einstein_midpoint(x, w, 2.0)),
    "einstein_midpoint": _pool(einstein_midpoint),
    "euclidean_mean_pool": _pool(euclidean_mean_pool),
    "mlr_logits": _mlr,
    "info_nce": _info_nce,
    "supervised_contrastive": _supervised,
    "cross_entropy": _cross_entropy,
    "encoder": _encoder,
}


def check_op(op: str, instances: int = 100, dim: int = 8, seed: int = 0) -> list[GradCheckReport]:
    """Run ``instances`` random gradient checks for one registered op."""
    rng = np.random.default_rng([seed, sorted(GRAD_OPS).index(op)])
    out = []
    for _ in range(instances):
        inst = GRAD_OPS[op](rng, dim)
        out.append(grad_check(op, inst.fn, inst.inputs, inst.kinks))
    return out
