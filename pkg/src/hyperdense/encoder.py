"""Fully hyperbolic and hybrid text encoders, plus the checkpoint format.

Manifold-valued parameters (token embeddings, MLM prototypes) are stored by
their spatial coordinates, so every parameter is an unconstrained Euclidean
array and the time components are recomputed on each forward pass.
"""

from __future__ import annotations

import math
import os
import struct
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import autodiff as ad
from .layers import (
    AttentionParams,
    HLTParams,
    LayerNormParams,
    MLRPrototypes,
    ResidualWeights,
    feed_forward,
    hlt_forward,
    hyp_layer_norm,
    hyp_self_attention,
    lorentz_residual,
    mlr_logits,
)
from .manifold import DEFAULT_KAPPA, check_kappa, lift_from_spatial
from .pooling import (
    DEFAULT_P,
    einstein_midpoint,
    euclidean_mean_pool,
    outward_einstein_midpoint,
)

POOLING_MODES = ("oem", "einstein", "mean", "cls")
VARIANTS = ("fully_hyperbolic", "hybrid")


@dataclass(frozen=True)
class EncoderConfig:
    model_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    head_dim: int = 16
    ffn_dim: int = 256
    vocab_size: int = 8192
    max_seq_len: int = 128
    kappa: float = DEFAULT_KAPPA
    pooling: str = "oem"
    p: float = DEFAULT_P
    variant: str = "fully_hyperbolic"
    euclid_dim: int = 0

    def __post_init__(self):
        for name in ("model_dim", "num_heads", "head_dim", "ffn_dim", "vocab_size", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ValueError("num_layers must be nonnegative")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the four special tokens")
        check_kappa(self.kappa)
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}")
        if self.p < 0:
            raise ValueError("p must be nonnegative")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant == "hybrid" and self.euclid_dim <= 0:
            raise ValueError("hybrid variant needs euclid_dim > 0")

    @classmethod
    def paper_scale(cls) -> "EncoderConfig":
        """12 layers, 768 dimensions, about 149M parameters."""
        return cls(model_dim=768, num_layers=12, num_heads=12, head_dim=64, ffn_dim=2304,
                   vocab_size=50368, max_seq_len=512)


# -- parameters -----------------------------------------------------------

def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    D, h, m, F = cfg.model_dim, cfg.num_heads, cfg.head_dim, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embed.token": (cfg.vocab_size, D),
        "embed.position": (cfg.max_seq_len, D),
    }
    for l in range(cfg.num_layers):
        pre = f"layers.{l}."
        for part in ("q", "k", "v"):
            shapes[pre + f"attn.{part}.weight"] = (h, D + 1, m)
            shapes[pre + f"attn.{part}.bias"] = (h, m)
        shapes[pre + "attn.out.weight"] = (h * m + 1, D)
        shapes[pre + "attn.out.bias"] = (D,)
        shapes[pre + "res1"] = (2,)
        shapes[pre + "ln1.gain"] = (D,)
        shapes[pre + "ln1.shift"] = (D,)
        shapes[pre + "ffn.in.weight"] = (D + 1, F)
        shapes[pre + "ffn.in.bias"] = (F,)
        shapes[pre + "ffn.out.weight"] = (F + 1, D)
        shapes[pre + "ffn.out.bias"] = (D,)
        shapes[pre + "res2"] = (2,)
        shapes[pre + "ln2.gain"] = (D,)
        shapes[pre + "ln2.shift"] = (D,)
    shapes["mlm.prototypes"] = (cfg.vocab_size, D)
    shapes["mlm.bias"] = (cfg.vocab_size,)
    if cfg.variant == "hybrid":
        shapes["hybrid.weight"] = (cfg.euclid_dim + 1, D)
        shapes["hybrid.bias"] = (D,)
    return shapes


def count_params(cfg: EncoderConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: EncoderConfig, seed: int = 0, embed_scale: float = 0.1) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("embed.") or name == "mlm.prototypes":
            params[name] = rng.normal(0.0, embed_scale, size=shape)
        elif leaf == "weight":
            fan_in = shape[-2]
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        elif leaf in ("res1", "res2", "gain"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


@dataclass
class Block:
    attn: AttentionParams
    res1: ResidualWeights
    ln1: LayerNormParams
    ffn_in: HLTParams
    ffn_out: HLTParams
    res2: ResidualWeights
    ln2: LayerNormParams


def blocks(params: Mapping[str, Any], cfg: EncoderConfig) -> list[Block]:
    k = cfg.kappa
    out = []
    for l in range(cfg.num_layers):
        g = lambda name: params[f"layers.{l}.{name}"]  # noqa: E731
        hlt = lambda name: HLTParams(g(name + ".weight"), g(name + ".bias"), k, k)  # noqa: E731
        attn = AttentionParams(hlt("attn.q"), hlt("attn.k"), hlt("attn.v"), hlt("attn.out"),
                               cfg.num_heads, cfg.head_dim)
        out.append(Block(
            attn=attn,
            res1=ResidualWeights(g("res1")),
            ln1=LayerNormParams(g("ln1.gain"), g("ln1.shift"), k, k),
            ffn_in=hlt("ffn.in"),
            ffn_out=hlt("ffn.out"),
            res2=ResidualWeights(g("res2")),
            ln2=LayerNormParams(g("ln2.gain"), g("ln2.shift"), k, k),
        ))
    return out


def mlm_head(params: Mapping[str, Any], cfg: EncoderConfig) -> MLRPrototypes:
    return MLRPrototypes(params["mlm.prototypes"], params["mlm.bias"], cfg.kappa)


# -- forward passes -------------------------------------------------------

def _check_batch(ids: np.ndarray, mask: np.ndarray, cfg: EncoderConfig):
    ids = np.asarray(ids)
    mask = np.asarray(mask, dtype=bool)
    if ids.shape != mask.shape or ids.ndim != 2:
        raise ValueError("ids and mask must be matching (batch, length) arrays")
    if ids.shape[1] > cfg.max_seq_len:
        raise ValueError(f"sequence length {ids.shape[1]} exceeds max_seq_len {cfg.max_seq_len}")
    if not np.all(mask.any(axis=1)):
        raise ValueError("sequence is empty after masking")
    if np.any(ids[mask] < 0) or np.any(ids[mask] >= cfg.vocab_size):
        raise ValueError("token id out of range")
    return ids, mask


def embed_tokens(ids: np.ndarray, params: Mapping[str, Any], cfg: EncoderConfig):
    n = ids.shape[1]
    safe = np.clip(ids, 0, cfg.vocab_size - 1)
    spatial = params["embed.token"][safe] + params["embed.position"][:n]
    return lift_from_spatial(spatial, cfg.kappa)


def contextualize(ids, mask, params: Mapping[str, Any], cfg: EncoderConfig):
    """Token points after all encoder blocks, shape ``(B, n, D + 1)``."""
    ids, mask = _check_batch(ids, mask, cfg)
    x = embed_tokens(ids, params, cfg)
    for b in blocks(params, cfg):
        a = hyp_self_attention(x, b.attn, mask, cfg.kappa)
        x = hyp_layer_norm(lorentz_residual(x, a, b.res1, cfg.kappa), b.ln1)
        f = feed_forward(x, b.ffn_in, b.ffn_out)
        x = hyp_layer_norm(lorentz_residual(x, f, b.res2, cfg.kappa), b.ln2)
    return x


def pool(tokens, mask, cfg: EncoderConfig, pooling: str | None = None, p: float | None = None):
    pooling = pooling or cfg.pooling
    p = cfg.p if p is None else p
    w = np.asarray(mask, dtype=np.float64)
    if pooling == "oem":
        return outward_einstein_midpoint(tokens, w, p, cfg.kappa)
    if pooling == "einstein":
        return einstein_midpoint(tokens, w, cfg.kappa)
    if pooling == "mean":
        return euclidean_mean_pool(tokens, w, cfg.kappa)
    if pooling == "cls":
        return tokens[..., 0, :]
    raise ValueError(f"unknown pooling {pooling!r}")


def encode_batch(ids, mask, params: Mapping[str, Any], cfg: EncoderConfig, **pool_kw):
    """Document points ``(B, D + 1)`` for a padded batch."""
    return pool(contextualize(ids, mask, params, cfg), mask, cfg, **pool_kw)


def encode(ids, params: Mapping[str, Any], cfg: EncoderConfig, mask=None, **pool_kw):
    """Encode one token sequence into a single point."""
    ids = np.asarray(ids)[None, :]
    mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)[None, :]
    return encode_batch(ids, mask, params, cfg, **pool_kw)[0]


def hybrid_project(e, params: Mapping[str, Any], cfg: EncoderConfig):
    """Lift Euclidean vectors ``(..., euclid_dim)`` and map them with a Lorentz linear layer."""
    if cfg.variant != "hybrid":
        raise ValueError("hybrid_project requires a hybrid encoder config")
    e = e if isinstance(e, ad.Tensor) else np.asarray(e, dtype=np.float64)
    if np.shape(ad.value(e))[-1] != cfg.euclid_dim:
        raise ValueError(f"expected Euclidean dim {cfg.euclid_dim}, got {np.shape(ad.value(e))[-1]}")
    x = lift_from_spatial(e, cfg.kappa)
    return hlt_forward(x, HLTParams(params["hybrid.weight"], params["hybrid.bias"], cfg.kappa, cfg.kappa))


def encode_hybrid(token_vectors, params: Mapping[str, Any], cfg: EncoderConfig, mask=None, **pool_kw):
    """Project Euclidean token vectors ``(B, n, E)`` and pool them into ``(B, D + 1)``."""
    x = hybrid_project(token_vectors, params, cfg)
    shape = np.shape(ad.value(x))[:-1]
    mask = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return pool(x, mask, cfg, **pool_kw)


def mlm_forward(ids, mask, positions, params: Mapping[str, Any], cfg: EncoderConfig):
    """Logits ``(len(positions), vocab_size)`` at the masked ``(batch, index)`` positions."""
    positions = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    if len(positions) == 0:
        raise ValueError("no masked positions")
    x = contextualize(ids, mask, params, cfg)
    picked = x[positions[:, 0], positions[:, 1]]
    return mlr_logits(picked, mlm_head(params, cfg))


# -- checkpoint format ----------------------------------------------------

CKPT_MAGIC = b"HYTE"
CKPT_VERSION = 1
_CFG_STRUCT = struct.Struct("<8I2d")  # 8 integer fields (incl. codes), kappa, p
_LAYER_TENSORS = 18
_MIN_LAYER_BYTES = _LAYER_TENSORS * (2 + 4 + 8 + 4)  # name length, ndim, one dim, one value


class CheckpointError(ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _pack_config(cfg: EncoderConfig) -> bytes:
    return _CFG_STRUCT.pack(
        cfg.model_dim, cfg.num_layers, cfg.num_heads, cfg.head_dim, cfg.ffn_dim,
        cfg.vocab_size, cfg.max_seq_len, cfg.euclid_dim
        | (POOLING_MODES.index(cfg.pooling) << 24) | (VARIANTS.index(cfg.variant) << 28),
        cfg.kappa, cfg.p)


def _unpack_config(raw: bytes) -> EncoderConfig:
    d, L, h, m, F, V, n, packed, kappa, p = _CFG_STRUCT.unpack(raw)
    return EncoderConfig(model_dim=d, num_layers=L, num_heads=h, head_dim=m, ffn_dim=F,
                         vocab_size=V, max_seq_len=n, euclid_dim=packed & 0xFFFFFF,
                         pooling=POOLING_MODES[(packed >> 24) & 0xF],
                         variant=VARIANTS[(packed >> 28) & 0xF], kappa=kappa, p=p)


def _tensor_header(name: str, shape: tuple[int, ...]) -> bytes:
    raw = name.encode("utf-8")
    return (struct.pack("<H", len(raw)) + raw + struct.pack("<I", len(shape))
            + struct.pack(f"<{len(shape)}Q", *shape))


def save_checkpoint(params: Mapping[str, Any], cfg: EncoderConfig, path) -> None:
    """Write parameters as little-endian float32 with a trailing CRC-32."""
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        raise CheckpointError("parameter names do not match the config")
    crc = 0
    with open(path, "wb") as f:
        def put(b: bytes):
            nonlocal crc
            crc = zlib.crc32(b, crc)
            f.write(b)

        put(CKPT_MAGIC + struct.pack("<I", CKPT_VERSION))
        put(_pack_config(cfg))
        put(struct.pack("<I", len(expected)))
        for name, shape in expected.items():
            arr = np.asarray(ad.value(params[name]))
            if arr.shape != shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != {shape}")
            put(_tensor_header(name, shape))
            put(arr.astype("<f4").tobytes())
        f.write(struct.pack("<I", crc))


class _Reader:
    def __init__(self, f):
        self.f = f
        self.crc = 0

    def take(self, n: int) -> bytes:
        b = self.f.read(n)
        if len(b) != n:
            raise CorruptCheckpointError("unexpected end of file")
        self.crc = zlib.crc32(b, self.crc)
        return b

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_checkpoint(path, header_only: bool = False):
    """Read a checkpoint.

    Returns ``(params, cfg)``; with ``header_only`` the first element is the
    ``name -> shape`` table and tensor data is skipped without being read.
    """
    with open(path, "rb") as f:
        r = _Reader(f)
        if r.take(4) != CKPT_MAGIC:
            raise CorruptCheckpointError("bad magic")
        (version,) = r.unpack("<I")
        if version != CKPT_VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint version {version}")
        try:
            cfg = _unpack_config(r.take(_CFG_STRUCT.size))
        except (ValueError, IndexError) as exc:
            raise CorruptCheckpointError(f"bad config block: {exc}") from exc
        size = os.fstat(f.fileno()).st_size
        # a corrupted layer count must not drive the size of the expected table
        if cfg.num_layers * _MIN_LAYER_BYTES > size:
            raise CorruptCheckpointError("layer count exceeds what the file can hold")
        expected = list(param_shapes(cfg).items())
        (count,) = r.unpack("<I")
        if count != len(expected):
            raise CorruptCheckpointError("tensor count does not match the stored config")
        table: dict[str, tuple[int, ...]] = {}
        params: dict[str, np.ndarray] = {}
        for want_name, want_shape in expected:
            # check each header against the config before trusting its sizes
            (nlen,) = r.unpack("<H")
            try:
                name = r.take(nlen).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptCheckpointError("bad tensor name") from exc
            (ndim,) = r.unpack("<I")
            if name != want_name or ndim != len(want_shape):
                raise CorruptCheckpointError(f"unexpected tensor header {name!r}")
            shape = r.unpack(f"<{ndim}Q")
            if tuple(shape) != want_shape:
                raise CorruptCheckpointError(f"{name}: shape {shape} does not match the config")
            table[name] = tuple(shape)
            nbytes = 4 * math.prod(shape)
            if nbytes > size - f.tell():
                raise CorruptCheckpointError(f"{name}: tensor data runs past the end of the file")
            if header_only:
                f.seek(nbytes, 1)
                continue
            params[name] = np.frombuffer(r.take(nbytes), dtype="<f4").reshape(shape)
        if header_only:
            return table, cfg
        trailer = f.read(4)
        if len(trailer) != 4:
            raise CorruptCheckpointError("missing checksum")
        if struct.unpack("<I", trailer)[0] != r.crc:
            raise CorruptCheckpointError("checksum mismatch")
        if f.read(1):
            raise CorruptCheckpointError("trailing bytes after checksum")
    # widen only after the checksum has vouched for the data
    return {k: v.astype(np.float64) for k, v in params.items()}, cfg


def quantize_params(params: Mapping[str, Any]) -> dict[str, np.ndarray]:
    """Round parameters to the float32 grid used by checkpoints."""
    return {k: np.asarray(ad.value(v)).astype(np.float32).astype(np.float64) for k, v in params.items()}


def config_to_dict(cfg: EncoderConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: Mapping[str, Any]) -> EncoderConfig:
    known = {f.name for f in fields(EncoderConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown encoder config keys: {sorted(unknown)}")
    return EncoderConfig(**d)
