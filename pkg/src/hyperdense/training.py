"""Training objectives, a momentum SGD loop, and finite-difference checks.

Losses take embeddings (numpy arrays or tracked tensors) so that the same
code serves evaluation, training, and gradient checking.  All parameters
are Euclidean (see :mod:`hyperdense.encoder`), so plain SGD applies.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, encode_batch, mlm_forward
from .manifold import DEFAULT_KAPPA, check_kappa, geodesic_distance, lorentz_inner
from .vocab import MASK_ID, pad_batch

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.05
STAGES = ("mlm", "contrastive", "supervised")
SIMILARITY_MODES = ("geodesic", "inner")


class TrainingError(RuntimeError):
    pass


# -- similarity and losses ------------------------------------------------

def similarity(q, d, kappa: float = DEFAULT_KAPPA, mode: str = "geodesic"):
    """``-d(q, d)``, or ``kappa <q, d>_L`` in ``"inner"`` mode; both peak at ``q == d``."""
    if mode == "geodesic":
        return -geodesic_distance(q, d, kappa)
    if mode == "inner":
        return check_kappa(kappa) * lorentz_inner(q, d)
    raise ValueError(f"unknown similarity mode {mode!r}")


def similarity_matrix(queries, docs, kappa: float = DEFAULT_KAPPA, mode: str = "geodesic"):
    """``(N, M)`` similarities between query rows and document rows."""
    return similarity(queries[:, None, :], docs[None, :, :], kappa, mode)


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0:
        raise ValueError("temperature must be positive")
    return tau


def info_nce(queries, docs, tau: float = DEFAULT_TAU, kappa: float = DEFAULT_KAPPA,
             mode: str = "geodesic"):
    """In-batch InfoNCE: row ``i`` of ``docs`` is the positive for query ``i``."""
    tau = _check_tau(tau)
    n = np.shape(ad.value(queries))[0]
    if n < 1 or np.shape(ad.value(docs))[0] != n:
        raise ValueError("need N >= 1 aligned query/document pairs")
    logits = similarity_matrix(queries, docs, kappa, mode) / tau
    idx = np.arange(n)
    pos = logits[idx, idx]
    return (ad.logsumexp(logits, axis=-1) - pos).sum() / float(n)


def supervised_contrastive(queries, docs, positives, negatives, tau: float = DEFAULT_TAU,
                           kappa: float = DEFAULT_KAPPA, mode: str = "geodesic"):
    """Multi-positive contrastive loss.

    ``positives`` and ``negatives`` are boolean ``(N, M)`` masks selecting,
    for each query, its relevant and non-relevant rows of ``docs``.  The loss
    per query is ``logsumexp`` over positives and negatives minus
    ``logsumexp`` over positives.
    """
    tau = _check_tau(tau)
    pos = np.asarray(positives, dtype=bool)
    neg = np.asarray(negatives, dtype=bool)
    if pos.shape != neg.shape or pos.shape[0] != np.shape(ad.value(queries))[0]:
        raise ValueError("positive/negative masks must be (num_queries, num_docs)")
    if not np.all(pos.any(axis=1)):
        raise ValueError("every query needs at least one positive")
    if np.any(pos & neg):
        raise ValueError("a document cannot be both positive and negative")
    logits = similarity_matrix(queries, docs, kappa, mode) / tau
    num = ad.logsumexp(ad.where(pos, logits, -np.inf), axis=-1)
    den = ad.logsumexp(ad.where(pos | neg, logits, -np.inf), axis=-1)
    return (den - num).sum() / float(pos.shape[0])


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under row-wise softmax."""
    targets = np.asarray(targets, dtype=np.int64)
    n = len(targets)
    if n == 0:
        raise ValueError("no targets")
    picked = logits[np.arange(n), targets]
    return (ad.logsumexp(logits, axis=-1) - picked).sum() / float(n)


def mlm_loss(ids, mask, positions, targets, params, cfg: EncoderConfig):
    """Cross-entropy of the MLM head at the masked ``(batch, index)`` positions."""
    return cross_entropy(mlm_forward(ids, mask, positions, params, cfg), targets)


def mask_tokens(ids: np.ndarray, mask: np.ndarray, rng: np.random.Generator, rate: float = 0.15):
    """Replace a random subset of non-CLS tokens with ``[MASK]``.

    Returns ``(masked_ids, positions, targets)``; at least one position is
    masked per batch.
    """
    ids = np.array(ids, copy=True)
    cand = np.array(mask, dtype=bool, copy=True)
    cand[:, 0] = False
    rows, cols = np.nonzero(cand)
    if len(rows) == 0:
        raise ValueError("batch has no maskable tokens")
    pick = rng.random(len(rows)) < rate
    if not pick.any():
        pick[rng.integers(len(rows))] = True
    positions = np.stack([rows[pick], cols[pick]], axis=1)
    targets = ids[rows[pick], cols[pick]].copy()
    ids[rows[pick], cols[pick]] = MASK_ID
    return ids, positions, targets


# -- datasets -------------------------------------------------------------

@dataclass
class PairData:
    queries: list[list[int]]
    documents: list[list[int]]

    def __post_init__(self):
        if len(self.queries) != len(self.documents) or not self.queries:
            raise ValueError("pair data needs equal, nonzero numbers of queries and documents")


@dataclass
class SupervisedData:
    """Queries with positive and negative document indices into ``documents``."""

    queries: list[list[int]]
    documents: list[list[int]]
    positives: list[list[int]]
    negatives: list[list[int]]

    def __post_init__(self):
        n = len(self.queries)
        if n == 0 or len(self.positives) != n or len(self.negatives) != n:
            raise ValueError("supervised data lists must align and be nonempty")
        for p, q in zip(self.positives, self.negatives):
            if not p:
                raise ValueError("every query needs at least one positive")
            if set(p) & set(q):
                raise ValueError("a document cannot be both positive and negative")
            if any(not 0 <= i < len(self.documents) for i in list(p) + list(q)):
                raise ValueError("document index out of range")


@dataclass
class MLMData:
    sequences: list[list[int]]

    def __post_init__(self):
        if not self.sequences:
            raise ValueError("empty MLM corpus")


# -- optimization ---------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    stage: str = "supervised"
    learning_rate: float = 0.05
    steps: int = 200
    batch_size: int = 16
    seed: int = 0
    tau: float = DEFAULT_TAU
    momentum: float = 0.9
    similarity: str = "geodesic"
    mask_rate: float = 0.15
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.learning_rate < 0 or self.steps < 0 or self.batch_size <= 0:
            raise ValueError("learning rate and steps must be nonnegative, batch size positive")
        _check_tau(self.tau)
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.similarity not in SIMILARITY_MODES:
            raise ValueError(f"similarity must be one of {SIMILARITY_MODES}")
        if not 0 < self.mask_rate <= 1:
            raise ValueError("mask_rate must lie in (0, 1]")


def value_and_grad(fn: Callable[[Mapping[str, Any]], Any], params: Mapping[str, np.ndarray],
                   names: Sequence[str] | None = None):
    """Evaluate ``fn(params)`` and its gradient with respect to ``names``."""
    names = list(params) if names is None else list(names)
    with ad.Tape() as tape:
        tracked = dict(params)
        for k in names:
            tracked[k] = tape.watch(params[k])
        loss = fn(tracked)
    if not isinstance(loss, ad.Tensor):
        return float(loss), {k: np.zeros_like(params[k]) for k in names}
    grads = tape.gradient(loss, [tracked[k] for k in names])
    return float(loss.value), dict(zip(names, grads))


def _encode(seqs: Sequence[Sequence[int]], params, cfg: EncoderConfig):
    ids, mask = pad_batch(seqs)
    return encode_batch(ids, mask, params, cfg)


def _batch_objective(config: TrainConfig, data, cfg: EncoderConfig, rng: np.random.Generator):
    """Draw one minibatch and return the loss as a function of parameters."""
    if config.stage == "mlm":
        if not isinstance(data, MLMData):
            raise TypeError("mlm stage needs MLMData")
        take = rng.permutation(len(data.sequences))[: config.batch_size]
        ids, mask = pad_batch([data.sequences[i] for i in take])
        ids, positions, targets = mask_tokens(ids, mask, rng, config.mask_rate)
        return lambda p: mlm_loss(ids, mask, positions, targets, p, cfg)

    if config.stage == "contrastive":
        if not isinstance(data, PairData):
            raise TypeError("contrastive stage needs PairData")
        take = rng.permutation(len(data.queries))[: config.batch_size]
        qs = [data.queries[i] for i in take]
        ds = [data.documents[i] for i in take]
        return lambda p: info_nce(_encode(qs, p, cfg), _encode(ds, p, cfg), config.tau,
                                  cfg.kappa, config.similarity)

    if not isinstance(data, SupervisedData):
        raise TypeError("supervised stage needs SupervisedData")
    take = rng.permutation(len(data.queries))[: config.batch_size]
    used = sorted({j for i in take for j in list(data.positives[i]) + list(data.negatives[i])})
    col = {j: c for c, j in enumerate(used)}
    pos = np.zeros((len(take), len(used)), dtype=bool)
    neg = np.zeros_like(pos)
    for r, i in enumerate(take):
        pos[r, [col[j] for j in data.positives[i]]] = True
        neg[r, [col[j] for j in data.negatives[i]]] = True
    qs = [data.queries[i] for i in take]
    ds = [data.documents[j] for j in used]
    return lambda p: supervised_contrastive(_encode(qs, p, cfg), _encode(ds, p, cfg), pos, neg,
                                            config.tau, cfg.kappa, config.similarity)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    trace: list[tuple[int, str, float]] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [row[2] for row in self.trace]


def train(config: TrainConfig, data, params: Mapping[str, np.ndarray], cfg: EncoderConfig,
          callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """SGD with heavy-ball momentum; the trace holds the loss before each update.

    One extra evaluation after the last update is appended as step
    ``config.steps`` so the trace covers the final parameters.
    """
    rng = np.random.default_rng(config.seed)
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    names = [k for k in params if k not in set(config.frozen)]
    velocity = {k: np.zeros_like(params[k]) for k in names}
    trace: list[tuple[int, str, float]] = []
    for step in range(config.steps + 1):
        objective = _batch_objective(config, data, cfg, rng)
        if step == config.steps:
            loss = float(ad.value(objective(params)))
        else:
            loss, grads = value_and_grad(objective, params, names)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at step {step} ({config.stage})")
        trace.append((step, config.stage, loss))
        if callback is not None:
            callback(step, loss)
        if step == config.steps:
            break
        for k in names:
            g = grads[k]
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {k} at step {step}")
            velocity[k] = config.momentum * velocity[k] + g
            params[k] = params[k] - config.learning_rate * velocity[k]
        log.debug("step %d %s loss %.6f", step, config.stage, loss)
    return TrainResult(params, trace)


def write_loss_trace(trace: Sequence[tuple[int, str, float]], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "stage", "loss"])
        for step, stage, loss in trace:
            w.writerow([step, stage, repr(float(loss))])


# -- finite-difference gradient checks ------------------------------------

GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-7
FD_STEP = 1e-5
KINK_MARGIN = 1e-6


@dataclass(frozen=True)
class GradCheckReport:
    op: str
    passed: bool
    max_rel_error: float
    max_abs_error: float
    checked: int
    skipped_kink: bool = False
    detail: str = ""


def _errors(analytic: np.ndarray, numeric: np.ndarray, rtol: float, atol: float):
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
    return diff / scale, diff


def grad_check(op: str, fn: Callable[[Mapping[str, Any]], Any], inputs: Mapping[str, np.ndarray],
               kinks: Callable[[Mapping[str, np.ndarray]], np.ndarray] | None = None,
               rtol: float = GRAD_RTOL, atol: float = GRAD_ATOL, step: float = FD_STEP,
               margin: float = KINK_MARGIN) -> GradCheckReport:
    """Compare tape gradients of a scalar ``fn`` with central differences.

    ``kinks`` returns the arguments of every ``|.|`` in the computation; the
    instance is skipped if one lies within ``margin`` of zero or changes sign
    under any finite-difference perturbation, since the difference quotient
    is then meaningless.
    """
    inputs = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    _, grads = value_and_grad(fn, inputs)
    base_sign = None
    if kinks is not None:
        z = np.asarray(kinks(inputs))
        if z.size and np.min(np.abs(z)) < margin:
            return GradCheckReport(op, True, 0.0, 0.0, 0, True, "pre-activation at |.| kink")
        base_sign = np.sign(z)
    worst_rel = worst_abs = 0.0
    count = 0
    for name, x in inputs.items():
        numeric = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            vals = []
            for sgn in (1.0, -1.0):
                pert = dict(inputs)
                xp = x.copy()
                xp[i] += sgn * step
                pert[name] = xp
                if base_sign is not None and np.any(np.sign(kinks(pert)) != base_sign):
                    return GradCheckReport(op, True, 0.0, 0.0, 0, True,
                                           "finite difference straddles a |.| kink")
                vals.append(float(ad.value(fn(pert))))
            numeric[i] = (vals[0] - vals[1]) / (2 * step)
        rel, diff = _errors(grads[name], numeric, rtol, atol)
        if rel.size:
            worst_rel = max(worst_rel, float(rel.max()))
            worst_abs = max(worst_abs, float(diff.max()))
        count += x.size
    return GradCheckReport(op, worst_rel <= rtol, worst_rel, worst_abs, count)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
