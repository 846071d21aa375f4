"""Geometry diagnostics: radial hierarchy profiles and Ollivier-Ricci curvature.

Curvature is computed on unweighted kNN graphs.  For an edge ``(x, y)`` the
lazy random-walk measures ``m_x`` and ``m_y`` keep mass ``alpha`` at the
vertex and spread the rest evenly over its neighbours; the curvature is
``1 - W1(m_x, m_y)`` with ``W1`` the exact transport cost under hop
distances.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from . import corpus as corpus_io
from . import training
from .encoder import EncoderConfig, encode_batch, init_params
from .manifold import lorentz_inner, poincare_radius
from .retrieval import EmbeddingSet
from .vocab import Vocabulary, pad_batch

DEFAULT_ALPHA = 0.5
DEFAULT_GRAPH_K = 10
HIST_EDGES = np.linspace(-2.0, 1.0, 31)


# -- radial hierarchy -----------------------------------------------------

@dataclass(frozen=True)
class HierarchyProfile:
    levels: tuple[int, ...]
    counts: tuple[int, ...]
    mean_depth: tuple[float, ...]
    mean_poincare: tuple[float, ...]
    step_change_pct: tuple[float, ...]
    total_change_pct: float
    spearman: float
    verdict: str

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels), "counts": list(self.counts),
            "mean_depth": list(self.mean_depth), "mean_poincare": list(self.mean_poincare),
            "step_change_pct": list(self.step_change_pct),
            "total_change_pct": self.total_change_pct, "spearman": self.spearman,
            "verdict": self.verdict,
        }


def _verdict(means: Sequence[float]) -> str:
    d = np.diff(np.asarray(means))
    if np.all(d == 0):
        return "flat"
    if np.all(d > 0):
        return "increasing"
    if np.all(d < 0):
        return "decreasing"
    return "non-monotone"


def spearman_rho(values: Sequence[float]) -> float:
    """Rank correlation of ``values`` with their positions ``1..n``.

    Without ties the rank formula is evaluated in exact arithmetic, so a
    strictly increasing sequence gives exactly 1.0.
    """
    n = len(values)
    if n < 2 or len(set(values)) == 1:
        return float("nan")
    if len(set(values)) < n:
        return float(stats.spearmanr(np.arange(1, n + 1), values).statistic)
    ranks = np.argsort(np.argsort(values, kind="stable"), kind="stable") + 1
    d2 = sum((int(r) - i) ** 2 for i, r in enumerate(ranks, 1))
    return float(1 - Fraction(6 * d2, n * (n * n - 1)))


def hierarchy_radius_profile(points: np.ndarray, levels: Sequence[int], kappa: float = 1.0,
                             max_level: int | None = None) -> HierarchyProfile:
    """Mean radial depth (``x0``) and Poincare radius per level.

    Level means use exactly rounded sums, so the profile does not depend on
    the order of entries within a level.
    """
    pts = np.asarray(points, dtype=np.float64)
    lv = np.asarray(levels, dtype=np.int64)
    if pts.ndim != 2 or len(pts) != len(lv):
        raise ValueError("need one level per point")
    if len(lv) == 0:
        raise ValueError("no entries")
    top = int(lv.max()) if max_level is None else max_level
    if lv.min() < 1:
        raise ValueError("levels start at 1")
    present = set(lv.tolist())
    missing = [l for l in range(1, top + 1) if l not in present]
    if missing:
        raise ValueError(f"empty level(s): {missing}")
    depth = pts[:, 0]
    prad = poincare_radius(pts, kappa)
    means, pmeans, counts = [], [], []
    for l in range(1, top + 1):
        sel = lv == l
        n = int(sel.sum())
        counts.append(n)
        means.append(math.fsum(depth[sel]) / n)
        pmeans.append(math.fsum(prad[sel]) / n)
    steps = tuple(100.0 * (b / a - 1.0) for a, b in zip(means, means[1:]))
    total = 100.0 * (means[-1] / means[0] - 1.0)
    rho = spearman_rho(means)
    return HierarchyProfile(tuple(range(1, top + 1)), tuple(counts), tuple(means), tuple(pmeans),
                            steps, total, rho, _verdict(means))


def write_profile_csv(profile: HierarchyProfile, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["level", "count", "mean_depth", "mean_poincare", "change_pct"])
        for i, l in enumerate(profile.levels):
            change = "" if i == 0 else repr(profile.step_change_pct[i - 1])
            w.writerow([l, profile.counts[i], repr(profile.mean_depth[i]),
                        repr(profile.mean_poincare[i]), change])


PROBE_TAU = 1.0
PROBE_STEPS = 200
PROBE_LR = 0.05


def hierarchy_probe(seed: int, tau: float = PROBE_TAU, steps: int = PROBE_STEPS,
                    learning_rate: float = PROBE_LR, corpus_seed: int = 0,
                    cfg: EncoderConfig | None = None) -> tuple[HierarchyProfile, training.TrainResult]:
    """Train a small encoder on the synthetic five-level corpus and profile its radii.

    Supervision: each document's query treats its own document and every
    shallower-level document as relevant.  The whole corpus is one batch.
    """
    docs = corpus_io.hierarchy_corpus(seed=corpus_seed)
    vocab = Vocabulary.build([d.text for d in docs])
    if cfg is None:
        cfg = EncoderConfig(model_dim=64, num_layers=2, vocab_size=len(vocab), max_seq_len=32)
    data = corpus_io.supervised_from_texts(corpus_io.hierarchy_supervision(docs), vocab,
                                           cfg.max_seq_len)
    params = init_params(cfg, seed)
    tc = training.TrainConfig(stage="supervised", learning_rate=learning_rate, steps=steps,
                              batch_size=len(docs), seed=seed, tau=tau)
    result = training.train(tc, data, params, cfg)
    ids, mask = pad_batch([vocab.encode(d.text, cfg.max_seq_len) for d in docs])
    points = encode_batch(ids, mask, result.params, cfg)
    return hierarchy_radius_profile(points, [d.level for d in docs], cfg.kappa), result


# -- kNN graphs -----------------------------------------------------------

@dataclass(frozen=True)
class NeighborGraph:
    ids: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]  # i < j, sorted
    k: int
    metric: str

    @property
    def num_nodes(self) -> int:
        return len(self.ids)

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.ids]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return [sorted(a) for a in adj]


def graph_from_edges(n: int, edges, ids: Sequence[str] | None = None, k: int = 0,
                     metric: str = "given") -> NeighborGraph:
    canon = set()
    for a, b in edges:
        a, b = int(a), int(b)
        if a == b:
            raise ValueError("self loop")
        if not (0 <= a < n and 0 <= b < n):
            raise ValueError("edge endpoint out of range")
        canon.add((min(a, b), max(a, b)))
    ids = tuple(str(i) for i in range(n)) if ids is None else tuple(ids)
    return NeighborGraph(ids, tuple(sorted(canon)), k, metric)


GRAPH_METRICS = ("geodesic", "lorentz-inner", "cosine")


def _dissimilarity_block(pts: np.ndarray, rows: np.ndarray, metric: str, kappa: float):
    if metric in ("geodesic", "lorentz-inner"):
        s = -kappa * lorentz_inner(pts[rows, None, :], pts[None, :, :])
        if metric == "geodesic":
            return np.arccosh(np.maximum(s, 1.0)) / math.sqrt(kappa)
        return s
    sp = pts[:, 1:]
    norms = np.linalg.norm(sp, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    unit = sp / norms[:, None]
    return 1.0 - (unit[rows, None, :] * unit[None, :, :]).sum(-1)


def build_knn_graph(emb: EmbeddingSet, k: int = DEFAULT_GRAPH_K, metric: str | None = None,
                    block: int = 256) -> NeighborGraph:
    """Symmetrized kNN graph; ties are broken by ascending id.

    ``metric`` defaults to ``"geodesic"`` for hyperbolic sets and
    ``"cosine"`` for Euclidean dumps.
    """
    n = len(emb)
    if k <= 0 or k >= n:
        raise ValueError(f"need 0 < k < corpus size ({n}), got k={k}")
    metric = metric or ("cosine" if emb.euclidean else "geodesic")
    if metric not in GRAPH_METRICS:
        raise ValueError(f"metric must be one of {GRAPH_METRICS}")
    if emb.euclidean and metric != "cosine":
        raise ValueError("Euclidean embedding dumps support only the cosine metric")
    order = sorted(range(n), key=lambda i: emb.ids[i])
    ids = tuple(emb.ids[i] for i in order)
    pts = np.asarray(emb.points, dtype=np.float64)[order]
    kappa = emb.kappa if not emb.euclidean else 1.0
    edges = set()
    for start in range(0, n, block):
        rows = np.arange(start, min(n, start + block))
        dis = _dissimilarity_block(pts, rows, metric, kappa)
        dis[np.arange(len(rows)), rows] = np.inf
        for r, i in enumerate(rows):
            nbrs = np.argsort(dis[r], kind="stable")[:k]
            for j in nbrs:
                edges.add((min(i, int(j)), max(i, int(j))))
    return NeighborGraph(ids, tuple(sorted(edges)), k, metric)


# -- Ollivier-Ricci curvature ---------------------------------------------

def _bfs(adj: Sequence[Sequence[int]], src: int, limit: int) -> dict[int, int]:
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        if dist[u] == limit:
            continue
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def walk_measure(adj: Sequence[Sequence[int]], v: int, alpha: float) -> dict[int, float]:
    nb = adj[v]
    if not nb:
        return {v: 1.0}
    m = {v: float(alpha)}
    share = (1.0 - alpha) / len(nb)
    for u in nb:
        m[u] = m.get(u, 0.0) + share
    return m


def _edge_problem(adj, x: int, y: int, alpha: float):
    mx = walk_measure(adj, x, alpha)
    my = walk_measure(adj, y, alpha)
    src = sorted(mx)
    dst = sorted(my)
    cost = np.empty((len(src), len(dst)))
    for a, u in enumerate(src):
        dist = _bfs(adj, u, 3)
        for b, w in enumerate(dst):
            cost[a, b] = dist.get(w, np.inf)
    return src, dst, np.array([mx[u] for u in src]), np.array([my[w] for w in dst]), cost


_ot = None


def _load_pot():
    global _ot
    if _ot is None:
        # keep POT from importing heavyweight deep-learning backends
        for name in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
            os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
        import ot

        _ot = ot
    return _ot


def wasserstein1(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> float:
    """Exact W1 between two discrete measures by network simplex."""
    ot = _load_pot()
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    # the simplex solver rejects tiny total-mass mismatches from rounding
    b = b * (a.sum() / b.sum())
    return float(ot.emd2(a, b, np.ascontiguousarray(cost, dtype=np.float64)))


def edge_curvature(adj: Sequence[Sequence[int]], x: int, y: int, alpha: float = DEFAULT_ALPHA) -> float:
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if y not in adj[x]:
        raise ValueError(f"({x}, {y}) is not an edge")
    _, _, a, b, cost = _edge_problem(adj, x, y, alpha)
    return 1.0 - wasserstein1(a, b, cost)


def edge_curvature_assignment(adj: Sequence[Sequence[int]], x: int, y: int, alpha=Fraction(1, 2)) -> Fraction:
    """Reference curvature from an assignment problem over unit atoms.

    Masses are rational, so scaling by the common denominator ``D`` turns
    both measures into ``D`` equal atoms; an optimal transport plan between
    them is then a permutation, found exactly by the Hungarian method.
    """
    alpha = Fraction(alpha)
    masses = []
    for v in (x, y):
        deg = len(adj[v])
        m = {v: alpha}
        for u in adj[v]:
            m[u] = m.get(u, Fraction(0)) + (1 - alpha) / deg
        masses.append(m)
    denom = 1
    for m in masses:
        for q in m.values():
            denom = math.lcm(denom, q.denominator)
    atoms = []
    for m in masses:
        row = []
        for v in sorted(m):
            row.extend([v] * int(m[v] * denom))
        atoms.append(row)
    dist = {u: _bfs(adj, u, 3) for u in set(atoms[0])}
    cost = np.array([[dist[u][w] for w in atoms[1]] for u in atoms[0]], dtype=np.int64)
    r, c = linear_sum_assignment(cost)
    return 1 - Fraction(int(cost[r, c].sum()), denom)


@dataclass
class CurvatureReport:
    edges: tuple[tuple[int, int], ...]
    values: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    fraction_negative: float
    alpha: float
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "fraction_negative": self.fraction_negative,
            "histogram": {"bin_edges": self.bin_edges.tolist(), "counts": self.counts.tolist()},
            "num_edges": len(self.edges),
            "mean_curvature": float(self.values.mean()) if len(self.values) else None,
            "alpha": self.alpha,
            **self.meta,
        }


def ollivier_ricci(g: NeighborGraph, alpha: float = DEFAULT_ALPHA) -> CurvatureReport:
    adj = g.adjacency()
    values = np.array([edge_curvature(adj, i, j, alpha) for i, j in g.edges], dtype=np.float64)
    counts, bin_edges = np.histogram(values, bins=HIST_EDGES)
    if len(values) and (values.min() < HIST_EDGES[0] or values.max() > HIST_EDGES[-1]):
        raise AssertionError("curvature outside [-2, 1]; transport solver failed")
    frac = float(np.count_nonzero(values < 0) / len(values)) if len(values) else 0.0
    return CurvatureReport(g.edges, values, bin_edges, counts, frac, alpha,
                           {"k": g.k, "metric": g.metric})


def write_curvature_csv(report: CurvatureReport, g: NeighborGraph, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["source", "target", "curvature"])
        for (i, j), v in zip(report.edges, report.values):
            w.writerow([g.ids[i], g.ids[j], repr(float(v))])


def write_json(obj: Mapping, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
