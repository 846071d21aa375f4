"""Exact geodesic top-k search, index and embedding files, and RAG prompts.

Records are stored as float32 and scored in float64.  Ranking uses the
scaled Lorentz inner product ``-kappa <q, x>_L``, which is ``cosh`` of the
scaled geodesic distance and therefore orders candidates identically;
reported distances are geodesic.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .manifold import DEFAULT_KAPPA, GeometryError, check_kappa, constraint_residual, lorentz_inner

DEFAULT_K = 5
INDEX_TOL = 1e-4
FORMAT_VERSION = 1
INDEX_MAGIC = b"HIDX"
VECTOR_MAGIC = b"HVEC"


class IndexFormatError(ValueError):
    pass


class ChecksumError(IndexFormatError):
    pass


class VersionError(IndexFormatError):
    pass


@dataclass
class EmbeddingSet:
    """Ordered ``(id, point)`` pairs sharing one curvature.

    ``kappa == 0`` marks a Euclidean dump whose rows carry a dummy time
    component; such sets feed the cosine kNN graph but cannot be indexed.
    """

    ids: list[str]
    points: np.ndarray
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        self.points = np.asarray(self.points)
        if self.points.ndim != 2 or len(self.ids) != self.points.shape[0]:
            raise ValueError("need one (d + 1)-vector per id")
        if self.kappa != 0.0:
            check_kappa(self.kappa)

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 1

    @property
    def euclidean(self) -> bool:
        return self.kappa == 0.0


@dataclass(frozen=True)
class SearchResult:
    query: np.ndarray
    ids: tuple[str, ...]
    distances: tuple[float, ...]

    def __len__(self):
        return len(self.ids)

    def rows(self) -> list[tuple[int, str, float]]:
        return [(r + 1, i, d) for r, (i, d) in enumerate(zip(self.ids, self.distances))]


class RetrievalIndex:
    """Immutable exact-search index; records are sorted by id."""

    def __init__(self, ids: Sequence[str], coords: np.ndarray, kappa: float):
        self._kappa = check_kappa(kappa)
        coords = np.ascontiguousarray(coords, dtype=np.float32)
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        self._ids = tuple(ids[i] for i in order)
        self._coords = coords[order]
        self._coords.setflags(write=False)
        # float64 view used for scoring; float32 -> float64 is exact
        self._coords64 = self._coords.astype(np.float64)
        self._coords64.setflags(write=False)
        self._rank = np.arange(len(self._ids))  # id order == storage order

    @property
    def kappa(self) -> float:
        return self._kappa

    @property
    def dim(self) -> int:
        return self._coords.shape[1] - 1

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    def __len__(self):
        return len(self._ids)

    def records(self) -> Iterable[tuple[str, np.ndarray]]:
        return zip(self._ids, self._coords)

    def checksum(self) -> int:
        return zlib.crc32(_encode_records(self._ids, self._coords))


def build_index(embeddings: EmbeddingSet, tol: float = INDEX_TOL) -> RetrievalIndex:
    if len(embeddings) == 0:
        raise ValueError("cannot index an empty embedding set")
    if embeddings.euclidean:
        raise GeometryError("Euclidean embedding dumps cannot be indexed for geodesic search")
    if len(set(embeddings.ids)) != len(embeddings.ids):
        seen, dup = set(), None
        for i in embeddings.ids:
            if i in seen:
                dup = i
                break
            seen.add(i)
        raise ValueError(f"duplicate document id {dup!r}")
    for i in embeddings.ids:
        if len(i.encode("utf-8")) > 0xFFFF:
            raise ValueError("document id longer than 65535 bytes")
    coords32 = np.asarray(embeddings.points, dtype=np.float64).astype(np.float32)
    _validate_rows(coords32, embeddings.kappa, tol)
    return RetrievalIndex(list(embeddings.ids), coords32, embeddings.kappa)


def _validate_rows(coords: np.ndarray, kappa: float, tol: float):
    c = coords.astype(np.float64)
    if not np.all(np.isfinite(c)):
        raise GeometryError("non-finite coordinates in index records")
    bad = np.nonzero((constraint_residual(c, kappa) > tol) | (c[:, 0] <= 0))[0]
    if len(bad):
        raise GeometryError(f"{len(bad)} record(s) off the hyperboloid, first at row {bad[0]}")


def scores(index: RetrievalIndex, q: np.ndarray) -> np.ndarray:
    """``-kappa <q, x>_L`` for every record, in storage order (ascending = nearer)."""
    return -index.kappa * lorentz_inner(index._coords64, q[None, :])


def _distances_from_scores(s: np.ndarray, kappa: float) -> np.ndarray:
    return np.arccosh(np.maximum(s, 1.0)) / math.sqrt(kappa)


def search(index: RetrievalIndex, q, k: int = DEFAULT_K, kappa: float | None = None) -> SearchResult:
    """Exact top-``k`` by geodesic distance, ties broken by ascending id."""
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k <= 0:
        raise ValueError("k must be a positive integer")
    if kappa is not None and check_kappa(kappa) != index.kappa:
        raise GeometryError(f"query curvature {kappa} does not match index curvature {index.kappa}")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.dim + 1,):
        raise GeometryError(f"query must have shape ({index.dim + 1},), got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise GeometryError("non-finite query")
    s = scores(index, q)
    k = min(int(k), len(index))
    if k < len(index):
        # everything tied with the k-th score must be considered for id tie-breaks
        kth = np.partition(s, k - 1)[k - 1]
        cand = np.nonzero(s <= kth)[0]
    else:
        cand = np.arange(len(index))
    # storage order is id order, so a stable sort on score breaks ties by id
    top = cand[np.argsort(s[cand], kind="stable")][:k]
    dist = _distances_from_scores(s[top], index.kappa)
    return SearchResult(q, tuple(index.ids[i] for i in top), tuple(float(d) for d in dist))


# -- binary formats -------------------------------------------------------

def _encode_records(ids: Sequence[str], coords: np.ndarray) -> bytes:
    parts = []
    row_bytes = np.ascontiguousarray(coords, dtype="<f4")
    for i, doc_id in enumerate(ids):
        raw = doc_id.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(row_bytes[i].tobytes())
    return b"".join(parts)


def _write(path, magic: bytes, kappa: float, ids: Sequence[str], coords: np.ndarray) -> None:
    body = (magic + struct.pack("<IdIQ", FORMAT_VERSION, float(kappa), coords.shape[1] - 1, len(ids))
            + _encode_records(ids, coords))
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def _read(path, magic: bytes) -> tuple[float, list[str], np.ndarray]:
    data = Path(path).read_bytes()
    head = struct.Struct("<4sIdIQ")
    if len(data) < head.size + 4:
        raise IndexFormatError("file too short")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    got_magic, version, kappa, dim, count = head.unpack_from(body)
    if got_magic != magic:
        raise IndexFormatError(f"bad magic {got_magic!r}, expected {magic!r}")
    if zlib.crc32(body) != crc:
        raise ChecksumError("checksum mismatch")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version}")
    row = 4 * (dim + 1)
    ids, rows = [], []
    off = head.size
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, off)
            off += 2
            ids.append(body[off:off + n].decode("utf-8"))
            off += n
            if off + row > len(body):
                raise IndexFormatError("truncated record")
            rows.append(body[off:off + row])
            off += row
    except (struct.error, UnicodeDecodeError) as exc:
        raise IndexFormatError(f"malformed record: {exc}") from exc
    if off != len(body):
        raise IndexFormatError("trailing bytes after records")
    coords = np.frombuffer(b"".join(rows), dtype="<f4").reshape(count, dim + 1).astype(np.float32)
    return kappa, ids, coords


def save_index(index: RetrievalIndex, path) -> None:
    _write(path, INDEX_MAGIC, index.kappa, index.ids, index.coords)


def load_index(path) -> RetrievalIndex:
    kappa, ids, coords = _read(path, INDEX_MAGIC)
    if len(set(ids)) != len(ids):
        raise IndexFormatError("duplicate ids in index file")
    if list(ids) != sorted(ids):
        raise IndexFormatError("index records are not in id order")
    try:
        check_kappa(kappa)
        _validate_rows(coords, kappa, INDEX_TOL)
    except GeometryError as exc:
        raise IndexFormatError(str(exc)) from exc
    return RetrievalIndex(ids, coords, kappa)


def save_embeddings(emb: EmbeddingSet, path) -> None:
    _write(path, VECTOR_MAGIC, emb.kappa, emb.ids, np.asarray(emb.points, dtype=np.float64))


def load_embeddings(path) -> EmbeddingSet:
    kappa, ids, coords = _read(path, VECTOR_MAGIC)
    return EmbeddingSet(ids, coords.astype(np.float64), kappa)


def euclidean_embedding_set(ids: Sequence[str], vectors: np.ndarray) -> EmbeddingSet:
    """Wrap raw Euclidean vectors with a dummy time component (``kappa = 0``)."""
    v = np.asarray(vectors, dtype=np.float64)
    return EmbeddingSet(list(ids), np.concatenate([np.zeros((len(v), 1)), v], axis=1), 0.0)


# -- prompt assembly ------------------------------------------------------

PROMPT_HEADER = "Based on the following context, answer the question."


def assemble_rag_prompt(query: str, results: SearchResult | Sequence[str],
                        texts: Mapping[str, str]) -> str:
    """Context documents in retrieval order, verbatim, separated by blank lines."""
    ids = results.ids if isinstance(results, SearchResult) else tuple(results)
    missing = [i for i in ids if i not in texts]
    if missing:
        raise KeyError(f"no text for retrieved id(s): {', '.join(missing)}")
    context = "\n\n".join(texts[i] for i in ids)
    return f"{PROMPT_HEADER}\n\nContext:\n{context}\n\nQuestion: {query}\n\nAnswer:"
