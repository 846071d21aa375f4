"""JSON-lines readers and a synthetic five-level topic hierarchy.

The hierarchy runs from a broad field to a narrow sub-subtopic.  Each level
has its own word pool with no words shared across levels, so any radial
ordering a model learns comes from the relevance structure, not from
lexical overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .training import MLMData, PairData, SupervisedData
from .vocab import Vocabulary


class DataError(ValueError):
    """Malformed input file."""


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected an object")
            yield obj


def _field(obj: dict, key: str, kind, where: str):
    if key not in obj or not isinstance(obj[key], kind):
        raise DataError(f"{where}: missing or mistyped field {key!r}")
    return obj[key]


def read_corpus(path) -> list[tuple[str, str]]:
    """``{"id", "text"}`` records as ``(id, text)`` pairs; ids must be unique."""
    out, seen = [], set()
    for i, obj in enumerate(read_jsonl(path), 1):
        where = f"{path}:{i}"
        doc_id = _field(obj, "id", str, where)
        text = _field(obj, "text", str, where)
        if doc_id in seen:
            raise DataError(f"{where}: duplicate id {doc_id!r}")
        seen.add(doc_id)
        out.append((doc_id, text))
    if not out:
        raise DataError(f"{path}: no records")
    return out


def read_pairs(path) -> list[tuple[str, str]]:
    out = []
    for i, obj in enumerate(read_jsonl(path), 1):
        where = f"{path}:{i}"
        out.append((_field(obj, "query", str, where), _field(obj, "positive", str, where)))
    if not out:
        raise DataError(f"{path}: no records")
    return out


def read_supervised(path) -> list[tuple[str, list[str], list[str]]]:
    out = []
    for i, obj in enumerate(read_jsonl(path), 1):
        where = f"{path}:{i}"
        q = _field(obj, "query", str, where)
        pos = _field(obj, "positives", list, where)
        neg = obj.get("negatives", [])
        if not pos or not all(isinstance(t, str) for t in pos):
            raise DataError(f"{where}: positives must be a nonempty list of strings")
        if not isinstance(neg, list) or not all(isinstance(t, str) for t in neg):
            raise DataError(f"{where}: negatives must be a list of strings")
        out.append((q, list(pos), list(neg)))
    if not out:
        raise DataError(f"{path}: no records")
    return out


def read_levels(path) -> dict[str, int]:
    out = {}
    for i, obj in enumerate(read_jsonl(path), 1):
        where = f"{path}:{i}"
        doc_id = _field(obj, "id", str, where)
        level = _field(obj, "level", int, where)
        if isinstance(level, bool) or level < 1:
            raise DataError(f"{where}: level must be a positive integer")
        out[doc_id] = level
    if not out:
        raise DataError(f"{path}: no records")
    return out


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


# -- conversion to token-id datasets -------------------------------------

def supervised_from_texts(records, vocab: Vocabulary, max_len: int) -> SupervisedData:
    """Deduplicate document texts and index them for :class:`SupervisedData`."""
    docs: list[str] = []
    index: dict[str, int] = {}

    def ref(text):
        if text not in index:
            index[text] = len(docs)
            docs.append(text)
        return index[text]

    queries, pos, neg = [], [], []
    for q, p, n in records:
        queries.append(vocab.encode(q, max_len))
        pos.append([ref(t) for t in p])
        neg.append([ref(t) for t in n if t not in set(p)])
    return SupervisedData(queries, [vocab.encode(t, max_len) for t in docs], pos, neg)


def pairs_from_texts(records, vocab: Vocabulary, max_len: int) -> PairData:
    return PairData([vocab.encode(q, max_len) for q, _ in records],
                    [vocab.encode(d, max_len) for _, d in records])


def mlm_from_texts(texts, vocab: Vocabulary, max_len: int) -> MLMData:
    return MLMData([vocab.encode(t, max_len) for t in texts])


# -- synthetic hierarchy --------------------------------------------------

LEVEL_WORDS: tuple[tuple[str, ...], ...] = (
    ("science", "inquiry", "evidence", "experiment", "observation", "hypothesis", "theory",
     "laboratory", "discovery", "knowledge", "nature", "research", "method", "measurement",
     "scholar", "physics", "chemistry", "biology", "universe", "phenomena"),
    ("mathematics", "number", "proof", "axiom", "logic", "quantity", "abstraction", "theorem",
     "reasoning", "pattern", "calculation", "formula", "structure", "deduction", "symbol",
     "geometry", "analysis", "counting", "rigor", "conjecture"),
    ("algebra", "equation", "variable", "unknown", "polynomial", "coefficient", "group", "ring",
     "field", "operation", "identity", "inverse", "factor", "root", "expression", "solve",
     "substitution", "commutative", "associative", "homomorphism"),
    ("vector", "matrix", "determinant", "eigenvalue", "eigenvector", "basis", "span", "rank",
     "dimension", "subspace", "independence", "orthogonal", "scalar", "row", "column",
     "echelon", "transpose", "diagonal", "inner", "trace"),
    ("transformation", "kernel", "image", "nullity", "injective", "surjective", "bijective",
     "isomorphism", "composition", "domain", "codomain", "preimage", "rotation", "reflection",
     "shear", "projection", "dilation", "invertible", "nullspace", "mapping"),
)
LEVEL_NAMES = ("science", "mathematics", "algebra", "linear algebra", "linear transformations")


@dataclass(frozen=True)
class HierarchyDoc:
    doc_id: str
    level: int
    text: str
    query: str


def hierarchy_corpus(docs_per_level: int = 5, doc_words: int = 12, query_words: int = 4,
                     seed: int = 0) -> list[HierarchyDoc]:
    """Five levels of documents drawn from disjoint topical word pools."""
    rng = np.random.default_rng(seed)
    out = []
    for level, pool in enumerate(LEVEL_WORDS, 1):
        for j in range(docs_per_level):
            words = list(rng.choice(pool, size=doc_words, replace=False))
            query = words[:query_words]
            out.append(HierarchyDoc(f"L{level}-{j + 1}", level, " ".join(words), " ".join(query)))
    return out


def hierarchy_supervision(docs: list[HierarchyDoc]) -> list[tuple[str, list[str], list[str]]]:
    """One query per document.

    A query from level ``l`` counts its own document and every document at a
    shallower level as relevant (general context supports specific
    questions); other documents at level ``l`` or deeper are negatives.
    """
    out = []
    for d in docs:
        pos = [d.text] + [e.text for e in docs if e.level < d.level]
        neg = [e.text for e in docs if e.level >= d.level and e.doc_id != d.doc_id]
        out.append((d.query, pos, neg))
    return out
