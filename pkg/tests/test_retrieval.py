import math
import struct
from pathlib import Path

import numpy as np
import pytest

from hyperdense import manifold as M
from hyperdense import retrieval as R
from retrieval_oracle import geodesic_ranking, inner_ranking, random_corpus


def make_index(rng, size=50, dim=4, kappa=1.0, dup_rate=0.1):
    ids, pts = random_corpus(rng, size, dim, kappa, dup_rate)
    return R.build_index(R.EmbeddingSet(ids, pts, kappa)), ids, pts


def test_search_matches_both_oracles(rng):
    for kappa in (0.5, 1.0, 2.0):
        index, _, _ = make_index(rng, 120, 5, kappa, 0.2)
        coords = index.coords.astype(np.float64)
        for _ in range(10):
            q = M.random_points(rng, 1, 5, kappa, 3.0)[0]
            for k in (1, 5, 17, 200):
                got = list(R.search(index, q, k).ids)
                assert got == geodesic_ranking(index.ids, coords, q, kappa, k)
                assert got == inner_ranking(index.ids, coords, q, kappa, k)


def test_ties_break_by_id(rng):
    p = M.random_points(rng, 1, 3)[0]
    far = M.random_points(rng, 1, 3, 1.0, 9.0)[0]
    emb = R.EmbeddingSet(["c", "a", "b", "z"], np.stack([p, p, p, far]))
    index = R.build_index(emb)
    res = R.search(index, p, 2)
    assert res.ids == ("a", "b")
    assert R.search(index, p, 3).ids == ("a", "b", "c")


def test_distances_are_geodesic_and_sorted(rng):
    index, _, _ = make_index(rng, 40, 3)
    q = M.random_points(rng, 1, 3)[0]
    res = R.search(index, q, 10)
    assert list(res.distances) == sorted(res.distances)
    lookup = dict(index.records())
    for i, d in zip(res.ids, res.distances):
        assert d == pytest.approx(M.geodesic_distance(q, lookup[i].astype(np.float64)), abs=1e-9)
    assert [r for r, _, _ in res.rows()] == list(range(1, 11))


def test_self_query_ranks_first(rng):
    index, ids, pts = make_index(rng, 30, 4, dup_rate=0.0)
    for i in range(30):
        q = index.coords[i].astype(np.float64)
        res = R.search(index, q, 1)
        # float32 rounding puts records ~x0^2 * 2^-24 off the sheet; acosh near 1
        # turns that into a small nonzero self-distance
        bound = math.sqrt(8 * q[0] ** 2 * 2.0 ** -24)
        assert res.ids == (index.ids[i],) and res.distances[0] <= bound


def test_k_larger_than_corpus_and_validation(rng):
    index, _, _ = make_index(rng, 5, 2)
    q = M.origin(2)
    assert len(R.search(index, q, 50)) == 5
    for bad in (0, -1, 2.5, True):
        with pytest.raises(ValueError):
            R.search(index, q, bad)
    with pytest.raises(M.GeometryError):
        R.search(index, np.ones(4), 1)
    with pytest.raises(M.GeometryError):
        R.search(index, q, 1, kappa=2.0)
    with pytest.raises(M.GeometryError):
        R.search(index, np.array([np.nan, 0, 0]), 1)


def test_build_index_rejects_bad_input(rng):
    p = M.random_points(rng, 2, 3)
    with pytest.raises(ValueError):
        R.build_index(R.EmbeddingSet(["a", "a"], p))
    with pytest.raises(M.GeometryError):
        R.build_index(R.EmbeddingSet(["a", "b"], p * 1.5))
    with pytest.raises(M.GeometryError):
        R.build_index(R.euclidean_embedding_set(["a", "b"], p[:, 1:]))
    with pytest.raises(ValueError):
        R.build_index(R.EmbeddingSet([], np.zeros((0, 4))))


def test_index_is_immutable(rng):
    index, _, _ = make_index(rng, 5, 2)
    with pytest.raises(ValueError):
        index.coords[0, 0] = 1.0


def test_index_round_trip_is_bit_exact(rng, tmp_path):
    index, _, _ = make_index(rng, 64, 6, 0.5)
    R.save_index(index, tmp_path / "a.hidx")
    back = R.load_index(tmp_path / "a.hidx")
    assert back.ids == index.ids and back.kappa == index.kappa
    assert np.array_equal(back.coords, index.coords) and back.checksum() == index.checksum()
    R.save_index(back, tmp_path / "b.hidx")
    assert (tmp_path / "a.hidx").read_bytes() == (tmp_path / "b.hidx").read_bytes()


def test_index_file_layout(rng, tmp_path):
    p = M.origin(2)
    index = R.build_index(R.EmbeddingSet(["x"], p[None]))
    R.save_index(index, tmp_path / "a.hidx")
    raw = (tmp_path / "a.hidx").read_bytes()
    magic, version, kappa, dim, count = struct.unpack_from("<4sIdIQ", raw)
    assert (magic, version, kappa, dim, count) == (b"HIDX", 1, 1.0, 2, 1)
    assert raw[28:30] == (1).to_bytes(2, "little") and raw[30:31] == b"x"
    assert np.array_equal(np.frombuffer(raw[31:43], "<f4"), p.astype(np.float32))
    import zlib
    assert struct.unpack("<I", raw[-4:])[0] == zlib.crc32(raw[:-4])


def test_every_corrupted_byte_is_detected(rng, tmp_path):
    index, _, _ = make_index(rng, 8, 3)
    path = tmp_path / "a.hidx"
    R.save_index(index, path)
    raw = path.read_bytes()
    for pos in range(len(raw)):
        bad = bytearray(raw)
        bad[pos] ^= 0x01
        path.write_bytes(bytes(bad))
        with pytest.raises(R.IndexFormatError):
            R.load_index(path)


def test_version_and_truncation_errors(rng, tmp_path):
    import zlib
    index, _, _ = make_index(rng, 4, 2)
    path = tmp_path / "a.hidx"
    R.save_index(index, path)
    raw = path.read_bytes()
    body = raw[:4] + struct.pack("<I", 7) + raw[8:-4]
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(R.VersionError):
        R.load_index(path)
    path.write_bytes(raw[:10])
    with pytest.raises(R.IndexFormatError):
        R.load_index(path)
    path.write_bytes(raw[:-4] + b"\0\0\0\0")
    with pytest.raises(R.ChecksumError):
        R.load_index(path)


def test_embedding_file_round_trip(rng, tmp_path):
    ids, pts = random_corpus(rng, 10, 3, 1.0)
    R.save_embeddings(R.EmbeddingSet(ids, pts, 1.0), tmp_path / "e.hvec")
    back = R.load_embeddings(tmp_path / "e.hvec")
    assert back.ids == ids and np.array_equal(back.points, pts.astype(np.float32))
    eu = R.euclidean_embedding_set(["a"], np.ones((1, 3)))
    R.save_embeddings(eu, tmp_path / "u.hvec")
    assert R.load_embeddings(tmp_path / "u.hvec").euclidean
    with pytest.raises(R.IndexFormatError):
        R.load_index(tmp_path / "u.hvec")


def test_prompt_matches_golden_file(fixtures_dir):
    texts = {
        "a": "The hyperboloid model places points on the upper sheet of a two-sheeted hyperboloid.",
        "b": "Geodesic distance grows with the time component.",
        "c": "General concepts sit near the origin.",
        "d": "unused",
    }
    prompt = R.assemble_rag_prompt("Where do general concepts sit?", ["a", "b", "c"], texts)
    golden = (Path(fixtures_dir) / "rag_prompt_3docs.txt").read_text()
    assert prompt + "\n" == golden
    assert prompt.startswith("Based on the following context, answer the question.\n")


def test_prompt_keeps_retrieval_order_and_checks_texts():
    texts = {"a": "A", "b": "B"}
    assert "B\n\nA" in R.assemble_rag_prompt("q", ["b", "a"], texts)
    with pytest.raises(KeyError):
        R.assemble_rag_prompt("q", ["c"], texts)
