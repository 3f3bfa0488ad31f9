import warnings

import numpy as np
import pytest

from hybridrec.ratings import make_catalog
from hybridrec.similarity import (MEASURES, SimilarityMatrix, check_measure, dense_knn_search,
                                  hashed_uniform, knn_search, merge_matrices,
                                  random_similarity_matrix, similarity)

import oracles

# Values worked out by hand on the three-user desk example.
D1_VALUES = [
    ("pearson", "i1", "i2", 1 / np.sqrt(2)),
    ("pearson", "i1", "i3", 1.0),
    ("extended_pearson", "i1", "i2", 0.5),
    ("extended_cosine", "i1", "i2", 23 / np.sqrt(41 * 14)),
    ("jaccard", "i1", "i2", 2 / 3),
    ("mix", "i1", "i2", (2 / 3) * (1 + 1 / np.sqrt(2)) / 2),
    ("extended_mix", "i1", "i2", 0.5),
    ("wpearson", "i1", "i3", 1 / 3),
    ("wpearson", "i1", "i2", (2 / 3) / np.sqrt(2)),
]


@pytest.mark.parametrize("measure,a,b,expected", D1_VALUES)
def test_d1_hand_values(d1, measure, a, b, expected):
    assert similarity(measure, a, b, d1) == pytest.approx(expected, abs=1e-12)
    sm = knn_search(d1, k=2, measure=measure)
    assert sm.get(d1.item_index(a), d1.item_index(b)) == pytest.approx(expected, abs=1e-12)


def test_d1_rounded_reference(d1):
    assert similarity("pearson", "i1", "i2", d1) == pytest.approx(0.7071, abs=1e-4)
    assert similarity("mix", "i1", "i2", d1) == pytest.approx(0.5690, abs=1e-4)
    assert similarity("wpearson", "i1", "i2", d1) == pytest.approx(0.4714, abs=1e-4)
    assert similarity("extended_cosine", "i1", "i2", d1) == pytest.approx(23 / 23.9583, abs=1e-4)


def test_d1_neighbour_lists(d1):
    sm = knn_search(d1, k=2, measure="wpearson")
    lists = sm.to_lists()
    assert [j for j, _ in lists["i1"]] == ["i2", "i3"]
    assert [w for _, w in lists["i1"]] == pytest.approx([0.4714045, 1 / 3])
    # negative weights are kept, ranked last
    assert lists["i2"][-1][0] == "i3" and lists["i2"][-1][1] < 0


def test_tie_broken_by_index(d1):
    sm = knn_search(d1, k=1, measure="extended_pearson")
    # EP(i1,i2) = EP(i1,i3) = 0.5 -> lower index wins
    nb, w = sm.neighbors_of(d1.item_index("i1"))
    assert list(d1.item_ids[nb]) == ["i2"] and w[0] == 0.5


def test_no_overlap_is_zero_and_excluded():
    from conftest import from_dict
    m = from_dict({"a": {"x": 4, "y": 2}, "b": {"z": 5, "y": 4}})
    assert similarity("pearson", "x", "z", m) == 0.0
    sm = knn_search(m, 5, "jaccard")
    assert m.item_index("z") not in sm.neighbors_of(m.item_index("x"))[0]


@pytest.mark.parametrize("measure", MEASURES)
def test_matches_brute_force(measure):
    from conftest import from_dict, random_logs
    rng = np.random.default_rng(11)
    logs = random_logs(rng, 25, 30, density=0.3)
    m = from_dict(logs)
    items = oracles.item_vectors(logs)
    order = list(m.item_ids)
    expected = oracles.knn(measure, items, 7, order)
    got = knn_search(m, 7, measure, block_size=8).to_lists()
    for i in order:
        assert [j for j, _ in got[i]] == [j for j, _ in expected[i]]
        assert [w for _, w in got[i]] == pytest.approx([w for _, w in expected[i]], abs=1e-10)


def test_worker_count_does_not_change_result():
    from conftest import from_dict, random_logs
    m = from_dict(random_logs(np.random.default_rng(4), 40, 60, 0.2))
    a = knn_search(m, 10, "wpearson", n_jobs=1, block_size=7)
    b = knn_search(m, 10, "wpearson", n_jobs=4, block_size=7)
    assert np.array_equal(a.indptr, b.indptr)
    assert np.array_equal(a.neighbors, b.neighbors)
    assert np.array_equal(a.weights, b.weights)


def test_catalog_similarity_aligned_on_log_items():
    cat = make_catalog([("a", "genre", "x"), ("a", "genre", "y"), ("b", "genre", "x"),
                        ("c", "genre", "z"), ("zz", "genre", "x")])
    ids = np.array(["a", "b", "c", "d"], dtype=object)
    sm = knn_search(cat, 3, "jaccard", item_ids=ids)
    assert list(sm.item_ids) == list(ids)
    assert sm.to_lists()["a"] == [("b", 0.5)]
    assert sm.to_lists()["d"] == []


def test_text_roundtrip(tmp_path, d1):
    sm = knn_search(d1, 2, "wpearson")
    sm.meta = {"scoring": "mean_based"}
    p = tmp_path / "s.txt"
    sm.save(p)
    head = p.read_text().splitlines()[0]
    assert "measure=wpearson" in head and "k=2" in head and f"fingerprint={d1.fingerprint()}" in head
    back = SimilarityMatrix.load(p)
    assert back.k == 2 and back.measure == "wpearson" and back.fingerprint == d1.fingerprint()
    assert back.meta == {"scoring": "mean_based"}
    assert np.array_equal(back.neighbors, sm.neighbors)
    assert np.array_equal(back.weights, sm.weights)


def test_reindex(d1):
    sm = knn_search(d1, 2, "wpearson")
    ids = np.array(["i0", "i1", "i2", "i3"], dtype=object)
    r = sm.reindex(ids)
    assert r.to_lists()["i1"] == sm.to_lists()["i1"]
    assert r.to_lists()["i0"] == []


def test_merge(d1):
    a = knn_search(d1, 2, "wpearson")
    b = knn_search(d1, 2, "jaccard")
    m = merge_matrices(a, b, 0.25, k=2)
    i1, i2 = d1.item_index("i1"), d1.item_index("i2")
    assert m.get(i1, i2) == pytest.approx(0.25 * a.get(i1, i2) + 0.75 * b.get(i1, i2))
    assert merge_matrices(a, b, 1.0).to_lists() == a.to_lists()
    with pytest.raises(ValueError):
        merge_matrices(a, b, 1.5)


def test_random_matrix_symmetric_and_bounded():
    ids = np.arange(40)
    sm = random_similarity_matrix(ids, 39, seed=3)
    W = sm.to_csr().toarray()
    assert np.allclose(W, W.T)
    off = W[~np.eye(40, dtype=bool)]
    assert (off > 0).all() and (off < 1).all()
    assert random_similarity_matrix(ids, 5, seed=3).to_lists() == random_similarity_matrix(ids, 5, seed=3).to_lists()
    assert hashed_uniform(1, 2, 5) == hashed_uniform(1, 5, 2)
    assert hashed_uniform(1, 2, 5, symmetric=False) != hashed_uniform(1, 5, 2, symmetric=False)


def test_dense_measures():
    X = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [-1.0, -2.0, -3.0], [0.5, 0.1, 0.9]])
    sm = dense_knn_search(X, 3, "cosine", np.arange(4))
    assert sm.get(0, 1) == pytest.approx(1.0)
    assert sm.get(0, 2) == pytest.approx(-1.0)
    e = dense_knn_search(X, 3, "neg_euclidean", np.arange(4))
    assert e.get(0, 1) == pytest.approx(1.0)
    assert e.neighbors_of(0)[0][0] == 1


def test_measure_names():
    assert check_measure("WeightedPearson") == "wpearson"
    assert check_measure("extended-mix") == "extended_mix"
    with pytest.raises(ValueError):
        check_measure("euclid")


def test_to_csr_leaves_lists_intact():
    from conftest import from_dict, random_logs
    m = from_dict(random_logs(np.random.default_rng(7), 30, 25, 0.35))
    sm = knn_search(m, 6, "wpearson")
    before = sm.to_lists()
    W = sm.to_csr()
    W[[3, 5]].multiply(W[[1, 2]])
    assert sm.to_lists() == before
    for i, lst in before.items():
        ws = [w for _, w in lst]
        assert ws == sorted(ws, reverse=True)
