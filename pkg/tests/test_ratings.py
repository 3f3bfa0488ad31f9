import numpy as np
import pytest

from hybridrec.ratings import (NO_DATE, DataError, RatingsMatrix, compute_segments, kfold,
                               load_catalog, load_fold, load_logs, make_catalog, save_logs,
                               segment_of, split_train_test, transpose)

from conftest import from_dict


def test_dual_index_views(d1):
    assert d1.shape == (3, 3)
    u3 = d1.user_index("u3")
    items, ratings = d1.user_profile(u3)
    assert list(d1.item_ids[items]) == ["i2", "i3"]
    assert list(ratings) == [1.0, 5.0]
    users, r = d1.item_raters(d1.item_index("i1"))
    assert sorted(zip(d1.user_ids[users], r)) == [("u1", 5.0), ("u2", 4.0)]
    assert d1.by_user.nnz == d1.by_item.nnz == 7


def test_means_and_robust_means(d1):
    assert d1.item_mean("i1") == 4.5
    assert d1.user_mean("u2") == pytest.approx(10 / 3)
    assert d1.robust_item_mean("i1") is None
    assert d1.robust_item_mean("i1", min_support=2) == 4.5
    assert d1.global_mean == pytest.approx(24 / 7)


def test_unknown_ids(d1):
    with pytest.raises(KeyError):
        d1.user_index("nobody")
    assert list(d1.lookup_items(["i3", "zz"])) == [2, -1]


def test_duplicates_keep_latest_then_last():
    m = RatingsMatrix.from_records(["u", "u", "u"], ["i", "i", "i"], [1, 5, 3], dates=[2, 7, 7])
    assert len(m) == 1 and m.ratings[0] == 3
    m = RatingsMatrix.from_records(["u", "u"], ["i", "i"], [4, 2], dates=[9, 1])
    assert m.ratings[0] == 4


def test_scale_validation():
    with pytest.raises(DataError):
        RatingsMatrix.from_records(["u"], ["i"], [6])


def test_numeric_ids_sort_numerically():
    m = RatingsMatrix.from_records(["10", "9", "100"], ["a", "a", "a"], [1, 2, 3])
    assert list(m.user_ids) == ["9", "10", "100"]


def test_load_logs_formats(tmp_path):
    p = tmp_path / "logs.tsv"
    p.write_text("# comment\nu1\ti1\t4\t2020-01-02\nu1\ti2\t3\n\nu2\ti1\t5\t1577923200\n")
    m = load_logs(p)
    assert len(m) == 3
    assert m.dates[0] == 1577923200
    assert m.dates[1] == NO_DATE
    q = tmp_path / "ml.dat"
    q.write_text("1::10::5::978300760\n1::11::3::978302109\n")
    assert len(load_logs(q, fmt="movielens")) == 2


@pytest.mark.parametrize("line", ["u1\ti1", "u1\ti1\tx", "u1\ti1\t9", "u1\ti1\t3\tnot-a-date"])
def test_load_logs_reports_line_number(tmp_path, line):
    p = tmp_path / "bad.tsv"
    p.write_text("u0\ti0\t3\n" + line + "\n")
    with pytest.raises(DataError, match=r"bad.tsv:2"):
        load_logs(p)


def test_empty_file_is_data_error(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("")
    with pytest.raises(DataError):
        load_logs(p)


def test_save_load_roundtrip(tmp_path, d1):
    p = tmp_path / "x.tsv"
    save_logs(d1, p)
    m = load_logs(p)
    assert m.fingerprint() == d1.fingerprint()


def test_fold_shares_universe(tmp_path):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    a.write_text("u1\ti1\t4\nu2\ti2\t3\n")
    b.write_text("u1\ti3\t5\n")
    tr, te = load_fold(a, b)
    assert list(tr.item_ids) == list(te.item_ids) == ["i1", "i2", "i3"]
    assert tr.item_counts[2] == 0 and te.item_counts[2] == 1


def test_catalog(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("m1\tgenre\tcomedy\nm1\tgenre\tdrama\t0.5\nm2\tgenre\tdrama\n")
    cat = load_catalog(p)
    assert cat.descriptors_of("m1") == {"genre=comedy": 1.0, "genre=drama": 0.5}
    dm = cat.to_matrix(np.array(["m1", "m2", "m3"], dtype=object))
    assert dm.shape == (2, 3)
    assert dm.item_counts.tolist() == [2, 1, 0]
    with pytest.warns(UserWarning):
        cat = make_catalog([("a", "g", "x", 0.2), ("a", "g", "x", 0.7)])
    assert cat.weights.tolist() == [0.7]
    bad = tmp_path / "bad.tsv"
    bad.write_text("m1\tgenre\tcomedy\t1.5\n")
    with pytest.raises(DataError, match="bad.tsv:1"):
        load_catalog(bad)


def test_split_per_user_counts():
    rng = np.random.default_rng(3)
    logs = {u: {i: 3.0 for i in range(n)} for u, n in enumerate(rng.integers(1, 40, size=30))}
    m = from_dict(logs)
    tr, te = split_train_test(m, 0.1, seed=5)
    assert len(tr) + len(te) == len(m)
    for u in range(m.n_users):
        n = m.user_counts[u]
        assert te.user_counts[u] == min(int(np.floor(n * 0.1 + 0.5)), n - 1)
        assert tr.user_counts[u] >= 1
    tr2, te2 = split_train_test(m, 0.1, seed=5)
    assert tr2.fingerprint() == tr.fingerprint()


def test_kfold_partitions():
    rng = np.random.default_rng(0)
    logs = {u: {i: 4.0 for i in range(rng.integers(5, 20))} for u in range(15)}
    m = from_dict(logs)
    folds = kfold(m, 5, seed=1)
    total = sum(len(te) for _, te in folds)
    assert total == len(m)
    seen = np.concatenate([te.users * 1000 + te.items for _, te in folds])
    assert len(np.unique(seen)) == len(m)


def test_segments_mean_threshold():
    # item counts 3, 1, 1 -> mean 5/3; user counts 2, 2, 1 -> mean 5/3
    m = from_dict({"a": {"x": 1, "y": 2}, "b": {"x": 3, "z": 4}, "c": {"x": 5}})
    g = compute_segments(m)
    assert g.item_threshold == pytest.approx(5 / 3)
    assert segment_of(g, m, "a", "x") == "HP"
    assert segment_of(g, m, "a", "y") == "HU"
    assert segment_of(g, m, "c", "x") == "LP"
    assert segment_of(g, m, "ghost", "nothing") == "LU"
    stats = g.stats(m)
    assert sum(stats[f"n_ratings_{s}"] for s in ("HP", "HU", "LP", "LU")) == len(m)


def test_transpose(d1):
    t = transpose(d1)
    assert t.shape == (3, 3)
    assert t.user_mean("i1") == 4.5
