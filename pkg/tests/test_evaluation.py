import numpy as np
import pytest

from hybridrec.base import DefaultPredictor, Recommender
from hybridrec.evaluation import (ColdStartCurve, ColdStartPoint, EvaluationReport,
                                  RankingCounts, cold_start_experiment, evaluate_discovery,
                                  evaluate_scoring, format_winners, impact, impact_values, log_spaced,
                                  mae, ndpm, precision, precision_recall_f, ranking_counts, rmse,
                                  rmse_in_out, winners_grid)
from hybridrec.knn import ItemKNN
from hybridrec.ratings import SEGMENTS, RatingsMatrix, make_catalog, split_train_test

import oracles
from conftest import from_dict, random_logs, to_dict


def test_rmse_mae():
    assert rmse([4, 3], [5, 3]) == pytest.approx(0.7071, abs=1e-4)
    assert mae([4, 3], [5, 3]) == 0.5
    assert rmse([1, 2], [1, 2]) == 0.0
    with pytest.raises(ValueError):
        rmse([], [])
    with pytest.raises(ValueError):
        mae([1], [1, 2])
    r = np.random.default_rng(0).uniform(1, 5, 50)
    assert rmse(np.full(50, 3.0), r) == pytest.approx(np.sqrt(np.mean((3.0 - r) ** 2)))
    perm = np.random.default_rng(1).permutation(50)
    assert rmse(r[::-1][perm], r[perm]) == pytest.approx(rmse(r[::-1], r))


def test_rmse_in_out():
    rin, rout, cov = rmse_in_out([4, 3], [5, 3], [True, True])
    assert rin == rout and cov == 1.0
    rin, rout, cov = rmse_in_out([4, 3], [5, 3], [False, False])
    assert rin is None and cov == 0.0


def test_ndpm_example():
    value, compat, c = ndpm(["u"] * 3, [5, 3, 1], [2, 2, 4])
    assert (c.c_l, c.c_minus, c.c_u) == (3, 2, 1)
    assert value == pytest.approx(5 / 6)
    assert compat == 0.0


def test_ndpm_limits():
    truth = np.array([5, 4, 3, 2, 1, 3])
    users = np.zeros(6)
    assert ndpm(users, truth, truth * 2.0)[0] == 0.0
    assert ndpm(users, truth, -truth)[0] == 1.0
    assert ndpm(users, truth, np.full(6, 3.3))[0] == 0.5
    assert ndpm([0, 0], [3, 3], [1, 2])[0] is None
    assert RankingCounts().ndpm is None


def test_precision_and_impact():
    train = from_dict({"u": {"a": 3, "b": 4}, "v": {"c": 5}})
    test = RatingsMatrix.from_records(["u", "u", "u", "v"], ["c", "d", "e", "a"], [4, 4, 2, 5],
                                      user_ids=train.user_ids, item_ids=np.array(list("abcde"), dtype=object))
    train = RatingsMatrix.from_records(train.user_ids[train.users], train.item_ids[train.items],
                                       train.ratings, user_ids=test.user_ids, item_ids=test.item_ids)
    recs = {0: [2, 3, 4, 1]}
    assert precision(recs, train, test) == pytest.approx(2 / 3)
    p, r, f = precision_recall_f(recs, train, test, {0: {2, 3, 4}})
    assert r == pytest.approx(2 / 3) and f == pytest.approx(2 / 3)
    assert precision({0: [4]}, train, test) == 0.0
    assert precision({1: [2]}, train, test) is None
    mi, smi, ami = impact({0: [4]}, train, test, catalog_size=1000)
    assert mi.tolist() == [-1000.0]


def test_mi_value():
    logs = {u: {"x": 4.0} for u in range(50)}
    logs[0]["y"] = 2.0
    m = from_dict(logs)
    u, i = np.array([1]), np.array([m.item_index("x")])
    assert impact_values(u, i, np.array([5.0]), m, 1000)[0] == pytest.approx(20.0)
    # rating equal to the user's mean counts as liked
    assert impact_values(u, i, np.array([4.0]), m, 1000)[0] > 0
    assert impact_values(np.array([0]), np.array([m.item_index("y")]), np.array([1.0]), m, 1)[0] == -1.0


def _fold(seed=0, n_users=40, n_items=30):
    m = from_dict(random_logs(np.random.default_rng(seed), n_users, n_items, 0.3))
    return split_train_test(m, 0.2, seed=seed)


def test_segment_aggregation():
    train, test = _fold()
    rep = evaluate_scoring(ItemKNN(k=5).fit(train), train, test)
    assert sum(rep.get("sse", s) for s in SEGMENTS) == pytest.approx(rep.get("sse"))
    assert sum(rep.get("n_test", s) for s in SEGMENTS) == len(test)
    assert rep.get("pairs_total", "H") + rep.get("pairs_total", "L") == rep.get("pairs_total")
    assert rep.get("rmse_out") == pytest.approx(np.sqrt(rep.get("sse") / len(test)))
    disc = evaluate_discovery(ItemKNN(k=5).fit(train), train, test, n=5)
    assert sum(disc.get("n_evaluable", s) for s in SEGMENTS) == disc.get("n_evaluable")
    assert disc.get("smi") == pytest.approx(sum(disc.get("smi", s) for s in SEGMENTS))


class Perfect(Recommender):
    def _fit(self, train, test=None):
        self.truth_ = test

    def predict_indexed(self, u, i):
        vals = np.asarray(self.truth_.by_user[u, i]).ravel()
        return vals, np.ones(len(u), dtype=bool)


def test_perfect_predictor():
    train, test = _fold(1)
    rep = evaluate_scoring(Perfect().fit(train, test=test), train, test)
    assert rep.get("rmse_out") == 0 and rep.get("ndpm") == 0 and rep.get("percent_compatible") == 1


def test_oracle_equivalence_small():
    rng = np.random.default_rng(12)
    for trial in range(10):
        logs = random_logs(rng, 5, 6, 0.6)
        m = from_dict(logs)
        if len(m) > 20:
            continue
        train, test = split_train_test(m, 0.3, seed=trial)
        if len(test) == 0:
            continue
        model = DefaultPredictor().fit(train)
        rep = evaluate_scoring(model, train, test)
        pred = model.predict_indexed(test.users, test.items)[0]
        tr, te = to_dict(train), to_dict(test)
        exp = [oracles.default(tr, u, i) for u, i, _ in test.triples()]
        assert pred == pytest.approx(exp)
        assert rep.get("rmse_out") == pytest.approx(
            np.sqrt(np.mean([(p - r) ** 2 for p, (_, _, r) in zip(exp, test.triples())])))
        per_user = {}
        for (u, i, r), p in zip(test.triples(), exp):
            per_user.setdefault(u, []).append((r, p))
        cl, cm, cu = oracles.ndpm_counts(per_user)
        assert (rep.get("pairs_total"), rep.get("pairs_contradicted"), rep.get("pairs_tied")) == (cl, cm, cu)
        disc = evaluate_discovery(model, train, test, n=3)
        from hybridrec.knn import top_n_for_users
        users = np.flatnonzero(test.user_counts > 0)
        lists = top_n_for_users(model, users, 3)
        recs = {train.user_ids[u]: list(train.item_ids[l]) for u, l in zip(users, lists)}
        h, p, ami = oracles.discovery(recs, tr, te, train.n_items)
        assert disc.get("n_evaluable") == h
        assert disc.get("precision") == (pytest.approx(p) if p is not None else None)
        assert disc.get("ami") == (pytest.approx(ami) if ami is not None else None)


def test_ranking_counts_per_user():
    counts = ranking_counts([1, 1, 2, 2, 2], [5, 3, 1, 2, 3], [4, 4, 1, 2, 3])
    assert counts[1] == RankingCounts(1, 0, 1)
    assert counts[2] == RankingCounts(3, 0, 0)


def test_report_write_read(tmp_path):
    rep = EvaluationReport("knn", 2)
    rep.set("rmse_out", "all", 0.9)
    rep.set("precision", "HP", None)
    rep.meta["seed"] = 7
    rep.write(tmp_path / "r")
    text = (tmp_path / "r.txt").read_text()
    assert "rmse_out.all = 0.9" in text and "precision.HP = NA" in text and "meta.seed = 7" in text
    back = EvaluationReport.read_records(tmp_path / "r.tsv")
    assert len(back) == 1 and back[0].values == rep.values and back[0].fold == 2


def test_winners_grid():
    a, b = EvaluationReport("a"), EvaluationReport("b")
    for seg in SEGMENTS:
        a.set("rmse_out", seg, 0.9)
        b.set("rmse_out", seg, 0.8 if seg == "HP" else 1.0)
        a.set("precision", seg, 0.5)
    a.set("percent_compatible", "H", 0.7)
    b.set("percent_compatible", "H", 0.8)
    g = winners_grid([a, b])
    assert g["decide"]["HP"] == ("b", 0.8) and g["decide"]["LU"] == ("a", 0.9)
    assert g["compare"]["HU"] == ("b", 0.8) and g["compare"]["LP"] == (None, None)
    assert g["discover"]["LU"] == ("a", 0.5)
    text = format_winners(g)
    assert text.splitlines()[0].split("\t")[1:] == list(SEGMENTS)


def test_cold_start_curve():
    c = ColdStartCurve()
    c.add(ColdStartPoint(10, "thematic", "long", None, 1.0, 0.0))
    c.add(ColdStartPoint(20, "thematic", "long", 0.9, 0.95, 0.5))
    c.add(ColdStartPoint(10, "collaborative", "long", None, 1.1, 0.0))
    with pytest.raises(ValueError):
        c.add(ColdStartPoint(20, "thematic", "long", 0.9, 0.95, 0.5))
    assert c.value(20, "thematic", "long") == 0.95
    assert c.user_counts() == [10, 20]
    assert log_spaced(10, 1000, 5) == [10, 32, 100, 316, 1000]


def test_cold_start_experiment_runs():
    rng = np.random.default_rng(3)
    m = from_dict(random_logs(rng, 50, 20, 0.5))
    cat = make_catalog([(i, "genre", f"g{int(i) % 4}") for i in m.item_ids])
    curve = cold_start_experiment(m, cat, [5, 20, 50], "long", k=10)
    assert len(curve.points) == 9
    short = cold_start_experiment(m, cat, [5, 50], "short", k=10)
    assert {p.regime for p in short.points} == {"short"}
    with pytest.raises(ValueError):
        cold_start_experiment(m, cat, [500], "long")
