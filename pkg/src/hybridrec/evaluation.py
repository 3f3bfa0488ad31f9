"""Offline evaluation: accuracy, ranking, discovery and impact, per segment.

A test log's segment is fixed by train-set counts of its user and item.
Ranking pairs are attributed to the user's segment only (``H`` or ``L``),
since the two items of a pair may fall in different item segments.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from .base import MAIN
from .knn import MEAN_BASED, ItemKNN, top_n_for_users
from .ratings import SEGMENTS, compute_segments, split_train_test
from .similarity import knn_search

SCHEMA_VERSION = 1
USER_SEGMENTS = ("H", "L")
RANKING_ATTRIBUTION = "user-segment-only"


# -- metrics ---------------------------------------------------------------------

def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError("predictions and truths differ in length")
    if pred.size == 0:
        raise ValueError("no predictions to score")
    return pred, truth


def rmse(pred, truth):
    pred, truth = _pair(pred, truth)
    return math.sqrt(math.fsum((pred - truth) ** 2) / pred.size)


def mae(pred, truth):
    pred, truth = _pair(pred, truth)
    return math.fsum(np.abs(pred - truth)) / pred.size


def rmse_in_out(pred, truth, main):
    """(RMSE over main-model predictions or None, RMSE over all, coverage)."""
    pred, truth = _pair(pred, truth)
    main = np.asarray(main, dtype=bool)
    out = rmse(pred, truth)
    rin = rmse(pred[main], truth[main]) if main.any() else None
    return rin, out, float(main.mean())


@dataclass
class RankingCounts:
    """Strict-preference pair counts: total, contradicted, tied by the system."""

    c_l: int = 0
    c_minus: int = 0
    c_u: int = 0

    def __iadd__(self, other):
        self.c_l += other.c_l
        self.c_minus += other.c_minus
        self.c_u += other.c_u
        return self

    @property
    def ndpm(self):
        return (2 * self.c_minus + self.c_u) / (2 * self.c_l) if self.c_l else None

    @property
    def percent_compatible(self):
        return (self.c_l - self.c_minus - self.c_u) / self.c_l if self.c_l else None


def _pair_counts(truth, pred):
    dt = np.sign(truth[:, None] - truth[None, :])
    dp = np.sign(pred[:, None] - pred[None, :])
    upper = np.triu(np.ones(dt.shape, dtype=bool), 1)
    strict = upper & (dt != 0)
    return RankingCounts(int(strict.sum()), int((strict & (dt * dp < 0)).sum()),
                         int((strict & (dp == 0)).sum()))


def ndpm(users, truth, pred):
    """Pooled NDPM over every user's strict-preference pairs.

    Returns ``(ndpm, percent_compatible, counts)``; the two values are None
    when no user has a strict pair. System ties use exact equality.
    """
    counts = ranking_counts(users, truth, pred)
    total = RankingCounts()
    for c in counts.values():
        total += c
    return total.ndpm, total.percent_compatible, total


def ranking_counts(users, truth, pred):
    """Per-user :class:`RankingCounts`."""
    users = np.asarray(users)
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    order = np.argsort(users, kind="stable")
    users, truth, pred = users[order], truth[order], pred[order]
    bounds = np.flatnonzero(np.r_[True, users[1:] != users[:-1], True])
    out = {}
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi - lo > 1:
            out[users[lo]] = _pair_counts(truth[lo:hi], pred[lo:hi])
    return out


@dataclass
class DiscoveryCounts:
    evaluable: int = 0
    relevant: int = 0
    smi: float = 0.0

    @property
    def precision(self):
        return self.relevant / self.evaluable if self.evaluable else None

    @property
    def ami(self):
        return self.smi / self.evaluable if self.evaluable else None


def evaluable_pairs(recommendations, train, test):
    """Recommended (user, item) index pairs that also appear in ``test``.

    ``recommendations`` maps user index -> item indices. Returns the user and
    item arrays of H together with the test ratings.
    """
    t = test.by_user
    hu, hi, hr = [], [], []
    for u, items in recommendations.items():
        lo, up = t.indptr[u], t.indptr[u + 1]
        if lo == up:
            continue
        row = dict(zip(t.indices[lo:up].tolist(), t.data[lo:up].tolist()))
        for i in np.asarray(items).tolist():
            if i in row:
                hu.append(u)
                hi.append(i)
                hr.append(row[i])
    return np.array(hu, dtype=np.int64), np.array(hi, dtype=np.int64), np.array(hr)


def precision(recommendations, train, test):
    """Share of evaluable recommendations rated at least the user's train mean."""
    u, i, r = evaluable_pairs(recommendations, train, test)
    if not len(u):
        return None
    return float(np.mean(r >= train.user_means[u]))


def precision_recall_f(recommendations, train, test, relevant_universe=None):
    """(precision, recall, F). Recall and F need ``relevant_universe``
    (user index -> set of relevant item indices) and are None otherwise."""
    p = precision(recommendations, train, test)
    if relevant_universe is None:
        return p, None, None
    u, i, r = evaluable_pairs(recommendations, train, test)
    hits = sum(1 for uu, ii, rr in zip(u, i, r)
               if rr >= train.user_means[uu] and ii in relevant_universe.get(uu, ()))
    total = sum(len(v) for v in relevant_universe.values())
    rec = hits / total if total else None
    f = 2 * p * rec / (p + rec) if p is not None and rec and (p + rec) > 0 else None
    return p, rec, f


def impact_values(u, i, r, train, catalog_size=None):
    """Signed, catalog-normalized inverse frequency of each evaluable pair."""
    size = train.n_items if catalog_size is None else catalog_size
    sign = np.where(r >= train.user_means[u], 1.0, -1.0)
    return size / np.maximum(train.item_counts[i], 1) * sign


def impact(recommendations, train, test, catalog_size=None):
    """(per-pair MI array, SMI, AMI); AMI is None when nothing is evaluable."""
    u, i, r = evaluable_pairs(recommendations, train, test)
    mi = impact_values(u, i, r, train, catalog_size)
    smi = math.fsum(mi)
    return mi, smi, (smi / len(mi) if len(mi) else None)


# -- report -------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    """Metric values keyed by (metric, segment) plus run metadata."""

    model: str = "model"
    fold: int = 0
    values: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def set(self, metric, segment, value):
        self.values[(metric, segment)] = None if value is None else float(value)

    def get(self, metric, segment="all"):
        return self.values.get((metric, segment))

    def update(self, other):
        self.values.update(other.values)
        self.meta.update(other.meta)
        return self

    def records(self):
        """One dict per metric x segment, in insertion order."""
        return [{"schema": SCHEMA_VERSION, "model": self.model, "fold": self.fold,
                 "metric": m, "segment": s, "value": v}
                for (m, s), v in self.values.items()]

    def to_text(self):
        lines = [f"schema = {SCHEMA_VERSION}", f"model = {self.model}", f"fold = {self.fold}"]
        lines += [f"meta.{k} = {v}" for k, v in self.meta.items()]
        for (m, s), v in self.values.items():
            lines.append(f"{m}.{s} = {'NA' if v is None else format(v, '.6g')}")
        return "\n".join(lines) + "\n"

    def write(self, prefix):
        """Write ``<prefix>.txt`` (key = value) and ``<prefix>.tsv`` (records)."""
        with open(f"{prefix}.txt", "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        with open(f"{prefix}.tsv", "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, ["schema", "model", "fold", "metric", "segment", "value"],
                               delimiter="\t")
            w.writeheader()
            for rec in self.records():
                rec["value"] = "NA" if rec["value"] is None else repr(rec["value"])
                w.writerow(rec)

    @classmethod
    def read_records(cls, path):
        """Reports from a ``.tsv`` records file, one per (model, fold)."""
        out = {}
        with open(path, encoding="utf-8") as fh:
            for rec in csv.DictReader(fh, delimiter="\t"):
                key = (rec["model"], int(rec["fold"]))
                rep = out.setdefault(key, cls(rec["model"], int(rec["fold"])))
                rep.set(rec["metric"], rec["segment"],
                        None if rec["value"] == "NA" else float(rec["value"]))
        return list(out.values())


def _meta(start, n):
    elapsed = time.perf_counter() - start
    return {"seconds": round(elapsed, 3), "throughput_per_s": round(n / elapsed, 1) if elapsed else None,
            "python": platform.python_version(), "ranking_attribution": RANKING_ATTRIBUTION}


def evaluate_scoring(model, train, test, grid=None, name=None, fold=0, estimated=False):
    """Accuracy (RMSE in/out, MAE, coverage) and ranking (NDPM, compatible
    preferences) globally and per segment."""
    start = time.perf_counter()
    grid = grid or compute_segments(train)
    rep = EvaluationReport(name or type(model).__name__, fold)
    u, i, r = np.asarray(test.users), np.asarray(test.items), np.asarray(test.ratings)
    pred, main = model.predict_indexed(u, i)
    labels = grid.label_pairs(u, i)
    for seg in ("all",) + SEGMENTS:
        sel = np.ones(len(r), dtype=bool) if seg == "all" else labels == seg
        rep.set("n_test", seg, int(sel.sum()))
        if not sel.any():
            for metric in ("rmse_out", "rmse_in", "mae", "coverage"):
                rep.set(metric, seg, None)
            rep.set("sse", seg, 0.0)
            continue
        rin, rout, cov = rmse_in_out(pred[sel], r[sel], main[sel])
        rep.set("rmse_out", seg, rout)
        rep.set("rmse_in", seg, rin)
        rep.set("mae", seg, mae(pred[sel], r[sel]))
        rep.set("coverage", seg, cov)
        rep.set("sse", seg, math.fsum((pred[sel] - r[sel]) ** 2))
        rep.set("n_main", seg, int(main[sel].sum()))
    if estimated:
        rep.set("rmse_estimated", "all", estimated_rmse(u, i, pred, r))

    per_user = ranking_counts(u, r, pred)
    user_seg = grid.user_segment(np.array(list(per_user), dtype=np.int64)) if per_user else []
    totals = {s: RankingCounts() for s in ("all",) + USER_SEGMENTS}
    for (uu, c), s in zip(per_user.items(), user_seg):
        totals["all"] += c
        totals[s] += c
    for s, c in totals.items():
        rep.set("ndpm", s, c.ndpm)
        rep.set("percent_compatible", s, c.percent_compatible)
        rep.set("pairs_total", s, c.c_l)
        rep.set("pairs_contradicted", s, c.c_minus)
        rep.set("pairs_tied", s, c.c_u)
    rep.meta.update(_meta(start, len(r)))
    rep.meta["train_fingerprint"] = train.fingerprint()
    rep.meta["test_fingerprint"] = test.fingerprint()
    return rep


def estimated_rmse(u, i, pred, truth):
    """RMSE reweighted by the inverse of the independence estimate of
    P((u, i) in test) = K(u)/|T| * K(i)/|T|; a diagnostic only."""
    ku = np.bincount(u)[u].astype(np.float64)
    ki = np.bincount(i)[i].astype(np.float64)
    w = 1.0 / (ku * ki)
    return math.sqrt(math.fsum(w * (pred - truth) ** 2) / math.fsum(w))


def evaluate_discovery(model, train, test, grid=None, n=10, strategy=None, name=None, fold=0,
                       catalog_size=None):
    """Precision and average impact of Top-``n`` lists, globally and per segment.

    ``strategy(model, users, n)`` returns item-index arrays per user; the
    default scores the whole catalog. Only users present in ``test`` are served.
    """
    start = time.perf_counter()
    grid = grid or compute_segments(train)
    strategy = strategy or top_n_for_users
    rep = EvaluationReport(name or type(model).__name__, fold)
    users = np.flatnonzero(test.user_counts > 0)
    lists = strategy(model, users, n)
    recs = dict(zip(users.tolist(), lists))
    known = train.by_user
    for u, items in recs.items():
        items = np.asarray(items, dtype=np.int64)
        row = known.indices[known.indptr[u]:known.indptr[u + 1]]
        if np.isin(items, row).any():
            raise AssertionError("a recommendation list contains a train-known item")
    hu, hi, hr = evaluable_pairs(recs, train, test)
    mi = impact_values(hu, hi, hr, train, catalog_size)
    relevant = hr >= train.user_means[hu] if len(hu) else np.zeros(0, dtype=bool)
    labels = grid.label_pairs(hu, hi)
    rep.set("n_recommended", "all", sum(len(x) for x in lists))
    for seg in ("all",) + SEGMENTS:
        sel = np.ones(len(hu), dtype=bool) if seg == "all" else labels == seg
        c = DiscoveryCounts(int(sel.sum()), int(relevant[sel].sum()), math.fsum(mi[sel]))
        rep.set("n_evaluable", seg, c.evaluable)
        rep.set("precision", seg, c.precision)
        rep.set("smi", seg, c.smi)
        rep.set("ami", seg, c.ami)
    rep.meta.update(_meta(start, len(users)))
    rep.meta["top_n"] = n
    return rep


# -- task winners -------------------------------------------------------------------

TASKS = {
    "decide": ("rmse_out", min),
    "compare": ("percent_compatible", max),
    "discover": ("precision", max),
    "explore": ("ami", max),
}


def winners_grid(reports):
    """{task: {segment: (best model, value)}} over the four item x user segments.

    Ranking metrics live on user segments; a cell uses its user half.
    """
    grid = {}
    for task, (metric, pick) in TASKS.items():
        grid[task] = {}
        for seg in SEGMENTS:
            key = seg[0] if metric == "percent_compatible" else seg
            cands = [(rep.get(metric, key), rep.model) for rep in reports
                     if rep.get(metric, key) is not None]
            if not cands:
                grid[task][seg] = (None, None)
                continue
            best = pick(cands, key=lambda t: t[0])
            grid[task][seg] = (best[1], best[0])
    return grid


def format_winners(grid):
    lines = ["task\t" + "\t".join(SEGMENTS)]
    for task, row in grid.items():
        cells = [f"{m} ({v:.4g})" if m is not None else "NA" for m, v in (row[s] for s in SEGMENTS)]
        lines.append(task + "\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"


# -- cold start ---------------------------------------------------------------------

COLD_MODES = ("collaborative", "thematic", "hybrid_light")


@dataclass(frozen=True)
class ColdStartPoint:
    n_users: int
    mode: str
    regime: str
    rmse_in: float | None
    rmse_out: float
    coverage: float


@dataclass
class ColdStartCurve:
    points: list = field(default_factory=list)

    def add(self, point):
        counts = sorted({p.n_users for p in self.points if p.mode == point.mode
                         and p.regime == point.regime})
        if counts and point.n_users <= counts[-1]:
            raise ValueError("user counts must be strictly increasing")
        self.points.append(point)

    def value(self, n_users, mode, regime, metric="rmse_out"):
        for p in self.points:
            if (p.n_users, p.mode, p.regime) == (n_users, mode, regime):
                return getattr(p, metric)
        raise KeyError((n_users, mode, regime))

    def user_counts(self, regime=None):
        return sorted({p.n_users for p in self.points if regime in (None, p.regime)})

    def to_text(self):
        lines = ["n_users\tmode\tregime\trmse_in\trmse_out\tcoverage"]
        for p in self.points:
            rin = "NA" if p.rmse_in is None else f"{p.rmse_in:.4f}"
            lines.append(f"{p.n_users}\t{p.mode}\t{p.regime}\t{rin}\t{p.rmse_out:.4f}\t{p.coverage:.4f}")
        return "\n".join(lines) + "\n"


def log_spaced(lo, hi, num):
    """Strictly increasing integers, roughly evenly spaced on a log axis."""
    vals = np.unique(np.round(np.geomspace(lo, hi, num)).astype(int))
    return [int(v) for v in vals]


def cold_start_experiment(logs, catalog, user_counts, regime="long", modes=COLD_MODES, seed=0,
                          k=100, test_fraction=0.1, min_support=10, n_jobs=1, curve=None):
    """RMSE of collaborative, thematic and hybrid-light models on nested user samples.

    Long regime: each sampled user keeps 90% of their logs for training.
    Short regime: train and test are swapped, so 10% trains. Thematic mode
    uses catalog Jaccard similarity with mono-user scoring; hybrid-light uses
    the same matrix with mean-based scoring; collaborative uses
    WeightedPearson on the sampled logs.
    """
    if regime not in ("long", "short"):
        raise ValueError("regime must be 'long' or 'short'")
    curve = curve or ColdStartCurve()
    rng = np.random.default_rng(seed)
    active = np.flatnonzero(logs.user_counts > 0)
    order = rng.permutation(active)
    theme = None
    if {"thematic", "hybrid_light"} & set(modes):
        theme = knn_search(catalog, k, "jaccard", n_jobs, item_ids=logs.item_ids)
    for n in sorted(user_counts):
        if n > len(order):
            raise ValueError(f"only {len(order)} users available, asked for {n}")
        chosen = np.zeros(logs.n_users, dtype=bool)
        chosen[order[:n]] = True
        sample = logs.subset(chosen[logs.users])
        a, b = split_train_test(sample, test_fraction, seed=seed + n)
        train, test = (a, b) if regime == "long" else (b, a)
        if len(train) == 0 or len(test) == 0:
            raise ValueError(f"empty train or test set with {n} users")
        for mode in modes:
            if mode == "collaborative":
                model = ItemKNN(k, "wpearson", MEAN_BASED, min_support=min_support, n_jobs=n_jobs)
                model.fit(train)
            elif mode == "thematic":
                model = ItemKNN(k, "jaccard", "mono_user", min_support=min_support).fit(train, similarity=theme)
            elif mode == "hybrid_light":
                model = ItemKNN(k, "jaccard", MEAN_BASED, min_support=min_support).fit(train, similarity=theme)
            else:
                raise ValueError(f"unknown mode {mode!r}")
            pred, main = model.predict_indexed(test.users, test.items)
            rin, rout, cov = rmse_in_out(pred, test.ratings, main)
            curve.add(ColdStartPoint(n, mode, regime, rin, rout, cov))
    return curve
