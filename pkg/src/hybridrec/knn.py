"""Item-based KNN recommendation on top of a similarity matrix.

Scalar helpers (``predict_mean_based``, ``predict_mono_user``, ...) work on
caller-owned :class:`UserProfile` objects so a profile edit takes effect on
the next call. :class:`ItemKNN` is the batch estimator used for evaluation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .base import (COLLABORATIVE, DEFAULT, MAIN, MONO_USER, Recommender,
                   default_values)
from .ratings import NO_DATE
from .similarity import SimilarityMatrix, knn_search
from .validation import check_fitted

MEAN_BASED = "mean_based"
SCORINGS = (MEAN_BASED, MONO_USER)

TAIL_MODES = ("any", "short_head", "long_tail")
RECENCY_MODES = ("any", "recent_first")


def _id_key(x):
    """Sort key giving numeric order for integer-like ids."""
    try:
        return (0, int(x), "")
    except (TypeError, ValueError):
        return (1, 0, str(x))


@dataclass
class UserProfile:
    """A user's rated items; mutable and owned by the caller."""

    user: object
    items: list = field(default_factory=list)
    ratings: list = field(default_factory=list)
    dates: list = field(default_factory=list)

    def __post_init__(self):
        self.items = list(self.items)
        self.ratings = [float(r) for r in self.ratings]
        if not self.dates:
            self.dates = [NO_DATE] * len(self.items)
        self.dates = list(self.dates)
        if len(self.items) != len(self.ratings) or len(self.items) != len(self.dates):
            raise ValueError("items, ratings and dates must have equal length")
        if len(set(self.items)) != len(self.items):
            raise ValueError("profile items must be unique")

    @classmethod
    def from_matrix(cls, m, user):
        """Profile of ``user`` (an id) as stored in ``m``."""
        u = m.user_index(user)
        idx, r = m.user_profile(u)
        return cls(user, list(m.item_ids[idx]), r.tolist(), m.user_dates(u).tolist())

    def __len__(self):
        return len(self.items)

    @property
    def mean(self):
        return float(np.mean(self.ratings)) if self.ratings else float("nan")

    def rate(self, item, rating, date=NO_DATE):
        """Add or overwrite one rating."""
        if item in self.items:
            k = self.items.index(item)
            self.ratings[k], self.dates[k] = float(rating), date
        else:
            self.items.append(item)
            self.ratings.append(float(rating))
            self.dates.append(date)

    def indexed(self, m):
        """(item indices, ratings, dates) for items known to ``m``."""
        idx = m.lookup_items(self.items)
        keep = idx >= 0
        return (idx[keep], np.asarray(self.ratings, dtype=np.float64)[keep],
                np.asarray(self.dates, dtype=np.int64)[keep])


@dataclass(frozen=True)
class Prediction:
    value: float
    origin: str
    confidence: float | None = None
    explanation: tuple | None = None     # (profile item id, similarity)

    @property
    def is_main(self):
        return self.origin == MAIN


# -- scalar predictors ------------------------------------------------------

def default_predict(u, i, m, mode=COLLABORATIVE, min_support=10):
    """Default cascade for a profile (or user id) and an item id."""
    if isinstance(u, UserProfile):
        um = u.mean
    else:
        k = m._user_index.get(u, -1)
        um = m.user_means[k] if k >= 0 else np.nan
    ii = m._item_index.get(i, -1)
    value, _ = default_values(m, np.array([0]), np.array([ii]), mode, min_support,
                              user_means=np.array([um]))
    return Prediction(float(value[0]), DEFAULT)


def _contributions(profile, i, sm, m):
    """[(profile item index, similarity, rating)] over profile and neighbourhood."""
    pidx, pr, _ = profile.indexed(m)
    rated = dict(zip(pidx.tolist(), pr.tolist()))
    nb, w = sm.neighbors_of(i)
    return [(j, wj, rated[j]) for j, wj in zip(nb.tolist(), w.tolist()) if j in rated]


def _finish(value, terms, m):
    lo, hi = m.scale
    j, s, _ = max(terms, key=lambda t: (t[1], -t[0]))
    conf = min(max(s, 0.0), 1.0)
    return Prediction(float(min(max(value, lo), hi)), MAIN, conf, (m.item_ids[j], float(s)))


def predict_mean_based(u, i, sm, m, min_support=10):
    """Item mean plus similarity-weighted deviations of the user's ratings."""
    ii = m._item_index.get(i, -1)
    if ii < 0 or not np.isfinite(m.item_means[ii]):
        return default_predict(u, i, m, COLLABORATIVE, min_support)
    terms = _contributions(u, ii, sm, m)
    den = sum(abs(s) for _, s, _ in terms)
    if den == 0:
        return default_predict(u, i, m, COLLABORATIVE, min_support)
    num = sum(s * (r - m.item_means[j]) for j, s, r in terms)
    return _finish(m.item_means[ii] + num / den, terms, m)


def predict_mono_user(u, i, sm, m):
    """Similarity-weighted mean of the user's own ratings.

    ``m`` is only used for the id universe and the scale.
    """
    ii = m._item_index.get(i, -1)
    terms = _contributions(u, ii, sm, m) if ii >= 0 else []
    den = sum(abs(s) for _, s, _ in terms)
    if den == 0:
        lo, hi = m.scale
        value = u.mean if len(u) else (lo + hi) / 2.0
        return Prediction(float(min(max(value, lo), hi)), DEFAULT)
    num = sum(s * r for _, s, r in terms)
    return _finish(num / den, terms, m)


# -- preferences --------------------------------------------------------------

class PreferenceProfile:
    """Descriptor preferences on the asymmetric scale [-100 * max, max].

    The long negative side lets a single strong dislike veto an item.
    """

    def __init__(self, max_value=2.0, prefs=None):
        if max_value <= 0:
            raise ValueError("max_value must be positive")
        self.max_value = float(max_value)
        self.min_value = -100.0 * self.max_value
        self._prefs = {}
        for d, v in (prefs or {}).items():
            self[d] = v

    def __setitem__(self, descriptor, value):
        value = float(value)
        if not self.min_value <= value <= self.max_value:
            raise ValueError(f"preference {value} outside [{self.min_value}, {self.max_value}]")
        self._prefs[descriptor] = value

    def __getitem__(self, descriptor):
        return self._prefs[descriptor]

    def __contains__(self, descriptor):
        return descriptor in self._prefs

    def __len__(self):
        return len(self._prefs)

    def items(self):
        return self._prefs.items()


def predict_from_preferences(prefs, item, catalog, attribute_weights=None):
    """Weighted mean of the preferences for the item's descriptors.

    Each term is weighted by the descriptor's catalog weight times its
    attribute weight (default 1). ``None`` when nothing overlaps or the
    weights sum to zero.
    """
    attribute_weights = attribute_weights or {}
    num = den = 0.0
    for d, w in catalog.descriptors_of(item).items():
        if d not in prefs:
            continue
        a = catalog.attribute_of.get(d, d.split("=", 1)[0])
        ww = w * float(attribute_weights.get(a, 1.0))
        num += prefs[d] * ww
        den += ww
    if den == 0:
        return None
    return num / den


# -- ranking ------------------------------------------------------------------

def rank_list(u, items, predictor, veto=None, sm=None, m=None, max_similarity=None):
    """Items sorted by predicted value, descending; ties by ascending id.

    ``predictor(u, item)`` returns a number or a :class:`Prediction`.
    ``veto(item)`` returning True drops the item. With ``max_similarity``
    (and ``sm``, ``m``), items too similar to a profile item are dropped.
    """
    keep = list(items)
    if veto is not None:
        keep = [i for i in keep if not veto(i)]
    if max_similarity is not None:
        if sm is None or m is None:
            raise ValueError("near-duplicate suppression needs sm and m")
        pidx = set(u.indexed(m)[0].tolist())

        def too_close(i):
            k = m._item_index.get(i, -1)
            if k < 0:
                return False
            nb, w = sm.neighbors_of(k)
            return any(j in pidx and s > max_similarity for j, s in zip(nb.tolist(), w.tolist()))
        keep = [i for i in keep if not too_close(i)]
    scored = []
    for i in keep:
        p = predictor(u, i)
        scored.append((p.value if isinstance(p, Prediction) else float(p), i))
    scored.sort(key=lambda t: (-t[0], _id_key(t[1])))
    return [i for _, i in scored]


def similar_items(i, n, sm):
    """First ``min(n, K)`` neighbours of item id ``i`` as (id, weight)."""
    k = np.flatnonzero(sm.item_ids == i) if len(sm.item_ids) else []
    if not len(k):
        warnings.warn(f"item {i!r} is not in the similarity matrix", stacklevel=2)
        return []
    nb, w = sm.neighbors_of(int(k[0]))
    return [(sm.item_ids[j], float(x)) for j, x in zip(nb[:n], w[:n])]


@dataclass
class TopNRequest:
    n: int = 10
    seeds: int = 10             # G
    candidates: int = 100       # C
    diversity: int = 1          # D
    tail_mode: str = "any"
    tail_split: float = 0.2
    recency: str = "any"
    seed: int = 0

    def __post_init__(self):
        for name in ("n", "seeds", "candidates", "diversity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tail_mode not in TAIL_MODES:
            raise ValueError(f"tail_mode must be one of {TAIL_MODES}")
        if self.recency not in RECENCY_MODES:
            raise ValueError(f"recency must be one of {RECENCY_MODES}")
        if not 0.0 < self.tail_split < 1.0:
            raise ValueError("tail_split must lie in (0, 1)")


def short_head(counts, fraction=0.2):
    """Mask of the ``fraction`` most-rated items (ties by index) among rated ones."""
    counts = np.asarray(counts)
    n_head = int(math.ceil(fraction * int((counts > 0).sum())))
    order = np.lexsort((np.arange(len(counts)), -counts))
    mask = np.zeros(len(counts), dtype=bool)
    mask[order[:n_head]] = True
    return mask


def popularity_top_n(m, n, exclude=(), min_support=10):
    """Items with the best robust mean (ties by index), minus ``exclude``."""
    means = m.robust_item_means(min_support)
    ok = np.isfinite(means)
    ok[list(exclude)] = False
    idx = np.flatnonzero(ok)
    order = np.lexsort((idx, -means[idx]))
    return idx[order[:n]]


def profile_scores(u, items, sm, m, scoring=MEAN_BASED, min_support=10):
    """Vectorized scores of item indices for one profile; (values, main mask)."""
    items = np.asarray(items, dtype=np.int64)
    pidx, pr, _ = u.indexed(m)
    W = sm.to_csr()[items]
    x = np.zeros(m.n_items)
    ind = np.zeros(m.n_items)
    ind[pidx] = 1.0
    if scoring == MEAN_BASED:
        x[pidx] = pr - m.item_means[pidx]
    else:
        x[pidx] = pr
    num = W @ x
    den = abs(W) @ ind
    lo, hi = m.scale
    main = den > 0
    if scoring == MEAN_BASED:
        main &= np.isfinite(m.item_means[items])
        fb, _ = default_values(m, np.zeros(len(items), np.int64), items, COLLABORATIVE,
                               min_support, user_means=np.full(len(items), u.mean))
        base = m.item_means[items]
    else:
        fb, _ = default_values(m, np.zeros(len(items), np.int64), items, MONO_USER,
                               min_support, user_means=np.full(len(items), u.mean))
        base = 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(main, base + num / np.where(main, den, 1.0), fb)
    return np.clip(values, lo, hi), main


def recommend_top_n(u, req, sm, m, grid=None, scorer=None):
    """Seed-based personalized Top-N (item ids).

    Seeds are up to ``req.seeds`` profile items rated above the user's mean
    (all rated items if none is), picked at random or most recent first.
    Each seed contributes up to ``req.candidates`` neighbours passing the
    tail filter; known items are dropped; the rest is ranked by ``scorer``
    (mean-based by default) and ``req.n`` items are drawn from the first
    ``req.n * req.diversity``. An empty profile gets the robust-mean Top-N.
    """
    rng = np.random.default_rng(req.seed)
    pidx, pr, pdates = u.indexed(m)
    if len(pidx) == 0:
        return list(m.item_ids[popularity_top_n(m, req.n)])

    above = pr > pr.mean()
    pool = np.flatnonzero(above) if above.any() else np.arange(len(pidx))
    pool = pool[rng.permutation(len(pool))]
    if req.recency == "recent_first":
        pool = pool[np.argsort(-pdates[pool], kind="stable")]
    seeds = pidx[pool[: req.seeds]]

    counts = grid.item_counts if grid is not None else m.item_counts
    head = short_head(counts, req.tail_split)
    known = set(pidx.tolist())
    cand, seen = [], set()
    for s in seeds:
        nb, _ = sm.neighbors_of(int(s))
        if req.tail_mode == "short_head":
            nb = nb[head[nb]]
        elif req.tail_mode == "long_tail":
            nb = nb[~head[nb]]
        for j in nb[: req.candidates].tolist():
            if j not in known and j not in seen:
                seen.add(j)
                cand.append(j)
    if not cand:
        return []
    cand = np.array(cand, dtype=np.int64)
    if scorer is None:
        scores, _ = profile_scores(u, cand, sm, m)
    else:
        scores = np.asarray(scorer(u, cand), dtype=np.float64)
    ranked = cand[np.lexsort((cand, -scores))]
    window = ranked[: req.n * req.diversity]
    if req.diversity > 1 and len(window) > req.n:
        pick = np.sort(rng.choice(len(window), size=req.n, replace=False))
        window = window[pick]
    return list(m.item_ids[window[: req.n]])


def top_n_for_users(model, users, n=10, block=256):
    """Full-catalog Top-``n`` item indices for each user index.

    Every unseen catalog item is scored; items whose score depends on the
    item itself come first, then by descending score, then by index. Users
    without train logs get the robust-mean popularity list.
    """
    check_fitted(model)
    train = model.train_
    users = np.asarray(users, dtype=np.int64)
    lo, hi = train.scale
    lift = (hi - lo) + 1.0
    fallback = None
    out = []
    for s in range(0, len(users), block):
        ub = users[s: s + block]
        scores, evidence = model.score_users(ub)
        key = scores + np.where(evidence, lift, 0.0)
        known = train.by_user[ub]
        rows = np.repeat(np.arange(len(ub)), np.diff(known.indptr))
        key[rows, known.indices] = -np.inf
        order = np.argsort(-key, axis=1, kind="stable")[:, :n]
        for r, u in enumerate(ub):
            if train.user_counts[u] == 0:
                if fallback is None:
                    fallback = popularity_top_n(train, n)
                out.append(fallback)
                continue
            row = order[r]
            out.append(row[np.isfinite(key[r, row])])
    return out


def full_catalog_top_n(model, u, n=10):
    """Top-``n`` unseen item ids for user index ``u`` over the whole catalog."""
    idx = top_n_for_users(model, [u], n)[0]
    return list(model.train_.item_ids[idx])


# -- estimator ----------------------------------------------------------------

class ItemKNN(Recommender):
    """Item-item KNN rating predictor.

    Parameters
    ----------
    k : int
        Neighbours kept per item.
    measure : str
        Similarity measure used when ``fit`` computes the matrix itself.
    scoring : {"mean_based", "mono_user"}
        Scoring formula. Mono-user falls back to the user's mean only.
    fallback : str, optional
        Default-cascade mode; derived from ``scoring`` when None.
    n_jobs : int
        Worker threads for the similarity search.
    """

    def __init__(self, k=200, measure="wpearson", scoring=MEAN_BASED, fallback=None,
                 min_support=10, n_jobs=1, chunk_size=20000):
        self.k = k
        self.measure = measure
        self.scoring = scoring
        self.fallback = fallback
        self.min_support = min_support
        self.n_jobs = n_jobs
        self.chunk_size = chunk_size

    def _fallback(self):
        if self.fallback is not None:
            return self.fallback, self.min_support
        return (COLLABORATIVE if self.scoring == MEAN_BASED else MONO_USER), self.min_support

    def _fit(self, train, similarity=None, catalog=None):
        """Use ``similarity`` if given, else search on ``catalog`` or on ``train``."""
        if self.scoring not in SCORINGS:
            raise ValueError(f"scoring must be one of {SCORINGS}")
        if similarity is None:
            source = catalog if catalog is not None else train
            similarity = knn_search(source, self.k, self.measure, self.n_jobs,
                                    item_ids=train.item_ids)
        elif not np.array_equal(similarity.item_ids, train.item_ids):
            raise ValueError("similarity matrix and train set index different items")
        self.similarity_ = similarity
        W = similarity.to_csr()
        self.W_ = W
        self.absW_ = abs(W)
        self.WT_ = W.T.tocsr()
        self.absWT_ = self.absW_.T.tocsr()
        X = train.by_user.astype(np.float64).tocsr()
        ind = X.copy()
        ind.data[:] = 1.0
        if self.scoring == MEAN_BASED:
            X.data = X.data - train.item_means[X.indices]
        self.X_ = X
        self.ind_ = ind

    def _combine(self, num, den, items, fb):
        lo, hi = self.scale_
        main = den > 0
        if self.scoring == MEAN_BASED:
            base = self.train_.item_means[items]
            main &= np.isfinite(base)
        else:
            base = 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            values = np.where(main, base + num / np.where(main, den, 1.0), fb)
        return np.clip(values, lo, hi), main

    def predict_indexed(self, u, i):
        check_fitted(self)
        u = np.asarray(u, dtype=np.int64)
        i = np.asarray(i, dtype=np.int64)
        fb, _ = default_values(self.train_, u, i, *self._fallback())
        values, main = fb.copy(), np.zeros(len(u), dtype=bool)
        known = np.flatnonzero((u >= 0) & (i >= 0))
        for s in range(0, len(known), self.chunk_size):
            sel = known[s: s + self.chunk_size]
            Wi = self.W_[i[sel]]
            num = np.asarray(Wi.multiply(self.X_[u[sel]]).sum(axis=1)).ravel()
            den = np.asarray(abs(Wi).multiply(self.ind_[u[sel]]).sum(axis=1)).ravel()
            values[sel], main[sel] = self._combine(num, den, i[sel], fb[sel])
        return values, main

    def score_users(self, users):
        check_fitted(self)
        users = np.asarray(users, dtype=np.int64)
        n = self.train_.n_items
        num = (self.X_[users] @ self.WT_).toarray()
        den = (self.ind_[users] @ self.absWT_).toarray()
        uu = np.repeat(users, n)
        ii = np.tile(np.arange(n), len(users))
        fb, info = default_values(self.train_, uu, ii, *self._fallback())
        values, main = self._combine(num.ravel(), den.ravel(), ii, fb)
        shape = (len(users), n)
        return values.reshape(shape), (main | info).reshape(shape)

    def similar_items(self, item, n=10):
        check_fitted(self)
        return similar_items(item, n, self.similarity_)

    def recommend_seeded(self, user, req=None, grid=None):
        """Seed-based Top-N for a known user id using this model's scoring."""
        check_fitted(self)
        profile = UserProfile.from_matrix(self.train_, user)
        sm, m, scoring = self.similarity_, self.train_, self.scoring
        return recommend_top_n(profile, req or TopNRequest(), sm, m, grid,
                               scorer=lambda p, c: profile_scores(p, c, sm, m, scoring,
                                                                  self.min_support)[0])
