"""Estimator protocol shared by every rating predictor, plus the two baselines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .ratings import RatingsMatrix
from .similarity import hashed_uniform
from .validation import check_fitted, check_pairs, check_ratings

MAIN = "MainModel"
DEFAULT = "DefaultPredictor"

COLLABORATIVE = "collaborative"
MONO_USER = "mono_user"


def default_values(train, u, i, mode=COLLABORATIVE, min_support=10, user_means=None):
    """Vectorized default-predictor cascade.

    Collaborative mode: ``(mean_u + robust mean_i) / 2``, else ``mean_u``,
    else ``mean_i``, else the global mean. Mono-user mode: ``mean_u``, else
    the scale midpoint. Negative indices mean "unknown". Returns the values
    and a mask telling which values depend on the item.

    ``user_means`` overrides the train user means (caller-owned profiles).
    """
    u = np.asarray(u, dtype=np.int64)
    i = np.asarray(i, dtype=np.int64)
    if user_means is None:
        um_all = train.user_means
        um = np.where(u >= 0, um_all[np.maximum(u, 0)] if len(um_all) else np.nan, np.nan)
    else:
        um = np.broadcast_to(np.asarray(user_means, dtype=np.float64), u.shape)
    lo, hi = train.scale
    if mode == MONO_USER:
        out = np.where(np.isfinite(um), um, (lo + hi) / 2.0)
        return np.clip(out, lo, hi), np.zeros(out.shape, dtype=bool)
    if mode != COLLABORATIVE:
        raise ValueError(f"unknown default mode {mode!r}")
    n = train.n_items
    robust = train.robust_item_means(min_support)
    ir = np.where(i >= 0, robust[np.clip(i, 0, max(n - 1, 0))] if n else np.nan, np.nan)
    im = np.where(i >= 0, train.item_means[np.clip(i, 0, max(n - 1, 0))] if n else np.nan, np.nan)
    gm = train.global_mean if len(train) else (lo + hi) / 2.0
    has_u, has_ir, has_i = np.isfinite(um), np.isfinite(ir), np.isfinite(im)
    out = np.where(has_u & has_ir, (um + ir) / 2.0,
                   np.where(has_u, um, np.where(has_i, im, gm)))
    item_info = (has_u & has_ir) | (~has_u & has_i)
    return np.clip(out, lo, hi), item_info


class Recommender(BaseEstimator):
    """Base class: index-level prediction plus id-level wrappers.

    Subclasses implement :meth:`_fit` and :meth:`predict_indexed`; they may
    override :meth:`score_users` with a faster catalog-wide scorer.
    """

    def fit(self, train, y=None, **kwargs):
        train = check_ratings(train)
        self.train_ = train
        self.scale_ = train.scale
        self._fit(train, **kwargs)
        return self

    def _fit(self, train, **kwargs):
        raise NotImplementedError

    def _fallback(self):
        """(default-cascade mode, robust-mean support) used for uncovered pairs."""
        return COLLABORATIVE, getattr(self, "min_support", 10)

    def predict_indexed(self, u, i):
        """(values, main_mask) for user/item index arrays; -1 marks unknown."""
        raise NotImplementedError

    def predict_tagged(self, X):
        """(values, main_mask) for a RatingsMatrix or (user id, item id) pairs."""
        check_fitted(self)
        u, i = check_pairs(X, self.train_)
        return self.predict_indexed(u, i)

    def predict(self, X):
        return self.predict_tagged(X)[0]

    def score_users(self, users):
        """Scores of every catalog item for each user index.

        Returns ``(scores, evidence)``, both ``(len(users), n_items)``;
        ``evidence`` marks scores that depend on the item itself.
        """
        check_fitted(self)
        users = np.asarray(users, dtype=np.int64)
        n = self.train_.n_items
        uu = np.repeat(users, n)
        ii = np.tile(np.arange(n), len(users))
        values, main = self.predict_indexed(uu, ii)
        _, info = default_values(self.train_, uu, ii, *self._fallback())
        shape = (len(users), n)
        return values.reshape(shape), (main | info).reshape(shape)

    def recommend(self, user, n=10):
        """Full-catalog Top-``n`` item ids for a known user id."""
        from .knn import full_catalog_top_n
        check_fitted(self)
        return full_catalog_top_n(self, self.train_.user_index(user), n)


class DefaultPredictor(Recommender):
    """Mean-based cascade; every prediction is tagged as default origin."""

    def __init__(self, mode=COLLABORATIVE, min_support=10):
        self.mode = mode
        self.min_support = min_support

    def _fallback(self):
        return self.mode, self.min_support

    def _fit(self, train):
        if self.mode not in (COLLABORATIVE, MONO_USER):
            raise ValueError(f"unknown default mode {self.mode!r}")
        self.robust_means_ = train.robust_item_means(self.min_support)

    def predict_indexed(self, u, i):
        values, _ = default_values(self.train_, u, i, self.mode, self.min_support)
        return values, np.zeros(len(values), dtype=bool)

    def score_users(self, users):
        check_fitted(self)
        users = np.asarray(users, dtype=np.int64)
        n = self.train_.n_items
        uu = np.repeat(users, n)
        ii = np.tile(np.arange(n), len(users))
        values, info = default_values(self.train_, uu, ii, self.mode, self.min_support)
        return values.reshape(len(users), n), info.reshape(len(users), n)


class RandomPredictor(Recommender):
    """Uniform random ratings on the continuous scale.

    The value of a (user, item) pair is a hash of (seed, user, item), so
    point predictions and catalog scoring agree and runs are reproducible.
    """

    def __init__(self, seed=0):
        self.seed = seed

    def _fit(self, train):
        pass

    def predict_indexed(self, u, i):
        lo, hi = self.scale_
        x = hashed_uniform(self.seed, u, i, symmetric=False)
        return lo + (hi - lo) * x, np.ones(len(x), dtype=bool)

    def score_users(self, users):
        users = np.asarray(users, dtype=np.int64)
        n = self.train_.n_items
        lo, hi = self.scale_
        x = hashed_uniform(self.seed, users[:, None], np.arange(n)[None, :], symmetric=False)
        return lo + (hi - lo) * x, np.ones(x.shape, dtype=bool)


def expected_random_mse(ratings, scale):
    """Closed-form E[(X - r)^2] for X ~ U(a, b), averaged over ``ratings``."""
    a, b = scale
    r = np.asarray(ratings, dtype=np.float64)
    c = (a + b) / 2.0
    return float((b - a) ** 2 / 12.0 + np.mean((c - r) ** 2))
