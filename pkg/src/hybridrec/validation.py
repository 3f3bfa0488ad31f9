"""Input checks shared by the estimators."""

import numpy as np
from sklearn.exceptions import NotFittedError

from .ratings import RatingsMatrix


def check_ratings(m, allow_empty=False):
    if not isinstance(m, RatingsMatrix):
        raise TypeError(f"expected a RatingsMatrix, got {type(m).__name__}")
    if not allow_empty and len(m) == 0:
        raise ValueError("rating matrix has no logs")
    return m


def check_fitted(estimator, attribute="train_"):
    if not hasattr(estimator, attribute):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")


def check_same_universe(a, b, what="matrices"):
    """Raise unless ``a`` and ``b`` index the same user and item ids."""
    if a.n_items != b.n_items or not np.array_equal(a.item_ids, b.item_ids):
        raise ValueError(f"{what} index different item universes")
    if a.n_users != b.n_users or not np.array_equal(a.user_ids, b.user_ids):
        raise ValueError(f"{what} index different user universes")


def check_pairs(X, train):
    """Index arrays for a RatingsMatrix or a sequence of (user id, item id) pairs.

    A RatingsMatrix sharing ``train``'s universe is used index-for-index;
    anything else goes through id lookup and unknown ids become -1.
    """
    if isinstance(X, RatingsMatrix):
        if X.n_items == train.n_items and X.n_users == train.n_users \
                and np.array_equal(X.item_ids, train.item_ids) \
                and np.array_equal(X.user_ids, train.user_ids):
            return np.asarray(X.users), np.asarray(X.items)
        return (train.lookup_users(X.user_ids[X.users]),
                train.lookup_items(X.item_ids[X.items]))
    pairs = list(X)
    if pairs and len(pairs[0]) < 2:
        raise ValueError("expected (user, item) pairs")
    return (train.lookup_users([p[0] for p in pairs]),
            train.lookup_items([p[1] for p in pairs]))
