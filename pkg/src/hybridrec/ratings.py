"""Dual-indexed rating logs, descriptor catalogs, splits and popularity segments."""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

NO_DATE = np.iinfo(np.int64).min

SEGMENTS = ("HP", "HU", "LP", "LU")


class DataError(ValueError):
    """Raised when an input file or array cannot be turned into logs."""


def _sorted_ids(ids):
    """Unique ids in ascending order; numerically when every id is an integer."""
    uniq = sorted(set(ids))
    try:
        return np.array(sorted(uniq, key=int), dtype=object)
    except (TypeError, ValueError):
        return np.array(uniq, dtype=object)


def parse_date(text):
    """ISO-8601 date/datetime or a bare unix timestamp -> epoch seconds."""
    text = text.strip()
    if not text:
        return NO_DATE
    if text.lstrip("-").isdigit():
        return int(text)
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        dt = datetime.combine(date.fromisoformat(text), datetime.min.time())
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


class RatingsMatrix:
    """Immutable sparse store of (user, item, rating, date) logs.

    Logs are kept as parallel arrays sorted by (user, item). Opaque ids are
    re-indexed to contiguous integers; ``user_ids[k]`` is the id of user
    index ``k``. Splits and folds keep the parent's id universe, so indices
    stay comparable between a train set and its test set.
    """

    def __init__(self, users, items, ratings, user_ids, item_ids,
                 scale=(1.0, 5.0), dates=None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        ratings = np.asarray(ratings, dtype=np.float64)
        if dates is None:
            dates = np.full(len(users), NO_DATE, dtype=np.int64)
        dates = np.asarray(dates, dtype=np.int64)
        if not (len(users) == len(items) == len(ratings) == len(dates)):
            raise ValueError("log arrays must have equal length")
        order = np.lexsort((items, users))
        self.users = users[order]
        self.items = items[order]
        self.ratings = ratings[order]
        self.dates = dates[order]
        for arr in (self.users, self.items, self.ratings, self.dates):
            arr.flags.writeable = False
        self.user_ids = np.asarray(user_ids, dtype=object)
        self.item_ids = np.asarray(item_ids, dtype=object)
        self.scale = (float(scale[0]), float(scale[1]))
        if len(self.users) and (self.users.max() >= len(self.user_ids)
                                or self.items.max() >= len(self.item_ids)):
            raise ValueError("log index outside the id universe")

    # -- construction -----------------------------------------------------

    @classmethod
    def from_records(cls, users, items, ratings, dates=None, scale=(1.0, 5.0),
                     user_ids=None, item_ids=None):
        """Build from raw id/rating sequences.

        Duplicate (user, item) pairs keep the latest-dated record, and the
        last occurrence among equal dates. Ratings outside ``scale`` raise
        :class:`DataError`.
        """
        users = list(users)
        items = list(items)
        ratings = np.asarray(ratings, dtype=np.float64)
        n = len(users)
        if dates is None:
            dates = np.full(n, NO_DATE, dtype=np.int64)
        dates = np.asarray(dates, dtype=np.int64)
        a, b = scale
        bad = np.flatnonzero((ratings < a) | (ratings > b) | ~np.isfinite(ratings))
        if len(bad):
            k = bad[0]
            raise DataError(f"rating {ratings[k]} of ({users[k]}, {items[k]}) "
                            f"outside scale [{a}, {b}]")
        user_ids = _sorted_ids(users) if user_ids is None else np.asarray(user_ids, dtype=object)
        item_ids = _sorted_ids(items) if item_ids is None else np.asarray(item_ids, dtype=object)
        uidx = {u: k for k, u in enumerate(user_ids)}
        iidx = {i: k for k, i in enumerate(item_ids)}
        try:
            u = np.fromiter((uidx[x] for x in users), dtype=np.int64, count=n)
            i = np.fromiter((iidx[x] for x in items), dtype=np.int64, count=n)
        except KeyError as exc:
            raise DataError(f"id {exc.args[0]!r} missing from the id universe") from None
        u, i, r, d = _dedupe(u, i, ratings, dates)
        return cls(u, i, r, user_ids, item_ids, scale=scale, dates=d)

    def subset(self, mask):
        """Logs selected by a boolean mask or index array, same id universe."""
        return RatingsMatrix(self.users[mask], self.items[mask], self.ratings[mask],
                             self.user_ids, self.item_ids, self.scale, self.dates[mask])

    def with_ratings(self, ratings):
        """Same logs with replaced rating values (scale widened to fit)."""
        ratings = np.asarray(ratings, dtype=np.float64)
        scale = (min(self.scale[0], ratings.min(initial=np.inf)),
                 max(self.scale[1], ratings.max(initial=-np.inf)))
        return RatingsMatrix(self.users, self.items, ratings, self.user_ids,
                             self.item_ids, scale, self.dates)

    # -- sizes ------------------------------------------------------------

    def __len__(self):
        return len(self.ratings)

    def __repr__(self):
        return (f"RatingsMatrix(n_logs={len(self)}, n_users={self.n_users}, "
                f"n_items={self.n_items}, scale={self.scale})")

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    @property
    def shape(self):
        return (self.n_users, self.n_items)

    # -- dual index -------------------------------------------------------

    @cached_property
    def by_user(self):
        """CSR matrix, users x items; row u holds S_u."""
        return sp.csr_matrix((self.ratings, (self.users, self.items)), shape=self.shape)

    @cached_property
    def by_item(self):
        """CSR matrix, items x users; row i holds T_i."""
        return self.by_user.T.tocsr()

    @cached_property
    def _user_ptr(self):
        return np.concatenate([[0], np.cumsum(np.bincount(self.users, minlength=self.n_users))])

    def user_profile(self, u):
        """(item indices, ratings) of user index ``u``; items ascending."""
        lo, hi = self._user_ptr[u], self._user_ptr[u + 1]
        return self.items[lo:hi], self.ratings[lo:hi]

    def user_dates(self, u):
        lo, hi = self._user_ptr[u], self._user_ptr[u + 1]
        return self.dates[lo:hi]

    def item_raters(self, i):
        """(user indices, ratings) of item index ``i``."""
        m = self.by_item
        lo, hi = m.indptr[i], m.indptr[i + 1]
        return m.indices[lo:hi], m.data[lo:hi]

    @cached_property
    def _user_index(self):
        return {u: k for k, u in enumerate(self.user_ids)}

    @cached_property
    def _item_index(self):
        return {i: k for k, i in enumerate(self.item_ids)}

    def user_index(self, user, default=None):
        k = self._user_index.get(user, default)
        if k is None:
            raise KeyError(f"unknown user {user!r}")
        return k

    def item_index(self, item, default=None):
        k = self._item_index.get(item, default)
        if k is None:
            raise KeyError(f"unknown item {item!r}")
        return k

    def lookup_users(self, users):
        """Indices for a sequence of user ids; unknown ids map to -1."""
        idx = self._user_index
        return np.fromiter((idx.get(u, -1) for u in users), dtype=np.int64)

    def lookup_items(self, items):
        idx = self._item_index
        return np.fromiter((idx.get(i, -1) for i in items), dtype=np.int64)

    def triples(self):
        """Iterate (user id, item id, rating)."""
        for u, i, r in zip(self.users, self.items, self.ratings):
            yield self.user_ids[u], self.item_ids[i], float(r)

    # -- statistics -------------------------------------------------------

    @cached_property
    def user_counts(self):
        return np.bincount(self.users, minlength=self.n_users)

    @cached_property
    def item_counts(self):
        return np.bincount(self.items, minlength=self.n_items)

    @cached_property
    def user_means(self):
        """Mean rating per user; NaN for users without logs."""
        s = np.bincount(self.users, weights=self.ratings, minlength=self.n_users)
        with np.errstate(invalid="ignore", divide="ignore"):
            return s / self.user_counts

    @cached_property
    def item_means(self):
        """Mean rating per item; NaN for items without logs."""
        s = np.bincount(self.items, weights=self.ratings, minlength=self.n_items)
        with np.errstate(invalid="ignore", divide="ignore"):
            return s / self.item_counts

    @property
    def global_mean(self):
        if not len(self):
            return float("nan")
        return float(np.mean(self.ratings))

    def robust_item_means(self, min_support=10):
        """Item means, NaN where an item has fewer than ``min_support`` ratings."""
        out = self.item_means.copy()
        out[self.item_counts < min_support] = np.nan
        return out

    def item_mean(self, item):
        return float(self.item_means[self.item_index(item)])

    def user_mean(self, user):
        return float(self.user_means[self.user_index(user)])

    def robust_item_mean(self, item, min_support=10):
        """Mean of ``item`` or ``None`` below ``min_support`` ratings."""
        i = self.item_index(item)
        if self.item_counts[i] < min_support:
            return None
        return float(self.item_means[i])

    @property
    def sparsity(self):
        """Fraction of missing cells in the users x items matrix."""
        cells = self.n_users * self.n_items
        return 1.0 - len(self) / cells if cells else float("nan")

    def fingerprint(self):
        """Short content hash of the logs and their id universe."""
        h = hashlib.sha256()
        h.update(repr(self.scale).encode())
        h.update("\x1f".join(map(str, self.user_ids)).encode())
        h.update("\x1e".join(map(str, self.item_ids)).encode())
        for arr in (self.users, self.items, self.ratings):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def summary(self):
        """Dataset statistics block (counts, sparsity, means)."""
        n_active_items = int((self.item_counts > 0).sum())
        n_active_users = int((self.user_counts > 0).sum())
        return {
            "n_logs": len(self),
            "n_users": n_active_users,
            "n_items": n_active_items,
            "scale": f"[{self.scale[0]:g};{self.scale[1]:g}]",
            "missing_fraction": round(1.0 - len(self) / max(n_active_users * n_active_items, 1), 4),
            "ratings_per_item": round(len(self) / max(n_active_items, 1), 1),
            "ratings_per_user": round(len(self) / max(n_active_users, 1), 1),
            "mean_rating": round(self.global_mean, 4),
            "fingerprint": self.fingerprint(),
        }


def _dedupe(u, i, r, d):
    """Keep one log per (user, item): latest date, then last occurrence."""
    occurrence = np.arange(len(u))
    order = np.lexsort((occurrence, d, i, u))
    u, i, r, d = u[order], i[order], r[order], d[order]
    last = np.ones(len(u), dtype=bool)
    if len(u) > 1:
        last[:-1] = (u[1:] != u[:-1]) | (i[1:] != i[:-1])
    return u[last], i[last], r[last], d[last]


def transpose(m):
    """Swap the roles of users and items."""
    return RatingsMatrix(m.items, m.users, m.ratings, m.item_ids, m.user_ids, m.scale, m.dates)


# -- file loading -----------------------------------------------------------

def _read_lines(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line


def read_log_records(path, scale=(1.0, 5.0), fmt="tsv"):
    """Parse a rating log file into (users, items, ratings, dates) lists.

    ``fmt="tsv"``: ``user<TAB>item<TAB>rating[<TAB>date]``, ISO-8601 or
    unix-timestamp dates. ``fmt="movielens"``: ``user::item::rating::timestamp``.
    """
    sep = {"tsv": "\t", "movielens": "::"}.get(fmt)
    if sep is None:
        raise ValueError(f"unknown log format {fmt!r}")
    users, items, ratings, dates = [], [], [], []
    a, b = scale
    for lineno, line in _read_lines(path):
        parts = line.split(sep)
        if len(parts) < 3 or len(parts) > 4:
            raise DataError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(parts)}")
        try:
            r = float(parts[2])
            d = parse_date(parts[3]) if len(parts) == 4 else NO_DATE
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if not a <= r <= b:
            raise DataError(f"{path}:{lineno}: rating {parts[2]} of ({parts[0]}, {parts[1]}) "
                            f"outside scale [{a:g}, {b:g}]")
        users.append(parts[0].strip())
        items.append(parts[1].strip())
        ratings.append(r)
        dates.append(d)
    if not users:
        raise DataError(f"{path}: no rating records")
    return users, items, ratings, dates


def load_logs(path, scale=(1.0, 5.0), fmt="tsv"):
    """Read a rating log file into a :class:`RatingsMatrix`."""
    users, items, ratings, dates = read_log_records(path, scale, fmt)
    return RatingsMatrix.from_records(users, items, ratings, dates, scale=scale)


def load_fold(train_path, test_path, scale=(1.0, 5.0), fmt="tsv"):
    """Train and test files indexed on one shared id universe."""
    tr = read_log_records(train_path, scale, fmt)
    te = read_log_records(test_path, scale, fmt)
    user_ids = _sorted_ids(tr[0] + te[0])
    item_ids = _sorted_ids(tr[1] + te[1])
    return tuple(RatingsMatrix.from_records(*rec, scale=scale, user_ids=user_ids,
                                            item_ids=item_ids) for rec in (tr, te))


def save_logs(m, path):
    """Write ``user<TAB>item<TAB>rating<TAB>date`` lines (empty date when unknown)."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, r, d in zip(m.users, m.items, m.ratings, m.dates):
            date = "" if d == NO_DATE else str(int(d))
            fh.write(f"{m.user_ids[u]}\t{m.item_ids[i]}\t{r:g}\t{date}\n")


@dataclass
class DescriptorCatalog:
    """(item, descriptor, weight) triples; a descriptor is an (attribute, value) pair."""

    items: list
    descriptors: list          # descriptor id per triple, "attribute=value"
    weights: np.ndarray
    attribute_of: dict = field(default_factory=dict)   # descriptor id -> attribute

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any((self.weights < 0) | (self.weights > 1)):
            raise DataError("descriptor weights must lie in [0, 1]")

    def __len__(self):
        return len(self.items)

    @property
    def item_set(self):
        return set(self.items)

    @property
    def descriptor_ids(self):
        return sorted(set(self.descriptors))

    def descriptors_of(self, item):
        """{descriptor: weight} for one item."""
        return {d: float(w) for it, d, w in zip(self.items, self.descriptors, self.weights)
                if it == item}

    def to_matrix(self, item_ids=None):
        """Descriptor x item matrix aligned on ``item_ids``.

        Descriptors play the role of users, the catalog weight the role of
        the rating, so the item-item similarity code applies unchanged.
        Catalog items outside ``item_ids`` are dropped.
        """
        if item_ids is None:
            item_ids = _sorted_ids(self.items)
        known = set(item_ids)
        keep = [k for k, it in enumerate(self.items) if it in known]
        desc_ids = np.array(sorted({self.descriptors[k] for k in keep}), dtype=object)
        return RatingsMatrix.from_records(
            [self.descriptors[k] for k in keep], [self.items[k] for k in keep],
            self.weights[keep], scale=(0.0, 1.0), user_ids=desc_ids, item_ids=item_ids)


def save_catalog(catalog, path):
    with open(path, "w", encoding="utf-8") as fh:
        for item, d, w in zip(catalog.items, catalog.descriptors, catalog.weights):
            attribute = catalog.attribute_of.get(d, d.split("=", 1)[0])
            value = d[len(attribute) + 1:]
            fh.write(f"{item}\t{attribute}\t{value}\t{w:g}\n")


def descriptor_id(attribute, value):
    return f"{attribute}={value}"


def make_catalog(records):
    """Catalog from (item, attribute, value[, weight]) tuples.

    Duplicate (item, descriptor) pairs keep the maximum weight with a warning.
    """
    best = {}
    attribute_of = {}
    for rec in records:
        item, attribute, value = (str(x) for x in rec[:3])
        w = float(rec[3]) if len(rec) > 3 else 1.0
        if not 0.0 <= w <= 1.0:
            raise DataError(f"weight {w} of ({item}, {attribute}, {value}) outside [0, 1]")
        d = descriptor_id(attribute, value)
        attribute_of[d] = attribute
        key = (item, d)
        if key in best:
            warnings.warn(f"duplicate descriptor {d!r} for item {item!r}; keeping max weight",
                          stacklevel=2)
            w = max(w, best[key])
        best[key] = w
    keys = sorted(best)
    return DescriptorCatalog([k[0] for k in keys], [k[1] for k in keys],
                             np.array([best[k] for k in keys]), attribute_of)


def load_catalog(path):
    """Read ``item<TAB>attribute<TAB>value[<TAB>weight]`` records."""
    records = []
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            raise DataError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(parts)}")
        if len(parts) == 4:
            try:
                parts[3] = float(parts[3])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad weight {parts[3]!r}") from None
            if not 0.0 <= parts[3] <= 1.0:
                raise DataError(f"{path}:{lineno}: weight {parts[3]} outside [0, 1]")
        records.append(parts)
    if not records:
        raise DataError(f"{path}: no catalog records")
    return make_catalog(records)


# -- splits -----------------------------------------------------------------

def _rank_within_user(users, keys):
    """Rank of each log among its user's logs when ordered by ``keys``."""
    order = np.lexsort((keys, users))
    counts = np.bincount(users)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.empty(len(users), dtype=np.int64)
    rank[order] = np.arange(len(users)) - starts[users[order]]
    return rank


def split_train_test(m, test_fraction=0.1, seed=0, stratified=True):
    """Random train/test split.

    Per-user (default): each user sends ``round(n_u * test_fraction)`` logs
    to test, capped at ``n_u - 1`` so nobody vanishes from train. With
    ``stratified=False`` the split is uniform over all logs.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    keys = rng.random(len(m))
    if stratified:
        counts = m.user_counts
        n_test = np.floor(counts * test_fraction + 0.5).astype(np.int64)
        n_test = np.minimum(n_test, np.maximum(counts - 1, 0))
        is_test = _rank_within_user(m.users, keys) < n_test[m.users]
    else:
        n_test = int(np.floor(len(m) * test_fraction + 0.5))
        is_test = np.zeros(len(m), dtype=bool)
        is_test[np.argsort(keys, kind="stable")[:n_test]] = True
    return m.subset(~is_test), m.subset(is_test)


def kfold(m, k=5, seed=0):
    """Per-user k-fold partition; returns ``[(train, test), ...]``.

    Users with fewer than ``k`` logs appear in fewer than ``k`` test folds.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    keys = rng.random(len(m))
    offsets = rng.integers(0, k, size=m.n_users)
    fold = (_rank_within_user(m.users, keys) + offsets[m.users]) % k
    return [(m.subset(fold != f), m.subset(fold == f)) for f in range(k)]


# -- segments ---------------------------------------------------------------

@dataclass
class SegmentGrid:
    """Heavy/light users x popular/unpopular items, split at train averages."""

    item_threshold: float
    user_threshold: float
    item_counts: np.ndarray
    user_counts: np.ndarray

    @property
    def heavy_users(self):
        return self.user_counts >= self.user_threshold

    @property
    def popular_items(self):
        return self.item_counts >= self.item_threshold

    def label_pairs(self, users, items):
        """Segment codes for index arrays; -1 indices count as unknown (light/unpopular)."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        heavy = np.where(users >= 0, self.heavy_users[np.maximum(users, 0)], False)
        popular = np.where(items >= 0, self.popular_items[np.maximum(items, 0)], False)
        labels = np.array(SEGMENTS, dtype=object)
        return labels[np.where(heavy, 0, 2) + np.where(popular, 0, 1)]

    def user_segment(self, users):
        users = np.asarray(users, dtype=np.int64)
        heavy = np.where(users >= 0, self.heavy_users[np.maximum(users, 0)], False)
        return np.where(heavy, "H", "L").astype(object)

    def segment_of(self, u, i):
        """Label for one (user index, item index) pair."""
        return str(self.label_pairs([u], [i])[0])

    def stats(self, train):
        """Membership and rating counts per segment."""
        heavy, popular = self.heavy_users, self.popular_items
        active_u, active_i = self.user_counts > 0, self.item_counts > 0
        labels = self.label_pairs(train.users, train.items)
        out = {
            "item_threshold": self.item_threshold,
            "user_threshold": self.user_threshold,
            "n_popular_items": int((popular & active_i).sum()),
            "n_unpopular_items": int((~popular & active_i).sum()),
            "n_heavy_users": int((heavy & active_u).sum()),
            "n_light_users": int((~heavy & active_u).sum()),
        }
        for s in SEGMENTS:
            out[f"n_ratings_{s}"] = int((labels == s).sum())
        return out


def compute_segments(train):
    """Thresholds at the average number of ratings per (active) item and user."""
    if not len(train):
        raise ValueError("empty train set")
    ic, uc = train.item_counts, train.user_counts
    return SegmentGrid(
        item_threshold=float(ic[ic > 0].mean()),
        user_threshold=float(uc[uc > 0].mean()),
        item_counts=ic.copy(),
        user_counts=uc.copy(),
    )


def segment_of(grid, m, user, item):
    """Segment label for original ids; ids unknown to ``m`` count as light/unpopular."""
    return grid.segment_of(m._user_index.get(user, -1), m._item_index.get(item, -1))
