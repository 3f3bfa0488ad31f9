"""Regularized SGD matrix factorization with fixed bias columns.

Ratings are mapped to [0, 1] before training. With ``biases=True`` column 0
of every user vector and column 1 of every item vector are pinned to 1, so
``q[i, 0]`` acts as an item bias and ``p[u, 1]`` as a user bias.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .base import Recommender, default_values
from .similarity import dense_knn_search
from .validation import check_fitted

logger = logging.getLogger(__name__)

MAGIC = b"HRFACT01"

USER_FIXED = 0
ITEM_FIXED = 1


@dataclass
class GravityParams:
    k: int = 16
    learning_rate: float = 0.03
    regularization: float = 0.008
    max_epochs: int = 100
    patience: int = 3
    max_seconds: float | None = None
    validation_fraction: float = 0.005
    seed: int = 0
    clamp: float = 1.0
    init_range: float = 0.01
    biases: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.biases and self.k < 3:
            raise ValueError("k must be >= 3 with bias columns (two slots are fixed)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class FactorModel:
    P: np.ndarray                  # users x k
    Q: np.ndarray                  # items x k
    scale: tuple
    params: GravityParams
    known_users: np.ndarray = None
    known_items: np.ndarray = None
    curve: list = field(default_factory=list)   # (epoch, train_rmse, validation_rmse)
    best_epoch: int = 0
    user_ids: np.ndarray = None
    item_ids: np.ndarray = None
    fingerprint: str = ""

    def __post_init__(self):
        if self.known_users is None:
            self.known_users = np.ones(self.P.shape[0], dtype=bool)
        if self.known_items is None:
            self.known_items = np.ones(self.Q.shape[0], dtype=bool)

    @property
    def k(self):
        return self.P.shape[1]

    @property
    def fixed_columns(self):
        return (USER_FIXED, ITEM_FIXED) if self.params.biases else (-1, -1)

    def normalize(self, r):
        a, b = self.scale
        return (np.asarray(r, dtype=np.float64) - a) / (b - a)

    def denormalize(self, x):
        a, b = self.scale
        return np.clip(a + np.asarray(x, dtype=np.float64) * (b - a), a, b)


def reindex(model, user_ids, item_ids):
    """Copy of ``model`` laid out on other id universes (ids matched as text).

    Rows of ids the model never saw are zero and flagged unknown.
    """
    def remap(old_ids, new_ids, M, known):
        pos = {str(x): n for n, x in enumerate(old_ids)}
        out = np.zeros((len(new_ids), M.shape[1]))
        flag = np.zeros(len(new_ids), dtype=bool)
        for n, x in enumerate(new_ids):
            k = pos.get(str(x))
            if k is not None:
                out[n], flag[n] = M[k], known[k]
        return out, flag
    P, ku = remap(model.user_ids, user_ids, model.P, model.known_users)
    Q, ki = remap(model.item_ids, item_ids, model.Q, model.known_items)
    return FactorModel(P, Q, model.scale, model.params, ku, ki, list(model.curve),
                       model.best_epoch, np.asarray(user_ids, dtype=object),
                       np.asarray(item_ids, dtype=object), model.fingerprint)


def init_model(n_users, n_items, params, scale=(1.0, 5.0)):
    """Free factors uniform in +-init_range; bias columns set to 1."""
    rng = np.random.default_rng(params.seed)
    r = params.init_range
    P = rng.uniform(-r, r, size=(n_users, params.k)) if r > 0 else np.zeros((n_users, params.k))
    Q = rng.uniform(-r, r, size=(n_items, params.k)) if r > 0 else np.zeros((n_items, params.k))
    if params.biases:
        P[:, USER_FIXED] = 1.0
        Q[:, ITEM_FIXED] = 1.0
    return FactorModel(P, Q, tuple(map(float, scale)), params)


def predict_normalized(model, u, i):
    return np.einsum("ij,ij->i", model.P[np.atleast_1d(u)], model.Q[np.atleast_1d(i)])


def predict(model, u, i):
    """De-normalized, clamped prediction for user/item indices."""
    u = np.atleast_1d(np.asarray(u, dtype=np.int64))
    i = np.atleast_1d(np.asarray(i, dtype=np.int64))
    bad = (u < 0) | (u >= model.P.shape[0]) | (i < 0) | (i >= model.Q.shape[0])
    if bad.any() or not (model.known_users[u].all() and model.known_items[i].all()):
        raise KeyError("user or item unknown to the factor model")
    return model.denormalize(predict_normalized(model, u, i))


def sgd_step(model, u, i, r, alpha, lam):
    """One update on a normalized rating ``r``; both vectors move from their old values."""
    p, q = model.P[u], model.Q[i]
    e = r - float(p @ q)
    fp, fq = model.fixed_columns
    new_p = p + alpha * (e * q - lam * p)
    new_q = q + alpha * (e * p - lam * q)
    c = model.params.clamp
    np.clip(new_p, -c, c, out=new_p)
    np.clip(new_q, -c, c, out=new_q)
    if fp >= 0:
        new_p[fp] = p[fp]
    if fq >= 0:
        new_q[fq] = q[fq]
    model.P[u], model.Q[i] = new_p, new_q
    return model


@numba.njit(cache=True)
def _sgd_epoch(P, Q, users, items, ratings, order, alpha, lam, clamp, fixed_p, fixed_q):
    K = P.shape[1]
    for t in range(order.shape[0]):
        n = order[t]
        u = users[n]
        i = items[n]
        pred = 0.0
        for k in range(K):
            pred += P[u, k] * Q[i, k]
        e = ratings[n] - pred
        for k in range(K):
            pu = P[u, k]
            qi = Q[i, k]
            if k != fixed_p:
                v = pu + alpha * (e * qi - lam * pu)
                P[u, k] = min(max(v, -clamp), clamp)
            if k != fixed_q:
                v = qi + alpha * (e * pu - lam * qi)
                Q[i, k] = min(max(v, -clamp), clamp)


def _rmse(model, u, i, r):
    if len(r) == 0:
        return float("nan")
    pred = model.denormalize(predict_normalized(model, u, i))
    return float(np.sqrt(np.mean((pred - r) ** 2)))


def train(train_set, params=None, log_every=0):
    """Fit factors on ``train_set`` with validation-based early stopping.

    A ``validation_fraction`` of the logs is held out (none when that
    rounds to zero, in which case the train RMSE drives stopping). Each
    epoch visits the remaining logs in a seed-shuffled order. Training stops
    at ``max_epochs``, ``max_seconds``, or after ``patience`` successive
    validation increases; the best-validation snapshot is returned.
    """
    params = params or GravityParams()
    if len(train_set) == 0:
        raise ValueError("empty train set")
    model = init_model(train_set.n_users, train_set.n_items, params, train_set.scale)
    rng = np.random.default_rng(params.seed)
    n = len(train_set)
    n_val = int(np.floor(n * params.validation_fraction + 0.5))
    perm = rng.permutation(n)
    val, fit = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    users = np.ascontiguousarray(train_set.users)
    items = np.ascontiguousarray(train_set.items)
    raw = np.asarray(train_set.ratings)
    norm = model.normalize(raw)
    fu, fi, fr = users[fit], items[fit], norm[fit]
    vu, vi, vr = users[val], items[val], raw[val]
    fixed_p, fixed_q = model.fixed_columns

    best = (np.inf, model.P.copy(), model.Q.copy(), 0)
    prev, rises = np.inf, 0
    start = time.perf_counter()
    for epoch in range(1, params.max_epochs + 1):
        order = rng.permutation(len(fr)).astype(np.int64)
        _sgd_epoch(model.P, model.Q, fu, fi, fr, order, params.learning_rate,
                   params.regularization, params.clamp, fixed_p, fixed_q)
        tr = _rmse(model, fu, fi, raw[fit])
        va = _rmse(model, vu, vi, vr) if n_val else tr
        model.curve.append((epoch, tr, va))
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d train %.4f validation %.4f", epoch, tr, va)
        if va < best[0]:
            best = (va, model.P.copy(), model.Q.copy(), epoch)
        rises = rises + 1 if va > prev else 0
        prev = va
        if rises >= params.patience:
            break
        if params.max_seconds is not None and time.perf_counter() - start > params.max_seconds:
            logger.info("wall-clock cap reached after %d epochs", epoch)
            break
    _, model.P, model.Q, model.best_epoch = best
    model.known_users = train_set.user_counts > 0
    model.known_items = train_set.item_counts > 0
    model.user_ids = train_set.user_ids
    model.item_ids = train_set.item_ids
    model.fingerprint = train_set.fingerprint()
    return model


def factor_similarity_matrix(model, k, measure="pearson", n_jobs=1):
    """Top-``k`` item neighbours computed on the item factor vectors."""
    return dense_knn_search(model.Q, k, measure, model.item_ids, n_jobs=n_jobs,
                            fingerprint=model.fingerprint)


# -- persistence ----------------------------------------------------------------

def _header(model):
    return {
        "k": model.k,
        "n_users": model.P.shape[0],
        "n_items": model.Q.shape[0],
        "scale": list(model.scale),
        "params": asdict(model.params),
        "curve": [list(c) for c in model.curve],
        "best_epoch": model.best_epoch,
        "fingerprint": model.fingerprint,
        "user_ids": [str(x) for x in model.user_ids] if model.user_ids is not None else None,
        "item_ids": [str(x) for x in model.item_ids] if model.item_ids is not None else None,
        "known_users": np.flatnonzero(~model.known_users).tolist(),
        "known_items": np.flatnonzero(~model.known_items).tolist(),
    }


def _ids(values):
    return None if values is None else np.array(values, dtype=object)


def _from_header(h, P, Q):
    known_u = np.ones(h["n_users"], dtype=bool)
    known_u[h["known_users"]] = False
    known_i = np.ones(h["n_items"], dtype=bool)
    known_i[h["known_items"]] = False
    return FactorModel(P, Q, tuple(h["scale"]), GravityParams(**h["params"]), known_u, known_i,
                       [tuple(c) for c in h["curve"]], h["best_epoch"], _ids(h["user_ids"]),
                       _ids(h["item_ids"]), h["fingerprint"])


def save_model(model, path):
    """Binary layout: magic, uint32 LE header length, UTF-8 JSON header,
    then P and Q as little-endian float64, row-major."""
    head = json.dumps(_header(model), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(np.ascontiguousarray(model.P, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.Q, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a factor model file")
        (size,) = struct.unpack("<I", fh.read(4))
        h = json.loads(fh.read(size).decode())
        nu, ni, k = h["n_users"], h["n_items"], h["k"]
        P = np.frombuffer(fh.read(nu * k * 8), dtype="<f8").reshape(nu, k).astype(np.float64)
        Q = np.frombuffer(fh.read(ni * k * 8), dtype="<f8").reshape(ni, k).astype(np.float64)
    return _from_header(h, P, Q)


def export_text(model, path):
    """Lossless text form: JSON header line, then one ``P``/``Q`` row per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_header(model), sort_keys=True) + "\n")
        for tag, M in (("P", model.P), ("Q", model.Q)):
            for r, row in enumerate(M):
                fh.write(f"{tag}\t{r}\t" + " ".join(repr(float(x)) for x in row) + "\n")


def import_text(path):
    with open(path, encoding="utf-8") as fh:
        h = json.loads(fh.readline())
        P = np.zeros((h["n_users"], h["k"]))
        Q = np.zeros((h["n_items"], h["k"]))
        for line in fh:
            tag, r, vals = line.rstrip("\n").split("\t")
            (P if tag == "P" else Q)[int(r)] = [float(x) for x in vals.split()]
    return _from_header(h, P, Q)


# -- estimator ------------------------------------------------------------------

class Gravity(Recommender):
    """Factor-model rating predictor; users or items without train logs
    go to the default cascade."""

    def __init__(self, n_factors=16, learning_rate=0.03, regularization=0.008, max_epochs=100,
                 patience=3, max_seconds=None, validation_fraction=0.005, seed=0, biases=True,
                 init_range=0.01, clamp=1.0, min_support=10):
        self.n_factors = n_factors
        self.learning_rate = learning_rate
        self.regularization = regularization
        self.max_epochs = max_epochs
        self.patience = patience
        self.max_seconds = max_seconds
        self.validation_fraction = validation_fraction
        self.seed = seed
        self.biases = biases
        self.init_range = init_range
        self.clamp = clamp
        self.min_support = min_support

    def gravity_params(self):
        return GravityParams(k=self.n_factors, learning_rate=self.learning_rate,
                             regularization=self.regularization, max_epochs=self.max_epochs,
                             patience=self.patience, max_seconds=self.max_seconds,
                             validation_fraction=self.validation_fraction, seed=self.seed,
                             clamp=self.clamp, init_range=self.init_range, biases=self.biases)

    def _fit(self, train_set, model=None):
        """Train, or adopt an already trained ``model`` for this train set."""
        if model is None:
            model = train(train_set, self.gravity_params())
        elif model.P.shape[0] != train_set.n_users or model.Q.shape[0] != train_set.n_items:
            raise ValueError("factor model does not match the train set")
        self.model_ = model

    def predict_indexed(self, u, i):
        check_fitted(self)
        u = np.asarray(u, dtype=np.int64)
        i = np.asarray(i, dtype=np.int64)
        m = self.model_
        values, _ = default_values(self.train_, u, i, *self._fallback())
        main = (u >= 0) & (i >= 0)
        main[main] = m.known_users[u[main]] & m.known_items[i[main]]
        values[main] = m.denormalize(predict_normalized(m, u[main], i[main]))
        return values, main

    def score_users(self, users):
        check_fitted(self)
        users = np.asarray(users, dtype=np.int64)
        m = self.model_
        n = self.train_.n_items
        scores = m.denormalize(m.P[users] @ m.Q.T)
        main = m.known_users[users][:, None] & m.known_items[None, :]
        if not main.all():
            uu = np.repeat(users, n)
            ii = np.tile(np.arange(n), len(users))
            fb, info = default_values(self.train_, uu, ii, *self._fallback())
            fb, info = fb.reshape(len(users), n), info.reshape(len(users), n)
            scores = np.where(main, scores, fb)
            main = main | info
        return scores, main

    def similarity(self, k=100, measure="pearson", n_jobs=1):
        check_fitted(self)
        return factor_similarity_matrix(self.model_, k, measure, n_jobs)
