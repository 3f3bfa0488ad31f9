"""Item-item similarity measures and exact top-K neighbour matrices.

Every measure is computed over the sparse item vectors of a
:class:`~hybridrec.ratings.RatingsMatrix` (items x users, or items x
descriptors for a catalog). Sums in numerators run over co-raters; the
"extended" variants take each item's full rating set in the denominator.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .ratings import DescriptorCatalog, RatingsMatrix

logger = logging.getLogger(__name__)

MEASURES = (
    "pearson",
    "extended_pearson",
    "cosine",
    "extended_cosine",
    "jaccard",
    "mix",
    "extended_mix",
    "wpearson",
)

_ALIASES = {
    "extendedpearson": "extended_pearson",
    "ext_pearson": "extended_pearson",
    "extendedcosine": "extended_cosine",
    "ext_cosine": "extended_cosine",
    "extendedmix": "extended_mix",
    "ext_mix": "extended_mix",
    "weighted_pearson": "wpearson",
    "weightedpearson": "wpearson",
}

BLOCK_SIZE = 256


def check_measure(name):
    key = str(name).strip().lower().replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in MEASURES:
        raise ValueError(f"unknown similarity measure {name!r}; expected one of {MEASURES}")
    return key


# -- scalar reference implementation ---------------------------------------

def _item_vector(m, item):
    i = m.item_index(item)
    users, ratings = m.item_raters(i)
    return i, dict(zip(users.tolist(), ratings.tolist()))


def _pearson_parts(m, i, j):
    ii, vi = _item_vector(m, i)
    jj, vj = _item_vector(m, j)
    mi, mj = m.item_means[ii], m.item_means[jj]
    common = vi.keys() & vj.keys()
    num = sum((vi[u] - mi) * (vj[u] - mj) for u in common)
    ci = sum((vi[u] - mi) ** 2 for u in common)
    cj = sum((vj[u] - mj) ** 2 for u in common)
    fi = sum((r - mi) ** 2 for r in vi.values())
    fj = sum((r - mj) ** 2 for r in vj.values())
    return common, num, (ci, cj), (fi, fj)


def _cosine_parts(m, i, j):
    _, vi = _item_vector(m, i)
    _, vj = _item_vector(m, j)
    common = vi.keys() & vj.keys()
    num = sum(vi[u] * vj[u] for u in common)
    ci = sum(vi[u] ** 2 for u in common)
    cj = sum(vj[u] ** 2 for u in common)
    fi = sum(r * r for r in vi.values())
    fj = sum(r * r for r in vj.values())
    return common, num, (ci, cj), (fi, fj)


def _ratio(common, num, den):
    d = den[0] * den[1]
    if not common or d <= 0:
        return 0.0
    return float(np.clip(num / np.sqrt(d), -1.0, 1.0))


def classic_similarity(measure, i, j, m):
    """Pearson or Cosine restricted to the co-raters of items ``i`` and ``j``."""
    measure = check_measure(measure)
    if measure == "pearson":
        common, num, inter, _ = _pearson_parts(m, i, j)
    elif measure == "cosine":
        common, num, inter, _ = _cosine_parts(m, i, j)
    else:
        raise ValueError(f"{measure} is not a classic measure")
    return _ratio(common, num, inter)


def extended_similarity(measure, i, j, m):
    """Pearson or Cosine with each item's full rating set in the denominator."""
    measure = check_measure(measure)
    if measure == "extended_pearson":
        common, num, _, full = _pearson_parts(m, i, j)
    elif measure == "extended_cosine":
        common, num, _, full = _cosine_parts(m, i, j)
    else:
        raise ValueError(f"{measure} is not an extended measure")
    return _ratio(common, num, full)


def jaccard(i, j, m):
    _, vi = _item_vector(m, i)
    _, vj = _item_vector(m, j)
    union = len(vi.keys() | vj.keys())
    return len(vi.keys() & vj.keys()) / union if union else 0.0


def composite_similarity(measure, i, j, m):
    """Mix, ExtendedMix and WeightedPearson built from Jaccard and Pearson."""
    measure = check_measure(measure)
    jac = jaccard(i, j, m)
    if measure == "mix":
        return jac * (1.0 + classic_similarity("pearson", i, j, m)) / 2.0
    if measure == "extended_mix":
        return jac * (1.0 + extended_similarity("extended_pearson", i, j, m)) / 2.0
    if measure == "wpearson":
        return jac * classic_similarity("pearson", i, j, m)
    raise ValueError(f"{measure} is not a composite measure")


def similarity(measure, i, j, m):
    """Any of the eight measures between item ids ``i`` and ``j``."""
    measure = check_measure(measure)
    if measure in ("pearson", "cosine"):
        return classic_similarity(measure, i, j, m)
    if measure in ("extended_pearson", "extended_cosine"):
        return extended_similarity(measure, i, j, m)
    if measure == "jaccard":
        return jaccard(i, j, m)
    return composite_similarity(measure, i, j, m)


# -- similarity matrix ------------------------------------------------------

@dataclass
class SimilarityMatrix:
    """Per-item top-K neighbour lists in CSR layout.

    Row ``i`` lists neighbours by descending weight, ties by ascending index.
    """

    indptr: np.ndarray
    neighbors: np.ndarray
    weights: np.ndarray
    item_ids: np.ndarray
    k: int
    measure: str = "unknown"
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_items(self):
        return len(self.item_ids)

    def __len__(self):
        return len(self.neighbors)

    def __repr__(self):
        return (f"SimilarityMatrix(n_items={self.n_items}, k={self.k}, "
                f"measure={self.measure!r}, nnz={len(self)})")

    def neighbors_of(self, i):
        """(neighbour indices, weights) of item index ``i``."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.neighbors[lo:hi], self.weights[lo:hi]

    def to_csr(self):
        n = self.n_items
        # copies: scipy may sort indices in place and must not reorder our arrays
        W = sp.csr_matrix((self.weights.copy(), self.neighbors.copy(), self.indptr.copy()),
                          shape=(n, n))
        W.sort_indices()
        return W

    def get(self, i, j):
        nb, w = self.neighbors_of(i)
        hit = np.flatnonzero(nb == j)
        return float(w[hit[0]]) if len(hit) else 0.0

    def to_lists(self):
        """{item id: [(neighbour id, weight), ...]}"""
        ids = self.item_ids
        out = {}
        for i in range(self.n_items):
            nb, w = self.neighbors_of(i)
            out[ids[i]] = [(ids[j], float(x)) for j, x in zip(nb, w)]
        return out

    def reindex(self, item_ids):
        """Same neighbourhoods over another item universe; new items get none.

        Ids are matched on their text form, as written by :meth:`save`.
        """
        pos = {str(x): n for n, x in enumerate(item_ids)}
        old_to_new = np.array([pos.get(str(x), -1) for x in self.item_ids], dtype=np.int64)
        rows = np.repeat(np.arange(self.n_items), np.diff(self.indptr))
        r, c = old_to_new[rows], old_to_new[self.neighbors]
        keep = (r >= 0) & (c >= 0)
        n = len(item_ids)
        mat = sp.csr_matrix((self.weights[keep], (r[keep], c[keep])), shape=(n, n))
        out = SimilarityMatrix.from_csr(mat, self.k, item_ids, self.measure, self.fingerprint)
        out.meta = dict(self.meta)
        return out

    @classmethod
    def from_csr(cls, mat, k, item_ids, measure="unknown", fingerprint=""):
        """Re-truncate an arbitrary (n x n) weight matrix to top-``k`` rows."""
        mat = sp.csr_matrix(mat)
        rows = []
        for i in range(mat.shape[0]):
            lo, hi = mat.indptr[i], mat.indptr[i + 1]
            rows.append(_topk(mat.indices[lo:hi], mat.data[lo:hi], k, exclude=i))
        return cls._assemble(rows, k, item_ids, measure, fingerprint)

    @classmethod
    def _assemble(cls, rows, k, item_ids, measure, fingerprint):
        lengths = [len(r[0]) for r in rows]
        indptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        if rows:
            nb = np.concatenate([r[0] for r in rows]).astype(np.int64)
            w = np.concatenate([r[1] for r in rows]).astype(np.float64)
        else:
            nb, w = np.zeros(0, np.int64), np.zeros(0)
        return cls(indptr, nb, w, np.asarray(item_ids, dtype=object), int(k),
                   measure, fingerprint)

    # -- text export ------------------------------------------------------

    def save(self, path):
        """Write ``i<TAB>j<TAB>weight`` triples after a one-line header."""
        ids = self.item_ids
        with open(path, "w", encoding="utf-8") as fh:
            extra = "".join(f"\t{key}={val}" for key, val in self.meta.items())
            fh.write(f"# measure={self.measure}\tk={self.k}\tfingerprint={self.fingerprint}"
                     f"\tn_items={self.n_items}{extra}\n")
            fh.write("# items\t" + "\t".join(map(str, ids)) + "\n")
            for i in range(self.n_items):
                nb, w = self.neighbors_of(i)
                for j, x in zip(nb, w):
                    fh.write(f"{ids[i]}\t{ids[j]}\t{float(x)!r}\n")

    @classmethod
    def load(cls, path):
        header, items, triples = {}, None, []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("# items\t"):
                    items = line.split("\t")[1:]
                elif line.startswith("#"):
                    for kv in line[1:].strip().split("\t"):
                        key, _, val = kv.partition("=")
                        header[key] = val
                elif line:
                    triples.append(line.split("\t"))
        if items is None:
            items = sorted({t[0] for t in triples} | {t[1] for t in triples})
        index = {str(x): n for n, x in enumerate(items)}
        item_ids = np.array(items, dtype=object)
        n = len(items)
        rows = [index[t[0]] for t in triples]
        cols = [index[t[1]] for t in triples]
        vals = [float(t[2]) for t in triples]
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        k = int(header.pop("k", max(np.diff(mat.indptr), default=1)))
        out = cls.from_csr(mat, k, item_ids, header.pop("measure", "unknown"),
                           header.pop("fingerprint", ""))
        header.pop("n_items", None)
        out.meta = header
        return out


def _topk(idx, vals, k, exclude=-1):
    """Top-``k`` (index, weight) by descending weight then ascending index.

    Zero weights and ``exclude`` are dropped.
    """
    idx = np.asarray(idx, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    keep = (vals != 0) & (idx != exclude)
    idx, vals = idx[keep], vals[keep]
    if len(vals) > k:
        kth = -np.partition(-vals, k - 1)[k - 1]
        above = vals > kth
        tied = np.flatnonzero(vals == kth)
        tied = tied[np.argsort(idx[tied], kind="stable")][: k - int(above.sum())]
        sel = np.concatenate([np.flatnonzero(above), tied])
        idx, vals = idx[sel], vals[sel]
    order = np.lexsort((idx, -vals))
    return idx[order], vals[order]


# -- blocked search ----------------------------------------------------------

class _ItemStats:
    """Sparse item x user operands shared by all blocks."""

    def __init__(self, m, measure):
        X = m.by_item.astype(np.float64)
        X.sort_indices()
        self.measure = measure
        self.B = X.copy()
        self.B.data[:] = 1.0
        self.BT = self.B.T.tocsr()
        self.count = np.asarray(self.B.sum(axis=1)).ravel()
        if measure in ("pearson", "extended_pearson", "mix", "extended_mix", "wpearson"):
            means = m.item_means
            D = X.copy()
            D.data -= np.repeat(np.nan_to_num(means), np.diff(X.indptr))
            self.V = D
        elif measure in ("cosine", "extended_cosine"):
            self.V = X
        else:
            self.V = None
        if self.V is not None:
            self.VT = self.V.T.tocsr()
            V2 = self.V.multiply(self.V).tocsr()
            self.V2 = V2
            self.V2T = V2.T.tocsr()
            self.full = np.asarray(V2.sum(axis=1)).ravel()

    def block(self, rows):
        """Dense similarity rows for the item indices ``rows``."""
        measure = self.measure
        Bb = self.B[rows]
        inter = (Bb @ self.BT).toarray()
        with np.errstate(invalid="ignore", divide="ignore"):
            if measure in ("jaccard", "mix", "extended_mix", "wpearson"):
                union = self.count[rows, None] + self.count[None, :] - inter
                jac = np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)
                if measure == "jaccard":
                    return jac
            if self.V is None:
                raise AssertionError(measure)
            num = (self.V[rows] @ self.VT).toarray()
            if measure in ("extended_pearson", "extended_cosine", "extended_mix"):
                den = self.full[rows, None] * self.full[None, :]
            else:
                di = (self.V2[rows] @ self.BT).toarray()
                dj = (Bb @ self.V2T).toarray()
                den = di * dj
            ok = (den > 0) & (inter > 0)
            s = np.where(ok, num / np.sqrt(np.where(ok, den, 1.0)), 0.0)
        np.clip(s, -1.0, 1.0, out=s)
        if measure == "mix":
            return jac * (1.0 + s) / 2.0
        if measure == "extended_mix":
            return jac * (1.0 + s) / 2.0
        if measure == "wpearson":
            return jac * s
        return s


def _source_matrix(source, item_ids=None):
    if isinstance(source, DescriptorCatalog):
        return source.to_matrix(item_ids)
    if isinstance(source, RatingsMatrix):
        return source
    raise TypeError(f"expected RatingsMatrix or DescriptorCatalog, got {type(source).__name__}")


def _run_blocks(n, fn, n_jobs, block_size):
    blocks = [np.arange(s, min(s + block_size, n)) for s in range(0, n, block_size)]
    if n_jobs is None or n_jobs == 1 or len(blocks) <= 1:
        results = [fn(b) for b in blocks]
    else:
        workers = None if n_jobs in (-1, 0) else n_jobs
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(fn, blocks))
    return [row for rows in results for row in rows]


def knn_search(source, k=200, measure="wpearson", n_jobs=1, item_ids=None,
               block_size=BLOCK_SIZE):
    """Exact top-``k`` neighbours of every item.

    Parameters
    ----------
    source : RatingsMatrix or DescriptorCatalog
        Logs (collaborative) or descriptors (thematic). A catalog is aligned
        on ``item_ids`` when given.
    k : int
        Neighbourhood size.
    measure : str
        One of :data:`MEASURES`.
    n_jobs : int
        Worker threads over item blocks; the result does not depend on it.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    measure = check_measure(measure)
    m = _source_matrix(source, item_ids)
    if m.n_items == 0:
        raise ValueError("empty similarity source")
    stats = _ItemStats(m, measure)

    def work(rows):
        S = stats.block(rows)
        return [_topk(np.arange(m.n_items), S[r], k, exclude=i) for r, i in enumerate(rows)]

    rows = _run_blocks(m.n_items, work, n_jobs, block_size)
    return SimilarityMatrix._assemble(rows, k, m.item_ids, measure, m.fingerprint())


def dense_knn_search(vectors, k, measure, item_ids, n_jobs=1, block_size=BLOCK_SIZE,
                     fingerprint=""):
    """Top-``k`` neighbours over dense item vectors (full support).

    ``measure`` is ``pearson`` (row-centred cosine), ``cosine`` or
    ``inverse_euclidean`` (``1 / (1 + distance)``).
    """
    measure = str(measure).lower()
    if measure in ("neg_euclidean", "euclidean"):
        measure = "inverse_euclidean"
    X = np.asarray(vectors, dtype=np.float64)
    n = X.shape[0]
    if measure in ("pearson", "cosine"):
        Z = X - X.mean(axis=1, keepdims=True) if measure == "pearson" else X.copy()
        norms = np.linalg.norm(Z, axis=1)
        Z = np.divide(Z, norms[:, None], out=np.zeros_like(Z), where=norms[:, None] > 0)

        def block(rows):
            return np.clip(Z[rows] @ Z.T, -1.0, 1.0)
    elif measure == "inverse_euclidean":
        sq = (X * X).sum(axis=1)

        def block(rows):
            d2 = np.maximum(sq[rows, None] + sq[None, :] - 2.0 * X[rows] @ X.T, 0.0)
            return 1.0 / (1.0 + np.sqrt(d2))
    else:
        raise ValueError(f"unknown dense measure {measure!r}")

    def work(rows):
        S = block(rows)
        return [_topk(np.arange(n), S[r], k, exclude=i) for r, i in enumerate(rows)]

    rows = _run_blocks(n, work, n_jobs, block_size)
    return SimilarityMatrix._assemble(rows, k, item_ids, measure, fingerprint)


def merge_matrices(a, b, w, k=None):
    """Linear blend ``w * a + (1 - w) * b``, absent entries read as 0."""
    if not 0.0 <= w <= 1.0:
        raise ValueError("merge weight must lie in [0, 1]")
    if a.n_items != b.n_items or list(a.item_ids) != list(b.item_ids):
        raise ValueError("matrices cover different item universes")
    k = k or max(a.k, b.k)
    mixed = w * a.to_csr() + (1.0 - w) * b.to_csr()
    return SimilarityMatrix.from_csr(mixed, k, a.item_ids, f"merge({a.measure},{b.measure},{w:g})",
                                     _hash(a.fingerprint, b.fingerprint, repr(w)))


def _hash(*parts):
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)


def _splitmix(x):
    with np.errstate(over="ignore"):
        x = x + _GOLD
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        return x ^ (x >> np.uint64(31))


def hashed_uniform(seed, a, b, symmetric=True):
    """Deterministic U(0,1) value per (seed, a, b).

    With ``symmetric`` the value depends on the unordered pair {a, b}.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if symmetric:
        a, b = np.minimum(a, b), np.maximum(a, b)
    with np.errstate(over="ignore"):
        h = _splitmix(_splitmix(np.uint64(seed) ^ _splitmix(a.astype(np.uint64))) + b.astype(np.uint64))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def random_similarity_matrix(item_ids, k, seed=0, n_jobs=1, block_size=BLOCK_SIZE):
    """Symmetric uniform random weights in (0, 1), truncated to top-``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(item_ids)
    cols = np.arange(n)

    def work(rows):
        S = hashed_uniform(seed, rows[:, None], cols[None, :])
        return [_topk(cols, S[r], k, exclude=i) for r, i in enumerate(rows)]

    rows = _run_blocks(n, work, n_jobs, block_size)
    return SimilarityMatrix._assemble(rows, k, item_ids, "random", _hash("random", str(seed)))
