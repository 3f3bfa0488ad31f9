"""Brute-force reference implementations written straight from the formulas.

Everything here works on plain dicts ({user: {item: rating}}) and loops,
sharing no code with the package.
"""

import math
from itertools import combinations


def item_vectors(logs):
    """{item: {user: rating}} from {user: {item: rating}}."""
    out = {}
    for u, row in logs.items():
        for i, r in row.items():
            out.setdefault(i, {})[u] = r
    return out


def mean(values):
    values = list(values)
    return sum(values) / len(values) if values else None


def sim(measure, a, b, items):
    va, vb = items.get(a, {}), items.get(b, {})
    common = set(va) & set(vb)
    ma, mb = mean(va.values()), mean(vb.values())

    def ratio(num, da, db):
        if not common or da * db <= 0:
            return 0.0
        return max(-1.0, min(1.0, num / math.sqrt(da * db)))

    def pearson():
        num = sum((va[u] - ma) * (vb[u] - mb) for u in common)
        return ratio(num, sum((va[u] - ma) ** 2 for u in common),
                     sum((vb[u] - mb) ** 2 for u in common))

    def ext_pearson():
        num = sum((va[u] - ma) * (vb[u] - mb) for u in common)
        return ratio(num, sum((r - ma) ** 2 for r in va.values()),
                     sum((r - mb) ** 2 for r in vb.values()))

    def jac():
        union = set(va) | set(vb)
        return len(common) / len(union) if union else 0.0

    if measure == "pearson":
        return pearson()
    if measure == "extended_pearson":
        return ext_pearson()
    if measure == "cosine":
        return ratio(sum(va[u] * vb[u] for u in common), sum(va[u] ** 2 for u in common),
                     sum(vb[u] ** 2 for u in common))
    if measure == "extended_cosine":
        return ratio(sum(va[u] * vb[u] for u in common), sum(r * r for r in va.values()),
                     sum(r * r for r in vb.values()))
    if measure == "jaccard":
        return jac()
    if measure == "mix":
        return jac() * (1 + pearson()) / 2
    if measure == "extended_mix":
        return jac() * (1 + ext_pearson()) / 2
    if measure == "wpearson":
        return jac() * pearson()
    raise ValueError(measure)


def knn(measure, items, k, order):
    """{item: [(neighbour, weight)]}: descending weight, then position in ``order``."""
    pos = {x: n for n, x in enumerate(order)}
    out = {}
    for a in order:
        cands = [(b, sim(measure, a, b, items)) for b in order if b != a]
        cands = [(b, w) for b, w in cands if w != 0]
        cands.sort(key=lambda t: (-t[1], pos[t[0]]))
        out[a] = cands[:k]
    return out


def default(logs, u, i, scale=(1, 5), min_support=10):
    items = item_vectors(logs)
    mu = mean(logs.get(u, {}).values())
    vi = items.get(i, {})
    robust = mean(vi.values()) if len(vi) >= min_support else None
    if mu is not None and robust is not None:
        v = (mu + robust) / 2
    elif mu is not None:
        v = mu
    elif vi:
        v = mean(vi.values())
    else:
        v = mean(r for row in logs.values() for r in row.values())
    return min(max(v, scale[0]), scale[1])


def mean_based(logs, neighbours, u, i, scale=(1, 5)):
    """(value, used_model) from item mean plus weighted deviations."""
    items = item_vectors(logs)
    prof = logs.get(u, {})
    terms = [(j, w) for j, w in neighbours.get(i, []) if j in prof]
    den = sum(abs(w) for _, w in terms)
    if den == 0 or i not in items:
        return default(logs, u, i, scale), False
    v = mean(items[i].values()) + sum(w * (prof[j] - mean(items[j].values())) for j, w in terms) / den
    return min(max(v, scale[0]), scale[1]), True


def mono_user(logs, neighbours, u, i, scale=(1, 5)):
    prof = logs.get(u, {})
    terms = [(j, w) for j, w in neighbours.get(i, []) if j in prof]
    den = sum(abs(w) for _, w in terms)
    if den == 0:
        m = mean(prof.values())
        v = m if m is not None else (scale[0] + scale[1]) / 2
        return min(max(v, scale[0]), scale[1]), False
    v = sum(w * prof[j] for j, w in terms) / den
    return min(max(v, scale[0]), scale[1]), True


def ndpm_counts(per_user):
    """per_user: {user: [(truth, prediction), ...]} -> (C_l, C_minus, C_u)."""
    cl = cm = cu = 0
    for pairs in per_user.values():
        for (t1, p1), (t2, p2) in combinations(pairs, 2):
            if t1 == t2:
                continue
            cl += 1
            if p1 == p2:
                cu += 1
            elif (t1 > t2) != (p1 > p2):
                cm += 1
    return cl, cm, cu


def discovery(recs, train, test, catalog_size):
    """(|H|, precision, AMI) with recs {user: [items]}."""
    counts = {}
    for row in train.values():
        for i in row:
            counts[i] = counts.get(i, 0) + 1
    h = rel = 0
    smi = 0.0
    for u, items in recs.items():
        mu = mean(train[u].values())
        for i in items:
            if i in test.get(u, {}):
                h += 1
                liked = test[u][i] >= mu
                rel += liked
                smi += catalog_size / max(counts.get(i, 0), 1) * (1 if liked else -1)
    if not h:
        return 0, None, None
    return h, rel / h, smi / h
