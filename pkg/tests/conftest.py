import numpy as np
import pytest

from hybridrec.ratings import RatingsMatrix

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE_LINES = {}

D1 = {
    "u1": {"i1": 5, "i2": 3},
    "u2": {"i1": 4, "i2": 2, "i3": 4},
    "u3": {"i2": 1, "i3": 5},
}


def from_dict(logs, scale=(1.0, 5.0)):
    users, items, ratings = [], [], []
    for u, row in logs.items():
        for i, r in row.items():
            users.append(u)
            items.append(i)
            ratings.append(r)
    return RatingsMatrix.from_records(users, items, ratings, scale=scale)


def to_dict(m):
    out = {}
    for u, i, r in m.triples():
        out.setdefault(u, {})[i] = r
    return out


def random_logs(rng, n_users, n_items, density=0.4, scale=(1, 5), integer=True):
    """Random sparse logs as {user: {item: rating}}; every user has >= 1 log."""
    logs = {}
    for u in range(n_users):
        mask = rng.random(n_items) < density
        if not mask.any():
            mask[rng.integers(n_items)] = True
        vals = rng.integers(scale[0], scale[1] + 1, size=n_items) if integer \
            else rng.uniform(scale[0], scale[1], size=n_items)
        logs[u] = {int(i): float(vals[i]) for i in np.flatnonzero(mask)}
    return logs


@pytest.fixture
def d1():
    return from_dict(D1)


@pytest.fixture
def d1_dict():
    return {u: dict(row) for u, row in D1.items()}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        ok, detail = ACCEPTANCE_LINES[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
