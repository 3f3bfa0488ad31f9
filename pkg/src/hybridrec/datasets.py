"""Loaders for MovieLens-style directories (``ratings.dat``, ``movies.dat``)."""

import os
import re
from pathlib import Path

from .ratings import DataError, _read_lines, load_logs, make_catalog

DATA_ENV = "HYBRIDREC_MOVIELENS_DIR"

_YEAR = re.compile(r"\((\d{4})\)\s*$")


def movie_catalog(path):
    """Descriptor catalog from ``id::title::Genre|Genre`` lines.

    Descriptors: one ``genre=...`` per genre, plus ``year=...`` and
    ``decade=...`` parsed from the trailing ``(YYYY)`` of the title.
    """
    records = []
    for lineno, line in _read_lines(path):
        parts = line.split("::")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        item, title, genres = (p.strip() for p in parts)
        for g in filter(None, genres.split("|")):
            if g != "(no genres listed)":
                records.append((item, "genre", g))
        m = _YEAR.search(title)
        if m:
            year = int(m.group(1))
            records.append((item, "year", year))
            records.append((item, "decade", f"{year // 10 * 10}s"))
    if not records:
        raise DataError(f"{path}: no catalog records")
    return make_catalog(records)


def load_movielens(directory=None):
    """(logs, catalog) from a MovieLens directory.

    ``directory`` defaults to the ``HYBRIDREC_MOVIELENS_DIR`` environment
    variable. The catalog is None when ``movies.dat`` is missing.
    """
    directory = directory or os.environ.get(DATA_ENV)
    if not directory:
        raise DataError(f"no MovieLens directory given and {DATA_ENV} is unset")
    directory = Path(directory)
    logs = load_logs(directory / "ratings.dat", fmt="movielens")
    movies = directory / "movies.dat"
    catalog = movie_catalog(movies) if movies.exists() else None
    return logs, catalog
