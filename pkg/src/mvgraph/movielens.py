"""MovieLens-100K reader (GroupLens ``u.data`` / ``u.item`` layout).

Each rating becomes an :class:`~mvgraph.ingest.Event`. A movie's category is
its genre combination joined with ``|`` (for example ``Action|Thriller``),
which gives every movie exactly one category node.
"""

from __future__ import annotations

import csv
from pathlib import Path

from mvgraph.errors import ConfigError, DataError
from mvgraph.ingest import Event

GENRES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary", "Drama",
    "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)  # fmt: skip


def read_genres(path: str | Path) -> dict[str, str]:
    """Movie id -> genre-combination string from ``u.item``."""
    out = {}
    with open(path, encoding="latin-1", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="|"), 1):
            if not row:
                continue
            flags = row[-len(GENRES) :]
            if len(row) < len(GENRES) + 1 or any(f not in ("0", "1") for f in flags):
                raise DataError(f"{path}:{lineno}: malformed u.item row")
            names = [g for g, f in zip(GENRES, flags) if f == "1"]
            out[row[0]] = "|".join(names) if names else "unknown"
    return out


def read_ml100k(directory: str | Path) -> list[Event]:
    """All ratings as events, in file order."""
    directory = Path(directory)
    data, items = directory / "u.data", directory / "u.item"
    for p in (data, items):
        if not p.is_file():
            raise ConfigError(f"MovieLens file not found: {p}")
    genres = read_genres(items)
    events = []
    with open(data, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise DataError(f"{data}:{lineno}: expected 4 fields")
            user, movie, rating, ts = parts
            events.append(Event(user, movie, int(ts), category_id=genres.get(movie), rating=float(rating)))
    return events
