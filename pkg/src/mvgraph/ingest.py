"""Behaviour-log parsing, cleaning and sessionisation.

Raw logs are delimiter-separated text with a header row. Events are grouped
per user and sessionised with the rules in :class:`SessionRules`; category and
shop sessions are projected from the item sessions afterwards.
"""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import IO

from mvgraph.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

HOUR = 3600
YEAR = 365 * 24 * HOUR


@dataclass(frozen=True)
class Event:
    user_id: str
    item_id: str
    timestamp: int
    category_id: str | None = None
    shop_id: str | None = None
    dwell: int | None = None
    rating: float | None = None

    def attribute(self, view: str) -> str | None:
        if view == "item":
            return self.item_id
        if view == "category":
            return self.category_id
        if view == "shop":
            return self.shop_id
        raise ConfigError(f"unknown view {view!r}")


@dataclass
class Session:
    user_id: str
    view: str
    nodes: list[str]
    start_ts: int
    end_ts: int

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class SessionRules:
    """Cleaning and split/merge thresholds.

    ``movielens=True`` switches dwell filtering to rating filtering, the idle
    threshold to ``movielens_idle_split`` and enables the ``max_len`` cut.
    Durations are seconds except ``min_dwell_ms``.
    """

    min_dwell_ms: int = 2000
    idle_split: int = HOUR
    merge_gap: int = 30 * 60
    max_len: int | None = None
    min_rating: float | None = None
    movielens_idle_split: int = YEAR
    movielens: bool = False

    def __post_init__(self) -> None:
        durations = (self.min_dwell_ms, self.idle_split, self.merge_gap, self.movielens_idle_split)
        if any(d <= 0 for d in durations):
            raise ConfigError("all session durations must be positive")
        if self.merge_gap >= self.idle_split:
            raise ConfigError("merge_gap must be smaller than idle_split")
        if self.max_len is not None and self.max_len < 1:
            raise ConfigError("max_len must be >= 1")

    @classmethod
    def for_movielens(cls, **overrides) -> SessionRules:
        params = {"max_len": 50, "min_rating": 3.0, "movielens": True}
        params.update(overrides)
        return cls(**params)

    @property
    def idle_threshold(self) -> int:
        return self.movielens_idle_split if self.movielens else self.idle_split


@dataclass(frozen=True)
class Schema:
    """Maps logical fields to header names; ``None`` marks an absent column."""

    user_id: str = "user_id"
    item_id: str = "item_id"
    timestamp: str = "timestamp"
    category_id: str | None = "category_id"
    shop_id: str | None = None
    dwell: str | None = "dwell_ms"
    rating: str | None = None
    delimiter: str = "\t"

    def columns(self) -> dict[str, str]:
        names = ("user_id", "item_id", "timestamp", "category_id", "shop_id", "dwell", "rating")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}


@dataclass
class ParseResult:
    events: dict[str, list[Event]] = field(default_factory=dict)
    skipped: int = 0

    @property
    def n_events(self) -> int:
        return sum(len(v) for v in self.events.values())


def _text_stream(source: IO[bytes] | IO[str] | Iterable[str]) -> Iterable[str]:
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)):
        return io.TextIOWrapper(source, encoding="utf-8", newline="")
    return source


def parse_events(source: IO[bytes] | IO[str] | Iterable[str], schema: Schema = Schema()) -> ParseResult:
    """Read a delimited log into per-user, time-sorted event lists.

    Rows with a non-integer timestamp or dwell, a negative value, a
    non-numeric rating or a wrong field count are skipped and counted.
    A declared column missing from the header raises :class:`ConfigError`.
    """
    reader = csv.reader(_text_stream(source), delimiter=schema.delimiter)
    result = ParseResult()
    header = next(reader, None)
    if header is None:
        return result
    header = [h.strip() for h in header]
    cols = schema.columns()
    missing = [name for name in cols.values() if name not in header]
    if missing:
        raise ConfigError(f"input is missing required column(s): {', '.join(missing)}")
    pos = {logical: header.index(name) for logical, name in cols.items()}

    def get(row: Sequence[str], logical: str) -> str | None:
        if logical not in pos:
            return None
        value = row[pos[logical]].strip()
        return value if value != "" else None

    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            result.skipped += 1
            continue
        try:
            ts = int(get(row, "timestamp") or "")
            dwell_raw = get(row, "dwell")
            dwell = int(dwell_raw) if dwell_raw is not None else None
            rating_raw = get(row, "rating")
            rating = float(rating_raw) if rating_raw is not None else None
        except ValueError:
            result.skipped += 1
            continue
        user, item = get(row, "user_id"), get(row, "item_id")
        if user is None or item is None or ts < 0 or (dwell is not None and dwell < 0):
            result.skipped += 1
            continue
        event = Event(
            user_id=user,
            item_id=item,
            timestamp=ts,
            category_id=get(row, "category_id"),
            shop_id=get(row, "shop_id"),
            dwell=dwell,
            rating=rating,
        )
        result.events.setdefault(user, []).append(event)

    for user_events in result.events.values():
        user_events.sort(key=lambda e: e.timestamp)  # stable: ties keep file order
    if result.skipped:
        logger.info("skipped %d malformed rows", result.skipped)
    return result


def clean_events(events: Sequence[Event], rules: SessionRules) -> list[Event]:
    """Drop short-dwell clicks, or low ratings in MovieLens mode.

    Events without a recorded dwell (or rating) are kept.
    """
    if rules.movielens:
        if rules.min_rating is None:
            return list(events)
        return [e for e in events if e.rating is None or e.rating >= rules.min_rating]
    return [e for e in events if e.dwell is None or e.dwell >= rules.min_dwell_ms]


def collapse_duplicates(nodes: Iterable[str]) -> list[str]:
    out: list[str] = []
    for node in nodes:
        if not out or out[-1] != node:
            out.append(node)
    return out


def split_sessions(
    events: Sequence[Event],
    rules: SessionRules,
    boundaries: Sequence[int] | None = None,
) -> list[Session]:
    """Cut one user's cleaned, time-sorted events into item-view sessions.

    A cut happens between consecutive events when an app open/close
    timestamp ``b`` satisfies ``prev.timestamp < b <= next.timestamp`` or
    when the gap reaches the idle threshold. In MovieLens mode runs longer
    than ``max_len`` are chunked. Consecutive duplicates are collapsed last.
    """
    if not events:
        return []
    cuts = sorted(boundaries or ())
    threshold = rules.idle_threshold
    runs: list[list[Event]] = [[events[0]]]
    b = 0
    for prev, cur in zip(events, events[1:]):
        while b < len(cuts) and cuts[b] <= prev.timestamp:
            b += 1
        crosses_boundary = b < len(cuts) and cuts[b] <= cur.timestamp
        if crosses_boundary or cur.timestamp - prev.timestamp >= threshold:
            runs.append([cur])
        else:
            runs[-1].append(cur)

    if rules.movielens and rules.max_len is not None:
        chunked = []
        for run in runs:
            chunked.extend(run[i : i + rules.max_len] for i in range(0, len(run), rules.max_len))
        runs = chunked

    return [
        Session(
            user_id=run[0].user_id,
            view="item",
            nodes=collapse_duplicates(e.item_id for e in run),
            start_ts=run[0].timestamp,
            end_ts=run[-1].timestamp,
        )
        for run in runs
    ]


def merge_sessions(sessions: Sequence[Session], rules: SessionRules) -> list[Session]:
    """Concatenate consecutive sessions whose gap is below ``merge_gap``.

    Works left to right, so chains merge into one; the output is a fixed
    point of this function.
    """
    merged: list[Session] = []
    for s in sessions:
        if merged and s.start_ts - merged[-1].end_ts < rules.merge_gap:
            last = merged[-1]
            merged[-1] = Session(
                user_id=last.user_id,
                view=last.view,
                nodes=collapse_duplicates(last.nodes + s.nodes),
                start_ts=last.start_ts,
                end_ts=max(last.end_ts, s.end_ts),
            )
        else:
            merged.append(Session(s.user_id, s.view, list(s.nodes), s.start_ts, s.end_ts))
    return merged


def sessionize_user(
    events: Sequence[Event],
    rules: SessionRules,
    boundaries: Sequence[int] | None = None,
) -> list[Session]:
    """clean -> split -> merge for one user's events.

    Merging is skipped in MovieLens mode, whose preprocessing only splits
    (merging would undo the ``max_len`` chunks).
    """
    sessions = split_sessions(clean_events(events, rules), rules, boundaries)
    if not rules.movielens:
        sessions = merge_sessions(sessions, rules)
    return sessions


def collect_attributes(events: Iterable[Event], view: str) -> dict[str, str]:
    """Item -> attribute map for ``view``; an item with two values is a data error."""
    mapping: dict[str, str] = {}
    for e in events:
        attr = e.attribute(view)
        if attr is None:
            continue
        known = mapping.setdefault(e.item_id, attr)
        if known != attr:
            raise DataError(f"item {e.item_id!r} has two {view} values: {known!r} and {attr!r}")
    return mapping


@dataclass
class DerivedSessions:
    sessions: dict[str, list[Session]]
    missing: int = 0


def derive_view_sessions(
    item_sessions: Sequence[Session],
    links: Mapping[str, Mapping[str, str]],
    on_missing: str = "skip",
) -> DerivedSessions:
    """Project item sessions onto each auxiliary view through its link map.

    ``links`` maps a view name to an item -> node mapping. Items without a
    mapping are dropped (and counted) under ``on_missing="skip"``; with
    ``"fatal"`` they raise :class:`DataError`.
    """
    if on_missing not in ("skip", "fatal"):
        raise ConfigError(f"on_missing must be 'skip' or 'fatal', got {on_missing!r}")
    out: dict[str, list[Session]] = {"item": list(item_sessions)}
    missing = 0
    for view, mapping in links.items():
        projected: list[Session] = []
        for s in item_sessions:
            nodes = []
            for item in s.nodes:
                attr = mapping.get(item)
                if attr is None:
                    if on_missing == "fatal":
                        raise DataError(f"item {item!r} has no {view} mapping")
                    missing += 1
                    continue
                nodes.append(attr)
            nodes = collapse_duplicates(nodes)
            if nodes:
                projected.append(Session(s.user_id, view, nodes, s.start_ts, s.end_ts))
        out[view] = projected
    if missing:
        logger.info("dropped %d item occurrences without an auxiliary mapping", missing)
    return DerivedSessions(out, missing)


def time_split(
    events: Mapping[str, Sequence[Event]], cutoff: int
) -> tuple[dict[str, list[Event]], dict[str, list[Event]]]:
    """Events strictly before ``cutoff`` train; the rest test."""
    train: dict[str, list[Event]] = {}
    test: dict[str, list[Event]] = {}
    for user, evs in events.items():
        before = [e for e in evs if e.timestamp < cutoff]
        after = [e for e in evs if e.timestamp >= cutoff]
        if before:
            train[user] = before
        if after:
            test[user] = after
    return train, test


def write_sessions(stream: IO[str], sessions: Iterable[Session]) -> int:
    n = 0
    for s in sessions:
        stream.write(f"{s.user_id}\t{s.view}\t{','.join(s.nodes)}\n")
        n += 1
    return n


def read_sessions(stream: Iterable[str]) -> list[Session]:
    """Inverse of :func:`write_sessions`; timestamps are not stored and come back as 0."""
    out = []
    for lineno, line in enumerate(stream, 1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not parts[2]:
            raise DataError(f"malformed session line {lineno}: {line!r}")
        out.append(Session(parts[0], parts[1], parts[2].split(","), 0, 0))
    return out
