"""Glue from parsed events to training inputs and evaluation splits."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from mvgraph.graph import CrossViewLinks, ViewGraph, build_cross_links, build_view_graph
from mvgraph.ingest import (
    Event,
    Session,
    SessionRules,
    clean_events,
    collect_attributes,
    derive_view_sessions,
    sessionize_user,
    time_split,
)
from mvgraph.training.trainer import TrainingData


@dataclass
class Corpus:
    view_sessions: dict[str, list[Session]]
    attributes: dict[str, dict[str, str]]  # view -> item -> node
    test_items: dict[str, list[str]] = field(default_factory=dict)  # user -> held-out items
    missing: int = 0

    @property
    def item_sessions(self) -> list[Session]:
        return self.view_sessions["item"]

    def histories(self) -> dict[str, list[list[str]]]:
        out: dict[str, list[list[str]]] = {}
        for s in self.item_sessions:
            out.setdefault(s.user_id, []).append(list(s.nodes))
        return out


def group_by_user(events: Sequence[Event]) -> dict[str, list[Event]]:
    by_user: dict[str, list[Event]] = {}
    for e in events:
        by_user.setdefault(e.user_id, []).append(e)
    for evs in by_user.values():
        evs.sort(key=lambda e: e.timestamp)
    return by_user


def build_corpus(
    events: Sequence[Event],
    rules: SessionRules,
    views: Sequence[str] = ("item", "category"),
    cutoff: int | None = None,
    boundaries: Mapping[str, Sequence[int]] | None = None,
    on_missing: str = "skip",
) -> Corpus:
    """Sessionize every user and project item sessions onto the auxiliary views.

    With ``cutoff`` set, events at or after it are held out; their cleaned,
    de-duplicated items become each user's test set.
    """
    by_user = group_by_user(events)
    test: dict[str, list[Event]] = {}
    if cutoff is not None:
        by_user, test = time_split(by_user, cutoff)
    boundaries = boundaries or {}
    item_sessions: list[Session] = []
    for user in sorted(by_user):
        item_sessions.extend(sessionize_user(by_user[user], rules, boundaries.get(user)))
    train_events = [e for u in sorted(by_user) for e in by_user[u]]
    attributes = {v: collect_attributes(train_events, v) for v in views if v != "item"}
    derived = derive_view_sessions(item_sessions, attributes, on_missing)
    test_items: dict[str, list[str]] = {}
    for user in sorted(test):
        kept = list(dict.fromkeys(e.item_id for e in clean_events(test[user], rules)))
        if kept:
            test_items[user] = kept
    return Corpus(derived.sessions, attributes, test_items, derived.missing)


def build_graphs(corpus: Corpus, undirected: bool = False) -> dict[str, ViewGraph]:
    return {v: build_view_graph(s, v, undirected) for v, s in corpus.view_sessions.items()}


def build_links(corpus: Corpus, graphs: Mapping[str, ViewGraph]) -> dict[str, CrossViewLinks]:
    links = {}
    item_vocab = graphs["item"].vocab
    for view, amap in corpus.attributes.items():
        if view not in graphs:
            continue
        lk = build_cross_links(corpus.item_sessions, amap, item_vocab, graphs[view].vocab, "item", view)
        links[lk.name] = lk
    return links


def training_data(corpus: Corpus, views: Sequence[str] | None = None, undirected: bool = False) -> TrainingData:
    """Graphs, encoded sessions and item-to-attribute links for ``views``.

    Passing ``views=("item",)`` gives the single-view setup with no
    alignment tasks.
    """
    views = list(views or corpus.view_sessions)
    sub = Corpus({v: corpus.view_sessions[v] for v in views}, {v: a for v, a in corpus.attributes.items() if v in views})
    graphs = build_graphs(sub, undirected)
    return TrainingData.from_sessions(sub.view_sessions, graphs, build_links(sub, graphs))
