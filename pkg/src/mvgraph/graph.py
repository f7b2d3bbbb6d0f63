"""Per-view co-occurrence graphs and cross-view link tables."""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from mvgraph.errors import DataError
from mvgraph.ingest import Session


@dataclass
class Vocab:
    """Dense index assignment in first-seen order."""

    ids: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> Vocab:
        v = cls()
        for i in ids:
            v.add(i)
        return v

    def add(self, node_id: str) -> int:
        idx = self.index.get(node_id)
        if idx is None:
            idx = len(self.ids)
            self.index[node_id] = idx
            self.ids.append(node_id)
        return idx

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.index

    def encode(self, nodes: Iterable[str]) -> np.ndarray:
        return np.fromiter((self.index[n] for n in nodes), dtype=np.int64)


@dataclass
class ViewGraph:
    view: str
    vocab: Vocab
    edges: Counter  # (src_index, dst_index) -> weight
    node_freq: np.ndarray
    undirected: bool = False

    @property
    def n_nodes(self) -> int:
        return len(self.vocab)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def total_weight(self) -> int:
        return int(sum(self.edges.values()))

    def edge_weights_by_id(self) -> dict[tuple[str, str], int]:
        ids = self.vocab.ids
        return {(ids[a], ids[b]): w for (a, b), w in self.edges.items()}

    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR arrays ``(indptr, indices, weights)`` sorted by destination index."""
        n = self.n_nodes
        if not self.edges:
            return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
        keys = np.array(sorted(self.edges), dtype=np.int64)
        weights = np.array([self.edges[tuple(k)] for k in keys.tolist()], dtype=np.float64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, keys[:, 0] + 1, 1)
        return np.cumsum(indptr), keys[:, 1].copy(), weights

    def merge(self, other: ViewGraph) -> ViewGraph:
        """Combine two shard graphs; counts add, ``self``'s vocab order comes first."""
        vocab = Vocab.from_ids(self.vocab.ids)
        remap = np.array([vocab.add(i) for i in other.vocab.ids], dtype=np.int64)
        freq = np.zeros(len(vocab), dtype=np.int64)
        freq[: self.n_nodes] += self.node_freq
        np.add.at(freq, remap, other.node_freq)
        edges = Counter(self.edges)
        for (a, b), w in other.edges.items():
            edges[(int(remap[a]), int(remap[b]))] += w
        return ViewGraph(self.view, vocab, edges, freq, self.undirected)


def build_view_graph(
    sessions: Iterable[Session | Sequence[str]],
    view: str = "item",
    undirected: bool = False,
) -> ViewGraph:
    """Count consecutive-pair edges and node occurrences over sessions.

    With ``undirected=True`` every pair is stored once under
    ``(min, max)`` index order.
    """
    vocab = Vocab()
    edges: Counter = Counter()
    freq: list[int] = []
    for s in sessions:
        nodes = s.nodes if isinstance(s, Session) else s
        prev = None
        for node in nodes:
            idx = vocab.add(node)
            if idx == len(freq):
                freq.append(0)
            freq[idx] += 1
            if prev is not None and prev != idx:
                key = (min(prev, idx), max(prev, idx)) if undirected else (prev, idx)
                edges[key] += 1
            prev = idx
    return ViewGraph(view, vocab, edges, np.asarray(freq, dtype=np.int64), undirected)


@dataclass
class CrossViewLinks:
    from_view: str
    to_view: str
    pairs: dict[int, int]
    observed: Counter  # (from_index, to_index) -> occurrence count

    @property
    def name(self) -> str:
        return relation_name(self.from_view, self.to_view)

    def __len__(self) -> int:
        return len(self.pairs)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(from, to, count)`` over observed pairs in insertion order."""
        if not self.observed:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        keys = np.array(list(self.observed.keys()), dtype=np.int64)
        counts = np.array(list(self.observed.values()), dtype=np.int64)
        return keys[:, 0], keys[:, 1], counts


def relation_name(from_view: str, to_view: str) -> str:
    return f"{from_view[0].upper()}-{to_view[0].upper()}"


def build_cross_links(
    item_sessions: Iterable[Session | Sequence[str]],
    attribute_map: Mapping[str, str] | Iterable[tuple[str, str]],
    from_vocab: Vocab,
    to_vocab: Vocab,
    from_view: str = "item",
    to_view: str = "category",
) -> CrossViewLinks:
    """Link every observed item to its attribute node.

    ``attribute_map`` may be a mapping or an iterable of ``(item, attr)``
    pairs; the latter is checked for items with two distinct attributes.
    Items (or attributes) absent from the vocabularies are ignored.
    """
    if isinstance(attribute_map, Mapping):
        amap = dict(attribute_map)
    else:
        amap = {}
        for item, attr in attribute_map:
            known = amap.setdefault(item, attr)
            if known != attr:
                raise DataError(f"item {item!r} linked to both {known!r} and {attr!r}")
    pairs: dict[int, int] = {}
    observed: Counter = Counter()
    for s in item_sessions:
        nodes = s.nodes if isinstance(s, Session) else s
        for item in nodes:
            attr = amap.get(item)
            if attr is None or item not in from_vocab or attr not in to_vocab:
                continue
            a, b = from_vocab.index[item], to_vocab.index[attr]
            pairs[a] = b
            observed[(a, b)] += 1
    return CrossViewLinks(from_view, to_view, pairs, observed)


def random_walks(
    graph: ViewGraph,
    walk_length: int,
    walks_per_node: int,
    rng: np.random.Generator,
) -> Iterator[np.ndarray]:
    """Weighted random walks starting once per node per round.

    Transition probability is proportional to edge weight; a walk stops
    early at a node without out-edges. Undirected graphs walk both ways.
    """
    if graph.undirected:
        edges = Counter()
        for (a, b), w in graph.edges.items():
            edges[(a, b)] += w
            edges[(b, a)] += w
        graph = ViewGraph(graph.view, graph.vocab, edges, graph.node_freq, False)
    indptr, indices, weights = graph.adjacency()
    cum = np.zeros_like(weights)
    for n in range(graph.n_nodes):
        lo, hi = indptr[n], indptr[n + 1]
        if hi > lo:
            cum[lo:hi] = np.cumsum(weights[lo:hi]) / weights[lo:hi].sum()
    for _ in range(walks_per_node):
        for start in rng.permutation(graph.n_nodes):
            walk = [int(start)]
            for _ in range(walk_length - 1):
                cur = walk[-1]
                lo, hi = indptr[cur], indptr[cur + 1]
                if hi == lo:
                    break
                j = lo + int(np.searchsorted(cum[lo:hi], rng.random(), side="right"))
                walk.append(int(indices[min(j, hi - 1)]))
            yield np.asarray(walk, dtype=np.int64)


def write_graph(stream: IO[str], graph: ViewGraph) -> None:
    ids = graph.vocab.ids
    for (a, b), w in graph.edges.items():
        stream.write(f"{ids[a]}\t{ids[b]}\t{w}\n")


def write_vocab(stream: IO[str], graph: ViewGraph) -> None:
    for idx, node in enumerate(graph.vocab.ids):
        stream.write(f"{node}\t{idx}\t{int(graph.node_freq[idx])}\n")


def write_links(stream: IO[str], links: CrossViewLinks, from_vocab: Vocab, to_vocab: Vocab) -> None:
    for (a, b), c in links.observed.items():
        stream.write(f"{from_vocab.ids[a]}\t{to_vocab.ids[b]}\t{c}\n")


def graph_stats(graph: ViewGraph) -> dict[str, int]:
    return {
        "nodes": graph.n_nodes,
        "distinct_edges": graph.n_edges,
        "total_edge_weight": graph.total_weight,
        "occurrences": int(graph.node_freq.sum()),
    }
