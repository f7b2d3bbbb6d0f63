"""Training-example streams: skip-gram pairs, noise samples, cross-view pairs."""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np

from mvgraph.errors import ConfigError
from mvgraph.graph import CrossViewLinks


@dataclass(frozen=True)
class SamplerConfig:
    window: int = 9
    negatives_k: int = 10
    noise_power: float = 0.75
    batch_size: int = 2048
    epochs: int = 10
    seed: int = 0
    inter_mode: str = "count"  # or "uniform"

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.negatives_k < 1:
            raise ConfigError("negatives_k must be >= 1")
        if not 0.0 <= self.noise_power <= 1.0:
            raise ConfigError("noise_power must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.inter_mode not in ("count", "uniform"):
            raise ConfigError(f"inter_mode must be 'count' or 'uniform', got {self.inter_mode!r}")


@dataclass(frozen=True)
class NoiseDistribution:
    probs: np.ndarray
    cdf: np.ndarray

    def __len__(self) -> int:
        return len(self.probs)

    def draw(self, size, rng: np.random.Generator) -> np.ndarray:
        idx = np.searchsorted(self.cdf, rng.random(size), side="right")
        return np.minimum(idx, len(self.probs) - 1)


def build_noise(freq: Sequence[float] | np.ndarray, power: float = 0.75) -> NoiseDistribution:
    """Unigram counts raised to ``power`` and normalised."""
    freq = np.asarray(freq, dtype=np.float64)
    if freq.size == 0:
        raise ConfigError("cannot build a noise distribution over an empty vocabulary")
    if np.any(freq < 1):
        raise ConfigError("node frequencies must be >= 1")
    weights = freq**power
    probs = weights / weights.sum()
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return NoiseDistribution(probs, cdf)


def sample_negatives(
    dist: NoiseDistribution,
    k: int,
    exclude,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw ``k`` noise indices per excluded target, redrawing collisions.

    ``exclude`` may be a scalar (returns shape ``(k,)``) or an array of
    targets (returns ``(len(exclude), k)``).
    """
    if len(dist) < 2:
        raise ConfigError("negative sampling needs a vocabulary of at least 2 nodes")
    if k < 1:
        raise ConfigError("k must be >= 1")
    scalar = np.ndim(exclude) == 0
    excl = np.atleast_1d(np.asarray(exclude, dtype=np.int64))
    if np.any(dist.probs[excl] >= 1.0):
        raise ConfigError("an excluded node carries all of the noise mass")
    out = dist.draw((len(excl), k), rng)
    bad = out == excl[:, None]
    while bad.any():
        out[bad] = dist.draw(int(bad.sum()), rng)
        bad = out == excl[:, None]
    return out[0] if scalar else out


def gen_skipgram_pairs(session: Sequence[int] | np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """All (center, context) index pairs within ``window`` positions.

    Ordered by center position, then offset from ``-window`` to ``window``.
    """
    seq = np.asarray(session)
    n = len(seq)
    pos_c, pos_o = [], []
    for j in range(-window, window + 1):
        if j == 0 or abs(j) >= n:
            continue
        t = np.arange(max(0, -j), min(n, n - j))
        pos_c.append(t)
        pos_o.append(t + j)
    if not pos_c:
        return seq[:0], seq[:0]
    c = np.concatenate(pos_c)
    o = np.concatenate(pos_o)
    order = np.lexsort((o, c))
    return seq[c[order]], seq[o[order]]


def corpus_pairs(sessions: Sequence[np.ndarray], window: int) -> tuple[np.ndarray, np.ndarray]:
    """Skip-gram pairs over every session of length >= 2, concatenated.

    Pairs whose centre and context are the same node (a revisit within the
    window) are dropped.
    """
    centers, contexts = [], []
    for s in sessions:
        if len(s) < 2:
            continue
        c, o = gen_skipgram_pairs(s, window)
        keep = c != o
        centers.append(c[keep])
        contexts.append(o[keep])
    if not centers:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(centers).astype(np.int64), np.concatenate(contexts).astype(np.int64)


@dataclass
class IntraBatch:
    view: str
    centers: np.ndarray
    contexts: np.ndarray
    negatives: np.ndarray  # (B, k)

    def __len__(self) -> int:
        return len(self.centers)


@dataclass
class InterBatch:
    relation: str
    sources: np.ndarray
    targets: np.ndarray
    negatives: np.ndarray  # (B, k), indices in the target vocabulary

    def __len__(self) -> int:
        return len(self.sources)


class IntraStream:
    """Endless shuffled batches of skip-gram examples for one view.

    One pass over the pair set is an epoch; the stream reshuffles and
    starts over when exhausted.
    """

    def __init__(
        self,
        view: str,
        centers: np.ndarray,
        contexts: np.ndarray,
        noise: NoiseDistribution,
        config: SamplerConfig,
        rng: np.random.Generator,
    ) -> None:
        if len(centers) == 0:
            raise ConfigError(f"view {view!r} produced no skip-gram pairs")
        self.view = view
        self.centers = centers
        self.contexts = contexts
        self.noise = noise
        self.config = config
        self.rng = rng
        self._order = np.zeros(0, dtype=np.int64)
        self._pos = 0

    @property
    def n_pairs(self) -> int:
        return len(self.centers)

    def batches_per_epoch(self) -> int:
        return -(-self.n_pairs // self.config.batch_size)

    def next_batch(self) -> IntraBatch:
        if self._pos >= len(self._order):
            self._order = self.rng.permutation(self.n_pairs)
            self._pos = 0
        sel = self._order[self._pos : self._pos + self.config.batch_size]
        self._pos += len(sel)
        ctx = self.contexts[sel]
        negs = sample_negatives(self.noise, self.config.negatives_k, ctx, self.rng)
        return IntraBatch(self.view, self.centers[sel], ctx, negs)

    def __iter__(self) -> Iterator[IntraBatch]:
        while True:
            yield self.next_batch()


class InterStream:
    """Endless batches of (item, attribute) positives with noise attributes."""

    def __init__(
        self,
        links: CrossViewLinks,
        noise_to: NoiseDistribution,
        config: SamplerConfig,
        rng: np.random.Generator,
    ) -> None:
        if len(links) == 0:
            raise ConfigError(f"relation {links.name} has no links")
        if len(noise_to) < 2:
            raise ConfigError(f"relation {links.name}: target vocabulary needs >= 2 nodes")
        self.relation = links.name
        self.sources, self.targets, counts = links.arrays()
        self.noise = noise_to
        self.config = config
        self.rng = rng
        w = counts.astype(np.float64) if config.inter_mode == "count" else np.ones(len(counts))
        self._cdf = np.cumsum(w / w.sum())
        self._cdf[-1] = 1.0

    def next_batch(self, size: int | None = None) -> InterBatch:
        size = size or self.config.batch_size
        pick = np.searchsorted(self._cdf, self.rng.random(size), side="right")
        pick = np.minimum(pick, len(self._cdf) - 1)
        tgt = self.targets[pick]
        negs = sample_negatives(self.noise, self.config.negatives_k, tgt, self.rng)
        return InterBatch(self.relation, self.sources[pick], tgt, negs)

    def __iter__(self) -> Iterator[InterBatch]:
        while True:
            yield self.next_batch()


def gen_inter_pairs(
    links: CrossViewLinks,
    dist_to: NoiseDistribution,
    k: int,
    rng: np.random.Generator,
    batch_size: int = 2048,
    mode: str = "count",
) -> Iterator[InterBatch]:
    config = SamplerConfig(negatives_k=k, batch_size=batch_size, inter_mode=mode)
    return iter(InterStream(links, dist_to, config, rng))


def write_debug_examples(stream, batch: IntraBatch) -> None:
    for c, o, negs in zip(batch.centers, batch.contexts, batch.negatives):
        stream.write(f"{batch.view}\t{c}\t{o}\t{','.join(map(str, negs))}\n")
