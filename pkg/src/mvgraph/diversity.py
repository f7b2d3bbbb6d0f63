"""Two-space metric model for diversity-oriented candidate generation.

Item pairs are compared in the instance embedding space and in the
item-category relational space, each under its own learned PSD metric
``M = L^T L``. A contrastive loss pulls positive pairs together and pushes
negatives past a margin. Candidates are then ranked by ``-d(a, b)``.
"""

from __future__ import annotations

import math
from collections.abc import Collection, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import IO

import numpy as np

from mvgraph.errors import ConfigError, DivergenceError
from mvgraph.evaluation import rank_scores
from mvgraph.training.optim import Optimizer, OptimizerConfig

DAY = 86400


@dataclass
class MetricModel:
    L_i: np.ndarray  # (d, d)
    L_ic: np.ndarray  # (d', d')
    margin: float = 1.0

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ConfigError("margin must be positive")

    @classmethod
    def identity(cls, dim: int, rel_dim: int, margin: float = 1.0, scale: float = 1.0) -> MetricModel:
        return cls(scale * np.eye(dim), scale * np.eye(rel_dim), margin)

    @property
    def M_i(self) -> np.ndarray:
        return self.L_i.T @ self.L_i

    @property
    def M_ic(self) -> np.ndarray:
        return self.L_ic.T @ self.L_ic

    def copy(self) -> MetricModel:
        return replace(self, L_i=self.L_i.copy(), L_ic=self.L_ic.copy())

    def transform(self, e_i: np.ndarray, e_ic: np.ndarray) -> np.ndarray:
        """Rows ``[L_i e_i, L_ic e_ic]``; squared Euclidean distance there equals ``d``."""
        return np.hstack([e_i @ self.L_i.T, e_ic @ self.L_ic.T])


@dataclass
class PairExample:
    a: int
    b: int
    label: int

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ConfigError("pair members must differ")
        if self.label not in (0, 1):
            raise ConfigError("label must be 0 or 1")


@dataclass
class PairBatch:
    a: np.ndarray
    b: np.ndarray
    y: np.ndarray

    @classmethod
    def from_examples(cls, examples: Iterable[PairExample]) -> PairBatch:
        ex = list(examples)
        return cls(
            np.array([e.a for e in ex], dtype=np.int64),
            np.array([e.b for e in ex], dtype=np.int64),
            np.array([e.label for e in ex], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.a)

    def subset(self, idx: np.ndarray) -> PairBatch:
        return PairBatch(self.a[idx], self.b[idx], self.y[idx])


def pair_distance(
    model: MetricModel,
    ei_a: np.ndarray,
    ei_b: np.ndarray,
    eic_a: np.ndarray,
    eic_b: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(d_i, d_ic, d)``; works on single vectors or row-stacked batches."""
    p = (np.asarray(ei_a) - ei_b) @ model.L_i.T
    q = (np.asarray(eic_a) - eic_b) @ model.L_ic.T
    d_i = np.sum(p * p, axis=-1)
    d_ic = np.sum(q * q, axis=-1)
    return d_i, d_ic, d_i + d_ic


def contrastive_loss_grad(
    model: MetricModel,
    batch: PairBatch,
    e_i: np.ndarray,
    e_ic: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """``1/(2N) sum y d^2 + (1-y) max(margin - d, 0)^2`` and its gradient.

    Embeddings are treated as constants; only ``L_i`` and ``L_ic`` receive
    gradients.
    """
    n = len(batch)
    if n == 0:
        raise ConfigError("empty pair batch")
    di = e_i[batch.a] - e_i[batch.b]
    dc = e_ic[batch.a] - e_ic[batch.b]
    p = di @ model.L_i.T
    q = dc @ model.L_ic.T
    d = np.sum(p * p, axis=1) + np.sum(q * q, axis=1)
    hinge = np.maximum(model.margin - d, 0.0)
    y = batch.y
    loss = float(np.sum(y * d**2 + (1.0 - y) * hinge**2) / (2 * n))
    if not math.isfinite(loss):
        raise DivergenceError(f"contrastive loss is not finite ({loss})")
    g = (y * d - (1.0 - y) * hinge) / n  # dLoss/dd
    # d = |L di|^2 -> dd/dL = 2 (L di) di^T
    grad_Li = 2.0 * (g[:, None] * p).T @ di
    grad_Lic = 2.0 * (g[:, None] * q).T @ dc
    return loss, {"L_i": grad_Li, "L_ic": grad_Lic}


@dataclass(frozen=True)
class MetricTrainConfig:
    steps: int = 500
    batch_size: int = 256
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(algorithm="adam", learning_rate=0.01))
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")


def train_metric(
    model_init: MetricModel,
    e_i: np.ndarray,
    e_ic: np.ndarray,
    pairs: PairBatch,
    config: MetricTrainConfig = MetricTrainConfig(),
    callback=None,
) -> tuple[MetricModel, list[float]]:
    """Fit the metric factors on ``pairs`` with frozen embeddings.

    Mini-batches walk a fresh permutation of ``pairs`` each pass; with
    ``batch_size >= len(pairs)`` every step is full-batch. ``callback`` is
    called as ``callback(step, model)`` after each update.
    """
    model = model_init.copy()
    history: list[float] = []
    if config.steps == 0:
        return model, history
    if len(pairs) == 0:
        raise ConfigError("no training pairs")
    rng = np.random.default_rng(config.seed)
    opt = Optimizer(config.optimizer)
    order = np.zeros(0, dtype=np.int64)
    pos = 0
    for step in range(config.steps):
        if pos >= len(order):
            order = rng.permutation(len(pairs)) if config.batch_size < len(pairs) else np.arange(len(pairs))
            pos = 0
        sel = order[pos : pos + config.batch_size]
        pos += len(sel)
        loss, grads = contrastive_loss_grad(model, pairs.subset(sel), e_i, e_ic)
        history.append(loss)
        opt.step({"L_i": model.L_i, "L_ic": model.L_ic}, grads)
        if callback is not None:
            callback(step, model)
    return model, history


def metric_training_pairs(
    sessions: Sequence[np.ndarray],
    item_category: np.ndarray,
    window: int,
    n_items: int,
    rng: np.random.Generator,
    negatives_per_positive: int = 1,
) -> PairBatch:
    """Cross-category co-occurrence positives and uniformly random negatives.

    Positives are unordered item pairs within ``window`` positions of each
    other in some session whose categories differ (deduplicated, in
    first-seen order). Negatives are uniform random pairs of distinct items.
    """
    seen: dict[tuple[int, int], None] = {}
    for s in sessions:
        s = np.asarray(s)
        for t in range(len(s)):
            for u in range(t + 1, min(len(s), t + window + 1)):
                a, b = int(s[t]), int(s[u])
                if a != b and item_category[a] != item_category[b]:
                    seen.setdefault((min(a, b), max(a, b)), None)
    pos = np.array(list(seen), dtype=np.int64).reshape(-1, 2)
    n_neg = len(pos) * negatives_per_positive
    if n_items < 2:
        raise ConfigError("need at least two items for negative pairs")
    na = rng.integers(0, n_items, n_neg)
    nb = rng.integers(0, n_items - 1, n_neg)
    nb = nb + (nb >= na)  # uniform over b != a
    a = np.concatenate([pos[:, 0], na])
    b = np.concatenate([pos[:, 1], nb])
    y = np.concatenate([np.ones(len(pos)), np.zeros(n_neg)])
    return PairBatch(a, b, y)


def metric_scores(model: MetricModel, e_i: np.ndarray, e_ic: np.ndarray, trigger: int) -> np.ndarray:
    """``-d(trigger, b)`` for every item ``b``."""
    z = model.transform(e_i, e_ic)
    diff = z - z[trigger]
    return -np.sum(diff * diff, axis=1)


def metric_similar(
    model: MetricModel,
    e_i: np.ndarray,
    e_ic: np.ndarray,
    trigger: int,
    K: int,
    exclude: Collection[int] = (),
) -> list[tuple[int, float]]:
    scores = metric_scores(model, e_i, e_ic, trigger)
    excl = set(exclude) | {trigger}
    return [(int(i), float(scores[i])) for i in rank_scores(scores, K, excl)]


def novelty_at_k(
    recommendations: Mapping[str, Sequence],
    history_categories: Mapping[str, Collection],
    item_category: Mapping,
) -> float:
    """Share of recommended items whose category the user has not touched recently."""
    total = novel = 0
    for user, recs in recommendations.items():
        seen = history_categories.get(user, ())
        for item in recs:
            if item not in item_category:
                raise ConfigError(f"recommended item {item!r} has no category")
            total += 1
            novel += item_category[item] not in seen
    return novel / total if total else 0.0


def recent_categories(
    events: Iterable,
    as_of: int,
    window_days: float = 15,
) -> dict[str, set]:
    """Categories each user touched in the ``window_days`` before ``as_of``."""
    lo = as_of - window_days * DAY
    out: dict[str, set] = {}
    for e in events:
        if lo <= e.timestamp < as_of and e.category_id is not None:
            out.setdefault(e.user_id, set()).add(e.category_id)
    return out


def write_metric_model(fh: IO[str], model: MetricModel) -> None:
    fh.write(f"margin {model.margin!r}\n")
    for name, mat in (("L_i", model.L_i), ("L_ic", model.L_ic)):
        fh.write(f"{name} {mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_metric_model(fh: IO[str]) -> MetricModel:
    margin = float(fh.readline().split()[1])
    mats = {}
    for _ in range(2):
        name, r, c = fh.readline().split()
        mats[name] = np.array([[float(x) for x in fh.readline().split()] for _ in range(int(r))]).reshape(
            int(r), int(c)
        )
    return MetricModel(mats["L_i"], mats["L_ic"], margin)
