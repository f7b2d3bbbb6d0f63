"""Exact top-K inner-product retrieval and offline ranking metrics."""

from __future__ import annotations

import logging
from collections.abc import Collection, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from mvgraph.errors import ConfigError

logger = logging.getLogger(__name__)

METRICS = ("HitRate", "Recall", "Precision", "F1")


@dataclass(frozen=True)
class EvalConfig:
    K: int = 50
    trigger_window: int | None = None  # None: the user's last training session
    exclude_seen: bool = True

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.trigger_window is not None and self.trigger_window < 1:
            raise ConfigError("trigger_window must be >= 1")


@dataclass
class EvalResult:
    K: int
    N: int
    hit_rate: float
    recall: float
    precision: float
    f1: float
    skipped: int = 0
    per_user: dict[str, tuple[int, int]] = field(default_factory=dict)  # user -> (hits, |G_u|)

    def as_dict(self) -> dict[str, float]:
        return {"HitRate": self.hit_rate, "Recall": self.recall, "Precision": self.precision, "F1": self.f1}


def rank_scores(scores: np.ndarray, K: int, exclude: Collection[int] = ()) -> np.ndarray:
    """Indices of the ``K`` largest scores, ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    valid = np.ones(len(scores), dtype=bool)
    if len(exclude):
        valid[np.fromiter(exclude, dtype=np.int64)] = False
    cand = np.flatnonzero(valid)
    if K >= len(cand):
        sel = cand
    else:
        neg = -scores[cand]
        kth = np.partition(neg, K - 1)[K - 1]
        sel = cand[neg <= kth]  # everything tied with the K-th score stays in
    order = np.lexsort((sel, -scores[sel]))
    return sel[order][:K]


def topk_similar(
    query: np.ndarray,
    vectors: np.ndarray,
    K: int,
    exclude: Collection[int] = (),
) -> list[tuple[int, float]]:
    """Exact maximum-inner-product scan over ``vectors``.

    Returns up to ``K`` ``(index, score)`` pairs in descending score order;
    fewer when the exclusion set leaves less than ``K`` rows.
    """
    if len(vectors) == 0:
        raise ConfigError("cannot search an empty table")
    scores = vectors @ np.asarray(query, dtype=np.float64)
    idx = rank_scores(scores, K, exclude)
    return [(int(i), float(scores[i])) for i in idx]


def compute_metrics(
    recommendations: Mapping[str, Sequence],
    ground_truth: Mapping[str, Collection],
    K: int,
) -> EvalResult:
    """Macro-averaged precision/recall, hit rate, and F1 from the averages.

    Users with an empty ground-truth set are skipped and counted.
    """
    hits_total = 0
    prec_sum = rec_sum = 0.0
    n = skipped = 0
    per_user = {}
    for user, truth in ground_truth.items():
        truth = set(truth)
        if not truth:
            skipped += 1
            continue
        recs = list(recommendations.get(user, ()))[:K]
        hits = len(truth.intersection(recs))
        per_user[user] = (hits, len(truth))
        prec_sum += hits / K
        rec_sum += hits / len(truth)
        hits_total += hits > 0
        n += 1
    if n == 0:
        return EvalResult(K, 0, 0.0, 0.0, 0.0, 0.0, skipped, per_user)
    precision, recall = prec_sum / n, rec_sum / n
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalResult(K, n, hits_total / n, recall, precision, f1, skipped, per_user)


def user_profile(item_vectors: np.ndarray, history: Sequence[int]) -> np.ndarray:
    return item_vectors[np.asarray(history, dtype=np.int64)].mean(axis=0)


def recommend(
    item_vectors: np.ndarray,
    item_ids: Sequence[str],
    histories: Mapping[str, Sequence[Sequence[str]]],
    config: EvalConfig,
    users: Iterable[str] | None = None,
) -> dict[str, list[str]]:
    """Top-K items per user from the mean vector of their recent items.

    ``histories`` holds each user's training sessions (item ids, oldest
    first). The profile is built from the last session, or from the last
    ``trigger_window`` items when set. Unknown items are ignored.
    """
    index = {node: i for i, node in enumerate(item_ids)}
    out: dict[str, list[str]] = {}
    for user in users if users is not None else histories:
        sessions = histories.get(user)
        if not sessions:
            continue
        if config.trigger_window is None:
            recent = sessions[-1]
        else:
            flat = [n for s in sessions for n in s]
            recent = flat[-config.trigger_window :]
        trig = [index[n] for n in recent if n in index]
        if not trig:
            continue
        seen = {index[n] for s in sessions for n in s if n in index} if config.exclude_seen else set()
        picks = topk_similar(user_profile(item_vectors, trig), item_vectors, config.K, seen)
        out[user] = [item_ids[i] for i, _ in picks]
    return out


def evaluate(
    item_vectors: np.ndarray,
    item_ids: Sequence[str],
    test_items: Mapping[str, Collection[str]],
    histories: Mapping[str, Sequence[Sequence[str]]],
    config: EvalConfig = EvalConfig(),
) -> EvalResult:
    """Recommend for every test user with history and score against ``test_items``."""
    users = [u for u in test_items if histories.get(u)]
    dropped = len(test_items) - len(users)
    if dropped:
        logger.info("%d test users have no training history and are skipped", dropped)
    recs = recommend(item_vectors, item_ids, histories, config, users)
    truth = {u: test_items[u] for u in users}
    result = compute_metrics(recs, truth, config.K)
    result.skipped += dropped
    return result


def write_report(fh: IO[str], result: EvalResult, name: str = "model") -> None:
    """Aligned text table, one row per model and one column per metric."""
    header = f"{'Model':<12}" + "".join(f"{m + '@' + str(result.K):>14}" for m in METRICS)
    fh.write(header + "\n")
    vals = result.as_dict()
    fh.write(f"{name:<12}" + "".join(f"{100 * vals[m]:>13.2f}%" for m in METRICS) + "\n")
    fh.write(f"N = {result.N} users ({result.skipped} skipped)\n")


def write_metrics_csv(fh: IO[str], result: EvalResult) -> None:
    fh.write("metric,value,K,N\n")
    for metric, value in result.as_dict().items():
        fh.write(f"{metric},{value!r},{result.K},{result.N}\n")


def similarity_map(
    vectors: np.ndarray, K: int, triggers: Iterable[int] | None = None
) -> Iterable[tuple[int, list[tuple[int, float]]]]:
    """Per-trigger exact top-K neighbours by inner product, trigger excluded."""
    for t in triggers if triggers is not None else range(len(vectors)):
        yield t, topk_similar(vectors[t], vectors, K, (t,))


def write_similarity_map(
    fh: IO[str], ids: Sequence[str], entries: Iterable[tuple[int, list[tuple[int, float]]]]
) -> None:
    for trig, cands in entries:
        fh.write(f"{ids[trig]}\t" + ",".join(f"{ids[i]}:{s!r}" for i, s in cands) + "\n")
