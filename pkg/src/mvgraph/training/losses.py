"""Losses and analytic gradients.

All objectives are written as quantities to minimise: the skip-gram
likelihood and the alignment score are negated.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from mvgraph.errors import DivergenceError
from mvgraph.sampler import InterBatch, IntraBatch
from mvgraph.training.params import (
    AlignmentTransform,
    EmbeddingTable,
    TaskUncertainty,
    log_sigmoid,
    sigmoid,
)


@dataclass
class RowGrad:
    """Gradient restricted to a set of distinct rows of a 2-D parameter."""

    rows: np.ndarray
    values: np.ndarray

    @classmethod
    def accumulate(cls, indices: np.ndarray, values: np.ndarray) -> RowGrad:
        indices = np.asarray(indices, dtype=np.int64).ravel()
        values = values.reshape(len(indices), -1)
        if len(indices) == 0:
            return cls(indices, values)
        rows, inv = np.unique(indices, return_inverse=True)
        return cls(rows, _sum_rows(inv, values, len(rows)))

    @classmethod
    def outer(cls, indices: np.ndarray, coef: np.ndarray, owner: np.ndarray, src: np.ndarray) -> RowGrad:
        """Rows ``indices[m]`` receive ``coef[m] * src[owner[m]]``, summed per row."""
        rows, inv = np.unique(indices, return_inverse=True)
        src_t = np.ascontiguousarray(src.T)
        out = np.empty((len(rows), src.shape[1]))
        # column-at-a-time keeps every bincount on contiguous memory
        for j in range(src.shape[1]):
            out[:, j] = np.bincount(inv, weights=coef * src_t[j][owner], minlength=len(rows))
        return cls(rows, out)

    @classmethod
    def combine(cls, parts: list[RowGrad]) -> RowGrad:
        if len(parts) == 1:
            return parts[0]
        return cls.accumulate(
            np.concatenate([p.rows for p in parts]), np.concatenate([p.values for p in parts])
        )

    def scaled(self, factor: float) -> RowGrad:
        return RowGrad(self.rows, self.values * factor)

    def dense(self, n_rows: int) -> np.ndarray:
        out = np.zeros((n_rows, self.values.shape[1]))
        out[self.rows] = self.values
        return out

    def sq_norm(self) -> float:
        return float(np.sum(self.values**2))


def _sum_rows(inv: np.ndarray, values: np.ndarray, n_rows: int) -> np.ndarray:
    # segment sum via one flat bincount; much faster than np.add.at for wide rows
    d = values.shape[1]
    flat = (inv[:, None] * d + np.arange(d)).ravel()
    return np.bincount(flat, weights=values.ravel(), minlength=n_rows * d).reshape(n_rows, d)


def _owners(n: int, k: int) -> np.ndarray:
    # example index of each entry in concat(positives, negatives.ravel())
    return np.concatenate([np.arange(n), np.repeat(np.arange(n), k)])


def _check_finite(loss: float, what: str) -> None:
    if not math.isfinite(loss):
        raise DivergenceError(f"{what} loss is not finite ({loss})")


def intra_loss_grad(table: EmbeddingTable, batch: IntraBatch) -> tuple[float, dict[str, RowGrad]]:
    """Negative-sampling skip-gram loss, averaged over the batch.

    Per example: ``-log s(u_ctx . v_c) - sum_neg log s(-u_neg . v_c)`` with
    ``v`` the input vectors and ``u`` the context vectors.
    """
    v = table.input_vecs[batch.centers]
    u_pos = table.context_vecs[batch.contexts]
    u_neg = table.context_vecs[batch.negatives]
    n = len(batch)
    s_pos = np.einsum("bd,bd->b", v, u_pos)
    s_neg = np.einsum("bd,bkd->bk", v, u_neg)
    loss = float(-(log_sigmoid(s_pos).sum() + log_sigmoid(-s_neg).sum()) / n)
    _check_finite(loss, f"intra-view ({table.view})")

    g_pos = (sigmoid(s_pos) - 1.0) / n
    g_neg = sigmoid(s_neg) / n
    grad_v = g_pos[:, None] * u_pos + np.einsum("bk,bkd->bd", g_neg, u_neg)
    k = batch.negatives.shape[1]
    return loss, {
        "input": RowGrad.accumulate(batch.centers, grad_v),
        "context": RowGrad.outer(
            np.concatenate([batch.contexts, batch.negatives.ravel()]),
            np.concatenate([g_pos, g_neg.ravel()]),
            _owners(n, k),
            v,
        ),
    }


def inter_loss_grad(
    table_from: EmbeddingTable,
    table_to: EmbeddingTable,
    transform: AlignmentTransform,
    batch: InterBatch,
    variant: str = "score",
) -> tuple[float, dict[str, RowGrad | np.ndarray]]:
    """Alignment loss in the relational space ``s(W e)``.

    ``variant="score"`` uses the raw score difference
    ``-(mean pos score - mean neg score)``; ``"logsig"`` wraps the scores in
    a skip-gram style log-sigmoid (comparison mode).
    """
    W = transform.matrix
    n, k = batch.negatives.shape
    e_i = table_from.input_vecs[batch.sources]
    # the target view is usually small: project each distinct row once
    to_rows, inv = np.unique(np.concatenate([batch.targets, batch.negatives.ravel()]), return_inverse=True)
    e_to = table_to.input_vecs[to_rows]
    a = sigmoid(e_i @ W.T)
    B = sigmoid(e_to @ W.T)
    b = B[inv[:n]]
    bn = B[inv[n:]].reshape(n, k, -1)
    s_pos = np.einsum("bd,bd->b", a, b)
    s_neg = np.einsum("bd,bkd->bk", a, bn)

    if variant == "score":
        loss = float(-(s_pos.mean() - s_neg.mean()))
        g_pos = np.full(n, -1.0 / n)
        g_neg = np.full((n, k), 1.0 / (n * k))
    elif variant == "logsig":
        loss = float(-(log_sigmoid(s_pos).sum() + log_sigmoid(-s_neg).sum()) / n)
        g_pos = (sigmoid(s_pos) - 1.0) / n
        g_neg = sigmoid(s_neg) / n
    else:
        raise ValueError(f"unknown inter-view loss variant {variant!r}")
    _check_finite(loss, f"inter-view ({transform.relation})")

    grad_a = g_pos[:, None] * b + np.einsum("bk,bkd->bd", g_neg, bn)
    grad_B = RowGrad.outer(inv, np.concatenate([g_pos, g_neg.ravel()]), _owners(n, k), a).values
    # back through the element-wise sigmoid
    z_a = grad_a * a * (1.0 - a)
    z_B = grad_B * B * (1.0 - B)
    return loss, {
        "from": RowGrad.accumulate(batch.sources, z_a @ W),
        "to": RowGrad(to_rows, z_B @ W),
        "W": z_a.T @ e_i + z_B.T @ e_to,
    }


@dataclass
class WeightedTotal:
    total: float
    weights: dict[str, float]
    log_var_grads: dict[str, float]


def weighted_total(
    task_losses: Mapping[str, float],
    uncertainties: Mapping[str, TaskUncertainty],
) -> WeightedTotal:
    """Uncertainty-weighted sum ``sum_t L_t / s2_t + log s2_t``.

    ``s2_t = max(exp(log_var_t), floor_var_t)``; the clamp passes no
    gradient to ``log_var_t``.
    """
    total = 0.0
    weights: dict[str, float] = {}
    grads: dict[str, float] = {}
    for task, loss in task_losses.items():
        u = uncertainties[task]
        s2 = u.sigma2
        weights[task] = 1.0 / s2
        total += loss / s2 + math.log(s2)
        grads[task] = 0.0 if u.clamped else 1.0 - loss / s2
    return WeightedTotal(total, weights, grads)


def static_total(task_losses: Mapping[str, float], weights: Mapping[str, float]) -> WeightedTotal:
    """Fixed linear combination (uniform or hand-set weights)."""
    w = {t: float(weights.get(t, 1.0)) for t in task_losses}
    total = sum(w[t] * loss for t, loss in task_losses.items())
    return WeightedTotal(total, w, {t: 0.0 for t in task_losses})
