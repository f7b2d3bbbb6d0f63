"""SGD / lazy Adam with global-norm gradient clipping over sparse row gradients."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from mvgraph.errors import ConfigError
from mvgraph.training.losses import RowGrad

Grad = RowGrad | np.ndarray


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "adam"
    learning_rate: float = 0.01
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.algorithm not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.algorithm!r}")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ConfigError("learning_rate and clip_norm must be positive")


def global_norm(grads: Mapping[str, Grad]) -> float:
    total = 0.0
    for g in grads.values():
        total += g.sq_norm() if isinstance(g, RowGrad) else float(np.sum(np.square(g)))
    return math.sqrt(total)


def clip_by_global_norm(grads: Mapping[str, Grad], clip_norm: float) -> tuple[dict[str, Grad], float]:
    norm = global_norm(grads)
    if norm <= clip_norm:
        return dict(grads), norm
    scale = clip_norm / norm
    return {k: (g.scaled(scale) if isinstance(g, RowGrad) else g * scale) for k, g in grads.items()}, norm


class Optimizer:
    """Applies updates in place to the arrays in ``params``.

    Row gradients only touch their rows; Adam moments for untouched rows
    are left alone (lazy Adam), bias correction uses the global step.
    """

    def __init__(self, config: OptimizerConfig) -> None:
        self.config = config
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def _moments(self, name: str, like: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if name not in self._m:
            self._m[name] = np.zeros_like(like, dtype=np.float64)
            self._v[name] = np.zeros_like(like, dtype=np.float64)
        return self._m[name], self._v[name]

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, Grad]) -> float:
        """Clip, then update. Returns the pre-clip global norm."""
        cfg = self.config
        grads, norm = clip_by_global_norm(grads, cfg.clip_norm)
        self.step_count += 1
        if cfg.algorithm == "sgd":
            for name, g in grads.items():
                p = params[name]
                if isinstance(g, RowGrad):
                    p[g.rows] -= cfg.learning_rate * g.values
                else:
                    p -= cfg.learning_rate * g
            return norm

        t = self.step_count
        lr_t = cfg.learning_rate * math.sqrt(1.0 - cfg.beta2**t) / (1.0 - cfg.beta1**t)
        for name, g in grads.items():
            p = params[name]
            m, v = self._moments(name, p)
            if isinstance(g, RowGrad):
                rows = g.rows
                m_r = cfg.beta1 * m[rows] + (1.0 - cfg.beta1) * g.values
                v_r = cfg.beta2 * v[rows] + (1.0 - cfg.beta2) * g.values**2
                m[rows] = m_r
                v[rows] = v_r
                p[rows] -= lr_t * m_r / (np.sqrt(v_r) + cfg.epsilon)
            else:
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * g**2
                p -= lr_t * m / (np.sqrt(v) + cfg.epsilon)
        return norm

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self._m:
            out[f"{name}:m"] = self._m[name]
            out[f"{name}:v"] = self._v[name]
        return out
