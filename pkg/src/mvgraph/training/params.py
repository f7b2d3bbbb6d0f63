"""Learnable parameter containers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mvgraph.errors import ConfigError

DEFAULT_FLOOR_VAR = 0.05


@dataclass
class EmbeddingTable:
    """Input ("center") and context ("output") vectors for one view."""

    view: str
    ids: list[str]
    input_vecs: np.ndarray
    context_vecs: np.ndarray

    @classmethod
    def init(cls, view: str, ids: list[str], dim: int, rng: np.random.Generator) -> EmbeddingTable:
        if dim < 1:
            raise ConfigError("embedding dim must be >= 1")
        bound = 0.5 / dim
        inp = rng.uniform(-bound, bound, size=(len(ids), dim))
        return cls(view, list(ids), inp, np.zeros((len(ids), dim)))

    @property
    def dim(self) -> int:
        return self.input_vecs.shape[1]

    def __len__(self) -> int:
        return self.input_vecs.shape[0]


@dataclass
class AlignmentTransform:
    """Linear map into the shared relational space, followed by a sigmoid."""

    relation: str
    from_view: str
    to_view: str
    matrix: np.ndarray  # (out_dim, dim)

    @classmethod
    def init(
        cls, relation: str, from_view: str, to_view: str, dim: int, out_dim: int, rng: np.random.Generator
    ) -> AlignmentTransform:
        bound = 1.0 / math.sqrt(dim)
        return cls(relation, from_view, to_view, rng.uniform(-bound, bound, size=(out_dim, dim)))

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    def project(self, vecs: np.ndarray) -> np.ndarray:
        return sigmoid(vecs @ self.matrix.T)


@dataclass
class TaskUncertainty:
    task: str
    log_var: float = 0.0
    floor_var: float = DEFAULT_FLOOR_VAR

    @property
    def sigma2(self) -> float:
        return max(_exp(self.log_var), self.floor_var)

    @property
    def weight(self) -> float:
        return 1.0 / self.sigma2

    @property
    def clamped(self) -> bool:
        return _exp(self.log_var) < self.floor_var


@dataclass
class TrainedModel:
    tables: dict[str, EmbeddingTable]
    transforms: dict[str, AlignmentTransform] = field(default_factory=dict)
    uncertainties: dict[str, TaskUncertainty] = field(default_factory=dict)
    history: list[tuple[int, str, float, float, float]] = field(default_factory=list)
    step: int = 0

    def item_vectors(self) -> np.ndarray:
        return self.tables["item"].input_vecs

    def relational(self, relation: str, vecs: np.ndarray | None = None) -> np.ndarray:
        """Relational-space vectors of the transform's source view."""
        t = self.transforms[relation]
        if vecs is None:
            vecs = self.tables[t.from_view].input_vecs
        return t.project(vecs)

    def parameters(self) -> dict[str, np.ndarray]:
        """Named arrays the optimiser updates in place."""
        params: dict[str, np.ndarray] = {}
        for view, table in self.tables.items():
            params[f"{view}/input"] = table.input_vecs
            params[f"{view}/context"] = table.context_vecs
        for name, t in self.transforms.items():
            params[f"{name}/W"] = t.matrix
        return params


def _exp(x: float) -> float:
    # saturate instead of raising so a runaway log-variance shows up as a non-finite loss
    return math.exp(x) if x < 709.0 else math.inf


def sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    r = 1.0 / (1.0 + e)
    return np.where(x >= 0, r, e * r)


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)
