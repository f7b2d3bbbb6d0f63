"""Joint multi-task training loop."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mvgraph.errors import ConfigError, DivergenceError
from mvgraph.graph import CrossViewLinks, ViewGraph
from mvgraph.sampler import (
    InterStream,
    IntraStream,
    SamplerConfig,
    build_noise,
    corpus_pairs,
)
from mvgraph.training.losses import (
    RowGrad,
    inter_loss_grad,
    intra_loss_grad,
    static_total,
    weighted_total,
)
from mvgraph.training.optim import Optimizer, OptimizerConfig
from mvgraph.training.params import (
    DEFAULT_FLOOR_VAR,
    AlignmentTransform,
    EmbeddingTable,
    TaskUncertainty,
    TrainedModel,
)

logger = logging.getLogger(__name__)

WEIGHTING_MODES = ("adaptive", "uniform", "static")


@dataclass
class TrainConfig:
    dim: int = 64
    out_dim: int | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    weighting: str = "adaptive"
    static_weights: dict[str, float] = field(default_factory=dict)
    floor_var: float = DEFAULT_FLOOR_VAR
    inter_variant: str = "score"
    record_every: int = 10
    max_steps: int | None = None
    threads: int = 1

    def __post_init__(self) -> None:
        if self.weighting not in WEIGHTING_MODES:
            raise ConfigError(f"weighting must be one of {WEIGHTING_MODES}, got {self.weighting!r}")
        if self.floor_var <= 0:
            raise ConfigError("floor_var must be positive")
        if self.inter_variant not in ("score", "logsig"):
            raise ConfigError(f"unknown inter_variant {self.inter_variant!r}")
        if self.threads < 1 or self.record_every < 1:
            raise ConfigError("threads and record_every must be >= 1")


@dataclass
class TrainingData:
    """Encoded corpus: per-view index sessions, graphs and cross-view links."""

    graphs: dict[str, ViewGraph]
    sessions: dict[str, list[np.ndarray]]
    links: dict[str, CrossViewLinks] = field(default_factory=dict)

    @classmethod
    def from_sessions(
        cls,
        view_sessions: Mapping[str, Sequence],
        graphs: Mapping[str, ViewGraph],
        links: Mapping[str, CrossViewLinks] | None = None,
    ) -> TrainingData:
        encoded = {}
        for view, sessions in view_sessions.items():
            vocab = graphs[view].vocab
            encoded[view] = [vocab.encode(getattr(s, "nodes", s)) for s in sessions]
        return cls(dict(graphs), encoded, dict(links or {}))


class Trainer:
    """Round-robin multi-task optimiser.

    Each round draws one batch per task, sums the (weighted) task losses and
    takes a single optimiser step over every parameter, including the
    per-task log-variances in adaptive mode.
    """

    def __init__(self, data: TrainingData, config: TrainConfig, seed: int = 0) -> None:
        if not data.graphs:
            raise ConfigError("training needs at least one view")
        for rel, links in data.links.items():
            for view in (links.from_view, links.to_view):
                if view not in data.graphs:
                    raise ConfigError(f"relation {rel} references undeclared view {view!r}")
        self.data = data
        self.config = config
        self.rng = np.random.default_rng(seed)
        cfg = config
        out_dim = cfg.out_dim or cfg.dim

        tables = {
            view: EmbeddingTable.init(view, g.vocab.ids, cfg.dim, self.rng) for view, g in data.graphs.items()
        }
        transforms = {
            rel: AlignmentTransform.init(rel, lk.from_view, lk.to_view, cfg.dim, out_dim, self.rng)
            for rel, lk in data.links.items()
        }
        self.tasks = list(data.graphs) + list(data.links)
        uncertainties = {t: TaskUncertainty(t, 0.0, cfg.floor_var) for t in self.tasks}
        self.model = TrainedModel(tables, transforms, uncertainties)

        noise = {v: build_noise(g.node_freq, cfg.sampler.noise_power) for v, g in data.graphs.items()}
        self.intra_streams = {}
        for view, sessions in data.sessions.items():
            centers, contexts = corpus_pairs(sessions, cfg.sampler.window)
            self.intra_streams[view] = IntraStream(view, centers, contexts, noise[view], cfg.sampler, self.rng)
        self.inter_streams = {
            rel: InterStream(lk, noise[lk.to_view], cfg.sampler, self.rng) for rel, lk in data.links.items()
        }
        self.optimizer = Optimizer(cfg.optimizer)
        self.log_vars = np.zeros(len(self.tasks))
        self._pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
        self.last_total = math.nan

    @property
    def steps_per_epoch(self) -> int:
        return max(s.batches_per_epoch() for s in self.intra_streams.values())

    def total_steps(self) -> int:
        n = self.steps_per_epoch * self.config.sampler.epochs
        if self.config.max_steps is not None:
            n = min(n, self.config.max_steps)
        return n

    def _task_loss(self, task: str, batch):
        m = self.model
        if task in self.intra_streams:
            loss, g = intra_loss_grad(m.tables[task], batch)
            return loss, {f"{task}/input": g["input"], f"{task}/context": g["context"]}
        t = m.transforms[task]
        loss, g = inter_loss_grad(
            m.tables[t.from_view], m.tables[t.to_view], t, batch, self.config.inter_variant
        )
        return loss, {f"{t.from_view}/input": g["from"], f"{t.to_view}/input": g["to"], f"{task}/W": g["W"]}

    def draw_batches(self) -> dict:
        batches = {}
        for task in self.tasks:
            stream = self.intra_streams.get(task) or self.inter_streams[task]
            batches[task] = stream.next_batch()
        return batches

    def step(self, batches: Mapping | None = None) -> dict[str, float]:
        """One scheduling round. Returns the unweighted per-task losses.

        ``batches`` (task -> batch) overrides the streams for this round.
        """
        if batches is None:
            batches = self.draw_batches()
        if self._pool is not None:
            results = list(self._pool.map(lambda t: self._task_loss(t, batches[t]), self.tasks))
        else:
            results = [self._task_loss(t, batches[t]) for t in self.tasks]
        losses = {t: r[0] for t, r in zip(self.tasks, results)}

        cfg = self.config
        if cfg.weighting == "adaptive":
            wt = weighted_total(losses, self.model.uncertainties)
        elif cfg.weighting == "static":
            wt = static_total(losses, cfg.static_weights)
        else:
            wt = static_total(losses, {})
        if not math.isfinite(wt.total):
            raise DivergenceError(f"total loss is not finite at step {self.model.step}", state=self.model)
        self.last_total = wt.total

        merged: dict[str, list] = {}
        for task, (_, grads) in zip(self.tasks, results):
            w = wt.weights[task]
            for name, g in grads.items():
                merged.setdefault(name, []).append(g.scaled(w) if isinstance(g, RowGrad) else g * w)
        grads: dict[str, RowGrad | np.ndarray] = {}
        for name, parts in merged.items():
            grads[name] = RowGrad.combine(parts) if isinstance(parts[0], RowGrad) else sum(parts)
        params = self.model.parameters()
        if cfg.weighting == "adaptive":
            grads["uncertainty/log_var"] = np.array([wt.log_var_grads[t] for t in self.tasks])
            params["uncertainty/log_var"] = self.log_vars
        self.optimizer.step(params, grads)
        for t, lv in zip(self.tasks, self.log_vars):
            self.model.uncertainties[t].log_var = float(lv)

        self.model.step += 1
        if self.model.step % cfg.record_every == 0 or self.model.step == 1:
            for t in self.tasks:
                if cfg.weighting == "adaptive":
                    u = self.model.uncertainties[t]
                    s2, w = u.sigma2, u.weight
                else:
                    w = wt.weights[t]
                    s2 = 1.0 / w if w > 0 else math.inf
                self.model.history.append((self.model.step, t, losses[t], s2, w))
        return losses

    def run(self) -> TrainedModel:
        n = self.total_steps()
        logger.info("training %d tasks for %d steps (%d per epoch)", len(self.tasks), n, self.steps_per_epoch)
        try:
            for _ in range(n):
                self.step()
        except DivergenceError as err:
            if err.state is None:
                err.state = self.model
            raise
        finally:
            if self._pool is not None:
                self._pool.shutdown()
        return self.model


def train(data: TrainingData, config: TrainConfig, seed: int = 0) -> TrainedModel:
    return Trainer(data, config, seed).run()
