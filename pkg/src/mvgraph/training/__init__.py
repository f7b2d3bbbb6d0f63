from mvgraph.training.checkpoint import load_checkpoint, save_checkpoint
from mvgraph.training.losses import (
    RowGrad,
    inter_loss_grad,
    intra_loss_grad,
    static_total,
    weighted_total,
)
from mvgraph.training.optim import Optimizer, OptimizerConfig, clip_by_global_norm
from mvgraph.training.params import (
    AlignmentTransform,
    EmbeddingTable,
    TaskUncertainty,
    TrainedModel,
)
from mvgraph.training.trainer import TrainConfig, Trainer, TrainingData, train

__all__ = [
    "AlignmentTransform",
    "EmbeddingTable",
    "Optimizer",
    "OptimizerConfig",
    "RowGrad",
    "TaskUncertainty",
    "TrainConfig",
    "TrainedModel",
    "Trainer",
    "TrainingData",
    "clip_by_global_norm",
    "inter_loss_grad",
    "intra_loss_grad",
    "load_checkpoint",
    "save_checkpoint",
    "static_total",
    "train",
    "weighted_total",
]
