from .model import EmbeddingSet, encode, head_logits, head_probs, loss_and_grads, record_loss
from .params import BackboneParams, init_backbone, load_backbone, param_shapes, save_backbone
from .train import EpochStats, dataset_loss, train_backbone

__all__ = [
    "BackboneParams",
    "EmbeddingSet",
    "EpochStats",
    "dataset_loss",
    "encode",
    "head_logits",
    "head_probs",
    "init_backbone",
    "load_backbone",
    "loss_and_grads",
    "param_shapes",
    "record_loss",
    "save_backbone",
    "train_backbone",
]
