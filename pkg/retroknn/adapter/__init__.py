from .model import (
    AdapterFusion,
    adapter_forward,
    adapter_loss_and_grads,
    batch_loss_and_grads,
    context_loss,
    context_loss_and_grads,
    gin_forward,
    gin_layer,
)
from .params import AdapterParams, adapter_shapes, init_adapter, load_adapter, save_adapter, zero_adapter
from .train import adapter_neighbors, contexts_loss, train_adapter

__all__ = [
    "AdapterFusion",
    "AdapterParams",
    "adapter_forward",
    "adapter_loss_and_grads",
    "adapter_neighbors",
    "adapter_shapes",
    "batch_loss_and_grads",
    "context_loss",
    "context_loss_and_grads",
    "contexts_loss",
    "gin_forward",
    "gin_layer",
    "init_adapter",
    "load_adapter",
    "save_adapter",
    "train_adapter",
    "zero_adapter",
]
