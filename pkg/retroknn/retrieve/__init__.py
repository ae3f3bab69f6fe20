from .knn import NeighborList, interpolate, knn_distribution, knn_distributions
from .ranking import (
    RankedEntry,
    RankedPrediction,
    predict_gnn_only,
    predict_topk,
    rank_sites,
    read_predictions,
    write_predictions,
)
from .sites import (
    FixedFusion,
    Fusion,
    SiteContext,
    SiteParameters,
    fuse,
    fused_loss,
    nll,
    prepare_dataset_sites,
    prepare_sites,
    retrieve_neighbors,
)

__all__ = [
    "FixedFusion",
    "Fusion",
    "NeighborList",
    "RankedEntry",
    "RankedPrediction",
    "SiteContext",
    "SiteParameters",
    "fuse",
    "fused_loss",
    "interpolate",
    "knn_distribution",
    "knn_distributions",
    "nll",
    "predict_gnn_only",
    "predict_topk",
    "prepare_dataset_sites",
    "prepare_sites",
    "rank_sites",
    "read_predictions",
    "retrieve_neighbors",
    "write_predictions",
]
