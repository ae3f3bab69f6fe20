from .dataset import Dataset, ReactionRecord, label_inventory, parse_dataset, write_dataset
from .splits import build_few_shot_split, build_zero_shot_split
from .synthetic import generate_synthetic, record_signatures

__all__ = [
    "Dataset",
    "ReactionRecord",
    "build_few_shot_split",
    "build_zero_shot_split",
    "generate_synthetic",
    "label_inventory",
    "parse_dataset",
    "record_signatures",
    "write_dataset",
]
