from .ablation import SYSTEMS, AblationResult, run_ablation, sweep_neighbors
from .bench import BenchReport, append_summary, bench_latency
from .evaluate import EvalReport, evaluate_topk, first_hit_rank
from .fewshot import FewShotResult, run_fewshot_experiment
from .grid import GridResult, grid_search_fixed
from .pipeline import Pipeline, build_pipeline, gnn_predictions, predict_contexts

__all__ = [
    "SYSTEMS",
    "AblationResult",
    "BenchReport",
    "EvalReport",
    "FewShotResult",
    "GridResult",
    "Pipeline",
    "append_summary",
    "bench_latency",
    "build_pipeline",
    "evaluate_topk",
    "first_hit_rank",
    "gnn_predictions",
    "grid_search_fixed",
    "predict_contexts",
    "run_ablation",
    "run_fewshot_experiment",
    "sweep_neighbors",
]
