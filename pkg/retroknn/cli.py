"""
Command-line entry point: one subcommand per pipeline step plus the experiment runners.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from retroknn.adapter import AdapterFusion, load_adapter, save_adapter, train_adapter
from retroknn.adapter.train import adapter_neighbors
from retroknn.backbone import load_backbone, save_backbone, train_backbone
from retroknn.backbone.train import EpochStats
from retroknn.config import RunConfig, apply_overrides, derive_rng, load_config
from retroknn.errors import RetroKnnError
from retroknn.graphio import (
    build_few_shot_split,
    build_zero_shot_split,
    generate_synthetic,
    parse_dataset,
    write_dataset,
)
from retroknn.harness import (
    Pipeline,
    bench_latency,
    build_pipeline,
    evaluate_topk,
    grid_search_fixed,
    run_ablation,
    run_fewshot_experiment,
    sweep_neighbors,
)
from retroknn.retrieve import (
    FixedFusion,
    Fusion,
    predict_gnn_only,
    predict_topk,
    read_predictions,
    write_predictions,
)
from retroknn.store import build_stores, load_store, save_store, store_summary
from retroknn.vindex import build_flat, measure_recall, recall_target

LOG = logging.getLogger("retroknn.cli")

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{value} is not an integer") from exc
    if number <= 0:
        raise argparse.ArgumentTypeError("Value must be positive")
    return number


def positive_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{value} is not a number") from exc
    if number <= 0:
        raise argparse.ArgumentTypeError("Value must be positive")
    return number


def unit_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{value} is not a number") from exc
    if not 0.0 <= number <= 1.0:
        raise argparse.ArgumentTypeError("Value must lie in [0, 1]")
    return number


def _emit(report: dict[str, Any], table: Any = None) -> None:
    if table is not None:
        print(table.to_string(index=False) if hasattr(table, "to_string") else table)
    print(json.dumps(report, indent=2, sort_keys=True))


def _write_json(path: Path | None, report: dict[str, Any]) -> None:
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _load_pipeline(args: argparse.Namespace) -> Pipeline:
    return Pipeline(load_backbone(args.backbone), load_store(args.atom_store), load_store(args.bond_store))


def _fusion(args: argparse.Namespace, cfg: RunConfig) -> Fusion:
    if getattr(args, "adapter", None):
        return AdapterFusion(load_adapter(args.adapter))
    temperature = args.temperature if args.temperature is not None else cfg.adapter.fixed_temperature
    lam = args.lam if args.lam is not None else cfg.adapter.fixed_lambda
    return FixedFusion(temperature, lam)


def _history_table(history: list[EpochStats]) -> str:
    lines = ["epoch  train_loss  val_loss  seconds"]
    lines += [f"{h.epoch:5d}  {h.train_loss:10.4f}  {h.val_loss:8.4f}  {h.seconds:7.1f}" for h in history]
    return "\n".join(lines)


def cmd_gen_synth(args: argparse.Namespace, cfg: RunConfig) -> None:
    s = cfg.synthetic
    seed = int(derive_rng(cfg.seed, "synthetic").integers(2**31))
    splits = generate_synthetic(s.n_records, s.n_atom_templates, s.n_bond_templates, s.rare_template_fraction, seed,
                                node_vocab=s.node_vocab, edge_vocab=s.edge_vocab, min_nodes=s.min_nodes,
                                max_nodes=s.max_nodes, val_fraction=s.val_fraction, test_fraction=s.test_fraction)
    report = {}
    for name, d in zip(("train", "val", "test"), splits):
        path = args.out_dir / f"{name}.jsonl"
        write_dataset(d, path)
        report[name] = {"path": str(path), "records": len(d)}
    _emit(report)


def cmd_train_backbone(args: argparse.Namespace, cfg: RunConfig) -> None:
    train, val = parse_dataset(args.train), parse_dataset(args.val)
    history: list[EpochStats] = []
    p = train_backbone(train, val, cfg, history)
    save_backbone(p, args.out)
    best = min(history, key=lambda h: (h.val_loss, h.epoch))
    _emit({"out": str(args.out), "epochs": len(history) - 1, "best_epoch": best.epoch, "best_val_loss": best.val_loss,
           "fingerprint": cfg.fingerprint()}, _history_table(history))


def cmd_build_store(args: argparse.Namespace, cfg: RunConfig) -> None:
    train = parse_dataset(args.train)
    atom, bond = build_stores(train, load_backbone(args.backbone), cfg.index, cfg.seed)
    save_store(atom, args.atom_out)
    save_store(bond, args.bond_out)
    summary = store_summary(atom, bond)
    _emit({"atom": str(args.atom_out), "bond": str(args.bond_out), "entries": {"atom": len(atom), "bond": len(bond)}},
          summary)


def cmd_grid_search(args: argparse.Namespace, cfg: RunConfig) -> None:
    val = parse_dataset(args.val)
    pipe = _load_pipeline(args)
    result = grid_search_fixed(val, pipe.backbone, pipe.atom_store, pipe.bond_store, cfg.grid.temperatures,
                               cfg.grid.lambdas, cfg.retrieval.k_neighbors, cfg.index.n_probe)
    report = {"temperature": result.temperature, "lambda": result.lam, "loss": result.loss,
              "table": result.table.to_dict(orient="records")}
    _write_json(args.out, report)
    _emit({k: v for k, v in report.items() if k != "table"}, result.table)


def cmd_train_adapter(args: argparse.Namespace, cfg: RunConfig) -> None:
    val = parse_dataset(args.val)
    pipe = _load_pipeline(args)
    history: list[EpochStats] = []
    params = train_adapter(val, pipe.backbone, pipe.atom_store, pipe.bond_store, cfg, history)
    save_adapter(params, args.out)
    best = min(history, key=lambda h: (h.val_loss, h.epoch))
    _emit({"out": str(args.out), "k_neighbors": params.k, "best_epoch": best.epoch, "best_val_loss": best.val_loss},
          _history_table(history))


def cmd_predict(args: argparse.Namespace, cfg: RunConfig) -> None:
    d = parse_dataset(args.data)
    backbone = load_backbone(args.backbone)
    top_n = cfg.retrieval.top_n
    if args.gnn_only:
        preds = [predict_gnn_only(g, backbone, top_n) for g in d]
    else:
        atom, bond = load_store(args.atom_store), load_store(args.bond_store)
        fusion = _fusion(args, cfg)
        k = adapter_neighbors(cfg.retrieval.k_neighbors, atom, bond)
        preds = [predict_topk(g, backbone, atom, bond, fusion, k, top_n, cfg.index.n_probe) for g in d]
    write_predictions(preds, args.out)
    _emit({"out": str(args.out), "records": len(preds)})


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> None:
    report = evaluate_topk(read_predictions(args.predictions), parse_dataset(args.data), cfg.harness.ks)
    _write_json(args.out, report.to_dict())
    _emit(report.to_dict(), report.table())


def cmd_split_fewshot(args: argparse.Namespace, cfg: RunConfig) -> None:
    d = parse_dataset(args.data)
    held = args.held if args.held is not None else cfg.harness.held_classes
    if args.keep_fraction == 0.0:
        out = build_zero_shot_split(d, held)
    else:
        seed = int(derive_rng(cfg.seed, "fewshot").integers(2**31))
        out = build_few_shot_split(d, held, args.keep_fraction, seed)
    write_dataset(out, args.out)
    _emit({"out": str(args.out), "records": len(out), "held_classes": sorted(held), "keep_fraction": args.keep_fraction})


def cmd_bench(args: argparse.Namespace, cfg: RunConfig) -> None:
    test = parse_dataset(args.data)
    pipe = _load_pipeline(args)
    fused, gnn_only = bench_latency(test, pipe.backbone, pipe.atom_store, pipe.bond_store, _fusion(args, cfg), cfg,
                                    args.n_runs, args.csv)
    table = "\n".join(f"{r.pipeline:>9}: {r.format()}" for r in (fused, gnn_only))
    _emit({r.pipeline: {"mean_ms": r.mean_ms, "std_ms": r.std_ms, "n_runs": r.n_runs, "fingerprint": r.fingerprint}
           for r in (fused, gnn_only)}, table)


def _experiment_pipeline(args: argparse.Namespace, cfg: RunConfig, train, val) -> Pipeline:
    if args.backbone and args.atom_store and args.bond_store:
        return _load_pipeline(args)
    if args.backbone:
        backbone = load_backbone(args.backbone)
        atom, bond = build_stores(train, backbone, cfg.index, cfg.seed)
        return Pipeline(backbone, atom, bond)
    return build_pipeline(train, val, cfg)


def cmd_ablation(args: argparse.Namespace, cfg: RunConfig) -> None:
    train, val, test = parse_dataset(args.train), parse_dataset(args.val), parse_dataset(args.test)
    result = run_ablation(_experiment_pipeline(args, cfg, train, val), val, test, cfg)
    table = result.table()
    _emit({"best_temperature": result.grid.temperature, "best_lambda": result.grid.lam,
           "grid_rows": len(result.grid.table), "systems": table.to_dict(orient="records")}, table)


def cmd_sweep_k(args: argparse.Namespace, cfg: RunConfig) -> None:
    train, val, test = parse_dataset(args.train), parse_dataset(args.val), parse_dataset(args.test)
    table = sweep_neighbors(_experiment_pipeline(args, cfg, train, val), val, test, cfg, args.neighbors)
    _emit({"sweep": table.to_dict(orient="records")}, table)


def cmd_fewshot(args: argparse.Namespace, cfg: RunConfig) -> None:
    train, val, test = parse_dataset(args.train), parse_dataset(args.val), parse_dataset(args.test)
    held = args.held if args.held is not None else cfg.harness.held_classes
    fractions = args.keep_fractions if args.keep_fractions is not None else cfg.harness.keep_fractions
    result = run_fewshot_experiment(train, val, test, held, fractions, cfg)
    _emit({"rows": result.table.to_dict(orient="records")}, result.table)


def cmd_recall(args: argparse.Namespace, cfg: RunConfig) -> None:
    store = load_store(args.store)
    rng = derive_rng(cfg.seed, "bench")
    picks = rng.choice(len(store), size=min(args.queries, len(store)), replace=False)
    queries = store.keys[np.sort(picks)]
    n_probe = args.n_probe if args.n_probe is not None else cfg.index.n_probe
    recall = measure_recall(store.index, build_flat(store.keys), queries, args.k, n_probe)
    target = recall_target(store.index, n_probe, cfg.index)
    if recall < target:
        LOG.warning("Recall@%d %.4f is below the configured target %.2f", args.k, recall, target)
    _emit({"store": str(args.store), "queries": len(queries), "k": args.k, "n_probe": n_probe, "recall": recall,
           "target": target, "meets_target": recall >= target})


def _add_store_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--backbone", type=Path, required=required, help="Backbone checkpoint (RKBB)")
    p.add_argument("--atom-store", type=Path, required=required, help="Atom template store (RKST)")
    p.add_argument("--bond-store", type=Path, required=required, help="Bond template store (RKST)")


def _add_fusion_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--adapter", type=Path, default=None, help="Adapter checkpoint (RKAD); overrides fixed fusion")
    p.add_argument("--temperature", type=positive_float, default=None, help="Fixed KNN temperature in [1, 100]")
    p.add_argument("--lam", type=unit_float, default=None, help="Fixed interpolation factor in [0, 1]")


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--val", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    _add_store_args(p, required=False)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one configuration value (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="Master seed for every stochastic step")
    common.add_argument("--log-level", default=None, choices=LOG_LEVELS, help="Logging verbosity (default: INFO)")

    parser = argparse.ArgumentParser(prog="retroknn", description="Retrieval-augmented reaction template prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func: Callable[[argparse.Namespace, RunConfig], None], help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("gen-synth", cmd_gen_synth, "Generate a seeded synthetic corpus (train/val/test JSONL)")
    p.add_argument("--out-dir", type=Path, required=True)

    p = add("train-backbone", cmd_train_backbone, "Train the message-passing backbone")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--val", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = add("build-store", cmd_build_store, "Build the atom and bond template stores")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--backbone", type=Path, required=True)
    p.add_argument("--atom-out", type=Path, required=True)
    p.add_argument("--bond-out", type=Path, required=True)

    p = add("grid-search", cmd_grid_search, "Select a global (T, lambda) by validation loss")
    p.add_argument("--val", type=Path, required=True)
    _add_store_args(p)
    p.add_argument("--out", type=Path, default=None, help="Write the full grid report as JSON")

    p = add("train-adapter", cmd_train_adapter, "Train the per-site adapter on validation data")
    p.add_argument("--val", type=Path, required=True)
    _add_store_args(p)
    p.add_argument("--out", type=Path, required=True)

    p = add("predict", cmd_predict, "Rank (site, template) predictions for every record")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--backbone", type=Path, required=True)
    p.add_argument("--atom-store", type=Path, default=None)
    p.add_argument("--bond-store", type=Path, default=None)
    _add_fusion_args(p)
    p.add_argument("--gnn-only", action="store_true", help="Rank the classifier output alone")
    p.add_argument("--out", type=Path, required=True)

    p = add("evaluate", cmd_evaluate, "Top-K exact match of predictions against a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)

    p = add("split-fewshot", cmd_split_fewshot, "Write a zero-shot (keep 0) or few-shot copy of a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--held", type=positive_int, nargs="+", default=None, help="Held-out reaction classes")
    p.add_argument("--keep-fraction", type=unit_float, default=0.0)
    p.add_argument("--out", type=Path, required=True)

    p = add("bench", cmd_bench, "Per-record latency of fused and classifier-only inference")
    p.add_argument("--data", type=Path, required=True)
    _add_store_args(p)
    _add_fusion_args(p)
    p.add_argument("--n-runs", type=positive_int, default=None)
    p.add_argument("--csv", type=Path, default=None, help="Append a summary row per pipeline to this CSV")

    p = add("ablation", cmd_ablation, "Compare classifier-only, fixed and adaptive fusion")
    _add_experiment_args(p)

    p = add("sweep-k", cmd_sweep_k, "Retrain the adapter for several neighbor counts")
    _add_experiment_args(p)
    p.add_argument("--neighbors", type=positive_int, nargs="+", default=None)

    p = add("fewshot", cmd_fewshot, "Zero-shot and few-shot experiment over held-out classes")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--val", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--held", type=positive_int, nargs="+", default=None)
    p.add_argument("--keep-fractions", type=unit_float, nargs="+", default=None)

    p = add("recall", cmd_recall, "Recall@k of a store's index against exact search over its keys")
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--queries", type=positive_int, default=200)
    p.add_argument("--k", type=positive_int, default=32)
    p.add_argument("--n-probe", type=positive_int, default=None)
    return parser


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, args.set)
        if args.seed is not None:
            cfg.seed = args.seed
    except RetroKnnError as exc:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s: %(message)s")
        LOG.error("%s", exc)
        return 1
    level = args.log_level or cfg.log_level
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s: %(message)s")
    if args.command == "predict" and not args.gnn_only and (args.atom_store is None or args.bond_store is None):
        LOG.error("predict needs --atom-store and --bond-store unless --gnn-only is given")
        return 1
    try:
        args.func(args, cfg)
    except (RetroKnnError, OSError, ValueError) as exc:
        LOG.error("%s", exc)
        return 1
    except KeyboardInterrupt:
        LOG.info("Stopped")
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
