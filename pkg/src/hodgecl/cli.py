"""Command-line interface: ``hodgecl <command> [options]``.

Every command takes ``--config file.json`` plus ``--set key=value``
overrides (values parsed as JSON when possible). On failure a JSON object
``{"error": ..., "message": ...}`` goes to stderr and the exit code is 1.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .augment import SpectralGapObjective, absolute_budget, objective_and_gradient, save_probabilities
from .datasets import save_dataset
from .downstream import EvaluationReport, write_split_csv, write_summary_csv
from .harness.config import VARIANTS, ExperimentConfig
from .harness.experiments import (
    gap_histogram_svg,
    gap_study,
    grid_search,
    load_split,
    run_once,
    run_variant_matrix,
    write_gap_csv,
    write_grid_csv,
    write_runs_csv,
)
from .harness.training import drop_probabilities, unlabeled_pool
from .scnn import save_checkpoint


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()):
    doc = json.loads(Path(path).read_text()) if path else {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        doc[key.strip()] = _parse_value(value)
    return ExperimentConfig.from_dict(doc)


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _out_file(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(args, config):
    tmap, flows = load_split(config, args.split)
    save_dataset(_out_file(args.out), tmap.complex, flows)
    return {"flows": len(flows), "edges": tmap.num_edges, "out": str(args.out)}


def cmd_optimize_aug(args, config):
    tmap, flows = load_split(config, args.split)
    X = unlabeled_pool(flows)
    p = drop_probabilities(config.replace(augmentation="spectral"), X, tmap)
    values, _ = objective_and_gradient(X, tmap.hodge.basis, p, SpectralGapObjective())
    budget = absolute_budget(config.budget, tmap.num_edges, config.budget_is_fraction)
    save_probabilities(_out_file(args.out), p, values, budget)
    return {"anchors": len(p), "budget": budget, "out": str(args.out)}


def cmd_train(args, config):
    out = _out_dir(args.out_dir)
    result, params, train_log = run_once(config, args.variant, args.split)
    stem = f"{args.variant}_split{args.split}"
    save_checkpoint(params, out / f"{stem}.ckpt.json")
    train_log.checkpoint = str(out / f"{stem}.ckpt.json")
    _write_json(out / f"{stem}.log.json", train_log.to_dict())
    return {"variant": args.variant, "split": args.split, "test_accuracy": result.test_accuracy,
            "val_accuracy": result.val_accuracy, "best_epoch": result.best_epoch}


def cmd_grid_search(args, config):
    lrs = args.lr or [10.0 ** k for k in range(-5, 1)]
    wds = args.wd or [10.0 ** k for k in range(-5, 1)]
    best, rows = grid_search(config, args.variant, lrs, wds, splits=tuple(args.splits))
    write_grid_csv(_out_file(args.out), rows)
    return {"variant": args.variant, "lr": best.lr, "weight_decay": best.weight_decay, "cells": len(rows)}


def cmd_evaluate(args, config):
    out = _out_dir(args.out_dir)
    overrides = json.loads(Path(args.overrides).read_text()) if args.overrides else None
    splits = range(args.splits) if args.splits is not None else None
    reports, results = run_variant_matrix(config, tuple(args.variants), splits, overrides=overrides)
    write_split_csv(out / "splits.csv", reports)
    write_summary_csv(out / "summary.csv", reports)
    write_runs_csv(out / "runs.csv", results)
    _write_json(out / "config.json", config.to_dict())
    return {r.variant: {"mean": r.mean, "stderr": r.stderr} for r in reports}


def cmd_report(args, config):
    reports = {}
    with open(args.splits_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["variant"], row["dataset"])
            reports.setdefault(key, EvaluationReport(*key)).accuracies.append(float(row["accuracy"]))
    write_summary_csv(_out_file(args.out), list(reports.values()))
    lines = [f"{r.variant:<16} {100 * r.mean:6.2f} +- {100 * r.stderr:.2f}" for r in reports.values()]
    print("\n".join(lines), file=sys.stderr)
    return {"variants": len(reports), "out": str(args.out)}


def cmd_fig_gap(args, config):
    out = _out_dir(args.out_dir)
    study = gap_study(config, args.draws, args.split)
    write_gap_csv(out / "gap.csv", study)
    (out / "gap.svg").write_text(gap_histogram_svg(study))
    return {scheme: {c: float(np.mean(v)) for c, v in comps.items()} for scheme, comps in study.items()}


class _JsonErrorParser(argparse.ArgumentParser):
    """Usage errors are reported as JSON too (exit code 2)."""

    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": f"{self.prog}: {message}"}), file=sys.stderr)
        sys.exit(2)


def build_parser():
    parser = _JsonErrorParser(prog="hodgecl", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
        p.set_defaults(func=func)
        return p

    p = command("gen-data", cmd_gen_data, "generate one split of the trajectory dataset")
    p.add_argument("--split", type=int, default=0)
    p.add_argument("--out", required=True)

    p = command("optimize-aug", cmd_optimize_aug, "optimize per-anchor drop probabilities")
    p.add_argument("--split", type=int, default=0)
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train one variant on one split")
    p.add_argument("--variant", choices=sorted(VARIANTS), required=True)
    p.add_argument("--split", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = command("grid-search", cmd_grid_search, "grid search learning rate and weight decay")
    p.add_argument("--variant", choices=sorted(VARIANTS), required=True)
    p.add_argument("--lr", type=float, nargs="+")
    p.add_argument("--wd", type=float, nargs="+")
    p.add_argument("--splits", type=int, nargs="+", default=[0])
    p.add_argument("--out", required=True)

    p = command("evaluate", cmd_evaluate, "run the variant matrix and write CSV reports")
    p.add_argument("--variants", nargs="+", choices=list(VARIANTS), default=list(VARIANTS))
    p.add_argument("--splits", type=int, help="number of splits (default: config n_splits)")
    p.add_argument("--overrides", help="JSON file mapping variant -> config changes")
    p.add_argument("--out-dir", required=True)

    p = command("report", cmd_report, "summarize a per-split accuracy CSV")
    p.add_argument("splits_csv")
    p.add_argument("--out", required=True)

    p = command("fig-gap", cmd_fig_gap, "embedding-gap histograms for uniform vs spectral masking")
    p.add_argument("--split", type=int, default=0)
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--out-dir", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.set)
        summary = args.func(args, config)
    except Exception as exc:  # reported as JSON for callers
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
