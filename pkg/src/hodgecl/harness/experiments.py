"""Grid search, the six-variant matrix, and the augmentation gap study."""
from __future__ import annotations

import csv
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..augment import mask_flow
from ..datasets import TrajectoryMap, generate_dataset, make_map
from ..downstream import EvaluationReport
from ..simplicial import hodge_project
from .config import VARIANTS, ExperimentConfig, rng_for, stream, variant_config, variant_label
from .training import (
    drop_probabilities,
    test_accuracy_contrastive,
    test_accuracy_supervised,
    train_contrastive,
    train_supervised,
    unlabeled_pool,
)

log = logging.getLogger(__name__)

WORKERS_ENV = "HODGECL_WORKERS"
DECIMAL_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def load_split(config: ExperimentConfig, split: int):
    tmap = make_map(config.grid_spec)
    flows = generate_dataset(tmap, config.n_train, config.n_val, config.n_test, stream(config.seed, split, "data"))
    return tmap, flows


@dataclass
class RunResult:
    variant: str
    split: int
    test_accuracy: float
    val_accuracy: float
    best_epoch: int
    final_loss: float
    wall_clock: float


def run_once(config: ExperimentConfig, variant: str, split: int, data=None, probs=None):
    """Train one variant on one split and score it on the test split.

    Returns ``(RunResult, params, TrainLog)``.
    """
    cfg = variant_config(config, variant)
    tmap, flows = data if data is not None else load_split(cfg, split)
    if cfg.supervised:
        params, train_log = train_supervised(cfg, flows, tmap, split)
        acc = test_accuracy_supervised(params, tmap, flows)
    else:
        params, train_log = train_contrastive(cfg, flows, tmap, split, probs=probs)
        acc = test_accuracy_contrastive(params, tmap, flows, cfg, split)
    val = max(train_log.val_accuracy.values(), default=float("nan"))
    result = RunResult(variant, split, acc, val, train_log.best_epoch, train_log.losses[-1], train_log.wall_clock)
    log.info("%s split %d: test %.3f val %.3f (%.1fs)", variant, split, acc, val, train_log.wall_clock)
    return result, params, train_log


def _run_job(args):
    config, variant, split = args
    return run_once(config, variant, split)[0]


def worker_count(default=1):
    value = os.environ.get(WORKERS_ENV)
    if value is None:
        return default
    count = int(value)
    if count < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer")
    return count


def run_jobs(jobs, workers=None):
    """Run ``(config, variant, split)`` jobs, returning results in job order."""
    workers = worker_count() if workers is None else workers
    if workers == 1 or len(jobs) <= 1:
        return [_run_job(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def grid_search(config: ExperimentConfig, variant: str, lrs=DECIMAL_GRID, weight_decays=DECIMAL_GRID,
                splits=(0,), workers=None):
    """Train every ``(lr, weight_decay)`` cell and pick the best by validation accuracy.

    Ties go to the smaller learning rate, then the smaller weight decay.
    Returns ``(best_config, rows)`` with one row per cell.
    """
    cells = sorted(itertools.product(lrs, weight_decays))
    if not cells:
        raise ValueError("empty grid")
    jobs = [(config.replace(lr=lr, weight_decay=wd), variant, s) for lr, wd in cells for s in splits]
    results = run_jobs(jobs, workers)
    rows = []
    for k, (lr, wd) in enumerate(cells):
        chunk = results[k * len(splits):(k + 1) * len(splits)]
        rows.append({
            "variant": variant,
            "lr": lr,
            "weight_decay": wd,
            "val_accuracy": float(np.mean([r.val_accuracy for r in chunk])),
            "test_accuracy": float(np.mean([r.test_accuracy for r in chunk])),
        })
    top = max(r["val_accuracy"] for r in rows)
    best = next(r for r in rows if r["val_accuracy"] == top)  # rows are sorted by (lr, wd)
    return config.replace(lr=best["lr"], weight_decay=best["weight_decay"]), rows


def write_grid_csv(path, rows):
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, ["variant", "lr", "weight_decay", "val_accuracy", "test_accuracy"],
                             lineterminator="\n")
        out.writeheader()
        for r in rows:
            out.writerow({**r, "val_accuracy": f"{r['val_accuracy']:.6f}", "test_accuracy": f"{r['test_accuracy']:.6f}"})


def run_variant_matrix(config: ExperimentConfig, variants=tuple(VARIANTS), splits=None, workers=None,
                       dataset="trajectory", overrides=None):
    """Test accuracy of every variant on every split.

    ``overrides`` maps a variant name to config changes (e.g. its own
    grid-searched learning rate). Returns ``(reports, results)`` where
    ``reports`` follows the order of ``variants``.
    """
    splits = range(config.n_splits) if splits is None else splits
    overrides = overrides or {}
    jobs = [(config.replace(**overrides.get(v, {})), v, s) for v in variants for s in splits]
    results = run_jobs(jobs, workers)
    reports = []
    for v in variants:
        accs = [r.test_accuracy for r in results if r.variant == v]
        reports.append(EvaluationReport(variant_label(v), dataset, accs))
    return reports, results


def write_runs_csv(path, results):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["variant", "split", "test_accuracy", "val_accuracy", "best_epoch", "final_loss"])
        for r in results:
            out.writerow([r.variant, r.split, f"{r.test_accuracy:.6f}", f"{r.val_accuracy:.6f}", r.best_epoch,
                          f"{r.final_loss:.6f}"])


# augmentation gap study

COMPONENTS = ("G", "C", "H")


def matched_uniform(p_spectral):
    """Uniform probabilities with the same expected drop mass per anchor."""
    p_spectral = np.atleast_2d(p_spectral)
    mass = p_spectral.sum(axis=1, keepdims=True)
    return np.broadcast_to(mass / p_spectral.shape[1], p_spectral.shape).copy()


def embedding_gaps(tmap: TrajectoryMap, X, probs, draws, rng):
    """``||x~_S - x~'_S||`` per component for ``draws`` masked views.

    Anchors are visited cyclically so every row of ``X`` contributes
    (almost) equally; ``probs`` holds one row per anchor.
    """
    X = np.atleast_2d(X)
    probs = np.broadcast_to(probs, X.shape)
    idx = np.arange(draws) % len(X)
    views = mask_flow(X[idx], probs[idx], rng)
    basis = tmap.hodge.basis
    full, masked = hodge_project(X[idx], basis), hodge_project(views, basis)
    return {
        "G": np.linalg.norm(full.tilde_g - masked.tilde_g, axis=1),
        "C": np.linalg.norm(full.tilde_c - masked.tilde_c, axis=1),
        "H": np.linalg.norm(full.tilde_h - masked.tilde_h, axis=1),
    }


def gap_study(config: ExperimentConfig, draws=10_000, split=0, probs=None):
    """Embedding gaps under spectral and mass-matched uniform augmentation.

    Returns ``{"uniform": {comp: gaps}, "spectral": {comp: gaps}}``; both
    schemes see the same anchors in the same order.
    """
    tmap, flows = load_split(config, split)
    X = unlabeled_pool(flows)
    p_spec = drop_probabilities(config.replace(augmentation="spectral"), X, tmap) if probs is None else probs
    p_uni = matched_uniform(p_spec)
    return {
        "uniform": embedding_gaps(tmap, X, p_uni, draws, rng_for(config.seed, split, "mask")),
        "spectral": embedding_gaps(tmap, X, p_spec, draws, rng_for(config.seed, split, "mask")),
    }


def write_gap_csv(path, study):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["component", "scheme", "draw", "gap"])
        for comp in COMPONENTS:
            for scheme in ("uniform", "spectral"):
                for k, g in enumerate(study[scheme][comp]):
                    out.writerow([comp, scheme, k, f"{g:.9g}"])


def gap_histogram_svg(study, bins=30, width=900, height=260):
    """Three side-by-side histograms (G, C, H), uniform in blue and spectral in orange."""
    colors = {"uniform": "#1f77b4", "spectral": "#ff7f0e"}
    names = {"G": "gradient", "C": "curl", "H": "harmonic"}
    panel_w, pad = width / 3, 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for k, comp in enumerate(COMPONENTS):
        x0 = k * panel_w + pad
        w, h = panel_w - 2 * pad, height - 2 * pad
        values = np.concatenate([study[s][comp] for s in colors])
        top = float(values.max()) if values.size and values.max() > 0 else 1.0
        edges = np.linspace(0.0, top, bins + 1)
        counts = {s: np.histogram(study[s][comp], edges)[0] / max(len(study[s][comp]), 1) for s in colors}
        peak = max(float(c.max()) for c in counts.values()) or 1.0
        parts.append(f'<text x="{x0 + w / 2:.1f}" y="{pad - 10}" text-anchor="middle">{names[comp]}</text>')
        parts.append(f'<line x1="{x0:.1f}" y1="{pad + h:.1f}" x2="{x0 + w:.1f}" y2="{pad + h:.1f}" stroke="black"/>')
        bar = w / bins
        for scheme, color in colors.items():
            for b, c in enumerate(counts[scheme]):
                bh = h * c / peak
                parts.append(f'<rect x="{x0 + b * bar:.2f}" y="{pad + h - bh:.2f}" width="{bar:.2f}" '
                             f'height="{bh:.2f}" fill="{color}" fill-opacity="0.5"/>')
        parts.append(f'<text x="{x0:.1f}" y="{pad + h + 14:.1f}">0</text>')
        parts.append(f'<text x="{x0 + w:.1f}" y="{pad + h + 14:.1f}" text-anchor="end">{top:.3g}</text>')
    for k, (scheme, color) in enumerate(colors.items()):
        y = height - 8
        x = width - 200 + 100 * k
        parts.append(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{x + 14}" y="{y}">{scheme}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
