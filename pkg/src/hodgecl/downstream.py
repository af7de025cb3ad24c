"""Linear SVM on frozen embeddings, penalty selection, and accuracy reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InsufficientData, SingleClassInput

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
VARIANTS = ("SSCL_Spec", "SSCL", "SCL_Spec", "SCL", "SCL_low", "SCNN_supervised")


@dataclass
class LinearSvmModel:
    w: np.ndarray
    b: float
    C: float

    def decision_function(self, Z):
        return np.asarray(Z, dtype=np.float64) @ self.w + self.b

    def predict(self, Z):
        return (self.decision_function(Z) > 0).astype(np.int64)

    def score(self, Z, labels):
        return float(np.mean(self.predict(Z) == np.asarray(labels)))


def _signed(labels):
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise SingleClassInput("need samples from both classes")
    if not set(classes.tolist()) <= {0, 1}:
        raise ValueError("labels must be binary 0/1")
    return np.where(labels == 1, 1.0, -1.0)


def svm_objective(Z, labels, C, w, b):
    """``mean(hinge) + ||w||^2 / (2 C n)``."""
    y = _signed(labels)
    n = len(y)
    margins = y * (np.asarray(Z) @ w + b)
    return float(np.maximum(0.0, 1.0 - margins).mean() + w @ w / (2.0 * C * n))


def _best_bias(margin_free, y):
    """Minimizer of ``sum max(0, 1 - y_i (s_i + b))`` over ``b``.

    The loss is convex and piecewise linear with breakpoints ``b = y_i - s_i``;
    when its minimum is a flat interval the midpoint is returned.
    """
    candidates = np.unique(y - margin_free)
    losses = np.maximum(0.0, 1.0 - y[None, :] * (margin_free[None, :] + candidates[:, None])).sum(axis=1)
    best = losses.min()
    flat = candidates[losses <= best + 1e-12 * max(1.0, best)]
    return float(0.5 * (flat.min() + flat.max()))


@njit(cache=True)
def _pegasos_epoch(Z, y, w, b, t, lam, radius, order, w_sum, accumulate):
    n, d = Z.shape
    count = 0
    for i in order:
        t += 1
        eta = 1.0 / (lam * t)
        s = b
        for j in range(d):
            s += Z[i, j] * w[j]
        shrink = 1.0 - eta * lam
        for j in range(d):
            w[j] *= shrink
        if y[i] * s < 1.0:
            for j in range(d):
                w[j] += eta * y[i] * Z[i, j]
            b += y[i] / np.sqrt(t)
        norm = 0.0
        for j in range(d):
            norm += w[j] * w[j]
        norm = np.sqrt(norm)
        if norm > radius:
            for j in range(d):
                w[j] *= radius / norm
        if accumulate:
            for j in range(d):
                w_sum[j] += w[j]
            count += 1
    return b, t, count


def fit_linear_svm(Z, labels, C=1.0, seed=0, epochs=200):
    """Primal subgradient SVM with a Pegasos step schedule.

    The weights take steps ``1/(lambda t)`` with ``lambda = 1/(C n)`` over
    epoch-wise shuffled samples; the bias (unregularized) takes steps
    ``1/sqrt(t)``. After each epoch the suffix-averaged weights get an exactly
    refit bias, and the iterate with the lowest objective (including the zero
    start) is returned.
    """
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    y = _signed(labels)
    n, d = Z.shape
    if C <= 0:
        raise ValueError("C must be positive")
    lam = 1.0 / (C * n)
    rng = np.random.default_rng(seed)

    w = np.zeros(d)
    b = 0.0
    t = 0
    w_sum = np.zeros(d)
    count = 0
    best = (svm_objective(Z, labels, C, w, b), w.copy(), b)
    radius = 1.0 / np.sqrt(lam)
    for epoch in range(epochs):
        accumulate = epoch >= epochs // 2
        b, t, c = _pegasos_epoch(Z, y, w, b, t, lam, radius, rng.permutation(n), w_sum, accumulate)
        count += c
        w_avg = w_sum / count if count else w.copy()
        b_avg = _best_bias(Z @ w_avg, y)
        obj = svm_objective(Z, labels, C, w_avg, b_avg)
        if obj < best[0]:
            best = (obj, w_avg.copy(), b_avg)
    return LinearSvmModel(best[1], best[2], float(C))


def fold_assignment(labels, folds, seed=0):
    """Stratified fold id per sample, a deterministic function of ``seed``."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        fold[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return fold


def cross_validate_penalty(Z, labels, C_grid=DEFAULT_C_GRID, folds=10, seed=0, return_scores=False):
    """Pick the C with best mean fold accuracy; ties go to the smaller C."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) < folds:
        raise InsufficientData(f"{len(labels)} samples cannot fill {folds} folds")
    _signed(labels)
    fold = fold_assignment(labels, folds, seed)
    scores = {}
    for C in sorted(C_grid):
        accs = []
        for f in range(folds):
            train, held = fold != f, fold == f
            if len(np.unique(labels[train])) < 2:
                continue
            model = fit_linear_svm(Z[train], labels[train], C, seed=seed)
            accs.append(model.score(Z[held], labels[held]))
        scores[C] = float(np.mean(accs))
    best = _argmax_smallest(scores)
    return (best, scores) if return_scores else best


def select_penalty_validation(Z_train, y_train, Z_val, y_val, C_grid=DEFAULT_C_GRID, seed=0, return_scores=False):
    """Pick C by accuracy on a held-out validation split; ties go to the smaller C."""
    scores = {}
    for C in sorted(C_grid):
        model = fit_linear_svm(Z_train, y_train, C, seed=seed)
        scores[C] = model.score(Z_val, y_val)
    best = _argmax_smallest(scores)
    return (best, scores) if return_scores else best


def _argmax_smallest(scores):
    top = max(scores.values())
    return min(C for C, s in scores.items() if s == top)


@dataclass
class EvaluationReport:
    variant: str
    dataset: str
    accuracies: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def stderr(self) -> float:
        k = len(self.accuracies)
        return float(np.std(self.accuracies, ddof=1) / np.sqrt(k)) if k > 1 else 0.0


@dataclass
class Standardizer:
    """Per-coordinate z-scoring with statistics of the training embeddings."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, Z):
        Z = np.asarray(Z, dtype=np.float64)
        scale = Z.std(axis=0)
        # constant coordinates carry no information; leave them centered at 0
        scale[scale <= 1e-12 * max(1.0, float(np.abs(Z).max(initial=0.0)))] = 1.0
        return cls(Z.mean(axis=0), scale)

    def __call__(self, Z):
        return (np.asarray(Z, dtype=np.float64) - self.mean) / self.scale


def evaluate_split(Z_train, y_train, Z_test, y_test, Z_val=None, y_val=None,
                   C_grid=DEFAULT_C_GRID, folds=10, seed=0, standardize=True):
    """Test accuracy of an SVM fit on frozen train embeddings.

    C comes from the validation split when given, else from k-fold CV on train.
    With ``standardize`` all embeddings are z-scored with train statistics first.
    """
    if standardize:
        scaler = Standardizer.fit(Z_train)
        Z_train, Z_test = scaler(Z_train), scaler(Z_test)
        if Z_val is not None and len(Z_val):
            Z_val = scaler(Z_val)
    if Z_val is not None and len(Z_val):
        C = select_penalty_validation(Z_train, y_train, Z_val, y_val, C_grid, seed)
    elif len(C_grid) == 1:
        C = C_grid[0]
    else:
        C = cross_validate_penalty(Z_train, y_train, C_grid, folds, seed)
    model = fit_linear_svm(Z_train, y_train, C, seed=seed)
    return model.score(Z_test, y_test), model


def evaluate_variant(embed, splits, variant="SSCL_Spec", dataset="trajectory",
                     C_grid=DEFAULT_C_GRID, folds=10, seed=0, standardize=True):
    """Aggregate test accuracy over splits.

    ``splits`` yields dicts with ``train``/``test`` (and optionally ``val``)
    entries of ``(flows, labels)``; ``embed`` maps flows to embeddings.
    """
    report = EvaluationReport(variant, dataset)
    for k, split in enumerate(splits):
        Xtr, ytr = split["train"]
        Xte, yte = split["test"]
        val = split.get("val")
        Zv, yv = (embed(val[0]), val[1]) if val is not None else (None, None)
        acc, _ = evaluate_split(embed(Xtr), ytr, embed(Xte), yte, Zv, yv, C_grid, folds, seed + k, standardize)
        report.accuracies.append(acc)
    return report


def write_split_csv(path, reports):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["variant", "dataset", "split_id", "accuracy"])
        for r in reports:
            for k, acc in enumerate(r.accuracies):
                out.writerow([r.variant, r.dataset, k, f"{acc:.6f}"])


def write_summary_csv(path, reports):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["variant", "dataset", "splits", "mean", "stderr"])
        for r in reports:
            out.writerow([r.variant, r.dataset, len(r.accuracies), f"{r.mean:.6f}", f"{r.stderr:.6f}"])
