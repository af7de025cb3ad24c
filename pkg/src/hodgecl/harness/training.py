"""Contrastive and supervised training loops."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..augment import SpectralGapObjective, absolute_budget, optimize_probabilities
from ..contrastive import (
    NORM_EPS,
    ContrastiveBatch,
    SpectralWeights,
    batch_layout,
    infonce_loss,
    make_views,
    normalize_weights,
    spectral_similarity_matrix,
    weighted_infonce_loss,
)
from ..datasets import LabeledFlow, TrajectoryMap, stack
from ..downstream import evaluate_split
from ..errors import NonFiniteLoss
from ..scnn import ScnnParameters, encode, init_parameters, make_lower_only, scnn_backward, scnn_forward
from .config import ExperimentConfig, int_seed, rng_for

log = logging.getLogger(__name__)


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    val_accuracy: dict[int, float] = field(default_factory=dict)
    best_epoch: int = 0
    wall_clock: float = 0.0
    config_hash: str = ""
    checkpoint: str | None = None

    def to_dict(self):
        return {
            "losses": self.losses,
            "val_accuracy": {str(k): v for k, v in self.val_accuracy.items()},
            "best_epoch": self.best_epoch,
            "wall_clock": self.wall_clock,
            "config_hash": self.config_hash,
            "checkpoint": self.checkpoint,
        }


def split_arrays(flows: list[LabeledFlow], *splits):
    """Stacked ``(X, y)`` for the union of the named splits, in dataset order."""
    chosen = [f for f in flows if f.split in splits]
    if "test" in splits:
        raise ValueError("training code must not read the test split")
    return stack(chosen)


def unlabeled_pool(flows: list[LabeledFlow]):
    """Flows used for self-supervised training: train and val, never test."""
    return split_arrays(flows, "train", "val")[0]


def drop_probabilities(config: ExperimentConfig, X, tmap: TrajectoryMap):
    """Per-anchor drop probabilities, shape ``(len(X), N)``."""
    n = tmap.num_edges
    budget = absolute_budget(config.budget, n, config.budget_is_fraction)
    if config.augmentation == "uniform":
        return np.full((len(X), n), budget / n)
    result = optimize_probabilities(
        X, tmap.hodge.basis, SpectralGapObjective(), budget, config.aug_step, config.aug_iters
    )
    return result.p


def similarity_scores(config: ExperimentConfig, X, tmap: TrajectoryMap):
    gammas = SpectralWeights(config.gamma_h, config.gamma_g, config.gamma_c)
    return spectral_similarity_matrix(X, X, tmap.hodge.basis, gammas)


def new_parameters(config: ExperimentConfig, split: int, out_dim: int) -> ScnnParameters:
    params = init_parameters(
        rng_for(config.seed, split, "init"), list(config.hidden), out_dim, config.order, config.order,
        pooling=config.pooling,
    )
    return make_lower_only(params) if config.lower_only else params


def sgd_step(params: ScnnParameters, grads: ScnnParameters, lr, weight_decay):
    for p, g in zip(params.arrays(), grads.arrays()):
        p -= lr * (g + weight_decay * p)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def embedding_fn(params: ScnnParameters, tmap: TrajectoryMap):
    lap = tmap.hodge.laplacians
    return lambda X: encode(params, lap.L1_low, lap.L1_up, X)


def validation_accuracy(params, tmap, flows, config, split):
    """Best-over-C SVM accuracy on the validation split, trained on train embeddings."""
    embed = embedding_fn(params, tmap)
    Xtr, ytr = split_arrays(flows, "train")
    Zva, yva = embed(split_arrays(flows, "val")[0]), split_arrays(flows, "val")[1]
    seed = int_seed(config.seed, split, "svm")
    acc, _ = evaluate_split(embed(Xtr), ytr, Zva, yva, Zva, yva, config.c_grid, seed=seed,
                            standardize=config.standardize)
    return acc


def _encode_views(params, lap, anchors, probs, rng, max_redraws=100):
    """Masked views and their encodings.

    A nonzero view can still encode to exactly zero (two edges with
    opposite flows whose features cancel under pooling); such views have no
    cosine similarity and are drawn again, like empty views.
    """
    views = make_views(anchors, probs, rng)
    for _ in range(max_redraws):
        tape, z = scnn_forward(params, lap.L1_low, lap.L1_up, views)
        bad = np.flatnonzero(np.linalg.norm(z, axis=1) <= NORM_EPS)
        if len(bad) == 0:
            break
        src = bad % len(anchors)
        views[bad] = make_views(anchors[src], probs[src], rng)[: len(bad)]
    return views, tape, z


def train_contrastive(config: ExperimentConfig, flows: list[LabeledFlow], tmap: TrajectoryMap,
                      split: int = 0, probs=None, select=True):
    """Self-supervised SCNN training.

    Returns ``(params, log)``; with ``select`` the parameters are the
    checkpoint with the best validation SVM accuracy, else the final ones.
    """
    start = time.perf_counter()
    X = unlabeled_pool(flows)
    if probs is None:
        probs = drop_probabilities(config, X, tmap)
    weights_all = similarity_scores(config, X, tmap) if config.loss == "weighted" else None
    lap = tmap.hodge.laplacians
    params = new_parameters(config, split, config.embed_dim)
    shuffle_rng = rng_for(config.seed, split, "shuffle")
    mask_rng = rng_for(config.seed, split, "mask")
    train_log = TrainLog(config_hash=config.digest())
    best = (-1.0, params.copy(), 0)

    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        for idx in _batches(len(X), config.batch_size, shuffle_rng):
            owner, positive, negatives = batch_layout(len(idx))
            views, tape, z = _encode_views(params, lap, X[idx], probs[idx], mask_rng)
            batch = ContrastiveBatch(X[idx], views, owner, positive, negatives, z, idx)
            if weights_all is None:
                loss, dz = infonce_loss(batch, config.tau, config.include_positive, reduction="mean")
            else:
                scores = weights_all[idx][owner[:, None], owner[negatives]]
                w = normalize_weights(scores)
                loss, dz = weighted_infonce_loss(batch, config.tau, w, config.include_positive, reduction="mean")
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became non-finite at epoch {epoch}")
            grads = scnn_backward(params, lap.L1_low, lap.L1_up, tape, dz)
            sgd_step(params, grads, config.lr, config.weight_decay)
            epoch_losses.append(loss)
        train_log.losses.append(float(np.mean(epoch_losses)))
        if not np.all(np.isfinite(params.flat())):
            raise NonFiniteLoss(f"parameters became non-finite at epoch {epoch}")
        if select and (epoch % config.eval_every == 0 or epoch == config.epochs):
            acc = validation_accuracy(params, tmap, flows, config, split)
            train_log.val_accuracy[epoch] = acc
            if acc > best[0]:
                best = (acc, params.copy(), epoch)
            log.debug("epoch %d loss %.4f val %.3f", epoch, train_log.losses[-1], acc)

    train_log.wall_clock = time.perf_counter() - start
    if select:
        train_log.best_epoch = best[2]
        return best[1], train_log
    train_log.best_epoch = config.epochs
    return params, train_log


def _softmax_xent(logits, labels):
    shift = logits - logits.max(axis=1, keepdims=True)
    logp = shift - np.log(np.exp(shift).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def classify(params, tmap, X):
    lap = tmap.hodge.laplacians
    _, logits = scnn_forward(params, lap.L1_low, lap.L1_up, X)
    return np.argmax(logits, axis=1)


def train_supervised(config: ExperimentConfig, flows: list[LabeledFlow], tmap: TrajectoryMap,
                     split: int = 0, select=True):
    """SCNN with a 2-way linear head trained on softmax cross-entropy."""
    start = time.perf_counter()
    X, y = split_arrays(flows, "train")
    Xva, yva = split_arrays(flows, "val")
    lap = tmap.hodge.laplacians
    params = new_parameters(config, split, 2)
    shuffle_rng = rng_for(config.seed, split, "shuffle")
    train_log = TrainLog(config_hash=config.digest())
    best = (-1.0, params.copy(), 0)
    select = select and len(Xva) > 0

    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        for idx in _batches(len(X), config.batch_size, shuffle_rng):
            tape, logits = scnn_forward(params, lap.L1_low, lap.L1_up, X[idx])
            loss, dlogits = _softmax_xent(logits, y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became non-finite at epoch {epoch}")
            grads = scnn_backward(params, lap.L1_low, lap.L1_up, tape, dlogits)
            sgd_step(params, grads, config.lr, config.weight_decay)
            epoch_losses.append(loss)
        train_log.losses.append(float(np.mean(epoch_losses)))
        if select and (epoch % config.eval_every == 0 or epoch == config.epochs):
            acc = float(np.mean(classify(params, tmap, Xva) == yva))
            train_log.val_accuracy[epoch] = acc
            if acc > best[0]:
                best = (acc, params.copy(), epoch)

    train_log.wall_clock = time.perf_counter() - start
    if select:
        train_log.best_epoch = best[2]
        return best[1], train_log
    train_log.best_epoch = config.epochs
    return params, train_log


def test_accuracy_contrastive(params, tmap, flows, config, split):
    """Final downstream accuracy: C chosen on val, SVM fit on train, scored on test."""
    embed = embedding_fn(params, tmap)
    Xtr, ytr = split_arrays(flows, "train")
    Xva, yva = split_arrays(flows, "val")
    Xte, yte = stack(flows, "test")
    Zva = embed(Xva) if len(Xva) else None
    acc, _ = evaluate_split(embed(Xtr), ytr, embed(Xte), yte, Zva, yva, config.c_grid,
                            seed=int_seed(config.seed, split, "svm"), standardize=config.standardize)
    return acc


def test_accuracy_supervised(params, tmap, flows):
    Xte, yte = stack(flows, "test")
    return float(np.mean(classify(params, tmap, Xte) == yte))
