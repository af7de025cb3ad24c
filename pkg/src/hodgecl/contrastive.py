"""InfoNCE, Hodge-aware reweighted InfoNCE, and contrastive batch assembly.

A batch of ``B`` anchors yields ``R = 2B`` representation rows: rows ``0..B-1``
are the first views and rows ``B..2B-1`` the second views, so row ``r``
belongs to anchor ``r % B``. Every row acts once as the anchor side of a
positive pair, and its negatives are all rows of the other anchors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import mask_flow
from .errors import (
    AllZeroScores,
    BatchTooSmall,
    DegenerateComponent,
    DegenerateVector,
    DimensionMismatch,
    EmptyNegatives,
    WeightDimensionMismatch,
)
from .simplicial import HodgeBasis, hodge_project

NORM_EPS = 1e-12


@dataclass
class ContrastiveBatch:
    anchors: np.ndarray       # (B, N) raw flows
    views: np.ndarray         # (2B, N)
    owner: np.ndarray         # (2B,) anchor index of each view
    positive: np.ndarray      # (2B,) row index of the partner view
    negatives: np.ndarray     # (2B, M) row indices
    z: np.ndarray | None = None
    anchor_ids: np.ndarray | None = None  # dataset indices of the anchors

    @property
    def num_pairs(self) -> int:
        return len(self.positive)


def batch_layout(num_anchors):
    """Owner, positive-partner and negative index arrays for ``2B`` rows."""
    if num_anchors < 2:
        raise BatchTooSmall("a contrastive batch needs at least two anchors")
    B = num_anchors
    rows = np.arange(2 * B)
    owner = rows % B
    positive = (rows + B) % (2 * B)
    negatives = np.stack([rows[owner != owner[r]] for r in rows])
    return owner, positive, negatives


def make_views(anchors, drop_probs, rng, redraw_empty=True, max_redraws=100):
    """Two independent masked views per anchor, stacked view-major.

    With ``redraw_empty`` a view that masks out every nonzero entry of its
    anchor is drawn again (zero views have no defined cosine similarity).
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    drop_probs = np.broadcast_to(np.asarray(drop_probs, dtype=np.float64), anchors.shape)
    both = np.concatenate([anchors, anchors], axis=0)
    probs = np.concatenate([drop_probs, drop_probs], axis=0)
    views = mask_flow(both, probs, rng)
    if redraw_empty:
        nonzero = np.any(both != 0, axis=1)
        for _ in range(max_redraws):
            empty = np.flatnonzero(nonzero & ~np.any(views != 0, axis=1))
            if len(empty) == 0:
                break
            views[empty] = mask_flow(both[empty], probs[empty], rng)
    return views


def build_batch(anchors, drop_probs, encoder, rng, anchor_ids=None) -> ContrastiveBatch:
    """Augment, encode (one encoder row per view, 2B in total) and lay out a batch."""
    anchors = np.asarray(anchors, dtype=np.float64)
    owner, positive, negatives = batch_layout(len(anchors))
    views = make_views(anchors, drop_probs, rng)
    z = None if encoder is None else np.asarray(encoder(views))
    return ContrastiveBatch(anchors, views, owner, positive, negatives, z, anchor_ids)


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= NORM_EPS or nv <= NORM_EPS:
        raise DegenerateVector("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _normalize_rows(z):
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms <= NORM_EPS):
        raise DegenerateVector("representation with zero norm")
    return z / norms[:, None], norms


def _infonce(z, positive, negatives, tau, log_weights=None, include_positive=False, reduction="sum"):
    if tau <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(z, dtype=np.float64)
    if negatives.ndim != 2 or negatives.shape[1] == 0:
        raise EmptyNegatives("every pair needs at least one negative")
    R = len(positive)
    zhat, norms = _normalize_rows(z)
    S = zhat @ zhat.T
    rows = np.arange(R)

    s_pos = S[rows, positive] / tau
    logits = S[rows[:, None], negatives] / tau
    if log_weights is not None:
        logits = logits + log_weights
    if include_positive:
        logits = np.concatenate([logits, s_pos[:, None]], axis=1)
    shift = logits.max(axis=1, keepdims=True)
    expl = np.exp(logits - shift)
    denom = expl.sum(axis=1)
    per_pair = -s_pos + np.log(denom) + shift[:, 0]
    soft = expl / denom[:, None]

    # dL/dS, accumulated per (row, column) similarity entry
    dS = np.zeros((len(z), len(z)))
    np.add.at(dS, (rows, positive), -1.0 / tau)
    M = negatives.shape[1]
    np.add.at(dS, (np.repeat(rows, M), negatives.ravel()), soft[:, :M].ravel() / tau)
    if include_positive:
        np.add.at(dS, (rows, positive), soft[:, M] / tau)

    scale = 1.0
    if reduction == "mean":
        scale = 1.0 / R
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    dS *= scale
    dzhat = dS @ zhat + dS.T @ zhat
    dz = (dzhat - zhat * np.sum(zhat * dzhat, axis=1, keepdims=True)) / norms[:, None]
    return float(per_pair.sum() * scale), dz


def infonce_loss(batch: ContrastiveBatch, tau, include_positive=False, reduction="sum"):
    """Temperature-scaled InfoNCE and its gradient w.r.t. ``batch.z``.

    The denominator runs over the negatives only unless ``include_positive``.
    """
    return _infonce(batch.z, batch.positive, batch.negatives, tau,
                    include_positive=include_positive, reduction=reduction)


def weighted_infonce_loss(batch: ContrastiveBatch, tau, weights, include_positive=False, reduction="sum"):
    """InfoNCE with each negative's denominator term scaled by ``weights[r, m]``.

    ``weights`` has the shape of ``batch.negatives`` and is treated as a
    constant.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != batch.negatives.shape:
        raise WeightDimensionMismatch(
            f"weights shape {weights.shape} != negatives shape {batch.negatives.shape}"
        )
    if np.any(weights < 0):
        raise ValueError("negative weights")
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return _infonce(batch.z, batch.positive, batch.negatives, tau, log_w, include_positive, reduction)


@dataclass(frozen=True)
class SpectralWeights:
    gamma_h: float = 1.0
    gamma_g: float = 1.0
    gamma_c: float = 1.0

    def __post_init__(self):
        if min(self.gamma_h, self.gamma_g, self.gamma_c) < 0:
            raise ValueError("gamma weights must be nonnegative")


def _cosine_distance_matrix(A, Bm, strict, name):
    na = np.linalg.norm(A, axis=-1)
    nb = np.linalg.norm(Bm, axis=-1)
    bad_a, bad_b = na <= NORM_EPS, nb <= NORM_EPS
    if strict and (bad_a.any() or bad_b.any()):
        raise DegenerateComponent(f"zero-norm {name} component")
    safe_a = np.where(bad_a, 1.0, na)
    safe_b = np.where(bad_b, 1.0, nb)
    cos = (A / safe_a[:, None]) @ (Bm / safe_b[:, None]).T
    cd = 1.0 - np.clip(cos, -1.0, 1.0)
    # undefined angle: neutral distance 1
    cd[bad_a, :] = 1.0
    cd[:, bad_b] = 1.0
    return cd


def spectral_similarity_matrix(X, Y, basis: HodgeBasis, gammas: SpectralWeights = SpectralWeights(), strict=False):
    """Weighted Hodge cosine distances between every row of ``X`` and of ``Y``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    ex, ey = hodge_project(X, basis), hodge_project(Y, basis)
    S = np.zeros((len(X), len(Y)))
    for gamma, a, b, name in (
        (gammas.gamma_h, ex.tilde_h, ey.tilde_h, "harmonic"),
        (gammas.gamma_g, ex.tilde_g, ey.tilde_g, "gradient"),
        (gammas.gamma_c, ex.tilde_c, ey.tilde_c, "curl"),
    ):
        if gamma > 0:
            S += gamma * _cosine_distance_matrix(a, b, strict, name)
    return S


def spectral_similarity(x_i, x_m, basis: HodgeBasis, gammas: SpectralWeights = SpectralWeights(), strict=False):
    return float(spectral_similarity_matrix(x_i, x_m, basis, gammas, strict)[0, 0])


def normalize_weights(scores):
    """Scale nonnegative scores to sum to one along the last axis."""
    scores = np.asarray(scores, dtype=np.float64)
    total = scores.sum(axis=-1, keepdims=True)
    if np.any(total <= NORM_EPS):
        raise AllZeroScores("all negatives are spectrally identical to the anchor")
    return scores / total


def batch_weights(batch: ContrastiveBatch, similarity):
    """Per-row negative weights from an anchor-by-anchor similarity matrix.

    ``similarity[a, b]`` is the spectral score between anchors ``a`` and
    ``b`` of this batch.
    """
    similarity = np.asarray(similarity, dtype=np.float64)
    B = len(batch.anchors)
    if similarity.shape != (B, B):
        raise DimensionMismatch(f"similarity must be {B}x{B}")
    scores = similarity[batch.owner[:, None], batch.owner[batch.negatives]]
    return normalize_weights(scores)
