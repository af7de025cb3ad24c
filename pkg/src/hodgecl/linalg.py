"""Symmetric eigensolver based on cyclic Jacobi rotations.

The sweep uses round-robin (tournament) ordering: each step applies
``n // 2`` disjoint plane rotations. A whole sweep runs in one compiled call.
"""
from functools import lru_cache

import numpy as np
from numba import njit

from .errors import DimensionMismatch, NoConvergence

OFF_DIAGONAL_TOL = 1e-12
MAX_SWEEPS = 100


@lru_cache(maxsize=64)
def _round_robin(n):
    """Schedule of shape ``(steps, half, 2)``; every unordered pair appears once.

    Padding slots (a bye when ``n`` is odd) hold -1.
    """
    m = n + (n % 2)
    players = np.arange(m)
    half = m // 2
    steps = np.full((max(m - 1, 0), half, 2), -1, dtype=np.int64)
    for k in range(m - 1):
        p = players[:half]
        q = players[half:][::-1]
        keep = (p < n) & (q < n)
        steps[k, : keep.sum(), 0] = np.minimum(p, q)[keep]
        steps[k, : keep.sum(), 1] = np.maximum(p, q)[keep]
        players = np.concatenate(([players[0]], [players[-1]], players[1:-1]))
    return steps


@njit(cache=True)
def _sweep(a, v, schedule):
    n = a.shape[0]
    c = np.empty(schedule.shape[1])
    s = np.empty(schedule.shape[1])
    for k in range(schedule.shape[0]):
        pairs = schedule[k]
        # rotation angles for this step come from the matrix before the step
        for j in range(pairs.shape[0]):
            p, q = pairs[j, 0], pairs[j, 1]
            c[j], s[j] = 1.0, 0.0
            if p < 0 or a[p, q] == 0.0:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
            t = (1.0 if theta >= 0.0 else -1.0) / (abs(theta) + np.hypot(theta, 1.0))
            c[j] = 1.0 / np.sqrt(1.0 + t * t)
            s[j] = t * c[j]
        for j in range(pairs.shape[0]):
            p, q = pairs[j, 0], pairs[j, 1]
            if p < 0 or s[j] == 0.0:
                continue
            for i in range(n):
                ap, aq = a[i, p], a[i, q]
                a[i, p] = c[j] * ap - s[j] * aq
                a[i, q] = s[j] * ap + c[j] * aq
                vp, vq = v[i, p], v[i, q]
                v[i, p] = c[j] * vp - s[j] * vq
                v[i, q] = s[j] * vp + c[j] * vq
        for j in range(pairs.shape[0]):
            p, q = pairs[j, 0], pairs[j, 1]
            if p < 0 or s[j] == 0.0:
                continue
            for i in range(n):
                ap, aq = a[p, i], a[q, i]
                a[p, i] = c[j] * ap - s[j] * aq
                a[q, i] = s[j] * ap + c[j] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0


def _off_max(a):
    off = np.abs(a - np.diag(np.diag(a)))
    return off.max() if off.size else 0.0


def eig_sym(m, tol=OFF_DIAGONAL_TOL, max_sweeps=MAX_SWEEPS):
    """Eigendecomposition of a real symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as orthonormal columns. ``tol`` is the off-diagonal
    threshold relative to the Frobenius norm of ``m``.
    """
    a = np.array(m, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    scale = np.linalg.norm(a)
    if np.abs(a - a.T).max() > 1e-12 * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if scale == 0.0:
        return np.zeros(n), v
    threshold = tol * scale

    schedule = _round_robin(n)
    for _ in range(max_sweeps):
        if _off_max(a) <= threshold:
            break
        _sweep(a, v, schedule)
    else:
        if _off_max(a) > threshold:
            raise NoConvergence(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal {_off_max(a):.3e} > {threshold:.3e})"
            )

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]
