"""Edge-flow masking and Hodge-aware optimization of the masking probabilities.

``p`` always denotes per-edge *drop* probabilities; a mask keeps edge ``i``
with probability ``q_i = 1 - p_i``.

Most functions broadcast over a leading batch axis so that the probabilities
of many anchors can be optimized in one vectorized run.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonFiniteObjective
from .simplicial import HodgeBasis

BISECTION_STEPS = 100


@dataclass
class MaskProbabilities:
    p: np.ndarray
    budget: float
    objective: float | np.ndarray | None = None


@dataclass(frozen=True)
class SpectralGapObjective:
    """Signed, weighted combination ``sg*ag*L_G + sc*ac*L_C + sh*ah*L_H``."""

    sign_g: float = -1.0
    sign_c: float = 1.0
    sign_h: float = 1.0
    alpha_g: float = 1.0
    alpha_c: float = 1.0
    alpha_h: float = 1.0

    def __post_init__(self):
        if self.sign_g == 0 and self.sign_c == 0 and self.sign_h == 0:
            raise ValueError("at least one sign must be nonzero")

    def coefficients(self):
        return {
            "G": self.sign_g * self.alpha_g,
            "C": self.sign_c * self.alpha_c,
            "H": self.sign_h * self.alpha_h,
        }


def mask_flow(x, p, rng):
    """Drop each edge value independently with probability ``p_i``."""
    x = np.asarray(x, dtype=np.float64)
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), x.shape)
    keep = rng.random(x.shape) >= p
    return x * keep


def _check(x, U, probs):
    x = np.asarray(x, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if x.shape[-1] != U.shape[0] or probs.shape[-1] != U.shape[0]:
        raise DimensionMismatch(
            f"flow ({x.shape[-1]}), probabilities ({probs.shape[-1]}) and basis ({U.shape[0]}) disagree"
        )
    return x, probs


def expected_gap(x, U_S, q):
    """``E || U_S^T x - U_S^T (x * m) ||^2`` with ``m_i ~ Bernoulli(q_i)``.

    Expanding the expectation gives ``||U_S^T (x - x*q)||^2`` plus the
    per-edge variance term ``sum_i (U_S U_S^T)_ii x_i^2 q_i (1 - q_i)``.
    """
    x, q = _check(x, U_S, q)
    residual = (x - x * q) @ U_S
    leverage = np.einsum("ij,ij->i", U_S, U_S)
    variance = (x * x * q * (1.0 - q)) @ leverage
    return np.sum(residual * residual, axis=-1) + variance


def _expected_gap_grad_q(x, U_S, q):
    """Gradient of :func:`expected_gap` w.r.t. ``q``."""
    d = x - x * q
    back = (d @ U_S) @ U_S.T
    leverage = np.einsum("ij,ij->i", U_S, U_S)
    return -2.0 * x * back + leverage * x * x * (1.0 - 2.0 * q)


def objective_and_gradient(x, basis: HodgeBasis, p, obj: SpectralGapObjective = SpectralGapObjective()):
    """Objective value in terms of drop probabilities ``p`` and its gradient."""
    x, p = _check(x, basis.U_G, p)
    q = 1.0 - p
    value = np.zeros(x.shape[:-1])
    grad = np.zeros(np.broadcast_shapes(x.shape, p.shape))
    for name, coeff in obj.coefficients().items():
        if coeff == 0:
            continue
        U = basis.block(name)
        value = value + coeff * expected_gap(x, U, q)
        grad = grad - coeff * _expected_gap_grad_q(x, U, q)
    return value, grad


def project_feasible(v, budget):
    """Euclidean projection onto ``{p in [0,1]^N : ||p||_1 <= budget}``.

    Operates row-wise on 2-D input. Returns a plain array; the shift that
    activates the budget is found by bisection.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    v = np.asarray(v, dtype=np.float64)
    clamped = np.clip(v, 0.0, 1.0)
    over = clamped.sum(axis=-1) > budget
    if not np.any(over):
        return clamped
    rows = np.atleast_2d(v)
    out = np.atleast_2d(clamped).copy()
    over = np.atleast_1d(over)
    vv = rows[over]
    lo = np.zeros(len(vv))
    hi = np.max(vv, axis=-1)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        mass = np.clip(vv - mid[:, None], 0.0, 1.0).sum(axis=-1)
        too_big = mass > budget
        lo = np.where(too_big, mid, lo)
        hi = np.where(too_big, hi, mid)
    # hi always satisfies the budget
    out[over] = np.clip(vv - hi[:, None], 0.0, 1.0)
    return out.reshape(clamped.shape)


def initial_probabilities(num_edges, budget):
    return np.full(num_edges, min(budget / num_edges, 0.5))


def optimize_probabilities(x, basis: HodgeBasis, obj: SpectralGapObjective = SpectralGapObjective(),
                           budget=1.0, step=0.05, iters=200, return_history=False):
    """Projected gradient descent on the drop probabilities.

    ``x`` may be one flow or a batch of flows (one ``p`` per flow); ``budget``
    is the absolute l1 bound. The best iterate seen (per flow) is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    n = basis.num_edges
    if not 0 < budget <= n:
        raise ValueError(f"budget must lie in (0, {n}]")
    if step <= 0:
        raise ValueError("step must be positive")
    p = np.broadcast_to(initial_probabilities(n, budget), x.shape).copy()
    best_p = p.copy()
    best_val = None
    history = []
    for it in range(iters + 1):
        value, grad = objective_and_gradient(x, basis, p, obj)
        if not np.all(np.isfinite(value)) or not np.all(np.isfinite(grad)):
            raise NonFiniteObjective(f"objective became non-finite at iteration {it}")
        if best_val is None:
            best_val = np.array(value, dtype=np.float64)
        else:
            better = value < best_val
            best_val = np.where(better, value, best_val)
            best_p = np.where(np.asarray(better)[..., None], p, best_p)
        history.append(np.array(best_val))
        if it < iters:
            p = project_feasible(p - step * grad, budget)
    result = MaskProbabilities(best_p, float(budget), best_val if best_val.ndim else float(best_val))
    if return_history:
        return result, history
    return result


def absolute_budget(budget, num_edges, fraction=True):
    """Translate a configured budget into an absolute l1 bound."""
    return float(budget) * num_edges if fraction else float(budget)


def save_probabilities(path, probs, objectives, budget):
    """JSON-lines cache, one record per datum."""
    with open(path, "w") as fh:
        for i, (p, v) in enumerate(zip(probs, objectives)):
            rec = {"index": i, "p": [float(t) for t in p], "objective": float(v), "budget": float(budget)}
            fh.write(json.dumps(rec) + "\n")


def load_probabilities(path):
    records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    records.sort(key=lambda r: r["index"])
    p = np.asarray([r["p"] for r in records], dtype=np.float64)
    objectives = np.asarray([r["objective"] for r in records], dtype=np.float64)
    budget = records[0]["budget"] if records else None
    return MaskProbabilities(p, budget, objectives)
