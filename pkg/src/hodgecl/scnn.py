"""Simplicial convolutional filters and the SCNN encoder.

Layer rule::

    X_t = tanh(X_{t-1} W_eps + sum_l (L_low^l X_{t-1}) W_low[l] + sum_l (L_up^l X_{t-1}) W_up[l])

followed by mean pooling over edges and a dense head. Gradients are computed
by explicit reverse-mode passes over a recorded :class:`ForwardTape`.

Inputs may be a single edge flow of shape ``(N,)`` / features ``(N, F)`` or a
batch ``(B, N)`` / ``(B, N, F)``; batches are pushed through the sparse
Laplacians in one product.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonFiniteActivation, TapeMismatch

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("tanh", "identity")
POOLINGS = ("mean", "sum")


@dataclass
class LayerParameters:
    w_eps: np.ndarray
    w_low: list[np.ndarray] = field(default_factory=list)
    w_up: list[np.ndarray] = field(default_factory=list)

    @property
    def f_in(self) -> int:
        return self.w_eps.shape[0]

    @property
    def f_out(self) -> int:
        return self.w_eps.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.w_eps, *self.w_low, *self.w_up]

    def validate(self):
        for w in self.arrays():
            if w.shape != self.w_eps.shape:
                raise DimensionMismatch(f"filter term shape {w.shape} != {self.w_eps.shape}")
            if not np.all(np.isfinite(w)):
                raise ValueError("non-finite filter coefficient")


@dataclass
class ScnnParameters:
    layers: list[LayerParameters]
    head: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"
    pooling: str = "mean"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        prev = 1
        for layer in self.layers:
            layer.validate()
            if layer.f_in != prev:
                raise DimensionMismatch(f"layer expects {layer.f_in} inputs, previous gives {prev}")
            prev = layer.f_out
        if self.head.shape[0] != prev or self.bias.shape != (self.head.shape[1],):
            raise DimensionMismatch("head does not match the last layer width")

    @property
    def embed_dim(self) -> int:
        return self.head.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.head.shape[0]

    def arrays(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (shared with gradients)."""
        out = []
        for layer in self.layers:
            out += layer.arrays()
        return out + [self.head, self.bias]

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "ScnnParameters":
        return ScnnParameters(
            layers=[
                LayerParameters(l.w_eps.copy(), [w.copy() for w in l.w_low], [w.copy() for w in l.w_up])
                for l in self.layers
            ],
            head=self.head.copy(),
            bias=self.bias.copy(),
            activation=self.activation,
            pooling=self.pooling,
        )

    def zeros_like(self) -> "ScnnParameters":
        out = self.copy()
        for a in out.arrays():
            a[...] = 0.0
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vector):
        offset = 0
        for a in self.arrays():
            a[...] = np.reshape(vector[offset:offset + a.size], a.shape)
            offset += a.size


def _lap_mul(L, X):
    """``L @ X`` for X of shape (N, F) or edge-major (N, B, F)."""
    if X.ndim == 2:
        return np.asarray(L @ X)
    return np.asarray(L @ X.reshape(X.shape[0], -1)).reshape(X.shape)


def _stack_terms(L_low, L_up, X, order_low, order_up):
    """``[X, L_low X, .., L_low^K1 X, L_up X, .., L_up^K2 X]`` along the channel axis."""
    f = X.shape[-1]
    terms = np.empty(X.shape[:-1] + ((1 + order_low + order_up) * f,))
    terms[..., :f] = X
    k = 1
    for L, order in ((L_low, order_low), (L_up, order_up)):
        cur = X
        for _ in range(order):
            cur = _lap_mul(L, cur)
            terms[..., k * f:(k + 1) * f] = cur
            k += 1
    return terms


def _weights(layer: LayerParameters):
    return np.concatenate(layer.arrays(), axis=0)


def filter_apply(L_low, L_up, X, layer: LayerParameters):
    """Apply one multi-channel simplicial filter to ``X`` of shape (N, F_in).

    With ``F_in = F_out = 1`` this is ``(eps I + sum a_l L_low^l + sum b_l L_up^l) x``.
    Powers are built by the recursion ``L^l X = L (L^{l-1} X)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[-1] != layer.f_in:
        raise DimensionMismatch(f"features of shape {X.shape} do not fit a filter with {layer.f_in} inputs")
    if X.shape[0] != L_low.shape[0]:
        raise DimensionMismatch(f"features on {X.shape[0]} edges, Laplacian has {L_low.shape[0]}")
    return _stack_terms(L_low, L_up, X, len(layer.w_low), len(layer.w_up)) @ _weights(layer)


def dense_filter_matrix(L_low, L_up, coeff_eps, coeff_low, coeff_up):
    """Dense ``H = eps I + sum a_l L_low^l + sum b_l L_up^l`` for scalar coefficients."""
    L_low = np.asarray(L_low.toarray() if hasattr(L_low, "toarray") else L_low, dtype=np.float64)
    L_up = np.asarray(L_up.toarray() if hasattr(L_up, "toarray") else L_up, dtype=np.float64)
    n = L_low.shape[0]
    H = coeff_eps * np.eye(n)
    for l, a in enumerate(coeff_low, start=1):
        H += a * np.linalg.matrix_power(L_low, l)
    for l, b in enumerate(coeff_up, start=1):
        H += b * np.linalg.matrix_power(L_up, l)
    return H


@dataclass
class ForwardTape:
    """Everything the backward pass needs, stored edge-major as (N, B, F).

    ``terms[t]`` holds layer t's input followed by its lower and upper
    Laplacian powers, stacked along the channel axis.
    """

    terms: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    pooled: np.ndarray
    z: np.ndarray
    batched: bool
    counts: list[int]  # number of stacked terms per layer

    def layer_input(self, t) -> np.ndarray:
        f = self.terms[t].shape[-1] // self.counts[t]
        return self.terms[t][..., :f]


def _as_features(x, n_edges):
    """Edge-major features (N, B, 1) and whether the input was a batch."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != n_edges:
        raise DimensionMismatch(f"edge flow of shape {x.shape} does not fit {n_edges} edges")
    return np.atleast_2d(x).T[:, :, None], batched


def scnn_forward(params: ScnnParameters, L_low, L_up, x):
    """Encode edge flow(s) ``(N,)`` or ``(B, N)``. Returns ``(tape, z)``;
    ``tape.pooled`` is the pooled SCNN embedding ``h`` before the head."""
    X, batched = _as_features(x, L_low.shape[0])
    terms, pres, posts, counts = [], [], [], []
    for layer in params.layers:
        T = _stack_terms(L_low, L_up, X, len(layer.w_low), len(layer.w_up))
        pre = (T.reshape(-1, T.shape[-1]) @ _weights(layer)).reshape(X.shape[:-1] + (layer.f_out,))
        if not np.all(np.isfinite(pre)):
            raise NonFiniteActivation("non-finite pre-activation in SCNN layer")
        X = np.tanh(pre) if params.activation == "tanh" else pre
        terms.append(T)
        counts.append(1 + len(layer.w_low) + len(layer.w_up))
        pres.append(pre)
        posts.append(X)
    pooled = X.mean(axis=0) if params.pooling == "mean" else X.sum(axis=0)
    z = pooled @ params.head + params.bias
    if not batched:
        pooled, z = pooled[0], z[0]
    return ForwardTape(terms, pres, posts, pooled, z, batched, counts), z


def encode(params: ScnnParameters, L_low, L_up, x):
    """Pooled SCNN embeddings ``h`` (no head), as used downstream."""
    return scnn_forward(params, L_low, L_up, x)[0].pooled


def scnn_backward(params: ScnnParameters, L_low, L_up, tape: ForwardTape, dL_dz):
    """Gradients of a scalar loss w.r.t. all parameters, given ``dL/dz``.

    Returns an :class:`ScnnParameters` holding gradients. For a batch the
    per-sample gradients are summed.
    """
    dz = np.asarray(dL_dz, dtype=np.float64)
    if dz.shape != tape.z.shape or len(tape.terms) != len(params.layers):
        raise TapeMismatch("cotangent or tape does not match these parameters")
    for t, layer in enumerate(params.layers):
        if tape.terms[t].shape[-1] != layer.f_in * tape.counts[t] or \
                tape.counts[t] != 1 + len(layer.w_low) + len(layer.w_up):
            raise TapeMismatch("tape was recorded with different parameters")
    dz = np.atleast_2d(dz)
    pooled = np.atleast_2d(tape.pooled)
    grads = params.zeros_like()
    grads.head[...] = pooled.T @ dz
    grads.bias[...] = dz.sum(axis=0)
    return _encoder_backward(params, L_low, L_up, tape, dz @ params.head.T, grads)


def _encoder_backward(params, L_low, L_up, tape, dh, grads):
    n_edges = tape.terms[0].shape[0]
    dX = np.broadcast_to(dh / n_edges if params.pooling == "mean" else dh, (n_edges,) + dh.shape)
    for t in range(len(params.layers) - 1, -1, -1):
        layer, g = params.layers[t], grads.layers[t]
        delta = dX * (1.0 - tape.post[t] ** 2) if params.activation == "tanh" else np.array(dX)
        T = tape.terms[t]
        delta2 = delta.reshape(-1, layer.f_out)
        stacked = T.reshape(-1, T.shape[-1]).T @ delta2
        for k, w in enumerate(g.arrays()):
            w[...] = stacked[k * layer.f_in:(k + 1) * layer.f_in]
        if t == 0:
            break
        # adjoint of the filter: sum_k M_k^T (delta W_k^T) with M_k the k-th term's Laplacian power
        back = (delta2 @ _weights(layer).T).reshape(delta.shape[:-1] + (-1,))
        f = layer.f_in
        dX = back[..., :f].copy()
        k = 1
        for L, order in ((L_low, len(layer.w_low)), (L_up, len(layer.w_up))):
            if order:
                dX += _horner_adjoint(L, [back[..., (k + l) * f:(k + l + 1) * f] for l in range(order)])
            k += order
    return grads


def _horner_adjoint(L, parts):
    """``sum_l L^l parts[l-1]`` for symmetric L, by Horner's rule."""
    acc = parts[-1]
    for part in reversed(parts[:-1]):
        acc = _lap_mul(L, acc) + part
    return _lap_mul(L, acc)


def init_parameters(rng, hidden, embed_dim, order_low, order_up, activation="tanh", pooling="mean"):
    """Uniform init in ``+-sqrt(6 / (F_in (1 + L1 + L2) + F_out))`` per layer.

    ``hidden`` lists the channel widths of the SCNN layers; the first layer
    always takes one input channel.
    """
    layers = []
    f_in = 1
    n_terms = 1 + order_low + order_up
    for f_out in hidden:
        bound = np.sqrt(6.0 / (f_in * n_terms + f_out))
        draw = lambda: rng.uniform(-bound, bound, size=(f_in, f_out))
        layers.append(
            LayerParameters(draw(), [draw() for _ in range(order_low)], [draw() for _ in range(order_up)])
        )
        f_in = f_out
    bound = np.sqrt(6.0 / (f_in + embed_dim))
    head = rng.uniform(-bound, bound, size=(f_in, embed_dim))
    return ScnnParameters(layers, head, np.zeros(embed_dim), activation, pooling)


def make_lower_only(params: ScnnParameters) -> ScnnParameters:
    out = params.copy()
    out.layers = [replace(l, w_up=[]) for l in out.layers]
    return out


def _encode_array(a):
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _decode_array(doc):
    return np.asarray(doc["data"], dtype=np.float64).reshape(doc["shape"])


def params_to_dict(params: ScnnParameters) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "activation": params.activation,
        "pooling": params.pooling,
        "layers": [
            {
                "w_eps": _encode_array(l.w_eps),
                "w_low": [_encode_array(w) for w in l.w_low],
                "w_up": [_encode_array(w) for w in l.w_up],
            }
            for l in params.layers
        ],
        "head": _encode_array(params.head),
        "bias": _encode_array(params.bias),
    }


def params_from_dict(doc: dict) -> ScnnParameters:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    layers = [
        LayerParameters(
            _decode_array(l["w_eps"]),
            [_decode_array(w) for w in l["w_low"]],
            [_decode_array(w) for w in l["w_up"]],
        )
        for l in doc["layers"]
    ]
    return ScnnParameters(layers, _decode_array(doc["head"]), _decode_array(doc["bias"]), doc["activation"],
                         doc.get("pooling", "mean"))


def save_checkpoint(params: ScnnParameters, path):
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_checkpoint(path) -> ScnnParameters:
    return params_from_dict(json.loads(Path(path).read_text()))
