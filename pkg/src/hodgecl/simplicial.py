"""Order-2 simplicial complexes, incidence matrices, Hodge Laplacians and the
Hodge spectral basis of edge flows."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, DuplicateSimplex, IndexOutOfRange, MissingFace
from .linalg import eig_sym

ZERO_EIGENVALUE_TOL = 1e-8


@dataclass(frozen=True)
class SimplicialComplex2:
    """Vertices ``0..num_vertices-1``, edges ``(i, j)`` with ``i < j`` and
    triangles ``(i, j, k)`` with ``i < j < k``.

    Edges are oriented from the lower to the higher vertex index.
    """

    num_vertices: int
    edges: tuple[tuple[int, int], ...]
    triangles: tuple[tuple[int, int, int], ...]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e: i for i, e in enumerate(self.edges)}

    def to_json(self) -> str:
        doc = {
            "num_vertices": self.num_vertices,
            "edges": sorted([list(e) for e in self.edges]),
            "triangles": sorted([list(t) for t in self.triangles]),
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> "SimplicialComplex2":
        return build_complex(doc["num_vertices"], doc["edges"], doc.get("triangles", []))

    @classmethod
    def from_json(cls, text: str) -> "SimplicialComplex2":
        return cls.from_dict(json.loads(text))


def build_complex(num_vertices, edges, triangles=()) -> SimplicialComplex2:
    """Canonicalize and validate a 2-complex.

    Each simplex is sorted internally; edges and triangles are then sorted
    lexicographically so that equal complexes compare (and serialize) equal.
    """
    num_vertices = int(num_vertices)
    if num_vertices <= 0:
        raise IndexOutOfRange("num_vertices must be positive")

    def canon(simplex, size):
        s = tuple(sorted(int(v) for v in simplex))
        if len(s) != size or len(set(s)) != size:
            raise ValueError(f"expected {size} distinct vertices, got {simplex!r}")
        if s[0] < 0 or s[-1] >= num_vertices:
            raise IndexOutOfRange(f"simplex {simplex!r} outside [0, {num_vertices})")
        return s

    edge_list = [canon(e, 2) for e in edges]
    tri_list = [canon(t, 3) for t in triangles]
    if len(set(edge_list)) != len(edge_list):
        raise DuplicateSimplex("duplicate edge")
    if len(set(tri_list)) != len(tri_list):
        raise DuplicateSimplex("duplicate triangle")

    edge_set = set(edge_list)
    for i, j, k in tri_list:
        for face in ((i, j), (i, k), (j, k)):
            if face not in edge_set:
                raise MissingFace(f"triangle {(i, j, k)} is missing edge {face}")

    return SimplicialComplex2(num_vertices, tuple(sorted(edge_list)), tuple(sorted(tri_list)))


@dataclass(frozen=True)
class IncidenceMatrices:
    B1: sp.csr_matrix
    B2: sp.csr_matrix


def incidence_matrices(sc: SimplicialComplex2) -> IncidenceMatrices:
    n0, n1, n2 = sc.num_vertices, sc.num_edges, sc.num_triangles
    if n1:
        edges = np.asarray(sc.edges)
        cols = np.repeat(np.arange(n1), 2)
        rows = edges.ravel()
        vals = np.tile([-1, 1], n1)
        B1 = sp.csr_matrix((vals, (rows, cols)), shape=(n0, n1), dtype=np.int64)
    else:
        B1 = sp.csr_matrix((n0, 0), dtype=np.int64)

    rows, cols, vals = [], [], []
    index = sc.edge_index
    for t, (i, j, k) in enumerate(sc.triangles):
        # boundary of [i, j, k] = [j, k] - [i, k] + [i, j]
        rows += [index[(i, j)], index[(i, k)], index[(j, k)]]
        cols += [t, t, t]
        vals += [1, -1, 1]
    B2 = sp.csr_matrix((vals, (rows, cols)), shape=(n1, n2), dtype=np.int64)
    return IncidenceMatrices(B1, B2)


@dataclass(frozen=True)
class HodgeLaplacians:
    L0: sp.csr_matrix
    L1_low: sp.csr_matrix
    L1_up: sp.csr_matrix
    L1: sp.csr_matrix
    L2: sp.csr_matrix
    incidence: IncidenceMatrices | None = None

    @cached_property
    def dense(self) -> dict[str, np.ndarray]:
        return {
            name: getattr(self, name).toarray().astype(np.float64)
            for name in ("L0", "L1_low", "L1_up", "L1", "L2")
        }

    @property
    def num_edges(self) -> int:
        return self.L1.shape[0]


def hodge_laplacians(inc: IncidenceMatrices) -> HodgeLaplacians:
    B1, B2 = inc.B1, inc.B2
    L1_low = (B1.T @ B1).tocsr()
    L1_up = (B2 @ B2.T).tocsr()
    as_float = lambda m: sp.csr_matrix(m, dtype=np.float64)
    return HodgeLaplacians(
        L0=as_float(B1 @ B1.T),
        L1_low=as_float(L1_low),
        L1_up=as_float(L1_up),
        L1=as_float(L1_low + L1_up),
        L2=as_float(B2.T @ B2),
        incidence=inc,
    )


@dataclass(frozen=True)
class HodgeBasis:
    U_G: np.ndarray
    U_C: np.ndarray
    U_H: np.ndarray
    eigvals_G: np.ndarray
    eigvals_C: np.ndarray

    @property
    def num_edges(self) -> int:
        return self.U_G.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.U_G.shape[1], self.U_C.shape[1], self.U_H.shape[1]

    def block(self, name: str) -> np.ndarray:
        return {"G": self.U_G, "C": self.U_C, "H": self.U_H}[name]


def hodge_basis(lap: HodgeLaplacians, tol_zero: float = ZERO_EIGENVALUE_TOL) -> HodgeBasis:
    """Orthonormal gradient, curl and harmonic bases of the edge space.

    Gradient and curl blocks come from the nonzero spectra of the lower and
    upper Laplacians separately, so shared eigenvalues of ``L1`` can never mix
    the two subspaces. When the incidence matrices are attached, those spectra
    are computed on the smaller ``L0`` and ``L2``. ``tol_zero`` is relative to
    the largest eigenvalue.
    """
    dense = lap.dense
    n1 = lap.num_edges

    def nonzero_part(matrix, boundary=None):
        # with a boundary map D and matrix = D^T D, the nonzero eigenpairs are
        # lifted from the smaller D D^T: u = D^T v / sqrt(lam)
        small = matrix if boundary is None else (boundary.T @ boundary).toarray()
        w, u = eig_sym(small)
        keep = w > tol_zero * max(w.max(initial=0.0), 1.0)
        w, u = w[keep], u[:, keep]
        if boundary is not None:
            u = np.asarray(boundary @ u) / np.sqrt(w)
        return w, u

    inc = lap.incidence
    B1t = None if inc is None else sp.csr_matrix(inc.B1.T, dtype=np.float64)
    B2 = None if inc is None else sp.csr_matrix(inc.B2, dtype=np.float64)
    wg, ug = nonzero_part(dense["L1_low"], B1t)
    wc, uc = nonzero_part(dense["L1_up"], B2)
    wh, uh = eig_sym(dense["L1"])
    harmonic = wh <= tol_zero * max(wh.max(initial=0.0), 1.0)
    basis = HodgeBasis(U_G=ug, U_C=uc, U_H=uh[:, harmonic], eigvals_G=wg, eigvals_C=wc)
    if sum(basis.dims) != n1:
        raise DimensionMismatch(
            f"Hodge dimensions {basis.dims} do not sum to {n1} edges; check tol_zero"
        )
    return basis


@dataclass(frozen=True)
class HodgeEmbedding:
    tilde_g: np.ndarray
    tilde_c: np.ndarray
    tilde_h: np.ndarray


def _check_flow(x, basis):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.num_edges:
        raise DimensionMismatch(f"flow has length {x.shape[-1]}, complex has {basis.num_edges} edges")
    return x


def hodge_project(x, basis: HodgeBasis) -> HodgeEmbedding:
    """Spectral coordinates of ``x`` in each Hodge block (works row-wise on 2-D input)."""
    x = _check_flow(x, basis)
    return HodgeEmbedding(x @ basis.U_G, x @ basis.U_C, x @ basis.U_H)


def hodge_decompose(x, basis: HodgeBasis):
    x = _check_flow(x, basis)
    emb = hodge_project(x, basis)
    return (
        emb.tilde_g @ basis.U_G.T,
        emb.tilde_c @ basis.U_C.T,
        emb.tilde_h @ basis.U_H.T,
    )


@dataclass(frozen=True)
class Hodge:
    """Everything derived from one complex, built once and shared."""

    complex: SimplicialComplex2
    incidence: IncidenceMatrices
    laplacians: HodgeLaplacians
    basis: HodgeBasis


def analyze(sc: SimplicialComplex2, tol_zero: float = ZERO_EIGENVALUE_TOL) -> Hodge:
    inc = incidence_matrices(sc)
    lap = hodge_laplacians(inc)
    return Hodge(sc, inc, lap, hodge_basis(lap, tol_zero))
