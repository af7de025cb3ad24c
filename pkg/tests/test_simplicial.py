from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hodgecl.errors import DimensionMismatch, DuplicateSimplex, IndexOutOfRange, MissingFace
from hodgecl.simplicial import (
    SimplicialComplex2,
    analyze,
    build_complex,
    hodge_decompose,
    hodge_laplacians,
    hodge_project,
    incidence_matrices,
)

from conftest import random_grid_complexes


def rational_rank(matrix):
    """Rank by exact Gaussian elimination over the rationals."""
    rows = [[Fraction(int(v)) for v in row] for row in np.asarray(matrix)]
    if not rows or not rows[0]:
        return 0
    rank, ncols = 0, len(rows[0])
    for col in range(ncols):
        pivot = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        for r in range(len(rows)):
            if r != rank and rows[r][col] != 0:
                factor = rows[r][col] / rows[rank][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[rank])]
        rank += 1
    return rank


def test_rank_oracle_sanity():
    assert rational_rank([[1, 2], [2, 4]]) == 1
    assert rational_rank([[1, 0], [0, 1]]) == 2
    assert rational_rank(np.zeros((3, 0))) == 0


class TestBuildComplex:
    def test_filled_triangle(self, filled_triangle):
        assert filled_triangle.num_edges == 3 and filled_triangle.num_triangles == 1

    def test_missing_face(self):
        with pytest.raises(MissingFace):
            build_complex(3, [(0, 1), (0, 2)], [(0, 1, 2)])

    def test_hollow_cycle(self, hollow_cycle):
        assert hollow_cycle.num_triangles == 0

    def test_canonicalizes(self):
        sc = build_complex(3, [(2, 1), (1, 0), (0, 2)], [(2, 0, 1)])
        assert sc.edges == ((0, 1), (0, 2), (1, 2))
        assert sc.triangles == ((0, 1, 2),)

    def test_duplicates(self):
        with pytest.raises(DuplicateSimplex):
            build_complex(3, [(0, 1), (1, 0)])
        with pytest.raises(DuplicateSimplex):
            build_complex(3, [(0, 1), (0, 2), (1, 2)], [(0, 1, 2), (2, 1, 0)])

    def test_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            build_complex(2, [(0, 2)])
        with pytest.raises(IndexOutOfRange):
            build_complex(2, [(-1, 0)])

    def test_json_round_trip_is_byte_stable(self):
        sc = random_grid_complexes(1, seed=3)[0]
        text = sc.to_json()
        again = SimplicialComplex2.from_json(text)
        assert again == sc and again.to_json() == text


class TestIncidence:
    def test_filled_triangle_matrices(self, filled_triangle):
        inc = incidence_matrices(filled_triangle)
        assert np.array_equal(inc.B1.toarray(), [[-1, -1, 0], [1, 0, -1], [0, 1, 1]])
        assert np.array_equal(inc.B2.toarray(), [[1], [-1], [1]])
        assert not (inc.B1 @ inc.B2).toarray().any()

    def test_hollow_cycle_has_empty_b2(self, hollow_cycle):
        inc = incidence_matrices(hollow_cycle)
        assert inc.B2.shape == (3, 0)

    def test_column_structure_on_grids(self):
        for sc in random_grid_complexes(5, seed=1):
            inc = incidence_matrices(sc)
            B1, B2 = inc.B1.toarray(), inc.B2.toarray()
            assert np.all(np.sort(B1, axis=0)[[0, -1]] == [[-1], [1]])
            assert np.all(np.abs(B1).sum(axis=0) == 2)
            assert np.all(np.abs(B2).sum(axis=0) == 3)
            assert np.all(B2.sum(axis=0) == 1)
            assert not (B1 @ B2).any()


class TestLaplacians:
    def test_filled_triangle_values(self, filled_triangle):
        lap = hodge_laplacians(incidence_matrices(filled_triangle)).dense
        assert np.array_equal(lap["L1_low"], [[2, 1, -1], [1, 2, 1], [-1, 1, 2]])
        assert np.array_equal(lap["L1_up"], [[1, -1, 1], [-1, 1, -1], [1, -1, 1]])
        assert np.array_equal(lap["L1"], 3 * np.eye(3))
        assert not (lap["L1_low"] @ lap["L1_up"]).any()

    def test_hollow_cycle(self, hollow_cycle):
        lap = hodge_laplacians(incidence_matrices(hollow_cycle)).dense
        assert not lap["L1_up"].any()
        assert np.array_equal(lap["L1"], lap["L1_low"])

    def test_symmetric_psd_and_orthogonal_parts(self):
        for sc in random_grid_complexes(5, seed=2):
            lap = hodge_laplacians(incidence_matrices(sc)).dense
            for name, m in lap.items():
                assert np.array_equal(m, m.T), name
                if m.size:
                    assert np.linalg.eigvalsh(m).min() >= -1e-10, name
            assert np.abs(lap["L1_low"] @ lap["L1_up"]).max() <= 1e-10


class TestBasis:
    def test_filled_triangle_dims(self, filled_triangle):
        assert analyze(filled_triangle).basis.dims == (2, 1, 0)

    def test_hollow_cycle_harmonic(self, hollow_cycle):
        basis = analyze(hollow_cycle).basis
        assert basis.dims == (2, 0, 1)
        h = basis.U_H[:, 0] * np.sign(basis.U_H[0, 0])
        assert np.allclose(h, np.array([1, -1, 1]) / math.sqrt(3), atol=1e-10)

    def test_tree(self):
        basis = analyze(build_complex(5, [(0, 1), (1, 2), (1, 3), (3, 4)])).basis
        assert basis.dims == (4, 0, 0)

    def test_dims_match_rational_ranks(self):
        cases = [build_complex(4, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)], [(0, 1, 2)])]
        cases += random_grid_complexes(4, seed=5)
        for sc in cases:
            hodge = analyze(sc)
            dim_g, dim_c, _ = hodge.basis.dims
            assert dim_g == rational_rank(hodge.incidence.B1.toarray())
            assert dim_c == rational_rank(hodge.incidence.B2.toarray())

    def test_invariants_on_grids(self):
        for sc in random_grid_complexes(5, seed=7):
            hodge = analyze(sc)
            b, lap = hodge.basis, hodge.laplacians.dense
            U = np.hstack([b.U_G, b.U_C, b.U_H])
            assert U.shape == (sc.num_edges, sc.num_edges)
            assert np.abs(U.T @ U - np.eye(sc.num_edges)).max() <= 1e-8
            assert np.linalg.norm(lap["L1"] @ b.U_H, axis=0).max(initial=0) <= 1e-8
            assert np.linalg.norm(lap["L1_up"] @ b.U_G, axis=0).max(initial=0) <= 1e-8
            assert np.linalg.norm(lap["L1_low"] @ b.U_C, axis=0).max(initial=0) <= 1e-8
            assert np.all(b.eigvals_G > 0) and np.all(b.eigvals_C > 0)

    def test_harmonic_dim_counts_holes(self):
        from hodgecl.datasets import TriangularGridSpec, build_two_hole_map
        sc = build_two_hole_map(TriangularGridSpec(6, 6, ((2, 1, 1, 1), (2, 4, 1, 1))))
        assert analyze(sc).basis.dims[2] == 2

    def test_bad_tolerance_is_reported(self):
        # a star hub makes L1_low's spectrum wider than L1_up's
        sc = build_complex(6, [(0, 1), (0, 2), (1, 2), (2, 3), (2, 4), (2, 5)], [(0, 1, 2)])
        assert analyze(sc).basis.dims == (5, 1, 0)
        with pytest.raises(DimensionMismatch):
            analyze(sc, tol_zero=0.6)


class TestProjection:
    def test_zero_flow(self, filled_triangle):
        basis = analyze(filled_triangle).basis
        emb = hodge_project(np.zeros(3), basis)
        assert not emb.tilde_g.any() and not emb.tilde_c.any() and emb.tilde_h.size == 0
        assert all(not part.any() for part in hodge_decompose(np.zeros(3), basis))

    def test_basis_column(self, small_map_hodge):
        b = small_map_hodge.basis
        emb = hodge_project(b.U_H[:, 0], b)
        assert np.allclose(emb.tilde_h, np.eye(b.dims[2])[0], atol=1e-12)
        assert np.abs(emb.tilde_g).max() <= 1e-12 and np.abs(emb.tilde_c).max() <= 1e-12

    def test_hollow_cycle_loop_is_harmonic(self, hollow_cycle):
        x = np.array([1.0, -1.0, 1.0])
        x_g, x_c, x_h = hodge_decompose(x, analyze(hollow_cycle).basis)
        assert np.allclose(x_h, x, atol=1e-12)
        assert np.abs(x_g).max() <= 1e-12 and x_c.shape == (3,) and not x_c.any()

    def test_parseval_hollow_cycle(self, hollow_cycle):
        basis = analyze(hollow_cycle).basis
        x = np.random.default_rng(0).normal(size=3)
        emb = hodge_project(x, basis)
        total = sum(np.sum(v ** 2) for v in (emb.tilde_g, emb.tilde_c, emb.tilde_h))
        assert abs(total - x @ x) <= 1e-10

    def test_decompose_random_flows(self, small_map_hodge):
        b = small_map_hodge.basis
        X = np.random.default_rng(1).normal(size=(100, b.num_edges))
        x_g, x_c, x_h = hodge_decompose(X, b)
        assert np.abs(x_g + x_c + x_h - X).max() <= 1e-8
        for a, c in ((x_g, x_c), (x_g, x_h), (x_c, x_h)):
            assert np.abs(np.sum(a * c, axis=1)).max() <= 1e-8

    def test_dimension_mismatch(self, filled_triangle):
        with pytest.raises(DimensionMismatch):
            hodge_project(np.zeros(4), analyze(filled_triangle).basis)


_GRID = analyze(random_grid_complexes(1, seed=11)[0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_parseval_property(seed, scale):
    hodge = _GRID
    x = scale * np.random.default_rng(seed).normal(size=hodge.basis.num_edges)
    emb = hodge_project(x, hodge.basis)
    total = sum(np.sum(v ** 2) for v in (emb.tilde_g, emb.tilde_c, emb.tilde_h))
    assert abs(total - x @ x) <= 1e-8 * max(1.0, x @ x)

