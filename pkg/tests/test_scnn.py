import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hodgecl.datasets import TriangularGridSpec, build_two_hole_map
from hodgecl.errors import DimensionMismatch, NonFiniteActivation, TapeMismatch
from hodgecl.scnn import (
    LayerParameters,
    ScnnParameters,
    dense_filter_matrix,
    encode,
    filter_apply,
    init_parameters,
    load_checkpoint,
    make_lower_only,
    save_checkpoint,
    scnn_backward,
    scnn_forward,
)
from hodgecl.simplicial import analyze


def laplacians(sc):
    lap = analyze(sc).laplacians
    return lap.L1_low, lap.L1_up


@pytest.fixture(scope="module")
def small_grid():
    # 3x2 grid, 17 edges
    return laplacians(build_two_hole_map(TriangularGridSpec(2, 3, (), 4)))


def finite_difference_check(params, L_low, L_up, x, cotangent, step=1e-5):
    """Largest relative error between analytic and central-difference gradients."""
    tape, _ = scnn_forward(params, L_low, L_up, x)
    analytic = scnn_backward(params, L_low, L_up, tape, cotangent).flat()
    theta = params.flat()
    numeric = np.empty_like(theta)
    probe = params.copy()
    for i in range(len(theta)):
        for sign in (1, -1):
            shifted = theta.copy()
            shifted[i] += sign * step
            probe.set_flat(shifted)
            value = np.sum(scnn_forward(probe, L_low, L_up, x)[1] * cotangent)
            numeric[i] = value if sign == 1 else (numeric[i] - value) / (2 * step)
    mask = np.maximum(np.abs(analytic), np.abs(numeric)) > 1e-8
    rel = np.abs(analytic - numeric)[mask] / np.maximum(np.abs(analytic), np.abs(numeric))[mask]
    return rel.max(initial=0.0)


class TestFilter:
    def test_identity_filter(self, filled_triangle):
        L_low, L_up = laplacians(filled_triangle)
        X = np.random.default_rng(0).normal(size=(3, 2))
        layer = LayerParameters(np.eye(2), [np.zeros((2, 2))], [np.zeros((2, 2))])
        assert np.array_equal(filter_apply(L_low, L_up, X, layer), X)

    def test_first_column_of_lower_laplacian(self, filled_triangle):
        L_low, L_up = laplacians(filled_triangle)
        layer = LayerParameters(np.zeros((1, 1)), [np.ones((1, 1))], [])
        out = filter_apply(L_low, L_up, np.array([[1.0], [0.0], [0.0]]), layer)
        assert np.array_equal(out[:, 0], [2, 1, -1])

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_matches_dense_polynomial(self, small_grid, order):
        L_low, L_up = small_grid
        rng = np.random.default_rng(order)
        eps, low, up = rng.normal(), rng.normal(size=order), rng.normal(size=order)
        layer = LayerParameters(np.array([[eps]]), [np.array([[a]]) for a in low], [np.array([[b]]) for b in up])
        x = rng.normal(size=(L_low.shape[0], 1))
        H = dense_filter_matrix(L_low, L_up, eps, low, up)
        assert np.abs(filter_apply(L_low, L_up, x, layer) - H @ x).max() <= 1e-10

    def test_locality(self, small_grid):
        L_low, L_up = small_grid
        for order in (1, 2):
            H = dense_filter_matrix(L_low, L_up, 1.0, [1.0] * order, [1.0] * order)
            A = ((np.abs(L_low.toarray()) + np.abs(L_up.toarray())) > 0).astype(int)
            reach = np.linalg.matrix_power(A + np.eye(len(A), dtype=int), order) > 0
            assert not np.any((np.abs(H) > 1e-12) & ~reach)

    def test_dimension_errors(self, filled_triangle):
        L_low, L_up = laplacians(filled_triangle)
        layer = LayerParameters(np.eye(2))
        with pytest.raises(DimensionMismatch):
            filter_apply(L_low, L_up, np.ones((3, 1)), layer)
        with pytest.raises(DimensionMismatch):
            filter_apply(L_low, L_up, np.ones((4, 2)), layer)


class TestForward:
    def test_zero_input(self, small_grid):
        params = init_parameters(np.random.default_rng(0), [4, 4], 3, 2, 2)
        _, z = scnn_forward(params, *small_grid, np.zeros(small_grid[0].shape[0]))
        assert np.array_equal(z, np.zeros(3))

    def test_one_layer_closed_form(self, filled_triangle):
        L_low, L_up = laplacians(filled_triangle)
        head = np.array([[0.5, -2.0]])
        params = ScnnParameters([LayerParameters(np.ones((1, 1)))], head, np.zeros(2))
        x = np.array([0.3, -1.2, 2.0])
        _, z = scnn_forward(params, L_low, L_up, x)
        assert np.allclose(z, np.mean(np.tanh(x)) * head[0], atol=1e-15)

    def test_sum_pooling(self, filled_triangle):
        L_low, L_up = laplacians(filled_triangle)
        params = ScnnParameters([LayerParameters(np.ones((1, 1)))], np.ones((1, 1)), np.zeros(1), pooling="sum")
        x = np.array([0.3, -1.2, 2.0])
        assert np.isclose(scnn_forward(params, L_low, L_up, x)[1][0], np.tanh(x).sum())

    def test_deterministic_and_batched(self, small_grid):
        params = init_parameters(np.random.default_rng(1), [4, 4], 3, 2, 2)
        X = np.random.default_rng(2).normal(size=(5, small_grid[0].shape[0]))
        z1, z2 = scnn_forward(params, *small_grid, X)[1], scnn_forward(params, *small_grid, X)[1]
        assert np.array_equal(z1, z2)
        for i in range(5):
            assert np.allclose(scnn_forward(params, *small_grid, X[i])[1], z1[i], atol=1e-13)

    def test_wrong_length(self, small_grid):
        params = init_parameters(np.random.default_rng(1), [2], 2, 1, 1)
        with pytest.raises(DimensionMismatch):
            scnn_forward(params, *small_grid, np.zeros(3))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite(self, small_grid):
        params = init_parameters(np.random.default_rng(1), [2], 2, 1, 1)
        x = np.zeros(small_grid[0].shape[0])
        x[0] = np.inf
        with pytest.raises(NonFiniteActivation):
            scnn_forward(params, *small_grid, x)

    def test_permutation_equivariance(self):
        sc = build_two_hole_map(TriangularGridSpec(3, 3, ((1, 1, 1, 1),), 0))
        L_low, L_up = (m.toarray() for m in laplacians(sc))
        params = init_parameters(np.random.default_rng(3), [4, 3], 2, 2, 2)
        rng = np.random.default_rng(4)
        x = rng.normal(size=len(L_low))
        perm = rng.permutation(len(L_low))
        P = np.eye(len(L_low))[perm]
        tape, z = scnn_forward(params, L_low, L_up, x)
        tape_p, z_p = scnn_forward(params, P @ L_low @ P.T, P @ L_up @ P.T, P @ x)
        assert np.abs(z - z_p).max() <= 1e-10
        assert np.abs(tape.post[-1][perm] - tape_p.post[-1]).max() <= 1e-10


class TestBackward:
    def test_zero_cotangent(self, small_grid):
        params = init_parameters(np.random.default_rng(0), [3], 2, 1, 1)
        x = np.random.default_rng(1).normal(size=small_grid[0].shape[0])
        tape, _ = scnn_forward(params, *small_grid, x)
        assert not scnn_backward(params, *small_grid, tape, np.zeros(2)).flat().any()

    def test_linear_layer_gradient(self, small_grid):
        # identity activation, one scalar layer, scalar head: z = c * mean(X w) so dz/dw = c * mean(X)
        params = ScnnParameters([LayerParameters(np.array([[0.7]]))], np.array([[1.5]]), np.zeros(1), activation="identity")
        x = np.random.default_rng(5).normal(size=small_grid[0].shape[0])
        tape, _ = scnn_forward(params, *small_grid, x)
        grads = scnn_backward(params, *small_grid, tape, np.ones(1))
        assert np.isclose(grads.layers[0].w_eps[0, 0], 1.5 * x.mean())
        assert np.isclose(grads.head[0, 0], 0.7 * x.mean())
        assert np.isclose(grads.bias[0], 1.0)

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("pooling", ["mean", "sum"])
    def test_finite_differences(self, small_grid, seed, pooling):
        rng = np.random.default_rng(seed)
        params = init_parameters(rng, [4, 4], 3, 2, 2, pooling=pooling)
        x = rng.normal(size=small_grid[0].shape[0])
        assert finite_difference_check(params, *small_grid, x, rng.normal(size=3)) <= 1e-4

    def test_finite_differences_batched(self, small_grid):
        rng = np.random.default_rng(9)
        params = init_parameters(rng, [3, 2], 2, 2, 1)
        X = rng.normal(size=(4, small_grid[0].shape[0]))
        assert finite_difference_check(params, *small_grid, X, rng.normal(size=(4, 2))) <= 1e-4

    def test_tape_mismatch(self, small_grid):
        params = init_parameters(np.random.default_rng(0), [3], 2, 1, 1)
        tape, _ = scnn_forward(params, *small_grid, np.ones(small_grid[0].shape[0]))
        with pytest.raises(TapeMismatch):
            scnn_backward(params, *small_grid, tape, np.zeros(5))
        other = init_parameters(np.random.default_rng(0), [3, 3], 2, 1, 1)
        with pytest.raises(TapeMismatch):
            scnn_backward(other, *small_grid, tape, np.zeros(2))


class TestInitAndAblation:
    def test_seeded(self):
        a = init_parameters(np.random.default_rng(7), [8, 8], 4, 2, 2)
        b = init_parameters(np.random.default_rng(7), [8, 8], 4, 2, 2)
        c = init_parameters(np.random.default_rng(8), [8, 8], 4, 2, 2)
        assert np.array_equal(a.flat(), b.flat())
        assert not np.array_equal(a.flat(), c.flat())

    def test_bounds(self):
        params = init_parameters(np.random.default_rng(0), [8, 6], 4, 2, 3)
        f_in = 1
        for layer in params.layers:
            bound = np.sqrt(6.0 / (f_in * 6 + layer.f_out))
            assert all(np.abs(w).max() < bound for w in layer.arrays())
            f_in = layer.f_out

    def test_lower_only(self, hollow_cycle):
        params = init_parameters(np.random.default_rng(0), [4], 2, 2, 2)
        low = make_lower_only(params)
        assert make_lower_only(low).flat().tolist() == low.flat().tolist()
        assert low.num_parameters() < params.num_parameters()
        L_low, L_up = laplacians(hollow_cycle)
        x = np.array([1.0, 0.5, -2.0])
        assert np.allclose(encode(low, L_low, L_up, x), encode(params, L_low, L_up, x), atol=1e-15)

    def test_checkpoint_round_trip(self, tmp_path, small_grid):
        params = init_parameters(np.random.default_rng(0), [4, 3], 2, 2, 1, pooling="sum")
        save_checkpoint(params, tmp_path / "p.json")
        loaded = load_checkpoint(tmp_path / "p.json")
        assert np.array_equal(loaded.flat(), params.flat()) and loaded.pooling == "sum"
        x = np.random.default_rng(1).normal(size=small_grid[0].shape[0])
        assert np.array_equal(encode(loaded, *small_grid, x), encode(params, *small_grid, x))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), order=st.integers(1, 3))
def test_filter_linearity(seed, order):
    rng = np.random.default_rng(seed)
    L_low, L_up = _GRID
    layer = LayerParameters(rng.normal(size=(2, 3)), [rng.normal(size=(2, 3)) for _ in range(order)],
                            [rng.normal(size=(2, 3)) for _ in range(order)])
    X, Y = rng.normal(size=(2, L_low.shape[0], 2))
    a = rng.normal()
    lhs = filter_apply(L_low, L_up, a * X + Y, layer)
    rhs = a * filter_apply(L_low, L_up, X, layer) + filter_apply(L_low, L_up, Y, layer)
    assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(lhs).max())


_GRID = laplacians(build_two_hole_map(TriangularGridSpec(2, 3, (), 4)))
