import itertools

import numpy as np
import pytest

from core import BlockPoint, ConfigError, DimensionError
from problems import (
    BidConfig,
    LipschitzEstimates,
    QuadraticProblem,
    SnmfConfig,
    SparseNMFProblem,
    bid_grad_components,
    bid_objective,
    bid_regularizer,
    conv2d_circular,
    correlate2d_circular,
    prox_bid_x,
    prox_bid_y,
    prox_snmf_x,
    prox_snmf_y,
    snmf_grad_components,
    snmf_objective,
)


def _central_difference(fun, X, h=1e-5):
    grad = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        plus, minus = X.copy(), X.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (fun(plus) - fun(minus)) / (2 * h)
    return grad


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# ----- Sparse NMF -----

class TestSnmfObjective:
    def test_exact_factorization(self, rng):
        X, Y = rng.random((6, 2)), rng.random((2, 5))
        cfg = SnmfConfig(X @ Y, r=2, s=6)
        assert snmf_objective(cfg, X, Y).value == pytest.approx(0.0, abs=1e-20)

    def test_identity_example(self):
        cfg = SnmfConfig(np.eye(2), r=2, s=2, eta_fit=2.0)
        result = snmf_objective(cfg, np.eye(2), np.zeros((2, 2)))
        assert result.value == pytest.approx(2.0)
        assert result.feasible

    def test_matches_naive_loops(self, rng):
        A, X, Y = rng.random((6, 5)), rng.random((6, 2)), rng.random((2, 5))
        cfg = SnmfConfig(A, r=2, s=6, eta_fit=3.0)
        naive = 0.0
        for i in range(6):
            for j in range(5):
                naive += (A[i, j] - sum(X[i, t] * Y[t, j] for t in range(2))) ** 2
        assert snmf_objective(cfg, X, Y).value == pytest.approx(1.5 * naive, rel=1e-12)

    def test_sparsity_violation_flagged(self, rng):
        cfg = SnmfConfig(rng.random((4, 3)), r=2, s=1)
        assert not snmf_objective(cfg, np.ones((4, 2)), np.ones((2, 3))).feasible

    def test_dimension_mismatch(self, rng):
        cfg = SnmfConfig(rng.random((4, 3)), r=2, s=1)
        with pytest.raises(DimensionError):
            snmf_objective(cfg, np.ones((4, 3)), np.ones((2, 3)))

    @pytest.mark.parametrize("value, expected", [(0.25, 5), (3, 3), (0.01, 1)])
    def test_sparsity_from(self, value, expected):
        assert SnmfConfig.sparsity_from(value, 20) == expected

    def test_invalid_rank(self, rng):
        with pytest.raises(ConfigError):
            SnmfConfig(rng.random((4, 3)), r=4, s=1)


class TestSnmfGradients:
    def test_full_batch_matches_finite_differences(self, snmf_problem, rng):
        cfg = snmf_problem.cfg
        for _ in range(3):
            X = rng.random(snmf_problem.x_shape)
            Y = rng.random(snmf_problem.y_shape)
            gx, gy = snmf_grad_components(cfg, range(snmf_problem.n), X, Y)
            fx = _central_difference(lambda Z: snmf_objective(cfg, Z, Y).value, X)
            fy = _central_difference(lambda Z: snmf_objective(cfg, X, Z).value, Y)
            assert _rel_err(gx, fx) < 1e-6
            assert _rel_err(gy, fy) < 1e-6

    def test_zero_residual_rows(self, rng):
        X, Y = rng.random((5, 2)), rng.random((2, 4))
        cfg = SnmfConfig(X @ Y, r=2, s=5)
        gx, gy = snmf_grad_components(cfg, [0, 3], X, Y)
        assert np.allclose(gx, 0.0, atol=1e-12)
        assert np.allclose(gy, 0.0, atol=1e-12)

    def test_single_row_identity_y(self, rng):
        A = rng.random((3, 3))
        X = rng.random((3, 3))
        cfg = SnmfConfig(A, r=3, s=3, eta_fit=2.0)
        _, gy = snmf_grad_components(cfg, [1], X, np.eye(3))
        # component 1 carries the factor n = 3 rows
        assert np.allclose(gy, 3 * 2.0 * np.outer(X[1], X[1] - A[1]))

    def test_problem_component_average(self, snmf_problem, rng):
        z = snmf_problem.initial_point(rng)
        gx, gy = snmf_grad_components(snmf_problem.cfg, snmf_problem.all_indices, z.x, z.y)
        assert np.allclose(snmf_problem.full_grad_x(z.x, z.y), gx)
        assert np.allclose(snmf_problem.full_grad_y(z.x, z.y), gy)

    def test_empty_batch_rejected(self, snmf_problem, rng):
        z = snmf_problem.initial_point(rng)
        with pytest.raises(ConfigError):
            snmf_problem.grad_x([], z.x, z.y)

    def test_out_of_range_batch(self, snmf_problem, rng):
        z = snmf_problem.initial_point(rng)
        with pytest.raises(DimensionError):
            snmf_problem.grad_x([snmf_problem.n], z.x, z.y)


class TestSnmfProjections:
    def test_examples(self):
        assert np.array_equal(prox_snmf_x(np.array([3.0, -1.0, 2.0, 0.5]), 2), [3.0, 0.0, 2.0, 0.0])
        assert np.array_equal(prox_snmf_x(np.array([-5.0, 4.0, 1.0]), 1), [0.0, 4.0, 0.0])

    def test_matches_exhaustive_support_search(self, rng):
        for length in range(1, 7):
            for _ in range(5):
                v = rng.standard_normal(length)
                for s in range(1, length + 1):
                    best = np.inf
                    for size in range(s + 1):
                        for support in itertools.combinations(range(length), size):
                            cand = np.zeros(length)
                            cand[list(support)] = np.maximum(v[list(support)], 0.0)
                            best = min(best, float(np.sum((cand - v) ** 2)))
                    got = prox_snmf_x(v, s)
                    assert np.count_nonzero(got) <= s
                    assert float(np.sum((got - v) ** 2)) == pytest.approx(best, abs=1e-10)

    def test_columnwise(self):
        V = np.array([[1.0, -1.0], [2.0, 3.0], [0.5, 2.0]])
        out = prox_snmf_x(V, 1)
        assert np.array_equal(out, [[0.0, 0.0], [2.0, 3.0], [0.0, 0.0]])

    def test_invalid_budget(self):
        with pytest.raises(ConfigError):
            prox_snmf_x(np.ones(3), 4)

    def test_prox_y(self, rng):
        assert np.array_equal(prox_snmf_y(np.array([-1.0, 2.0])), [0.0, 2.0])
        V = rng.standard_normal((3, 4))
        assert np.array_equal(prox_snmf_y(prox_snmf_y(V)), prox_snmf_y(V))
        P = np.abs(V)
        assert np.array_equal(prox_snmf_y(P), P)


class TestSnmfLipschitz:
    def test_identity(self, rng):
        problem = SparseNMFProblem(SnmfConfig(rng.random((4, 3)), r=3, s=2, eta_fit=3.0))
        assert problem.partial_lipschitz_x(np.eye(3)) == pytest.approx(3.0, rel=1e-6)

    def test_diagonal(self, rng):
        problem = SparseNMFProblem(SnmfConfig(rng.random((4, 3)), r=2, s=2, eta_fit=1.0))
        assert problem.partial_lipschitz_x(np.diag([2.0, 1.0])) == pytest.approx(4.0, rel=1e-5)

    def test_matches_dense_eigensolver(self, rng):
        Y = rng.random((10, 8))
        problem = SparseNMFProblem(SnmfConfig(rng.random((12, 8)), r=3, s=3, eta_fit=1.0))
        expected = np.linalg.eigvalsh(Y @ Y.T)[-1]
        assert problem.partial_lipschitz_x(Y) == pytest.approx(expected, rel=1e-5)

    def test_hint_orders(self, snmf_problem, rng):
        hint = snmf_problem.lipschitz_hint(snmf_problem.initial_point(rng))
        assert isinstance(hint, LipschitzEstimates)
        assert hint.N >= hint.L > 0

    def test_initial_point_feasible(self, snmf_problem, rng):
        assert snmf_problem.eval_objective(snmf_problem.initial_point(rng)).feasible


# ----- Blind deconvolution -----

def _naive_periodic_convolution(X, K):
    d1, d2 = X.shape
    k = K.shape[0]
    c = k // 2
    out = np.zeros_like(X)
    for i in range(d1):
        for j in range(d2):
            for a in range(k):
                for b in range(k):
                    out[i, j] += K[a, b] * X[(i - a + c) % d1, (j - b + c) % d2]
    return out


class TestConvolution:
    def test_delta_is_identity(self, rng):
        X = rng.random((6, 7))
        delta = np.zeros((3, 3))
        delta[1, 1] = 1.0
        assert np.allclose(conv2d_circular(X, delta), X)

    def test_constant_image(self):
        assert np.allclose(conv2d_circular(np.full((5, 5), 0.2), np.ones((3, 3))), 1.8)

    def test_matches_naive_loops(self, rng):
        X, K = rng.random((8, 8)), rng.random((3, 3))
        assert np.allclose(conv2d_circular(X, K), _naive_periodic_convolution(X, K), atol=1e-12)

    def test_adjoint_identity(self, rng):
        for _ in range(5):
            X, Z, K = rng.random((9, 7)), rng.random((9, 7)), rng.random((3, 3))
            lhs = np.vdot(conv2d_circular(X, K), Z)
            rhs = np.vdot(X, correlate2d_circular(Z, K))
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(DimensionError):
            conv2d_circular(rng.random((4, 4)), np.ones((2, 2)))


class TestBidObjective:
    def test_constant_image_delta_kernel(self):
        A = np.full((6, 6), 0.4)
        delta = np.zeros((3, 3))
        delta[1, 1] = 1.0
        cfg = BidConfig(A, 3, eta_reg=1e-2, sigma=10.0, n_strips=3)
        result = bid_objective(cfg, A, delta)
        assert result.value == pytest.approx(0.0, abs=1e-20)
        assert result.feasible

    def test_small_sigma_regularizer_vanishes(self, rng):
        X = rng.random((6, 6))
        cfg = BidConfig(rng.random((6, 6)), 3, eta_reg=1.0, sigma=1e-12, n_strips=2)
        assert bid_regularizer(cfg, X) == pytest.approx(0.0, abs=1e-9)

    def test_matches_naive_evaluation(self, rng):
        A, X, K = rng.random((6, 5)), rng.random((6, 5)), rng.random((3, 3)) / 9
        cfg = BidConfig(A, 3, eta_reg=0.1, sigma=5.0, n_strips=2)
        residual = A - _naive_periodic_convolution(X, K)
        reg = 0.0
        for i in range(6):
            for j in range(5):
                reg += np.log(1 + 5.0 * (X[i, (j + 1) % 5] - X[i, j]) ** 2)
                reg += np.log(1 + 5.0 * (X[(i + 1) % 6, j] - X[i, j]) ** 2)
        expected = 0.5 * np.sum(residual ** 2) + 0.1 * reg
        assert bid_objective(cfg, X, K).value == pytest.approx(expected, rel=1e-12)


class TestBidGradients:
    def test_full_batch_matches_finite_differences(self, bid_problem, rng):
        cfg = bid_problem.cfg
        X = rng.random(bid_problem.x_shape)
        Y = rng.random(bid_problem.y_shape) / 9
        gx, gy = bid_grad_components(cfg, range(bid_problem.n), X, Y)
        fx = _central_difference(lambda Z: bid_objective(cfg, Z, Y).value, X)
        fy = _central_difference(lambda Z: bid_objective(cfg, X, Z).value, Y)
        assert _rel_err(gx, fx) < 1e-6
        assert _rel_err(gy, fy) < 1e-6

    def test_zero_residual_constant_image(self):
        A = np.full((6, 6), 0.4)
        delta = np.zeros((3, 3))
        delta[1, 1] = 1.0
        cfg = BidConfig(A, 3, n_strips=3)
        gx, gy = bid_grad_components(cfg, [0, 1, 2], A, delta)
        assert np.allclose(gx, 0.0)
        assert np.allclose(gy, 0.0)

    def test_problem_batched_matches_single(self, bid_problem, rng):
        z = bid_problem.initial_point(rng)
        stacked = bid_problem.component_grads_y([0, 2], z.x, z.y)
        assert np.allclose(stacked[1], bid_problem.component_grad_y(2, z.x, z.y))
        stacked_x = bid_problem.component_grads_x([1], z.x, z.y)
        assert np.allclose(stacked_x[0], bid_problem.component_grad_x(1, z.x, z.y))

    def test_partial_lipschitz_x_bounds_operator(self, bid_problem, rng):
        Y = rng.random(bid_problem.y_shape) / 9
        L = bid_problem.partial_lipschitz_x(Y)
        for _ in range(5):
            X1, X2 = rng.random(bid_problem.x_shape), rng.random(bid_problem.x_shape)
            g1 = bid_problem.full_grad_x(X1, Y)
            g2 = bid_problem.full_grad_x(X2, Y)
            assert np.linalg.norm(g1 - g2) <= L * np.linalg.norm(X1 - X2) * (1 + 1e-9)


class TestBidProjections:
    def test_prox_x_clips(self):
        assert np.array_equal(prox_bid_x(np.array([-0.5, 0.3, 1.7])), [0.0, 0.3, 1.0])

    @pytest.mark.parametrize("v, expected", [
        ([0.3, 0.2], [0.3, 0.2]),
        ([0.9, 0.9], [0.5, 0.5]),
        ([2.0, -0.5], [1.0, 0.0]),
    ])
    def test_examples(self, v, expected):
        assert np.allclose(prox_bid_y(np.array(v)), expected, atol=1e-10)

    def test_matches_grid_search_2d(self, rng):
        grid = np.arange(0.0, 1.0 + 1e-9, 1e-2)
        G1, G2 = np.meshgrid(grid, grid, indexing="ij")
        feasible = G1 + G2 <= 1.0 + 1e-12
        for _ in range(20):
            v = rng.uniform(-0.5, 1.5, size=2)
            dist = np.where(feasible, (G1 - v[0]) ** 2 + (G2 - v[1]) ** 2, np.inf)
            grid_best = float(dist.min())
            got = prox_bid_y(v)
            assert got.min() >= 0 and got.max() <= 1 and got.sum() <= 1 + 1e-12
            # the exact projection is at least as close as any grid point
            assert float(np.sum((got - v) ** 2)) <= grid_best + 1e-12
            assert float(np.sum((got - v) ** 2)) >= grid_best - 4e-2

    def test_refined_grid_locates_projection(self, rng):
        def nearest(v, lo1, lo2, width, spacing):
            g1 = np.clip(lo1 + np.arange(0.0, width + spacing / 2, spacing), 0.0, 1.0)
            g2 = np.clip(lo2 + np.arange(0.0, width + spacing / 2, spacing), 0.0, 1.0)
            G1, G2 = np.meshgrid(g1, g2, indexing="ij")
            dist = np.where(G1 + G2 <= 1.0 + 1e-12, (G1 - v[0]) ** 2 + (G2 - v[1]) ** 2, np.inf)
            i, j = np.unravel_index(np.argmin(dist), dist.shape)
            return np.array([G1[i, j], G2[i, j]])

        for _ in range(10):
            v = rng.uniform(-0.5, 1.5, size=2)
            coarse = nearest(v, 0.0, 0.0, 1.0, 1e-3)
            fine = nearest(v, coarse[0] - 5e-3, coarse[1] - 5e-3, 1e-2, 5e-5)
            np.testing.assert_allclose(prox_bid_y(v), fine, atol=1e-4)

    def test_kkt_structure_3d(self, rng):
        for _ in range(30):
            v = rng.uniform(-0.5, 1.5, size=3)
            got = prox_bid_y(v)
            if np.clip(v, 0, 1).sum() > 1:
                assert got.sum() == pytest.approx(1.0, abs=1e-10)
                tau = v - got
                interior = (got > 1e-12) & (got < 1 - 1e-12)
                if interior.sum() >= 2:
                    assert np.ptp(tau[interior]) < 1e-9


# ----- Quadratic test problem -----

class TestQuadratic:
    def test_gradients_match_finite_differences(self, quadratic_problem, rng):
        z = quadratic_problem.initial_point(rng)
        fx = _central_difference(lambda v: quadratic_problem.smooth_value(v, z.y), np.array(z.x))
        assert np.allclose(quadratic_problem.full_grad_x(z.x, z.y), fx, atol=1e-7)

    def test_solution_is_stationary(self, quadratic_problem):
        sol = quadratic_problem.solution()
        assert np.allclose(quadratic_problem.full_grad_x(sol.x, sol.y), 0.0, atol=1e-10)
        assert np.allclose(quadratic_problem.full_grad_y(sol.x, sol.y), 0.0, atol=1e-10)

    def test_hint(self, quadratic_problem, rng):
        hint = quadratic_problem.lipschitz_hint(quadratic_problem.initial_point(rng))
        assert hint.M >= hint.L > 0

    def test_row_count_mismatch(self):
        with pytest.raises(DimensionError):
            QuadraticProblem(np.ones((3, 2)), np.ones((4, 2)), np.ones(3))


def test_block_point_objective_flag(snmf_problem):
    z = BlockPoint(-np.ones(snmf_problem.x_shape), np.ones(snmf_problem.y_shape))
    assert not snmf_problem.eval_objective(z).feasible
