import copy
import math

import numpy as np
import pytest

from core import ConfigError, NonFiniteError
from estimators import (
    BatchSampler,
    EstimatorKind,
    RefreshDecision,
    SagaMode,
    batch_size_from_fraction,
    current_upsilon,
    estimate_grad_x,
    estimate_grad_y,
    init_estimator,
    sarah_flip_restart,
    sample_batch,
    vr_constants,
)
from problems import QuadraticProblem


def _far_point(problem, seed=99):
    return problem.initial_point(np.random.default_rng(seed))


class TestSampling:
    def test_full_batch(self):
        sampler = BatchSampler.from_seed(7, 7, 0)
        assert sample_batch(sampler).tolist() == list(range(7))

    def test_single(self):
        assert BatchSampler.from_seed(1, 1, 0).draw().tolist() == [0]

    def test_sorted_distinct(self):
        sampler = BatchSampler.from_seed(50, 10, 3)
        for _ in range(100):
            batch = sampler.draw()
            assert len(set(batch.tolist())) == 10
            assert np.all(np.diff(batch) > 0)

    def test_uniform_frequencies(self):
        sampler = BatchSampler.from_seed(10, 3, 42)
        draws = 100_000
        counts = np.zeros(10)
        for _ in range(draws):
            counts[sampler.draw()] += 1
        freq = counts / draws
        sigma = math.sqrt(0.3 * 0.7 / draws)
        assert np.all(np.abs(freq - 0.3) <= 4 * sigma)

    def test_reproducible(self):
        a, b = BatchSampler.from_seed(20, 4, 9), BatchSampler.from_seed(20, 4, 9)
        assert all(np.array_equal(a.draw(), b.draw()) for _ in range(20))

    def test_invalid_sizes(self):
        with pytest.raises(ConfigError):
            BatchSampler.from_seed(5, 6, 0)
        with pytest.raises(ConfigError):
            BatchSampler.from_seed(5, 0, 0)

    @pytest.mark.parametrize("n, frac, b", [(2414, 0.05, 120), (10, 0.05, 1), (100, 1.0, 100)])
    def test_batch_size_from_fraction(self, n, frac, b):
        assert batch_size_from_fraction(n, frac) == b


class TestExactnessAnchors:
    def test_full_estimator(self, snmf_problem, rng):
        z = snmf_problem.initial_point(rng)
        state = init_estimator(EstimatorKind.FULL, snmf_problem, z, 3)
        gx = estimate_grad_x(state, snmf_problem, z.x, z.y, np.array([0, 1, 2]))
        assert np.array_equal(gx, snmf_problem.full_grad_x(z.x, z.y))
        gy = estimate_grad_y(state, snmf_problem, z.x, z.y, np.array([4]))
        assert np.array_equal(gy, snmf_problem.full_grad_y(z.x, z.y))

    @pytest.mark.parametrize("mode", [SagaMode.LITERAL, SagaMode.TABLE])
    def test_saga_synchronized_anchors(self, snmf_problem, rng, mode):
        z = snmf_problem.initial_point(rng)
        state = init_estimator(EstimatorKind.SAGA, snmf_problem, z, 4, saga_mode=mode, track=True)
        gx = estimate_grad_x(state, snmf_problem, z.x, z.y, np.array([1, 5, 8, 13]))
        gy = estimate_grad_y(state, snmf_problem, z.x, z.y, np.array([0, 2, 3, 19]), x_k=z.x)
        assert np.allclose(gx, snmf_problem.full_grad_x(z.x, z.y), rtol=1e-13, atol=0)
        assert np.allclose(gy, snmf_problem.full_grad_y(z.x, z.y), rtol=1e-13, atol=0)
        assert state.sq_error == pytest.approx(0.0, abs=1e-20)
        assert current_upsilon(state) == pytest.approx(0.0, abs=1e-20)

    def test_sarah_first_step_exact(self, snmf_problem, rng):
        z = snmf_problem.initial_point(rng)
        state = init_estimator(EstimatorKind.SARAH, snmf_problem, z, 2, refresh_prob=0.1, track=True)
        sarah_flip_restart(state, np.random.default_rng(0))
        gx = estimate_grad_x(state, snmf_problem, z.x, z.y, np.array([0, 1]))
        gy = estimate_grad_y(state, snmf_problem, z.x, z.y, np.array([2, 3]))
        assert np.array_equal(gx, snmf_problem.full_grad_x(z.x, z.y))
        assert np.array_equal(gy, snmf_problem.full_grad_y(z.x, z.y))
        assert current_upsilon(state) == 0.0

    def test_sarah_refresh_is_exact(self, quadratic_problem):
        z0 = quadratic_problem.initial_point(np.random.default_rng(0))
        z1 = _far_point(quadratic_problem)
        state = init_estimator(EstimatorKind.SARAH, quadratic_problem, z0, 3, refresh_prob=0.5, track=True)
        estimate_grad_x(state, quadratic_problem, z0.x, z0.y, np.array([0, 1, 2]))
        estimate_grad_y(state, quadratic_problem, z0.x, z0.y, np.array([0, 1, 2]))
        state.refresh = RefreshDecision.RECURSIVE
        estimate_grad_x(state, quadratic_problem, z1.x, z1.y, np.array([3, 4, 5]))
        estimate_grad_y(state, quadratic_problem, z1.x, z1.y, np.array([3, 4, 5]))
        assert current_upsilon(state) > 0.0
        state.refresh = RefreshDecision.FULL_REFRESH
        gx = estimate_grad_x(state, quadratic_problem, z1.x, z1.y, np.array([6]))
        gy = estimate_grad_y(state, quadratic_problem, z1.x, z1.y, np.array([7]))
        assert np.array_equal(gx, quadratic_problem.full_grad_x(z1.x, z1.y))
        assert np.array_equal(gy, quadratic_problem.full_grad_y(z1.x, z1.y))
        assert current_upsilon(state) == 0.0

    def test_sgd_full_batch(self, quadratic_problem, rng):
        z = quadratic_problem.initial_point(rng)
        state = init_estimator(EstimatorKind.SGD, quadratic_problem, z, quadratic_problem.n)
        gx = estimate_grad_x(state, quadratic_problem, z.x, z.y, quadratic_problem.all_indices)
        assert np.array_equal(gx, quadratic_problem.full_grad_x(z.x, z.y))
        assert current_upsilon(state) == 0.0


class TestUnbiasedness:
    DRAWS = 10_000

    def _check(self, samples, exact):
        samples = np.asarray(samples)
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / math.sqrt(len(samples))
        assert np.all(np.abs(mean - exact) <= 4 * se + 1e-12)

    def test_sgd(self, quadratic_problem):
        z = quadratic_problem.initial_point(np.random.default_rng(1))
        state = init_estimator(EstimatorKind.SGD, quadratic_problem, z, 2)
        sampler = BatchSampler.from_seed(quadratic_problem.n, 2, 5)
        samples = [estimate_grad_x(state, quadratic_problem, z.x, z.y, sampler.draw()) for _ in range(self.DRAWS)]
        self._check(samples, quadratic_problem.full_grad_x(z.x, z.y))

    def test_saga(self, quadratic_problem):
        z0 = quadratic_problem.initial_point(np.random.default_rng(1))
        z1 = _far_point(quadratic_problem)
        base = init_estimator(EstimatorKind.SAGA, quadratic_problem, z0, 2, saga_mode=SagaMode.TABLE)
        sampler = BatchSampler.from_seed(quadratic_problem.n, 2, 6)
        samples = []
        for _ in range(self.DRAWS):
            state = copy.deepcopy(base)
            samples.append(estimate_grad_x(state, quadratic_problem, z1.x, z1.y, sampler.draw()))
        self._check(samples, quadratic_problem.full_grad_x(z1.x, z1.y))


class TestSarahCoin:
    @pytest.mark.parametrize("prob", [1 / 20, 1 / 64])
    def test_refresh_frequency(self, quadratic_problem, prob):
        z = quadratic_problem.initial_point(np.random.default_rng(0))
        state = init_estimator(EstimatorKind.SARAH, quadratic_problem, z, 1, refresh_prob=prob)
        rng = np.random.default_rng(11)
        flips = 100_000
        hits = sum(sarah_flip_restart(state, rng) is RefreshDecision.FULL_REFRESH for _ in range(flips))
        sigma = math.sqrt(prob * (1 - prob) / flips)
        assert abs(hits / flips - prob) <= 4 * sigma

    def test_near_certain_refresh(self, quadratic_problem):
        z = quadratic_problem.initial_point(np.random.default_rng(0))
        state = init_estimator(EstimatorKind.SARAH, quadratic_problem, z, 1, refresh_prob=1 / 1.0001)
        rng = np.random.default_rng(2)
        hits = sum(sarah_flip_restart(state, rng) is RefreshDecision.FULL_REFRESH for _ in range(10_000))
        assert hits >= 9_990

    @pytest.mark.parametrize("prob", [0.0, 1.0])
    def test_invalid_probability(self, quadratic_problem, prob):
        z = quadratic_problem.initial_point(np.random.default_rng(0))
        with pytest.raises(ConfigError):
            init_estimator(EstimatorKind.SARAH, quadratic_problem, z, 1, refresh_prob=prob)


class TestTracking:
    def test_full_upsilon_zero(self, snmf_problem, rng):
        z = snmf_problem.initial_point(rng)
        state = init_estimator(EstimatorKind.FULL, snmf_problem, z, 1, track=True)
        estimate_grad_x(state, snmf_problem, z.x, z.y, np.array([0]))
        estimate_grad_y(state, snmf_problem, z.x, z.y, np.array([0]))
        assert current_upsilon(state) == 0.0
        assert state.sq_error == 0.0

    def test_saga_upsilon_zeroes_updated_anchors(self, quadratic_problem):
        z0 = quadratic_problem.initial_point(np.random.default_rng(0))
        z1 = _far_point(quadratic_problem)
        n = quadratic_problem.n
        state = init_estimator(EstimatorKind.SAGA, quadratic_problem, z0, n, saga_mode=SagaMode.LITERAL, track=True)
        # b = n: every anchor moves, so the post-update sum vanishes
        estimate_grad_x(state, quadratic_problem, z1.x, z1.y, quadratic_problem.all_indices)
        estimate_grad_y(state, quadratic_problem, z1.x, z1.y, quadratic_problem.all_indices, x_k=z1.x)
        assert state.upsilon_bound > 0.0
        assert current_upsilon(state) == 0.0

    def test_nonfinite_component_reported(self):
        class Broken(QuadraticProblem):
            def component_grad_x(self, i, x, y):
                grad = super().component_grad_x(i, x, y)
                return grad * np.nan if i == 2 else grad

        problem = Broken.random(n=5, l=2, m=2, seed=0)
        z = problem.initial_point(np.random.default_rng(0))
        state = init_estimator(EstimatorKind.SGD, problem, z, 3)
        with pytest.raises(NonFiniteError) as info:
            estimate_grad_x(state, problem, z.x, z.y, np.array([0, 2, 4]))
        assert info.value.index == 2

    def test_epoch_accounting(self, quadratic_problem, rng):
        z = quadratic_problem.initial_point(rng)
        n = quadratic_problem.n
        full = init_estimator(EstimatorKind.FULL, quadratic_problem, z, 3)
        estimate_grad_x(full, quadratic_problem, z.x, z.y, np.array([0, 1, 2]))
        estimate_grad_y(full, quadratic_problem, z.x, z.y, np.array([0, 1, 2]))
        assert full.epochs == pytest.approx(1.0)
        sgd = init_estimator(EstimatorKind.SGD, quadratic_problem, z, 3)
        estimate_grad_x(sgd, quadratic_problem, z.x, z.y, np.array([0, 1, 2]))
        estimate_grad_y(sgd, quadratic_problem, z.x, z.y, np.array([3, 4, 5]))
        assert sgd.epochs == pytest.approx(3 / n)

    def test_literal_saga_counts_the_anchor_pass(self, quadratic_problem, rng):
        z = quadratic_problem.initial_point(rng)
        n = quadratic_problem.n
        table = init_estimator(EstimatorKind.SAGA, quadratic_problem, z, 3)
        literal = init_estimator(EstimatorKind.SAGA, quadratic_problem, z, 3, saga_mode=SagaMode.LITERAL)
        assert table.component_evals == 2 * n
        assert literal.component_evals == 0
        for state in (table, literal):
            estimate_grad_x(state, quadratic_problem, z.x, z.y, np.array([0, 1, 2]))
            estimate_grad_y(state, quadratic_problem, z.x, z.y, np.array([3, 4, 5]))
        assert table.component_evals == 2 * n + 6
        assert literal.component_evals == 2 * n + 6
        assert literal.epochs == pytest.approx(1.0 + 3 / n)


class TestVRConstants:
    def test_saga_rho(self):
        assert vr_constants(EstimatorKind.SAGA, 1.0, 0.5, 0.5, 5, 100).rho == pytest.approx(0.025)

    def test_saga_zero_inertia(self):
        vr = vr_constants(EstimatorKind.SAGA, 3.0, 0.0, 0.0, 4, 40)
        assert vr.V1 == 0.0 and vr.V2 == 0.0

    def test_sarah_limit(self):
        vr = vr_constants(EstimatorKind.SARAH, 1.0, 0.0, 0.0, 1, 10, p=1.0001)
        assert vr.V1 < 1e-3 and vr.V2 < 0.1 and vr.V_upsilon < 1e-3
        assert vr.rho == pytest.approx(1.0, abs=1e-3)

    # hand-evaluated: N=2, gamma1=0.5, gamma2=0.25, b=4, n=10, p=20
    HAND_TABLE = {
        EstimatorKind.SAGA: (4.0, 2.0, 1593.75, 0.2),
        EstimatorKind.SARAH: (35.625, 2.0 * math.sqrt(8.90625), 35.625, 0.05),
    }

    @pytest.mark.parametrize("kind", [EstimatorKind.SAGA, EstimatorKind.SARAH])
    def test_hand_table(self, kind):
        vr = vr_constants(kind, 2.0, 0.5, 0.25, 4, 10, p=20.0)
        assert (vr.V1, vr.V2, vr.V_upsilon, vr.rho) == pytest.approx(self.HAND_TABLE[kind], rel=1e-12)

    def test_full_is_zero(self):
        vr = vr_constants(EstimatorKind.FULL, 5.0, 0.3, 0.3, 2, 10)
        assert (vr.V1, vr.V2, vr.V_upsilon, vr.rho) == (0.0, 0.0, 0.0, 1.0)

    def test_sgd_rejected(self):
        with pytest.raises(ConfigError):
            vr_constants(EstimatorKind.SGD, 1.0, 0.0, 0.0, 1, 10)

    def test_sarah_p_must_exceed_one(self):
        with pytest.raises(ConfigError):
            vr_constants(EstimatorKind.SARAH, 1.0, 0.0, 0.0, 1, 10, p=1.0)

    def test_batch_larger_than_n(self):
        with pytest.raises(ConfigError):
            vr_constants(EstimatorKind.SAGA, 1.0, 0.0, 0.0, 11, 10)
