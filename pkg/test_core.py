import math

import numpy as np
import pytest

from core import (
    BlockPoint,
    BregmanKernel,
    ConfigError,
    ConvergenceError,
    DimensionError,
    InertialSchedule,
    IterateWindow,
    KernelKind,
    NonFiniteError,
    RngStreams,
    bregman_distance,
    ensure_finite,
    extrapolate,
    inertial_schedule,
    kernel_gradient,
    power_iteration,
)


class TestBregman:
    def test_quadratic_distance(self):
        kernel = BregmanKernel(KernelKind.QUADRATIC, 2.0)
        assert bregman_distance(kernel, np.array([1.0, 0.0]), np.zeros(2)) == pytest.approx(1.0)

    @pytest.mark.parametrize("kind", [KernelKind.QUADRATIC, KernelKind.QUARTIC])
    def test_distance_to_self_is_zero(self, kind, rng):
        x = rng.standard_normal(5)
        assert bregman_distance(BregmanKernel(kind, 1.7), x, x) == 0.0

    def test_quartic_distance_scalar(self):
        kernel = BregmanKernel(KernelKind.QUARTIC, 2.0)
        assert bregman_distance(kernel, np.array(0.0), np.array(1.0)) == pytest.approx(3.0)

    def test_distance_nonnegative(self, rng):
        kernel = BregmanKernel(KernelKind.QUARTIC, 0.7)
        for _ in range(50):
            x, y = rng.standard_normal(3), rng.standard_normal(3)
            assert bregman_distance(kernel, x, y) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            bregman_distance(BregmanKernel(), np.zeros(2), np.zeros(3))

    def test_nan_input(self):
        with pytest.raises(NonFiniteError) as info:
            bregman_distance(BregmanKernel(), np.array([0.0, np.nan]), np.zeros(2))
        assert info.value.index == 1

    def test_kernel_gradient_values(self):
        assert np.allclose(kernel_gradient(BregmanKernel(KernelKind.QUADRATIC, 3.0), np.array([1.0, -2.0])),
                           [3.0, -6.0])
        assert np.allclose(kernel_gradient(BregmanKernel(KernelKind.QUARTIC, 1.0), np.zeros(2)), [0.0, 0.0])
        assert float(kernel_gradient(BregmanKernel(KernelKind.QUARTIC, 2.0), np.array(1.0))) == pytest.approx(4.0)

    def test_quartic_gradient_matches_finite_difference(self):
        kernel = BregmanKernel(KernelKind.QUARTIC, 2.0)
        h = 1e-6
        fd = (kernel.value(np.array(1.0 + h)) - kernel.value(np.array(1.0 - h))) / (2 * h)
        assert float(kernel_gradient(kernel, np.array(1.0))) == pytest.approx(fd, rel=1e-6)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ConfigError):
            BregmanKernel(KernelKind.QUADRATIC, 0.0)

    def test_quartic_moduli(self):
        kernel = BregmanKernel(KernelKind.QUARTIC, 2.0, radius=0.5, bound=3.0)
        assert kernel.strong_convexity == pytest.approx(1.0)
        assert kernel.grad_lipschitz == pytest.approx(108.0)
        assert BregmanKernel(KernelKind.QUARTIC, 2.0).grad_lipschitz == math.inf


class TestInertia:
    def test_zero_coefficients_copy(self):
        x = np.array([1.0, 2.0])
        out = extrapolate(x, np.zeros(2), np.ones(2), 0.0, 0.0)
        assert np.array_equal(out, x)
        out[0] = 9.0
        assert x[0] == 1.0

    def test_scalar_arithmetic(self):
        assert float(extrapolate(np.array(2.0), np.array(1.0), np.array(0.0), 0.5, 0.5)) == pytest.approx(3.0)

    def test_ramp_first_iterate_has_no_inertia(self):
        sched = InertialSchedule.ramp()
        c = sched(1)
        x1 = np.array([0.3, -1.0])
        assert np.array_equal(extrapolate(x1, np.zeros(2), np.ones(2), c, c), x1)

    @pytest.mark.parametrize("k, expected", [(0, 0.0), (1, 0.0), (10, 0.75)])
    def test_ramp_values(self, k, expected):
        assert inertial_schedule(InertialSchedule.ramp(), k) == pytest.approx(expected)

    def test_constant(self):
        sched = InertialSchedule.constant(0.3)
        assert all(sched(k) == 0.3 for k in range(5))

    def test_ramp_scale(self):
        assert InertialSchedule.ramp(0.5)(10) == pytest.approx(0.375)

    def test_parse_forms(self):
        assert InertialSchedule.parse(0.2) == InertialSchedule.constant(0.2)
        assert InertialSchedule.parse("ramp") == InertialSchedule.ramp()
        assert InertialSchedule.parse("ramp:0.5") == InertialSchedule.ramp(0.5)
        assert InertialSchedule.parse({"kind": "ramp", "value": 0.8}).cap == 0.8
        with pytest.raises(ConfigError):
            InertialSchedule.parse("nesterov")

    def test_negative_index(self):
        with pytest.raises(ConfigError):
            inertial_schedule(InertialSchedule.constant(0.1), -1)


class TestWindow:
    def test_start_repeats_point(self):
        z0 = BlockPoint(np.ones(2), np.zeros(3))
        window = IterateWindow.start(z0)
        assert window.sq_distances() == (0.0, 0.0, 0.0)
        assert all(window[lag] is z0 for lag in range(4))

    def test_push_shifts(self):
        window = IterateWindow.start(BlockPoint(np.zeros(1), np.zeros(1)))
        for value in (1.0, 3.0):
            window = window.push(BlockPoint(np.array([value]), np.zeros(1)))
        assert [float(x[0]) for x in window.xs()] == [3.0, 1.0, 0.0, 0.0]
        assert window.sq_distances() == (4.0, 1.0, 0.0)

    def test_push_rejects_shape_change(self):
        window = IterateWindow.start(BlockPoint(np.zeros(2), np.zeros(2)))
        with pytest.raises(DimensionError):
            window.push(BlockPoint(np.zeros(3), np.zeros(2)))

    def test_block_point_is_read_only(self):
        x = np.zeros(2)
        z = BlockPoint(x, np.zeros(1))
        x[0] = 5.0
        assert z.x[0] == 0.0
        with pytest.raises(ValueError):
            z.x[0] = 1.0

    def test_block_point_rejects_inf(self):
        with pytest.raises(NonFiniteError):
            BlockPoint(np.array([np.inf]), np.zeros(1))


class TestHelpers:
    def test_ensure_finite_index(self):
        with pytest.raises(NonFiniteError) as info:
            ensure_finite(np.array([[0.0, 1.0], [np.inf, 0.0]]))
        assert info.value.index == 2

    def test_rng_streams_reproducible(self):
        a, b = RngStreams(7), RngStreams(7)
        assert a.batches.random() == b.batches.random()
        assert a.coins.random() == b.coins.random()
        assert RngStreams(7).batches.random() != RngStreams(7).coins.random()

    def test_power_iteration_diagonal(self):
        D = np.diag([4.0, 1.0, 0.5])
        assert power_iteration(lambda v: D @ v, (3,)) == pytest.approx(4.0, rel=1e-5)

    def test_power_iteration_zero_operator(self):
        assert power_iteration(lambda v: 0.0 * v, (3,)) == 0.0

    def test_power_iteration_budget(self):
        slow = np.diag([1.0, 0.9999])
        with pytest.raises(ConvergenceError) as info:
            power_iteration(lambda v: slow @ v, (2,), tol=1e-12, max_iter=5)
        assert np.isfinite(info.value.last_estimate)
