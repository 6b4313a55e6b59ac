import math

import numpy as np
import pytest

from aggrate import (
    BITS_PER_NAT,
    ConvergenceParams,
    GradientTrace,
    InfeasibleDistortionError,
    convergence_gap,
    iterations_lower_bound,
    iterations_required,
    optimal_distortion_static,
    per_iteration_cost,
    plan_static,
    plan_trace,
    signsgd_comparison,
    sum_rate_distortion,
)


def make_trace(n=5):
    it = np.arange(n)
    return GradientTrace(iterations=it,
                         sigma_x2=np.linspace(2.0, 1.0, n),
                         sigma_n2=np.linspace(1.0, 0.5, n))


class TestIterationBound:
    params = ConvergenceParams(radius_sq=4.0, smoothness=2.0, target_gap=0.1)

    def test_zero_distortion_exact(self):
        assert iterations_lower_bound(self.params, 0.0) == 4.0 * 2.0 / 0.1

    def test_gap_round_trip(self):
        # plugging the real-valued bound back in returns the target gap
        rng = np.random.default_rng(19)
        for _ in range(50):
            params = ConvergenceParams(
                radius_sq=float(rng.uniform(0.5, 10.0)),
                smoothness=float(rng.uniform(0.5, 5.0)),
                target_gap=float(rng.uniform(0.01, 1.0)))
            d = float(rng.uniform(0.0, 3.0))
            t = iterations_lower_bound(params, d)
            np.testing.assert_allclose(convergence_gap(params, d, t),
                                       params.target_gap, rtol=1e-9)

    def test_required_is_ceiling(self):
        t = iterations_lower_bound(self.params, 0.5)
        assert iterations_required(self.params, 0.5) == math.ceil(t)
        tiny = ConvergenceParams(radius_sq=1e-6, smoothness=1e-6,
                                 target_gap=1.0)
        assert iterations_required(tiny, 0.0) == 1

    def test_monotone_in_distortion(self):
        grid = np.linspace(0.0, 5.0, 30)
        vals = [iterations_lower_bound(self.params, d) for d in grid]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            iterations_lower_bound(self.params, -0.1)
        with pytest.raises(ValueError):
            convergence_gap(self.params, 0.5, 0.0)


class TestPlanStatic:
    params = ConvergenceParams(radius_sq=1.0, smoothness=1.0, target_gap=0.1,
                               model_dim=100)

    def test_total_is_exact_multiple(self):
        plan = plan_static(self.params, 10, 1.0, 1.0, 0.2)
        assert plan.iterations == iterations_required(self.params, 0.2)
        cost = per_iteration_cost(self.params, 10, 1.0, 1.0, 0.2)
        np.testing.assert_array_equal(plan.per_iteration_bits,
                                      np.full(plan.iterations, cost))
        assert plan.total_bits == math.fsum(plan.per_iteration_bits)
        assert plan.total_bits == plan.iterations * cost

    def test_per_iteration_cost_formula(self):
        cost = per_iteration_cost(self.params, 10, 1.0, 1.0, 0.2)
        np.testing.assert_allclose(
            cost,
            100 * sum_rate_distortion(1.0, 1.0, 10, 0.2) * BITS_PER_NAT,
            rtol=1e-14)

    def test_infeasible_distortion(self):
        with pytest.raises(InfeasibleDistortionError):
            plan_static(self.params, 10, 1.0, 1.0, 0.05)

    def test_iteration_cap(self):
        greedy = ConvergenceParams(radius_sq=1e6, smoothness=1e6,
                                   target_gap=1e-6)
        with pytest.raises(ValueError):
            plan_static(greedy, 10, 1.0, 1.0, 0.2)


class TestOptimalDistortionStatic:
    params = ConvergenceParams(radius_sq=100.0, smoothness=1.0,
                               target_gap=1.0, model_dim=1)

    def test_grid_scan_finds_min(self):
        grid = np.geomspace(0.101, 100.0, 50)
        sweep = optimal_distortion_static(self.params, 10, 1.0, 1.0, grid)
        assert sweep.grid.size == 50
        assert sweep.best_plan.total_bits <= sweep.total_bits.min()
        assert sweep.total_bits.min() > 0

    def test_infeasible_points_dropped(self):
        grid = np.array([0.01, 0.05, 0.2, 0.5])
        sweep = optimal_distortion_static(self.params, 10, 1.0, 1.0, grid)
        np.testing.assert_array_equal(sweep.grid, [0.2, 0.5])

    def test_entirely_infeasible_grid(self):
        with pytest.raises(InfeasibleDistortionError):
            optimal_distortion_static(self.params, 10, 1.0, 1.0,
                                      np.array([0.01, 0.05]))

    def test_polish_only_improves(self):
        grid = np.geomspace(0.15, 20.0, 12)
        sweep = optimal_distortion_static(self.params, 10, 1.0, 1.0, grid)
        for d in grid:
            total = iterations_required(self.params, d) * per_iteration_cost(
                self.params, 10, 1.0, 1.0, d)
            assert sweep.best_plan.total_bits <= total + 1e-9


class TestPlanTrace:
    params = ConvergenceParams(radius_sq=1.0, smoothness=1.0, target_gap=0.1,
                               model_dim=3)

    def test_distortion_tracks_noise(self):
        trace = make_trace()
        plan = plan_trace(self.params, 4, trace, rho=1.0)
        np.testing.assert_allclose(plan.distortion,
                                   trace.sigma_n2 * 2.0 / 4.0, rtol=1e-14)
        assert plan.iterations == len(trace)
        assert plan.rho == 1.0
        assert not plan.unbounded

    def test_rate_formula(self):
        trace = make_trace()
        rho = 2.5
        plan = plan_trace(self.params, 4, trace, rho=rho)
        d_t = trace.sigma_n2 * (1.0 + rho) / 4.0
        nats = 0.5 * 4 * math.log1p(1.0 / rho) \
            + 0.5 * np.log1p(trace.sigma_x2 / d_t)
        np.testing.assert_allclose(plan.per_iteration_bits,
                                   3 * nats * BITS_PER_NAT, rtol=1e-13)
        np.testing.assert_allclose(plan.total_bits,
                                   math.fsum(plan.per_iteration_bits),
                                   rtol=0)

    def test_rho_zero_is_unbounded(self):
        plan = plan_trace(self.params, 4, make_trace(), rho=0.0)
        assert plan.unbounded
        assert math.isinf(plan.total_bits)
        assert np.all(np.isinf(plan.per_iteration_bits))

    def test_rate_decreases_with_rho(self):
        trace = make_trace()
        totals = [plan_trace(self.params, 4, trace, rho=r).total_bits
                  for r in (0.5, 1.0, 4.0, 20.0)]
        assert all(a > b for a, b in zip(totals, totals[1:]))

    def test_rejects_bad_rho(self):
        with pytest.raises(ValueError):
            plan_trace(self.params, 4, make_trace(), rho=-0.5)
        with pytest.raises(ValueError):
            plan_trace(self.params, 4, make_trace(), rho=math.inf)


class TestSignSgd:
    def test_reference_values(self):
        cmp = signsgd_comparison(10, 1.0, 1.0)
        np.testing.assert_allclose(cmp.signsgd_distortion,
                                   0.17267604552648372, rtol=1e-12)
        np.testing.assert_allclose(cmp.ideal_quant_bits, 9.538180696345915,
                                   rtol=1e-12)
        np.testing.assert_allclose(cmp.r_sum_bits, 7.624412991030472,
                                   rtol=1e-12)
        assert cmp.signsgd_bits_per_dim == 10.0

    def test_ordering_on_random_inputs(self):
        rng = np.random.default_rng(29)
        for _ in range(30):
            k = int(rng.integers(2, 40))
            sx2 = float(np.exp(rng.uniform(np.log(0.05), np.log(20.0))))
            sn2 = float(np.exp(rng.uniform(np.log(0.05), np.log(20.0))))
            cmp = signsgd_comparison(k, sx2, sn2)
            assert cmp.r_sum_bits < cmp.ideal_quant_bits < cmp.signsgd_bits_per_dim

    def test_single_worker_joint_equals_independent(self):
        # with one worker there is no correlation to exploit
        cmp = signsgd_comparison(1, 0.058, 0.208)
        np.testing.assert_allclose(cmp.r_sum_bits, cmp.ideal_quant_bits,
                                   rtol=1e-12)
        assert cmp.ideal_quant_bits < 1.0

    def test_distortion_above_floor(self):
        cmp = signsgd_comparison(10, 1.0, 1.0)
        assert cmp.signsgd_distortion > 1.0 / 10

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            signsgd_comparison(0, 1.0, 1.0)
        with pytest.raises(ValueError):
            signsgd_comparison(3, 0.0, 1.0)
