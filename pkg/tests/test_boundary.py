import math

import numpy as np
import pytest

from aggrate import (
    DistortionBudget,
    GaussianLayer,
    InfeasibleDistortionError,
    LayeredGaussianSpec,
    WeightVector,
    allocate_rates,
    corner_point,
    heterogeneous_sum_rate,
    kkt_residual,
    min_subset_slack,
    order_from_weights,
    solve_boundary,
    sum_rate_distortion,
)

LN2 = math.log(2.0)


def brute_weighted_two_workers(sigma_x2, noise_var, weights, distortion,
                               pts=2001, zooms=4):
    """Dense scan over the single free coordinate of a two-worker slice."""
    w = np.asarray(weights, dtype=float)
    nv = np.asarray(noise_var, dtype=float)
    layer = GaussianLayer(sigma_x2, nv)
    order = order_from_weights(w)
    target = 1.0 / distortion
    caps = (1.0 - 1e-12) / nv
    lo = max(0.0, target - caps[1])
    hi = min(caps[0], target)

    def value(z0):
        z = np.array([z0, target - z0])
        r = -0.5 * np.log1p(-nv * z)
        return float(np.dot(w, corner_point(layer, r, order=order)))

    best_z, best_v = None, math.inf
    for _ in range(zooms):
        grid = np.linspace(lo, hi, pts)
        vals = [value(z0) for z0 in grid]
        i = int(np.argmin(vals))
        if vals[i] < best_v:
            best_v, best_z = vals[i], grid[i]
        span = (hi - lo) / pts
        lo = max(lo, best_z - 2 * span)
        hi = min(hi, best_z + 2 * span)
    return best_v


class TestEqualWeightsClosedForm:
    def test_matches_homogeneous_sum_rate(self):
        for k in (1, 2, 10):
            spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=k)
            for d in np.geomspace(1.0 / k * 1.2, 5.0, 6):
                sol = solve_boundary(spec, np.ones(k), float(d))
                np.testing.assert_allclose(
                    sol.objective, sum_rate_distortion(1.0, 1.0, k, float(d)),
                    rtol=1e-8)

    def test_reference_point(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=10)
        sol = solve_boundary(spec, np.ones(10), 0.2)
        np.testing.assert_allclose(sol.objective, 4.361615637413754,
                                   rtol=1e-9)
        # the sum hits the closed form; the corner splits it unevenly
        np.testing.assert_allclose(math.fsum(sol.rates.per_worker),
                                   sol.objective, rtol=1e-12)
        assert np.all(sol.rates.per_worker > 0)


class TestHeterogeneousMatchesWaterFilling:
    def test_sum_rate_agreement(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            k = int(rng.integers(2, 7))
            nv = np.exp(rng.uniform(np.log(0.3), np.log(4.0), size=k))
            sx2 = float(rng.uniform(0.4, 2.5))
            layer = GaussianLayer(sx2, nv)
            d = layer.min_distortion() * float(rng.uniform(1.1, 6.0))
            spec = LayeredGaussianSpec(global_var=np.array([sx2]),
                                       noise_var=nv)
            sol = solve_boundary(spec, np.ones(k), d)
            wf = heterogeneous_sum_rate(layer, d)
            np.testing.assert_allclose(sol.objective, wf.sum_rate, rtol=1e-8)

    def test_z_agreement(self):
        layer = GaussianLayer(1.0, np.array([1.0, 2.0]))
        spec = LayeredGaussianSpec(global_var=np.array([1.0]),
                                   noise_var=np.array([1.0, 2.0]))
        sol = solve_boundary(spec, np.ones(2), 1.0)
        wf = heterogeneous_sum_rate(layer, 1.0)
        np.testing.assert_allclose(sol.z[:, 0], wf.z, atol=1e-8)


class TestWeightedBoundary:
    def test_matches_dense_scan(self):
        sol = solve_boundary(
            LayeredGaussianSpec(global_var=np.array([1.0]),
                                noise_var=np.array([1.0, 1.0])),
            np.array([1.0, 2.0]), 0.8)
        brute = brute_weighted_two_workers(1.0, [1.0, 1.0], [1.0, 2.0], 0.8)
        np.testing.assert_allclose(sol.objective, brute, rtol=1e-9)

    def test_heavier_weight_pays_less(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=3)
        sol = solve_boundary(spec, np.array([3.0, 1.0, 2.0]), 0.7)
        pw = sol.rates.per_worker
        assert pw[0] < pw[2] < pw[1]

    def test_weight_vector_and_array_agree(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=3)
        a = solve_boundary(spec, WeightVector(np.array([1.0, 2.0, 1.5])), 0.7)
        b = solve_boundary(spec, [1.0, 2.0, 1.5], 0.7)
        np.testing.assert_allclose(a.objective, b.objective, rtol=0)

    def test_scaling_weights_scales_objective(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=3)
        a = solve_boundary(spec, np.array([1.0, 2.0, 1.5]), 0.7)
        b = solve_boundary(spec, np.array([2.0, 4.0, 3.0]), 0.7)
        np.testing.assert_allclose(b.objective, 2.0 * a.objective, rtol=1e-9)

    def test_solution_in_region(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=4)
        sol = solve_boundary(spec, np.array([1.0, 4.0, 2.0, 3.0]), 0.5)
        layer = spec.layer(0)
        r = -0.5 * np.log1p(-layer.noise_var * sol.z[:, 0])
        audit = min_subset_slack(layer, r, sol.rates.per_worker, 0.5)
        assert audit.min_slack >= -1e-9


class TestMultiLayer:
    spec = LayeredGaussianSpec(
        global_var=np.array([1.0, 4.0]),
        noise_var=np.array([[1.0, 2.0], [1.5, 1.0], [0.7, 3.0]]))
    weights = np.array([1.0, 2.0, 1.5])
    _cache = {}

    @classmethod
    def solve(cls, distortion):
        if distortion not in cls._cache:
            cls._cache[distortion] = solve_boundary(cls.spec, cls.weights,
                                                    distortion)
        return cls._cache[distortion]

    def test_reference_objective(self):
        sol = self.solve(0.9)
        np.testing.assert_allclose(sol.objective, 16.875042301097693,
                                   rtol=1e-8)
        assert sol.kkt_residual <= 1e-9
        assert sol.split_residual <= 1e-6

    def test_split_sums_to_budget(self):
        sol = self.solve(0.9)
        np.testing.assert_allclose(math.fsum(sol.layer_distortions), 0.9,
                                   rtol=1e-9)
        for l in range(2):
            np.testing.assert_allclose(
                math.fsum(sol.z[:, l]), 1.0 / sol.layer_distortions[l],
                rtol=1e-7)

    def test_fixed_split_is_honored_and_never_better(self):
        opt = self.solve(0.9)
        budget = DistortionBudget(0.9, per_layer=np.array([0.34, 0.56]))
        pinned = solve_boundary(self.spec, self.weights, budget)
        np.testing.assert_array_equal(pinned.layer_distortions, [0.34, 0.56])
        assert pinned.objective >= opt.objective - 1e-9

    def test_optimal_split_beats_nearby_splits(self):
        opt = self.solve(0.9)
        d0 = float(opt.layer_distortions[0])
        floors = [self.spec.layer(l).min_distortion() for l in range(2)]
        for delta in (-0.012, -0.004, 0.004, 0.012):
            split = np.array([d0 + delta, 0.9 - d0 - delta])
            if split[0] <= floors[0] or split[1] <= floors[1]:
                continue
            other = solve_boundary(self.spec, self.weights,
                                   DistortionBudget(0.9, per_layer=split))
            assert other.objective >= opt.objective - 1e-9

    def test_objective_decreasing_in_budget(self):
        vals = [self.solve(d).objective for d in (0.9, 1.0, 1.2, 1.5)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestDiagnostics:
    def test_kkt_residual_of_solution_is_small(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=3)
        w = np.array([1.0, 2.0, 1.5])
        sol = solve_boundary(spec, w, 0.7)
        assert kkt_residual(spec, w, sol) <= 1e-9

    def test_kkt_residual_flags_perturbed_point(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=3)
        w = np.array([1.0, 2.0, 1.5])
        sol = solve_boundary(spec, w, 0.7)
        z = sol.z.copy()
        z[0, 0] += 0.05
        z[1, 0] -= 0.05
        bad = type(sol)(z=z, layer_distortions=sol.layer_distortions,
                        rates=sol.rates, objective=sol.objective,
                        kkt_residual=sol.kkt_residual)
        assert kkt_residual(spec, w, bad) > 1e-3


class TestAllocateRates:
    def test_alias_of_weighted_solve(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=3)
        prices = np.array([1.0, 5.0, 2.0])
        a = allocate_rates(spec, prices, 0.7)
        b = solve_boundary(spec, prices, 0.7)
        np.testing.assert_allclose(a.objective, b.objective, rtol=0)

    def test_expensive_worker_used_less(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=2)
        sol = allocate_rates(spec, np.array([1.0, 10.0]), 0.8)
        pw = sol.rates.per_worker
        assert pw[1] < pw[0]


class TestFeasibility:
    def test_total_below_floor(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=10)
        with pytest.raises(InfeasibleDistortionError):
            solve_boundary(spec, np.ones(10), 0.1)

    def test_per_layer_below_floor(self):
        spec = LayeredGaussianSpec.homogeneous(1.0, 1.0, num_workers=10,
                                               num_layers=2)
        budget = DistortionBudget(0.45, per_layer=np.array([0.05, 0.40]))
        with pytest.raises(InfeasibleDistortionError):
            solve_boundary(spec, np.ones(10), budget)
