"""Training-cost planning: iterations to target, bits per iteration, totals.

For a convex smooth objective optimized by unbiased noisy gradients with
per-entry estimator variance D, reaching an expected optimality gap eps
needs

    T >= A^2 (sqrt(D/(2 eps^2) + beta/eps) + sqrt(D/(2 eps^2)))^2

iterations, while each iteration of a P-parameter model costs
P x R_sum(sigma_x2(t), sigma_n2(t), K, D) bits on the wire.  This module
combines the two into static plans (constant statistics, D chosen up
front), trace-driven plans (per-iteration statistics, distortion tied to
the gradient noise via rho = D K / sigma_n2 - 1), and a comparison against
one-bit sign quantization.

Planner outputs are in bits; the underlying rate math is in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    BITS_PER_NAT,
    ConvergenceParams,
    GradientTrace,
    InfeasibleDistortionError,
)
from .region import sum_rate_distortion

MAX_PLAN_ITERATIONS = 50_000_000  # refuse to materialize absurd per-iteration tables


@dataclass(frozen=True, eq=False)
class CostPlan:
    """Iteration count and per-iteration communication cost.

    ``distortion`` is a scalar for static plans and a per-iteration array
    for trace plans.  ``total_bits`` always equals the exact sum of
    ``per_iteration_bits`` (for static plans that sum collapses to
    iterations x cost).  ``unbounded`` marks error-free operation
    (rho = 0), where the per-iteration rate diverges and the total is
    reported as infinite rather than summed.
    """

    distortion: object  # float | np.ndarray
    iterations: int
    per_iteration_bits: np.ndarray
    total_bits: float
    rho: float | None = None
    unbounded: bool = False

    def __post_init__(self):
        per = np.atleast_1d(np.asarray(self.per_iteration_bits, dtype=float))
        per.setflags(write=False)
        object.__setattr__(self, "per_iteration_bits", per)
        if int(self.iterations) < 1:
            raise ValueError("iterations must be at least 1")


@dataclass(frozen=True, eq=False)
class DistortionSweep:
    grid: np.ndarray  # feasible grid points actually scanned
    total_bits: np.ndarray
    best_distortion: float
    best_plan: CostPlan


def iterations_lower_bound(params: ConvergenceParams, distortion: float) -> float:
    """Real-valued iteration bound; exact beta A^2 / eps at D = 0."""
    d = float(distortion)
    if not (math.isfinite(d) and d >= 0.0):
        raise ValueError("distortion must be nonnegative and finite")
    if d == 0.0:
        return params.radius_sq * params.smoothness / params.target_gap
    half = d / (2.0 * params.target_gap ** 2)
    root = math.sqrt(half + params.smoothness / params.target_gap) + math.sqrt(half)
    return params.radius_sq * root ** 2


def iterations_required(params: ConvergenceParams, distortion: float) -> int:
    """Smallest whole number of iterations satisfying the bound."""
    return max(1, math.ceil(iterations_lower_bound(params, distortion)))


def convergence_gap(params: ConvergenceParams, distortion: float,
                    iterations: float) -> float:
    """Guaranteed expected optimality gap after the given iterations,
    A sqrt(2 D / T) + beta A^2 / T; the algebraic inverse of the iteration
    bound, so substituting the real-valued bound returns the target gap."""
    t = float(iterations)
    if t <= 0.0:
        raise ValueError("iterations must be positive")
    a = math.sqrt(params.radius_sq)
    return a * math.sqrt(2.0 * float(distortion) / t) \
        + params.smoothness * params.radius_sq / t


def per_iteration_cost(params: ConvergenceParams, num_workers: int,
                       sigma_x2: float, sigma_n2: float,
                       distortion: float) -> float:
    """Bits sent per iteration: model_dim x R_sum at the given statistics."""
    rate = sum_rate_distortion(sigma_x2, sigma_n2, num_workers, distortion)
    return params.model_dim * rate * BITS_PER_NAT


def plan_static(params: ConvergenceParams, num_workers: int, sigma_x2: float,
                sigma_n2: float, distortion: float) -> CostPlan:
    """Cost plan for constant gradient statistics and a fixed distortion."""
    t = iterations_required(params, distortion)
    if t > MAX_PLAN_ITERATIONS:
        raise ValueError(
            f"plan needs {t} iterations; refusing to materialize more than "
            f"{MAX_PLAN_ITERATIONS} per-iteration entries")
    cost = per_iteration_cost(params, num_workers, sigma_x2, sigma_n2,
                              distortion)
    # t * cost is exactly the correctly rounded sum of t copies of cost
    return CostPlan(distortion=float(distortion), iterations=t,
                    per_iteration_bits=np.full(t, cost), total_bits=t * cost)


def _golden_min(fn, lo: float, hi: float, iters: int = 80) -> float:
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - ratio * (b - a)
    d = a + ratio * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = fn(d)
    return c if fc <= fd else d


def optimal_distortion_static(params: ConvergenceParams, num_workers: int,
                              sigma_x2: float, sigma_n2: float,
                              grid) -> DistortionSweep:
    """Scan a distortion grid for the cheapest total and polish locally.

    The grid scan is authoritative (the total need not be unimodal in D);
    a golden-section pass inside the best point's bracketing cell only
    refines the answer when it actually lowers the total.  Grid points at
    or below the feasibility floor sigma_n2 / K are dropped; an entirely
    infeasible grid is an error.
    """
    grid = np.sort(np.unique(np.atleast_1d(np.asarray(grid, dtype=float))))
    if grid.size == 0:
        raise ValueError("distortion grid is empty")
    floor = sigma_n2 / int(num_workers)
    feasible = grid[grid > floor]
    if feasible.size == 0:
        raise InfeasibleDistortionError(float(grid.max()), floor,
                                        context="entire grid infeasible")

    def total(d: float) -> float:
        return iterations_required(params, d) * per_iteration_cost(
            params, num_workers, sigma_x2, sigma_n2, d)

    totals = np.array([total(d) for d in feasible])
    best = int(np.argmin(totals))
    best_d = float(feasible[best])
    lo = float(feasible[max(best - 1, 0)])
    hi = float(feasible[min(best + 1, feasible.size - 1)])
    if hi > lo:
        polished = _golden_min(total, lo, hi)
        if total(polished) < totals[best]:
            best_d = float(polished)
    plan = plan_static(params, num_workers, sigma_x2, sigma_n2, best_d)
    return DistortionSweep(grid=feasible, total_bits=totals,
                           best_distortion=best_d, best_plan=plan)


def plan_trace(params: ConvergenceParams, num_workers: int,
               trace: GradientTrace, rho: float) -> CostPlan:
    """Cost plan along a gradient-statistics trace at a fixed noise ratio.

    The per-iteration distortion is D(t) = sigma_n2(t) (1 + rho) / K, which
    keeps the quantization-to-gradient-noise ratio rho constant; the trace
    itself fixes the iteration count.  rho = 0 is error-free transmission:
    the plan is returned with ``unbounded`` set and infinite costs instead
    of a sum.  Negative rho is rejected.
    """
    rho = float(rho)
    if not (math.isfinite(rho) and rho >= 0.0):
        raise ValueError("rho must be nonnegative and finite")
    k = int(num_workers)
    if k < 1:
        raise ValueError("num_workers must be a positive integer")
    d_t = trace.sigma_n2 * (1.0 + rho) / k
    t = len(trace)
    if rho == 0.0:
        return CostPlan(distortion=d_t, iterations=t,
                        per_iteration_bits=np.full(t, math.inf),
                        total_bits=math.inf, rho=0.0, unbounded=True)
    # with D(t) tied to sigma_n2(t), the quantization term is constant in t
    rate_nats = 0.5 * k * math.log1p(1.0 / rho) \
        + 0.5 * np.log1p(trace.sigma_x2 / d_t)
    per = params.model_dim * rate_nats * BITS_PER_NAT
    return CostPlan(distortion=d_t, iterations=t, per_iteration_bits=per,
                    total_bits=math.fsum(per), rho=rho)


@dataclass(frozen=True)
class SignSgdComparison:
    signsgd_bits_per_dim: float  # one bit per worker per dimension
    signsgd_distortion: float
    ideal_quant_bits: float  # per-worker compression, no cross-worker coding
    r_sum_bits: float  # joint-coding optimum at the sign-sgd distortion


def signsgd_comparison(num_workers: int, sigma_x2: float,
                       sigma_n2: float) -> SignSgdComparison:
    """Cost of sign quantization versus rate-optimal coding at equal error.

    Transmitting signs and reconstructing at +-sqrt(2/pi) sigma (the
    conditional mean of a Gaussian magnitude, sigma^2 = sigma_x2 + sigma_n2)
    leaves per-aggregate distortion

        D = (1/K) [sigma_n2 + ((pi-2)/pi) (sigma_n2 + sigma_x2)],

    always above the sigma_n2 / K floor.  An ideal per-worker quantizer
    reaching the same distortion needs (K/2) log2(1 + pi/(pi-2)) bits per
    dimension regardless of the statistics, and joint coding needs
    R_sum(D) bits; the three costs are strictly ordered.
    """
    k = int(num_workers)
    if k < 1:
        raise ValueError("num_workers must be a positive integer")
    if not (sigma_x2 > 0.0 and sigma_n2 > 0.0):
        raise ValueError("variances must be strictly positive")
    excess = (math.pi - 2.0) / math.pi * (sigma_n2 + sigma_x2)
    d_sign = (sigma_n2 + excess) / k
    ideal = 0.5 * k * math.log2(1.0 + math.pi / (math.pi - 2.0))
    r_sum = sum_rate_distortion(sigma_x2, sigma_n2, k, d_sign) * BITS_PER_NAT
    return SignSgdComparison(signsgd_bits_per_dim=float(k),
                             signsgd_distortion=d_sign,
                             ideal_quant_bits=ideal, r_sum_bits=r_sum)
