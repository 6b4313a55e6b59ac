"""Rate-region geometry for unbiased distributed gradient estimation.

A hidden gradient X with variance sigma_x2 is observed by K workers as
Y_k = X + N_k.  Each worker spends an auxiliary rate r_k (nats) describing
its noise, contributing precision z_k = (1 - exp(-2 r_k)) / sigma_nk2 to the
fused estimate.  Operating points with total precision sum(z) = 1/D achieve
estimator variance D, and the achievable per-worker rates are cut out by
subset-sum inequalities.  This module evaluates those bounds, the corner
points of the polyhedron, the closed-form sum-rate curves, and an
approximate membership test for arbitrary rate vectors.

All rates are in nats.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    GaussianLayer,
    InfeasibleDistortionError,
    LayeredGaussianSpec,
    RateAllocation,
    r_from_z,
    z_from_r,
)

#: relative residual below which a rate vector counts as lying on the
#: constant-precision surface sum(z) = 1/D
SURFACE_TOL = 1e-9

MAX_ENUM_WORKERS = 20  # 2^K subset enumeration cap


@dataclass(frozen=True)
class SurfaceCheck:
    on_surface: bool
    residual: float


@dataclass(frozen=True)
class SubsetBound:
    subset: tuple
    bound: float  # nats


@dataclass(frozen=True)
class SubsetAudit:
    min_slack: float  # nats; negative means some inequality is violated
    worst_subset: tuple


@dataclass(frozen=True, eq=False)
class WaterFilling:
    z: np.ndarray
    rates: np.ndarray  # nats
    sum_rate: float  # nats, decoder term included
    water_level: float


@dataclass(frozen=True)
class Membership:
    inside: bool
    margin: float  # nats; worst slack over the sampled supporting hyperplanes


def _validate_rates(layer: GaussianLayer, rates) -> np.ndarray:
    r = np.atleast_1d(np.asarray(rates, dtype=float))
    if r.shape != (layer.num_workers,):
        raise ValueError(
            f"expected {layer.num_workers} rates, got shape {r.shape}"
        )
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise ValueError("rates must be nonnegative and finite")
    return r


def check_surface(layer: GaussianLayer, rates, distortion: float) -> SurfaceCheck:
    """Check whether the rate vector sits on the precision surface for D.

    The residual is |sum(z) - 1/D| * D, i.e. relative to the target
    precision, so the pass threshold does not depend on the scale of D.
    """
    r = _validate_rates(layer, rates)
    if not (math.isfinite(distortion) and distortion > 0):
        raise ValueError("distortion must be strictly positive and finite")
    z = z_from_r(r, layer.noise_var)
    residual = abs(math.fsum(z) - 1.0 / distortion) * distortion
    return SurfaceCheck(on_surface=residual <= SURFACE_TOL, residual=residual)


def _validate_subset(num_workers: int, subset) -> tuple:
    idx = tuple(sorted(int(i) for i in subset))
    if len(set(idx)) != len(idx):
        raise ValueError("subset contains repeated worker indices")
    if idx and (idx[0] < 0 or idx[-1] >= num_workers):
        raise ValueError(f"subset indices must lie in [0, {num_workers})")
    return idx


def subset_rate_bound(layer: GaussianLayer, rates, distortion: float,
                      subset) -> SubsetBound:
    """Lower bound on the total rate of a worker subset at distortion D.

    For A a nonempty subset with complement A^c,

        sum_{k in A} R_k >= sum_{k in A} r_k
                            + 0.5 ln(1/sigma_x2 + 1/D)
                            - 0.5 ln(1/sigma_x2 + sum_{k in A^c} z_k).

    The rate vector must lie on the precision surface for D (the bound
    system is only defined along that surface).
    """
    r = _validate_rates(layer, rates)
    idx = _validate_subset(layer.num_workers, subset)
    if not idx:
        raise ValueError("subset must be nonempty")
    check = check_surface(layer, r, distortion)
    if not check.on_surface:
        raise ValueError(
            f"rates are off the precision surface for D={distortion!r} "
            f"(residual {check.residual:.3e})"
        )
    z = z_from_r(r, layer.noise_var)
    inv_sx2 = 1.0 / layer.sigma_x2
    mask = np.zeros(layer.num_workers, dtype=bool)
    mask[list(idx)] = True
    complement_z = math.fsum(z[~mask])
    bound = (
        math.fsum(r[mask])
        + 0.5 * math.log(inv_sx2 + 1.0 / distortion)
        - 0.5 * math.log(inv_sx2 + complement_z)
    )
    return SubsetBound(subset=idx, bound=bound)


def corner_point(layer: GaussianLayer, rates, order=None) -> np.ndarray:
    """Corner of the rate polyhedron for one operating point r.

    ``order`` lists worker indices from first-served to last (the position
    of a worker should be nonincreasing in its weight when the corner is
    used to minimize a weighted rate sum).  Position j pays

        R = r + 0.5 ln(1/sigma_x2 + S_j) - 0.5 ln(1/sigma_x2 + S_{j+1})

    where S_j is the precision still unaccounted for at position j (the
    suffix sum of z over positions >= j).  The sum over workers telescopes
    to the full-set bound.  Output is indexed by original worker, not by
    position.
    """
    r = _validate_rates(layer, rates)
    k = layer.num_workers
    if order is None:
        order = np.arange(k)
    order = np.asarray(order, dtype=int)
    if sorted(order.tolist()) != list(range(k)):
        raise ValueError("order must be a permutation of all worker indices")
    z = z_from_r(r, layer.noise_var)
    inv_sx2 = 1.0 / layer.sigma_x2
    z_ord = z[order]
    # suffix[j] = sum of z over positions j..K-1; suffix[K] = 0
    suffix = np.zeros(k + 1)
    suffix[:k] = np.cumsum(z_ord[::-1])[::-1]
    levels = np.log(inv_sx2 + suffix)
    out = np.empty(k)
    out[order] = r[order] + 0.5 * (levels[:-1] - levels[1:])
    return out


def order_from_weights(weights) -> np.ndarray:
    """Worker ordering by nonincreasing weight, ties broken by index."""
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    return np.argsort(-w, kind="stable")


def sum_rate_distortion(sigma_x2: float, sigma_n2: float, num_workers: int,
                        distortion: float) -> float:
    """Minimum total rate (nats) for homogeneous noise at distortion D.

        R_sum(D) = (K/2) ln(1 + sigma_n2 / (K D - sigma_n2))
                   + (1/2) ln(1 + sigma_x2 / D)

    Feasible only for D > sigma_n2 / K; the rate diverges at that floor.
    """
    k = int(num_workers)
    if k < 1:
        raise ValueError("num_workers must be a positive integer")
    if not (math.isfinite(sigma_x2) and sigma_x2 >= 0):
        raise ValueError("sigma_x2 must be nonnegative and finite")
    if not (math.isfinite(sigma_n2) and sigma_n2 >= 0):
        raise ValueError("sigma_n2 must be nonnegative and finite")
    if not (math.isfinite(distortion) and distortion > 0):
        raise ValueError("distortion must be strictly positive and finite")
    floor = sigma_n2 / k
    if distortion <= floor:
        raise InfeasibleDistortionError(distortion, floor)
    noise_term = 0.0
    if sigma_n2 > 0.0:
        noise_term = 0.5 * k * math.log1p(sigma_n2 / (k * distortion - sigma_n2))
    return noise_term + 0.5 * math.log1p(sigma_x2 / distortion)


def independent_sum_rate(sigma_x2: float, sigma_n2: float, num_workers: int,
                         distortion: float) -> float:
    """Total rate (nats) when workers compress independently.

        R_in(D) = (K/2) ln(1 + sigma_n2 / (K D - sigma_n2))
                  + (K/2) ln(1 + sigma_x2 / (K D))

    Always >= sum_rate_distortion, with equality iff K = 1; the gap is the
    rate saved by exploiting the common component across workers.
    """
    k = int(num_workers)
    base = sum_rate_distortion(sigma_x2, sigma_n2, k, distortion)
    # swap the joint decoder term for K per-worker decoder terms
    joint = 0.5 * math.log1p(sigma_x2 / distortion)
    separate = 0.5 * k * math.log1p(sigma_x2 / (k * distortion))
    return base - joint + separate


def heterogeneous_sum_rate(layer: GaussianLayer, distortion: float) -> WaterFilling:
    """Minimum total rate (nats) for per-worker noise variances.

    Minimizes sum_k -0.5 ln(1 - sigma_nk2 z_k) subject to sum(z) = 1/D and
    0 <= z_k < 1/sigma_nk2.  The stationarity condition equalizes the
    marginal rate cost across active workers, giving the water-filling form
    z_k = max(0, 1/sigma_nk2 - mu) with mu pinned by the precision budget;
    noisier workers drop out first.  The decoder term 0.5 ln(1 + sigma_x2/D)
    is added to the optimal auxiliary rates.
    """
    if not (math.isfinite(distortion) and distortion > 0):
        raise ValueError("distortion must be strictly positive and finite")
    target = 1.0 / distortion
    prec = 1.0 / layer.noise_var
    if target >= np.sum(prec):
        raise InfeasibleDistortionError(distortion, layer.min_distortion())
    desc = np.sort(prec)[::-1]
    counts = np.arange(1, desc.size + 1)
    mu_by_m = (np.cumsum(desc) - target) / counts
    active = np.nonzero(mu_by_m < desc)[0]
    mu = float(mu_by_m[active[-1]])
    z = np.maximum(0.0, prec - mu)
    rates = r_from_z(z, layer.noise_var)
    sum_rate = math.fsum(rates) + 0.5 * math.log1p(layer.sigma_x2 / distortion)
    return WaterFilling(z=z, rates=rates, sum_rate=sum_rate, water_level=mu)


def _subset_masks(num_workers: int) -> np.ndarray:
    if num_workers > MAX_ENUM_WORKERS:
        raise ValueError(
            f"subset enumeration is capped at K <= {MAX_ENUM_WORKERS}"
        )
    codes = np.arange(1, 2 ** num_workers, dtype=np.int64)
    return (codes[:, None] >> np.arange(num_workers)) & 1 == 1


def min_subset_slack(layer: GaussianLayer, rates, per_worker,
                     distortion: float) -> SubsetAudit:
    """Worst slack of all 2^K - 1 subset inequalities for a rate vector.

    Returns min over nonempty A of sum_{k in A} R_k - bound(A); the vector
    satisfies every inequality at this operating point iff the slack is
    >= 0 (up to the caller's tolerance).  Enumeration is capped at K <= 20.
    """
    r = _validate_rates(layer, rates)
    per_worker = np.atleast_1d(np.asarray(per_worker, dtype=float))
    if per_worker.shape != r.shape:
        raise ValueError("per_worker must have one rate per worker")
    check = check_surface(layer, r, distortion)
    if not check.on_surface:
        raise ValueError(
            f"rates are off the precision surface for D={distortion!r} "
            f"(residual {check.residual:.3e})"
        )
    z = z_from_r(r, layer.noise_var)
    inv_sx2 = 1.0 / layer.sigma_x2
    masks = _subset_masks(layer.num_workers)
    complement_z = math.fsum(z) - masks @ z
    bounds = (
        masks @ r
        + 0.5 * math.log(inv_sx2 + 1.0 / distortion)
        - 0.5 * np.log(inv_sx2 + complement_z)
    )
    slack = masks @ per_worker - bounds
    worst = int(np.argmin(slack))
    subset = tuple(np.nonzero(masks[worst])[0].tolist())
    return SubsetAudit(min_slack=float(slack[worst]), worst_subset=subset)


def _simplex_weight_grid(num_workers: int, resolution: int):
    """Strictly positive weight vectors (m_1/G, ..., m_K/G), m_i >= 1."""
    g = max(int(resolution), num_workers)
    if num_workers == 1:
        yield np.ones(1)
        return
    for cuts in itertools.combinations(range(1, g), num_workers - 1):
        parts = np.diff((0,) + cuts + (g,))
        yield parts / g


def membership_test(spec: LayeredGaussianSpec, allocation: RateAllocation,
                    distortion: float, weight_grid_resolution: int = 8) -> Membership:
    """Approximate test of whether a rate vector is achievable at D.

    The achievable region is convex, so it is the intersection of the
    half-spaces {R : a.R >= optimum(a)} over positive weight vectors a.
    This samples weights on a simplex grid, solves the weighted boundary
    problem for each, and reports the worst slack.  A negative margin is a
    certificate of non-membership; a nonnegative margin only means no
    sampled hyperplane separates the point, so refusals are exact and
    acceptances sharpen as the grid is refined.
    """
    from .boundary import solve_boundary  # deferred: boundary builds on this module
    from .model import WeightVector

    if allocation.num_workers != spec.num_workers:
        raise ValueError("allocation and spec disagree on worker count")
    margin = math.inf
    for w in _simplex_weight_grid(spec.num_workers, weight_grid_resolution):
        sol = solve_boundary(spec, WeightVector(w), distortion)
        slack = float(np.dot(w, allocation.per_worker)) - sol.objective
        if slack < margin:
            margin = slack
    return Membership(inside=margin >= -1e-9, margin=margin)
