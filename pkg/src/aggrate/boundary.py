"""Weighted-sum rate minimization over the achievable region boundary.

Given per-worker weights alpha (dimensionless priorities, or bandwidth cost
per nat), this solves

    minimize    sum_l sum_k alpha_k R_{k,l}(z_l)
    subject to  sum_k z_{k,l} = 1/D_l   for every layer l,
                sum_l D_l = D,
                0 <= z_{k,l} < 1/sigma_nkl2,

where R_{k,l} is the corner-point rate of worker k on layer l when workers
are served in nonincreasing-weight order.  The inner problem in z is convex
and solved by projected gradient descent with Barzilai-Borwein steps; the
outer distortion split is a scalar convex allocation solved by bisection on
the shared multiplier that equalizes the layers' marginal costs.

All rates are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    DistortionBudget,
    InfeasibleDistortionError,
    LayeredGaussianSpec,
    RateAllocation,
    SolverConvergenceError,
    WeightVector,
    r_from_z,
)
from .region import corner_point, order_from_weights

CAP_MARGIN = 1e-12  # keep iterates strictly below the open bound 1/sigma_n2
ARMIJO_C = 1e-4


@dataclass(frozen=True, eq=False)
class BoundarySolution:
    """Stationary point of the weighted rate minimization.

    Arrays are indexed by original worker order.  ``kkt_residual`` is the
    sup-norm projected-gradient fixed-point violation of the per-layer
    subproblems; ``split_residual`` is the relative spread of the layers'
    marginal costs (0 for a single layer), certifying the distortion split.
    """

    z: np.ndarray  # (K, L)
    layer_distortions: np.ndarray  # (L,)
    rates: RateAllocation
    objective: float  # nats, weighted
    kkt_residual: float
    split_residual: float = 0.0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        z = z.copy()
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        dl = np.atleast_1d(np.asarray(self.layer_distortions, dtype=float)).copy()
        dl.setflags(write=False)
        object.__setattr__(self, "layer_distortions", dl)


def _suffix_sums(z: np.ndarray) -> np.ndarray:
    out = np.zeros(z.size + 1)
    out[:-1] = np.cumsum(z[::-1])[::-1]
    return out


def _layer_objective(z, noise_var, inv_sx2, alpha) -> float:
    rates = -0.5 * np.log1p(-noise_var * z)
    levels = np.log(inv_sx2 + _suffix_sums(z))
    return float(np.dot(alpha, rates + 0.5 * (levels[:-1] - levels[1:])))


def _layer_gradient(z, noise_var, inv_sx2, alpha) -> np.ndarray:
    # d/dz_j of the weighted corner objective, workers in sorted order:
    # the quantization part contributes alpha_j sigma_j^2 / (2 (1 - sigma_j^2 z_j)),
    # the decoder part telescopes into a running sum of weight increments
    # against the remaining-precision levels.
    t = inv_sx2 + _suffix_sums(z)[:-1]
    terms = np.empty(z.size)
    terms[0] = alpha[0] / t[0]
    if z.size > 1:
        terms[1:] = (alpha[1:] - alpha[:-1]) / t[1:]
    running = np.cumsum(terms)
    return 0.5 * alpha * noise_var / (1.0 - noise_var * z) + 0.5 * running


def _layer_hessian(z, noise_var, inv_sx2, alpha) -> np.ndarray:
    # the decoder part depends on z only through suffix sums, so its second
    # derivative w.r.t. (z_i, z_j) depends on min(i, j) alone; the
    # quantization part adds a diagonal
    t = inv_sx2 + _suffix_sums(z)[:-1]
    diff = np.empty(z.size)
    diff[0] = alpha[0]
    if z.size > 1:
        diff[1:] = alpha[1:] - alpha[:-1]
    curve = np.cumsum(diff / t**2)
    idx = np.arange(z.size)
    hess = -0.5 * curve[np.minimum.outer(idx, idx)]
    hess[idx, idx] += 0.5 * alpha * noise_var**2 / (1.0 - noise_var * z) ** 2
    return hess


def _newton_polish(z, noise_var, inv_sx2, alpha, cap, total, tol,
                   rounds: int = 80) -> np.ndarray:
    """Active-set Newton refinement of a near-stationary point.

    Solves the equality-constrained KKT system on the currently free
    coordinates with the exact Hessian, taking the longest step that keeps
    z in [0, cap]; coordinates driven to a bound leave the free set, bound
    coordinates whose gradient drops below the multiplier re-enter.
    """
    z = z.copy()
    for _ in range(rounds):
        g = _layer_gradient(z, noise_var, inv_sx2, alpha)
        resid = float(np.max(np.abs(z - _project(z - g, cap, total))))
        if resid <= tol:
            return z
        free = z > 0.0
        lam = float(np.min(g[free])) if np.any(free) else float(np.min(g))
        free |= g < lam
        idx = np.flatnonzero(free)
        if idx.size == 0:
            return z
        hess = _layer_hessian(z, noise_var, inv_sx2, alpha)
        n = idx.size
        kkt = np.zeros((n + 1, n + 1))
        kkt[:n, :n] = hess[np.ix_(idx, idx)]
        kkt[:n, n] = -1.0
        kkt[n, :n] = 1.0
        rhs = np.empty(n + 1)
        rhs[:n] = lam - g[idx]
        rhs[n] = total - float(np.sum(z))
        try:
            dz = np.linalg.solve(kkt, rhs)[:n]
        except np.linalg.LinAlgError:
            return z
        step, blocker = 1.0, -1
        for pos, j in enumerate(idx):
            if dz[pos] < 0.0:
                cand = -z[j] / dz[pos]
            elif dz[pos] > 0.0:
                cand = (cap[j] - z[j]) / dz[pos]
            else:
                continue
            if cand < step:
                step, blocker = cand, j
        if step <= 0.0:
            return z
        z[idx] += step * dz
        np.clip(z, 0.0, cap, out=z)
        if blocker >= 0 and z[blocker] < 1e-15 * total:
            z[blocker] = 0.0
    return z


def _project(v, cap, total) -> np.ndarray:
    """Euclidean projection onto {z : sum z = total, 0 <= z <= cap}."""
    lo = float(np.min(v - cap))  # every coordinate clips at its cap
    hi = float(np.max(v))  # every coordinate clips at zero
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if float(np.sum(np.clip(v - mid, 0.0, cap))) > total:
            lo = mid
        else:
            hi = mid
    z = np.clip(v - hi, 0.0, cap)
    # nudge the interior coordinates so the equality holds to rounding
    free = (z > 0.0) & (z < cap)
    if np.any(free):
        z[free] += (total - float(np.sum(z))) / int(np.count_nonzero(free))
        z = np.clip(z, 0.0, cap)
    return z


def _pg_residual(z, noise_var, inv_sx2, alpha, cap, total) -> float:
    g = _layer_gradient(z, noise_var, inv_sx2, alpha)
    return float(np.max(np.abs(z - _project(z - g, cap, total))))


def _solve_layer(noise_var, sigma_x2, alpha, total_precision, tol, max_iters,
                 z0=None):
    """Inner convex solve for one layer, workers already in sorted order.

    Returns (z, objective, multiplier, residual).  The multiplier is the
    common marginal rate cost of the active workers, used by the outer
    distortion split.
    """
    inv_sx2 = 1.0 / sigma_x2
    cap = (1.0 - CAP_MARGIN) / noise_var
    if float(np.sum(cap)) <= total_precision:
        floor = 1.0 / float(np.sum(1.0 / noise_var))
        raise InfeasibleDistortionError(1.0 / total_precision, floor)
    if z0 is None:
        prec = 1.0 / noise_var
        z0 = total_precision * prec / float(np.sum(prec))
    z = _project(np.asarray(z0, dtype=float), cap, total_precision)
    f = _layer_objective(z, noise_var, inv_sx2, alpha)
    g = _layer_gradient(z, noise_var, inv_sx2, alpha)
    # crude curvature of the quantization term sets the first trial step
    curv = float(np.max(alpha * noise_var**2 / (2.0 * (1.0 - noise_var * z) ** 2)))
    step = 1.0 / curv
    best_resid = math.inf
    next_polish = 0
    polish_every = 25 if noise_var.size <= 64 else 500
    for it in range(max_iters):
        resid = float(np.max(np.abs(z - _project(z - g, cap, total_precision))))
        best_resid = min(best_resid, resid)
        if resid <= tol:
            multiplier = float(np.min(g))
            return z, f, multiplier, resid
        if (resid <= 1e-4 and it >= next_polish) or (it and it % polish_every == 0):
            # first-order progress has identified the active set; finish
            # with Newton steps on the reduced KKT system
            next_polish = it + 50
            zp = _newton_polish(z, noise_var, inv_sx2, alpha, cap,
                                total_precision, tol)
            gp = _layer_gradient(zp, noise_var, inv_sx2, alpha)
            residp = float(np.max(np.abs(
                zp - _project(zp - gp, cap, total_precision))))
            best_resid = min(best_resid, residp)
            fp = _layer_objective(zp, noise_var, inv_sx2, alpha)
            if residp <= tol:
                return zp, fp, float(np.min(gp)), residp
            if fp < f:
                z, f, g = zp, fp, gp
                continue
        s = step
        zn, fn, dz = z, f, None
        for _ in range(80):
            zn = _project(z - s * g, cap, total_precision)
            dz = zn - z
            fn = _layer_objective(zn, noise_var, inv_sx2, alpha)
            if fn <= f + ARMIJO_C * float(np.dot(g, dz)):
                break
            s *= 0.5
        gn = _layer_gradient(zn, noise_var, inv_sx2, alpha)
        denom = float(np.dot(dz, gn - g))
        if denom > 0.0:
            step = min(max(float(np.dot(dz, dz)) / denom, 1e-12), 1e12)
        else:
            step = s * 2.0
        z, f, g = zn, fn, gn
    raise SolverConvergenceError(best_resid, tol, max_iters)


def _as_weights(weights, num_workers) -> np.ndarray:
    if isinstance(weights, WeightVector):
        w = weights.weights
    else:
        w = WeightVector(np.asarray(weights, dtype=float)).weights
    if w.size != num_workers:
        raise ValueError(f"expected {num_workers} weights, got {w.size}")
    return w


def solve_boundary(spec: LayeredGaussianSpec, weights, distortion,
                   *, tol: float = 1e-9, max_iters: int = 100000) -> BoundarySolution:
    """Minimize the weighted rate sum at total distortion ``distortion``.

    ``weights`` may be a WeightVector or array.  ``distortion`` may be a
    positive total, or a DistortionBudget whose per-layer split (if given)
    is honored instead of being optimized.  The result satisfies the
    projected-gradient stationarity contract kkt_residual <= tol (default
    well inside the 1e-6 certification threshold).

    Raises InfeasibleDistortionError when the budget does not exceed the
    achievable floor, and SolverConvergenceError (with the best residual)
    if an inner solve stalls before max_iters.
    """
    w = _as_weights(weights, spec.num_workers)
    budget = distortion if isinstance(distortion, DistortionBudget) \
        else DistortionBudget(total=float(distortion))
    budget.check_feasible(spec)

    order = order_from_weights(w)
    alpha = w[order]
    layers = spec.layers()
    nv_sorted = [layer.noise_var[order] for layer in layers]
    floors = np.array([layer.min_distortion() for layer in layers])

    if budget.per_layer is not None:
        split = np.asarray(budget.per_layer, dtype=float)
    elif spec.num_layers == 1:
        split = np.array([budget.total])
    else:
        split = _optimal_split(layers, nv_sorted, alpha, floors, budget.total,
                               tol, max_iters)

    z_cols, resids, multipliers = [], [], []
    for l, layer in enumerate(layers):
        z_l, _, lam, resid = _solve_layer(
            nv_sorted[l], layer.sigma_x2, alpha, 1.0 / split[l], tol, max_iters)
        z_cols.append(z_l)
        resids.append(resid)
        multipliers.append(lam / split[l] ** 2)

    z = np.zeros((spec.num_workers, spec.num_layers))
    per_worker_layer = np.zeros_like(z)
    for l, layer in enumerate(layers):
        z[order, l] = z_cols[l]
        rates_l = r_from_z(z[:, l], layer.noise_var)
        per_worker_layer[:, l] = corner_point(layer, rates_l, order=order)
    per_worker = per_worker_layer.sum(axis=1)
    allocation = RateAllocation(per_worker=per_worker,
                                per_worker_layer=per_worker_layer)

    if spec.num_layers > 1:
        spread = (max(multipliers) - min(multipliers)) / max(multipliers)
    else:
        spread = 0.0
    return BoundarySolution(
        z=z,
        layer_distortions=split,
        rates=allocation,
        objective=float(np.dot(w, per_worker)),
        kkt_residual=max(resids),
        split_residual=spread,
    )


def allocate_rates(spec: LayeredGaussianSpec, cost_per_nat, distortion,
                   **kwargs) -> BoundarySolution:
    """Cheapest rate allocation when worker bandwidth prices differ.

    Identical optimization to :func:`solve_boundary` with the weights read
    as cost per nat per worker; the objective is then the total price paid
    per source symbol.
    """
    return solve_boundary(spec, cost_per_nat, distortion, **kwargs)


def kkt_residual(spec: LayeredGaussianSpec, weights, candidate: BoundarySolution) -> float:
    """Stationarity violation of a candidate solution.

    Re-evaluates, for each layer at the candidate's own precision total,
    the sup-norm distance between z and the projection of z - grad onto the
    feasible slice.  Zero for an exact optimum; the solver contract is
    <= 1e-6.
    """
    w = _as_weights(weights, spec.num_workers)
    order = order_from_weights(w)
    alpha = w[order]
    worst = 0.0
    for l, layer in enumerate(spec.layers()):
        z_l = candidate.z[order, l]
        nv = layer.noise_var[order]
        cap = (1.0 - CAP_MARGIN) / nv
        total = float(np.sum(z_l))
        worst = max(worst, _pg_residual(z_l, nv, 1.0 / layer.sigma_x2,
                                        alpha, cap, total))
    return worst


def _marginal(layer_idx, layers, nv_sorted, alpha, d_l, tol, max_iters, warm):
    """Marginal objective decrease per unit of distortion given to a layer."""
    layer = layers[layer_idx]
    z, _, lam, _ = _solve_layer(nv_sorted[layer_idx], layer.sigma_x2, alpha,
                                1.0 / d_l, tol, max_iters,
                                z0=warm.get(layer_idx))
    warm[layer_idx] = z
    return lam / d_l**2


def _log_secant_root(fun, lo, hi, f_lo, f_hi, rel_tol, f_rtol=0.0,
                     max_evals=60):
    """Root of a positive decreasing ``fun`` (values vs a positive target
    already divided out, so the root is at fun == 1) inside [lo, hi].

    Secant steps in log-log coordinates, clamped to stay a fixed fraction
    inside the bracket so progress is never much worse than bisection.
    Stops when the bracket is relatively tighter than ``rel_tol`` or the
    last evaluation is within ``f_rtol`` of the target.
    """
    log_lo, log_hi = math.log(lo), math.log(hi)
    g_lo, g_hi = math.log(f_lo), math.log(f_hi)
    for _ in range(max_evals):
        if hi - lo <= rel_tol * hi:
            break
        if g_lo > 0.0 > g_hi:
            frac = g_lo / (g_lo - g_hi)
            frac = min(max(frac, 0.05), 0.95)
        else:
            frac = 0.5
        log_mid = log_lo + frac * (log_hi - log_lo)
        mid = math.exp(log_mid)
        if mid <= lo or mid >= hi:
            break
        f_mid = fun(mid)
        g_mid = math.log(f_mid)
        if g_mid > 0.0:
            lo, log_lo, g_lo = mid, log_mid, g_mid
        else:
            hi, log_hi, g_hi = mid, log_mid, g_mid
        if abs(f_mid - 1.0) <= f_rtol:
            return mid
    return hi


def _layer_share(layer_idx, layers, nv_sorted, alpha, floors, nu, hint,
                 tol, max_iters, warm):
    """Distortion at which a layer's marginal cost equals nu."""
    def ratio(d):
        return _marginal(layer_idx, layers, nv_sorted, alpha, d, tol,
                         max_iters, warm) / nu

    floor_lo = floors[layer_idx] * (1.0 + 1e-9)
    hi = max(hint, floor_lo * 2.0)
    f_hi = ratio(hi)
    if f_hi >= 1.0:
        # root above: expand upward (the marginal decays with distortion)
        lo, f_lo = hi, f_hi
        for _ in range(200):
            hi *= 2.0
            f_hi = ratio(hi)
            if f_hi < 1.0:
                break
            lo, f_lo = hi, f_hi
    else:
        # root below: halve toward the floor, never evaluating at it
        lo = max(floor_lo, hi / 2.0)
        f_lo = ratio(lo)
        for _ in range(200):
            if f_lo >= 1.0 or lo <= floor_lo:
                break
            hi, f_hi = lo, f_lo
            lo = max(floor_lo, lo / 2.0)
            f_lo = ratio(lo)
        if f_lo < 1.0:  # marginal below nu all the way down
            return lo
    return _log_secant_root(ratio, lo, hi, f_lo, f_hi, rel_tol=1e-12)


def _optimal_split(layers, nv_sorted, alpha, floors, total, tol, max_iters):
    """Split the distortion budget across layers by multiplier search.

    The per-layer optimum is convex and decreasing in its share, so at the
    optimal split every layer sees the same marginal cost nu; the map from
    nu to the implied total sum(D_l(nu)) is decreasing, and we drive nu
    until the budget is met to 1e-9 relative, then rescale exactly.
    """
    n_layers = len(layers)
    # the split only needs marginals to root-finder precision; the final
    # per-layer solves rerun at the full tolerance
    search_tol = max(tol, 1e-7)
    warm: dict = {}
    slack = total - float(np.sum(floors))
    guess = floors + slack / n_layers
    nu = _marginal(0, layers, nv_sorted, alpha, guess[0], search_tol,
                   max_iters, warm)

    hints = list(guess)

    def implied_total(nu_val):
        shares = [
            _layer_share(l, layers, nv_sorted, alpha, floors, nu_val,
                         hints[l], search_tol, max_iters, warm)
            for l in range(n_layers)
        ]
        hints[:] = shares
        return np.array(shares)

    shares = implied_total(nu)
    lo_nu = hi_nu = nu
    lo_sum = hi_sum = float(np.sum(shares))
    for _ in range(200):
        if lo_sum >= total:
            break
        lo_nu /= 4.0  # smaller multiplier ... larger shares
        lo_sum = float(np.sum(implied_total(lo_nu)))
    for _ in range(200):
        if hi_sum <= total:
            break
        hi_nu *= 4.0
        shares = implied_total(hi_nu)
        hi_sum = float(np.sum(shares))

    def total_ratio(nu_val):
        nonlocal shares
        shares = implied_total(nu_val)
        return float(np.sum(shares)) / total

    if abs(float(np.sum(shares)) - total) > 1e-9 * total:
        _log_secant_root(total_ratio, lo_nu, hi_nu, lo_sum / total,
                         hi_sum / total, rel_tol=0.0, f_rtol=1e-9,
                         max_evals=100)
    return shares * (total / float(np.sum(shares)))
