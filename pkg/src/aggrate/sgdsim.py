"""Desk-scale distributed SGD on a synthetic least-squares objective.

K workers compute mini-batch gradients of F(w) = ||Xw - y||^2 / (2m); the
aggregate is their batch-weighted mean plus zero-mean Gaussian estimator
noise calibrated so the per-entry distortion is

    D(t) = (sigma_n2(t) / K) (1 + rho),

with sigma_n2(t) the inter-worker gradient variance measured online.  rho
is the ratio of quantization noise to residual gradient noise: rho = 0 is
error-free aggregation (infinite rate), larger rho trades iterations for
cheaper iterations.  Each run records the loss path and the minimum sum
rate that distortion would have cost, for sweeping the tradeoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import BITS_PER_NAT, ConvergenceParams
from .region import sum_rate_distortion

DIVERGENCE_FACTOR = 1e6


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


@dataclass(frozen=True, eq=False)
class SyntheticProblem:
    """Least-squares instance with its curvature and optimum precomputed.

    loss(w) = ||design_matrix w - targets||^2 / (2 m); smoothness is the
    largest eigenvalue of design_matrix^T design_matrix / m (the gradient's
    Lipschitz constant) and optimum_loss the loss at the least-squares
    solution.
    """

    design_matrix: np.ndarray
    targets: np.ndarray
    smoothness: float = 0.0  # computed, constructor value ignored
    optimum_loss: float = 0.0  # computed, constructor value ignored

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.design_matrix, dtype=float))
        y = np.atleast_1d(np.asarray(self.targets, dtype=float))
        if a.shape[0] != y.size:
            raise ValueError("targets length must match matrix rows")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
            raise ValueError("problem data must be finite")
        m = a.shape[0]
        top_sv = float(np.linalg.svd(a, compute_uv=False)[0])
        w_star = np.linalg.lstsq(a, y, rcond=None)[0]
        residual = a @ w_star - y
        object.__setattr__(self, "design_matrix", _readonly(a))
        object.__setattr__(self, "targets", _readonly(y))
        object.__setattr__(self, "smoothness", top_sv ** 2 / m)
        object.__setattr__(self, "optimum_loss",
                           float(residual @ residual) / (2.0 * m))

    @property
    def dim(self) -> int:
        return self.design_matrix.shape[1]

    @property
    def data_points(self) -> int:
        return self.design_matrix.shape[0]

    def loss(self, w) -> float:
        r = self.design_matrix @ w - self.targets
        return float(r @ r) / (2.0 * self.data_points)

    def full_gradient(self, w) -> np.ndarray:
        a = self.design_matrix
        return a.T @ (a @ w - self.targets) / self.data_points

    def batch_gradient(self, w, indices) -> np.ndarray:
        a = self.design_matrix[indices]
        return a.T @ (a @ w - self.targets[indices]) / len(indices)


@dataclass(frozen=True, eq=False)
class SgdRunResult:
    iterations_to_target: int
    avg_sum_rate_bits: float  # per dimension; infinite for error-free runs
    loss_history: np.ndarray
    rho: float
    converged: bool
    diverged: bool = False

    def __post_init__(self):
        object.__setattr__(self, "loss_history", _readonly(self.loss_history))


@dataclass(frozen=True)
class RhoSweepEntry:
    rho: float
    median_iterations: float
    mean_rate_bits: float
    converged_fraction: float


@dataclass(frozen=True, eq=False)
class RhoSweep:
    entries: tuple
    runs: tuple  # runs[i][j] is replicate j at grid point i

    def to_csv(self) -> str:
        lines = ["rho,median_iterations,mean_rate_bits,converged_fraction"]
        for e in self.entries:
            lines.append(f"{float(e.rho)!r},{float(e.median_iterations)!r},"
                         f"{float(e.mean_rate_bits)!r},{float(e.converged_fraction)!r}")
        return "\n".join(lines) + "\n"


def make_problem(dim: int, data_points: int, condition_number: float,
                 seed, noise_scale: float = 1.0) -> SyntheticProblem:
    """Random least-squares instance with a controlled singular spectrum.

    Singular values are log-spaced across the requested condition number
    and scaled so the smoothness constant is exactly 1; targets come from a
    random planted solution plus Gaussian noise, so the optimum loss is
    positive unless noise_scale is 0.  Deterministic for a given seed.
    """
    p, m = int(dim), int(data_points)
    if not m >= p >= 1:
        raise ValueError("need data_points >= dim >= 1")
    cond = float(condition_number)
    if cond < 1.0:
        raise ValueError("condition_number must be at least 1")
    rng = np.random.default_rng(seed)
    basis_left, _ = np.linalg.qr(rng.standard_normal((m, p)))
    basis_right, _ = np.linalg.qr(rng.standard_normal((p, p)))
    singular = np.geomspace(1.0, 1.0 / cond, p) * math.sqrt(m)
    matrix = (basis_left * singular) @ basis_right.T
    planted = rng.standard_normal(p)
    targets = matrix @ planted + float(noise_scale) * rng.standard_normal(m)
    return SyntheticProblem(design_matrix=matrix, targets=targets)


def theory_step_size(params: ConvergenceParams, distortion: float,
                     iterations: int) -> float:
    """Constant step size from the convergence analysis,
    gamma / (beta + 1) with gamma = A sqrt(2 / (D T))."""
    d = float(distortion)
    t = int(iterations)
    if d <= 0.0 or t < 1:
        raise ValueError("need positive distortion and iterations")
    gamma = math.sqrt(params.radius_sq) * math.sqrt(2.0 / (d * t))
    return gamma / (params.smoothness + 1.0)


def run(problem: SyntheticProblem, num_workers: int, batch_size: int,
        learning_rate: float, rho: float, target_gap: float, max_iters: int,
        seed, noise_mode: str = "aggregate") -> SgdRunResult:
    """One distributed SGD run with calibrated estimator noise.

    Per iteration: each worker draws a mini-batch uniformly with
    replacement from its own stream (batch_size >= data_points switches to
    the exact full dataset), sigma_n2 is the Bessel-corrected inter-worker
    variance of the local gradients pooled over entries, sigma_x2 the mean
    square entry of the exact full gradient, and the minimum sum rate for
    D(t) is logged in bits per dimension.  The aggregate mean is then
    perturbed: noise_mode "aggregate" adds one Gaussian vector with
    per-entry variance rho sigma_n2 / K, "per-worker" adds independent
    variance rho sigma_n2 noise to every local gradient before averaging
    (the two match in distribution).  At rho = 0 no noise is drawn and the
    run is plain mini-batch SGD.

    Streams: one child sequence per worker, in worker order, then one for
    the aggregate perturbation; results are bit-identical per seed.  The
    run stops once loss - optimum_loss <= target_gap; blowing past 10^6
    times the initial loss counts as divergence.  Non-converged runs report
    iterations_to_target = max_iters.
    """
    k = int(num_workers)
    b = int(batch_size)
    rho = float(rho)
    if k < 1 or b < 1 or int(max_iters) < 1:
        raise ValueError("num_workers, batch_size, max_iters must be positive")
    if not (learning_rate > 0.0 and target_gap > 0.0 and rho >= 0.0):
        raise ValueError("need learning_rate > 0, target_gap > 0, rho >= 0")
    if noise_mode not in ("aggregate", "per-worker"):
        raise ValueError("noise_mode must be 'aggregate' or 'per-worker'")
    m = problem.data_points
    p = problem.dim
    children = _seed_sequence(seed).spawn(k + 1)
    worker_rngs = [np.random.default_rng(c) for c in children[:k]]
    noise_rng = np.random.default_rng(children[k])
    full_batch = b >= m

    w = np.zeros(p)
    initial_loss = problem.loss(w)
    losses = [initial_loss]
    rates = []
    converged = False
    diverged = False
    iterations = int(max_iters)
    for t in range(int(max_iters)):
        loss = losses[-1]
        if loss - problem.optimum_loss <= target_gap:
            converged = True
            iterations = t
            break
        if loss > DIVERGENCE_FACTOR * max(initial_loss, 1.0):
            diverged = True
            break
        g_full = problem.full_gradient(w)
        sigma_x2 = float(g_full @ g_full) / p
        if full_batch:
            local = np.tile(g_full, (k, 1))
        else:
            local = np.stack([
                problem.batch_gradient(w, worker_rngs[i].integers(0, m, size=b))
                for i in range(k)
            ])
        g_bar = local.mean(axis=0)
        if k > 1:
            dev = local - g_bar
            sigma_n2 = float(np.sum(dev * dev)) / ((k - 1) * p)
        else:
            sigma_n2 = 0.0
        if rho > 0.0 and sigma_n2 > 0.0:
            d_t = sigma_n2 * (1.0 + rho) / k
            rates.append(BITS_PER_NAT
                         * sum_rate_distortion(sigma_x2, sigma_n2, k, d_t))
            if noise_mode == "aggregate":
                g_hat = g_bar + noise_rng.standard_normal(p) \
                    * math.sqrt(rho * sigma_n2 / k)
            else:
                noisy = local + np.stack([
                    worker_rngs[i].standard_normal(p) for i in range(k)
                ]) * math.sqrt(rho * sigma_n2)
                g_hat = noisy.mean(axis=0)
        else:
            rates.append(math.inf)  # error-free forwarding has no finite rate
            g_hat = g_bar
        w = w - learning_rate * g_hat
        losses.append(problem.loss(w))

    avg_rate = math.fsum(rates) / len(rates) if rates else 0.0
    return SgdRunResult(iterations_to_target=iterations,
                        avg_sum_rate_bits=avg_rate,
                        loss_history=np.array(losses), rho=rho,
                        converged=converged, diverged=diverged)


def sweep_rho(problem: SyntheticProblem, num_workers: int, rho_grid,
              replicates: int, seed, *, batch_size: int,
              learning_rate: float, target_gap: float, max_iters: int,
              noise_mode: str = "aggregate") -> RhoSweep:
    """Replicated runs across a grid of noise ratios.

    Seeds are spawned once in (grid point, replicate) order, so adding
    grid points or replicates never reshuffles existing runs.  Each entry
    aggregates its replicates by median iterations, mean rate, and the
    fraction that reached the target.
    """
    grid = [float(r) for r in rho_grid]
    reps = int(replicates)
    if not grid:
        raise ValueError("rho grid must be nonempty")
    if reps < 1:
        raise ValueError("replicates must be positive")
    children = _seed_sequence(seed).spawn(len(grid) * reps)
    entries = []
    all_runs = []
    for i, rho in enumerate(grid):
        row = tuple(
            run(problem, num_workers, batch_size, learning_rate, rho,
                target_gap, max_iters, children[i * reps + j], noise_mode)
            for j in range(reps)
        )
        all_runs.append(row)
        iters = [r.iterations_to_target for r in row]
        mean_rate = math.fsum(r.avg_sum_rate_bits for r in row) / reps
        entries.append(RhoSweepEntry(
            rho=rho,
            median_iterations=float(np.median(iters)),
            mean_rate_bits=mean_rate,
            converged_fraction=sum(r.converged for r in row) / reps,
        ))
    return RhoSweep(entries=tuple(entries), runs=tuple(all_runs))
