"""Shared domain types and unit conventions.

Every rate in this package is expressed in nats per source symbol;
conversion to bits happens only at the CLI boundary.  Variances are in
gradient-units squared.  All types are immutable after construction and
all operations are pure functions, so everything here is safe to share
across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LN2 = math.log(2.0)
#: multiply a rate in nats by this to obtain bits
BITS_PER_NAT = 1.0 / LN2


class InfeasibleDistortionError(ValueError):
    """Raised when a requested distortion is at or below the achievable minimum."""

    def __init__(self, requested: float, minimum: float, context: str = ""):
        self.requested = float(requested)
        self.minimum = float(minimum)
        msg = (
            f"distortion {requested!r} is infeasible: must exceed the minimum "
            f"achievable distortion {minimum!r}"
        )
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class SolverConvergenceError(RuntimeError):
    """Raised when an iterative solver fails to meet its residual contract."""

    def __init__(self, residual: float, tolerance: float, iterations: int):
        self.residual = float(residual)
        self.tolerance = float(tolerance)
        self.iterations = int(iterations)
        super().__init__(
            f"solver stopped after {iterations} iterations with residual "
            f"{residual:.3e} > tolerance {tolerance:.3e}"
        )


def _readonly(a: np.ndarray, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _check_positive_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)) or np.any(a <= 0.0):
        raise ValueError(f"{name} must be strictly positive and finite")


@dataclass(frozen=True, eq=False)
class GaussianLayer:
    """Single layer of the observation model: one source variance, K noise variances."""

    sigma_x2: float
    noise_var: np.ndarray  # shape (K,)

    def __post_init__(self):
        object.__setattr__(self, "sigma_x2", float(self.sigma_x2))
        object.__setattr__(self, "noise_var", _readonly(np.atleast_1d(self.noise_var)))
        if not (math.isfinite(self.sigma_x2) and self.sigma_x2 > 0):
            raise ValueError("sigma_x2 must be strictly positive and finite")
        if self.noise_var.ndim != 1 or self.noise_var.size == 0:
            raise ValueError("noise_var must be a non-empty vector")
        _check_positive_finite(self.noise_var, "noise_var")

    @property
    def num_workers(self) -> int:
        return self.noise_var.size

    def min_distortion(self) -> float:
        """Harmonic floor (sum of per-worker precisions, inverted) for this layer."""
        return 1.0 / float(np.sum(1.0 / self.noise_var))


@dataclass(frozen=True, eq=False)
class LayeredGaussianSpec:
    """Per-layer source variances and per-worker, per-layer observation-noise variances.

    ``global_var[l]`` is the variance of the hidden (global) gradient on layer l;
    ``noise_var[k, l]`` is the variance of worker k's additive observation noise
    on layer l.
    """

    global_var: np.ndarray  # shape (L,)
    noise_var: np.ndarray  # shape (K, L)

    def __post_init__(self):
        gv = np.atleast_1d(np.asarray(self.global_var, dtype=float))
        nv = np.asarray(self.noise_var, dtype=float)
        if nv.ndim == 1:
            nv = nv[:, None]
        if gv.ndim != 1 or nv.ndim != 2:
            raise ValueError("global_var must be a vector, noise_var a K x L matrix")
        if nv.shape[1] != gv.size:
            raise ValueError(
                f"noise_var has {nv.shape[1]} layers but global_var has {gv.size}"
            )
        _check_positive_finite(gv, "global_var")
        _check_positive_finite(nv, "noise_var")
        object.__setattr__(self, "global_var", _readonly(gv))
        object.__setattr__(self, "noise_var", _readonly(nv))

    @classmethod
    def homogeneous(cls, sigma_x2: float, sigma_n2: float, num_workers: int,
                    num_layers: int = 1) -> "LayeredGaussianSpec":
        return cls(
            global_var=np.full(num_layers, float(sigma_x2)),
            noise_var=np.full((num_workers, num_layers), float(sigma_n2)),
        )

    @property
    def num_workers(self) -> int:
        return self.noise_var.shape[0]

    @property
    def num_layers(self) -> int:
        return self.noise_var.shape[1]

    def layer(self, l: int) -> GaussianLayer:
        return GaussianLayer(self.global_var[l], self.noise_var[:, l])

    def layers(self) -> list[GaussianLayer]:
        return [self.layer(l) for l in range(self.num_layers)]


def min_distortion(spec: LayeredGaussianSpec) -> float:
    """Infimum of achievable estimator variance: sum over layers of the
    inverse total noise precision.  Any distortion budget at or below this
    value is infeasible (it would require unbounded rates)."""
    return float(sum(layer.min_distortion() for layer in spec.layers()))


@dataclass(frozen=True, eq=False)
class DistortionBudget:
    """Total estimator-variance budget, optionally split per layer."""

    total: float
    per_layer: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "total", float(self.total))
        if not (math.isfinite(self.total) and self.total > 0):
            raise ValueError("total distortion must be strictly positive and finite")
        if self.per_layer is not None:
            pl = np.atleast_1d(np.asarray(self.per_layer, dtype=float))
            _check_positive_finite(pl, "per_layer")
            if not math.isclose(float(np.sum(pl)), self.total, rel_tol=1e-12):
                raise ValueError(
                    f"per-layer distortions sum to {float(np.sum(pl))!r}, "
                    f"not the stated total {self.total!r}"
                )
            object.__setattr__(self, "per_layer", _readonly(pl))

    def check_feasible(self, spec: LayeredGaussianSpec) -> None:
        """Strict feasibility gate: the budget must exceed the harmonic floor
        (equality needs unbounded rates and is rejected)."""
        floor = min_distortion(spec)
        if not self.total > floor:
            raise InfeasibleDistortionError(self.total, floor)
        if self.per_layer is not None:
            if self.per_layer.size != spec.num_layers:
                raise ValueError("per_layer length does not match spec layers")
            for l, (d_l, layer) in enumerate(zip(self.per_layer, spec.layers())):
                if not d_l > layer.min_distortion():
                    raise InfeasibleDistortionError(
                        d_l, layer.min_distortion(), context=f"layer {l}"
                    )


def z_from_r(r, noise_var):
    """Precision contribution z = (1 - exp(-2 r)) / sigma_N^2 of a worker
    spending rate r (nats) on describing its observation noise.

    Strictly increasing in r, from 0 at r = 0 to the open supremum
    1 / sigma_N^2 as r -> infinity.  Accepts scalars or arrays.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("rates must be nonnegative")
    out = -np.expm1(-2.0 * r) / np.asarray(noise_var, dtype=float)
    return float(out) if out.ndim == 0 else out


def r_from_z(z, noise_var):
    """Inverse of :func:`z_from_r`; rejects z outside [0, 1/sigma_N^2)."""
    z = np.asarray(z, dtype=float)
    nv = np.asarray(noise_var, dtype=float)
    if np.any(z < 0) or np.any(z * nv >= 1.0):
        raise ValueError("z must lie in [0, 1/noise_var)")
    out = -0.5 * np.log1p(-nv * z)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class NoiseQuantRates:
    """Per-worker, per-layer auxiliary rates (nats) spent quantizing
    observation noise; these parametrize the rate region."""

    rates: np.ndarray  # shape (K, L)

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        if r.ndim != 2:
            raise ValueError("rates must be a K x L matrix")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("rates must be nonnegative and finite")
        object.__setattr__(self, "rates", _readonly(r))

    @property
    def num_workers(self) -> int:
        return self.rates.shape[0]

    @property
    def num_layers(self) -> int:
        return self.rates.shape[1]

    def z(self, spec: LayeredGaussianSpec) -> np.ndarray:
        """Derived precision view z[k, l] in [0, 1/noise_var[k, l])."""
        if self.rates.shape != spec.noise_var.shape:
            raise ValueError("rates shape does not match spec")
        return z_from_r(self.rates, spec.noise_var)


@dataclass(frozen=True, eq=False)
class RateAllocation:
    """Communication rates per worker (nats per source symbol), optionally
    broken down per layer (rows must sum to the per-worker totals)."""

    per_worker: np.ndarray  # shape (K,)
    per_worker_layer: np.ndarray | None = None  # shape (K, L)

    def __post_init__(self):
        pw = np.atleast_1d(np.asarray(self.per_worker, dtype=float))
        if pw.ndim != 1 or np.any(pw < 0) or not np.all(np.isfinite(pw)):
            raise ValueError("per_worker must be a vector of nonnegative rates")
        object.__setattr__(self, "per_worker", _readonly(pw))
        if self.per_worker_layer is not None:
            pwl = np.asarray(self.per_worker_layer, dtype=float)
            if pwl.ndim != 2 or pwl.shape[0] != pw.size:
                raise ValueError("per_worker_layer must be K x L")
            rows = np.sum(pwl, axis=1)
            scale = np.maximum(np.abs(pw), 1.0)
            if np.any(np.abs(rows - pw) > 1e-12 * scale):
                raise ValueError("per-layer rows do not sum to per-worker rates")
            object.__setattr__(self, "per_worker_layer", _readonly(pwl))

    @property
    def num_workers(self) -> int:
        return self.per_worker.size

    def total(self) -> float:
        return float(np.sum(self.per_worker))


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Strictly positive per-worker weights: dimensionless coefficients for
    tracing the region boundary, or cost-per-nat when allocating rates."""

    weights: np.ndarray  # shape (K,)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.ndim != 1:
            raise ValueError("weights must be a vector")
        _check_positive_finite(w, "weights")
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def num_workers(self) -> int:
        return self.weights.size


@dataclass(frozen=True, eq=False)
class GradientTrace:
    """Time series of gradient statistics (sigma_X^2(t), sigma_N^2(t)) that
    drives per-iteration cost planning."""

    iterations: np.ndarray  # strictly increasing ints
    sigma_x2: np.ndarray
    sigma_n2: np.ndarray

    def __post_init__(self):
        it = np.atleast_1d(np.asarray(self.iterations))
        sx = np.atleast_1d(np.asarray(self.sigma_x2, dtype=float))
        sn = np.atleast_1d(np.asarray(self.sigma_n2, dtype=float))
        if not (it.size == sx.size == sn.size) or it.size == 0:
            raise ValueError("trace arrays must be non-empty and equal length")
        if np.any(it[1:] <= it[:-1]):
            raise ValueError("iterations must be strictly increasing")
        _check_positive_finite(sx, "sigma_x2")
        _check_positive_finite(sn, "sigma_n2")
        object.__setattr__(self, "iterations",
                           _readonly(it.astype(np.int64), dtype=np.int64))
        object.__setattr__(self, "sigma_x2", _readonly(sx))
        object.__setattr__(self, "sigma_n2", _readonly(sn))

    def __len__(self) -> int:
        return self.iterations.size


@dataclass(frozen=True)
class ConvergenceParams:
    """Inputs to the iteration-count bound for convex, smooth objectives.

    radius_sq is the squared diameter bound A^2 on the iterate set around the
    initial point, smoothness the gradient Lipschitz constant, target_gap the
    required expected optimality gap, model_dim the number of parameters.
    The step-size constants are derived on demand by the SGD simulator.
    """

    radius_sq: float
    smoothness: float
    target_gap: float
    model_dim: int = 1

    def __post_init__(self):
        for name in ("radius_sq", "smoothness", "target_gap"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be strictly positive and finite")
        if int(self.model_dim) < 1:
            raise ValueError("model_dim must be a positive integer")
