"""Monte Carlo validation of the additive-noise quantization scheme.

Worker k forwards U_k = Y_k + V_k, where V_k is independent Gaussian
quantization noise sized so the worker's auxiliary rate equals its budget
r_k; the fusion center takes an inverse-variance weighted average, which is
the minimum-variance unbiased estimate of the hidden gradient X.  This
module builds those test channels, simulates the scheme to confirm the
predicted distortion and unbiasedness, and evaluates the Gaussian
information quantities the scheme is supposed to meet with equality.

All rates are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import GaussianLayer, LayeredGaussianSpec, NoiseQuantRates, z_from_r
from .region import _validate_rates, _validate_subset

CHUNK = 1 << 17  # fixed simulation batch so results never depend on M's factorization


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TestChannelDesign:
    """Quantization-noise variances and decoder weights for each worker.

    Workers with rate zero send nothing: their aux_noise_var is infinite
    and their decoder weight is zero.  Per layer the weights sum to one
    (unbiasedness) and the predicted distortion is the inverse of the total
    precision 1 / sum_k (noise_var + aux_noise_var)^-1.
    """

    aux_noise_var: np.ndarray  # (K, L)
    decoder_weights: np.ndarray  # (K, L)
    predicted_distortion: np.ndarray  # (L,)

    def __post_init__(self):
        object.__setattr__(self, "aux_noise_var", _readonly(self.aux_noise_var))
        object.__setattr__(self, "decoder_weights", _readonly(self.decoder_weights))
        object.__setattr__(
            self, "predicted_distortion",
            _readonly(np.atleast_1d(self.predicted_distortion)))


@dataclass(frozen=True, eq=False)
class SimReport:
    samples: int
    empirical_bias: np.ndarray  # (L,)
    empirical_mse: np.ndarray  # (L,)
    mse_std_err: np.ndarray  # (L,)
    regression_slope: np.ndarray  # (L,) OLS slope of the estimate on X

    def __post_init__(self):
        for name in ("empirical_bias", "empirical_mse", "mse_std_err",
                     "regression_slope"):
            object.__setattr__(self, name, _readonly(np.atleast_1d(getattr(self, name))))


@dataclass(frozen=True)
class InfoQuantities:
    mi_x_xhat: float  # nats
    cond_var_bound: float
    cond_var_actual: float


@dataclass(frozen=True)
class InfoInequality:
    mutual_information: float  # nats, I(X; forwarded signals of the subset)
    lhs: float
    rhs: float
    holds: bool


def design_test_channels(spec: LayeredGaussianSpec,
                         rates: NoiseQuantRates) -> TestChannelDesign:
    """Size the per-worker quantization noises for the given rate budgets.

    Inverting r = 0.5 ln(1 + noise_var / aux_var) gives
    aux_var = noise_var / (exp(2 r) - 1).  A worker's precision
    1 / (noise_var + aux_var) then equals z(r), so the predicted distortion
    is exactly the inverse total precision of the operating point.  A layer
    where every rate is zero has no unbiased estimate and is rejected.
    """
    if rates.rates.shape != spec.noise_var.shape:
        raise ValueError(
            f"rates shape {rates.rates.shape} does not match "
            f"spec shape {spec.noise_var.shape}")
    r = rates.rates
    precision = z_from_r(r, spec.noise_var)  # 1 / (noise_var + aux_var)
    totals = precision.sum(axis=0)
    for l, total in enumerate(totals):
        if total <= 0.0:
            raise ValueError(
                f"layer {l}: every worker rate is zero, so no unbiased "
                f"estimate of the gradient exists")
    with np.errstate(divide="ignore"):
        aux = np.where(r > 0.0, spec.noise_var / np.expm1(2.0 * r), np.inf)
    return TestChannelDesign(
        aux_noise_var=aux,
        decoder_weights=precision / totals,
        predicted_distortion=1.0 / totals,
    )


def simulate(spec: LayeredGaussianSpec, design: TestChannelDesign,
             num_samples: int, seed) -> SimReport:
    """Draw the scheme end to end and report empirical error statistics.

    Per layer: X ~ N(0, sigma_x2), observation noises N_k, quantization
    noises V_k, estimate Xhat = sum_k alpha_k (X + N_k + V_k).  Streams are
    spawned from the seed in a fixed per-layer, per-worker order and
    consumed in fixed-size chunks, so the report is bit-identical for a
    given (seed, parameters) regardless of how callers schedule the work.
    Sums are accumulated chunkwise with exact cross-chunk summation; at
    10^4 or more samples the statistics are meaningful.  Rate-zero workers
    are skipped (their weight is zero).
    """
    m = int(num_samples)
    if m < 1:
        raise ValueError("num_samples must be a positive integer")
    if design.decoder_weights.shape != spec.noise_var.shape:
        raise ValueError("design does not match spec shape")
    n_layers = spec.num_layers
    bias = np.empty(n_layers)
    mse = np.empty(n_layers)
    std_err = np.empty(n_layers)
    slope = np.empty(n_layers)
    master = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    layer_seeds = master.spawn(n_layers)

    for l in range(n_layers):
        children = layer_seeds[l].spawn(spec.num_workers + 1)
        gen_x = np.random.default_rng(children[0])
        worker_gens = [np.random.default_rng(c) for c in children[1:]]
        weights = design.decoder_weights[:, l]
        active = np.nonzero(weights > 0.0)[0]
        sd_x = math.sqrt(spec.global_var[l])
        sd_n = np.sqrt(spec.noise_var[:, l])
        sd_v = np.sqrt(design.aux_noise_var[:, l])

        partial = {key: [] for key in ("e", "e2", "e4", "x", "x2", "xe")}
        done = 0
        while done < m:
            n = min(CHUNK, m - done)
            x = gen_x.standard_normal(n) * sd_x
            err = np.zeros(n)
            for k in active:
                obs_noise = worker_gens[k].standard_normal(n) * sd_n[k]
                quant_noise = worker_gens[k].standard_normal(n) * sd_v[k]
                err += weights[k] * (obs_noise + quant_noise)
            e2 = err * err
            partial["e"].append(float(np.sum(err)))
            partial["e2"].append(float(np.sum(e2)))
            partial["e4"].append(float(np.sum(e2 * e2)))
            partial["x"].append(float(np.sum(x)))
            partial["x2"].append(float(np.sum(x * x)))
            partial["xe"].append(float(np.sum(x * err)))
            done += n
        sums = {key: math.fsum(vals) for key, vals in partial.items()}

        bias[l] = sums["e"] / m
        mse[l] = sums["e2"] / m
        if m > 1:
            var_e2 = max(sums["e4"] - m * mse[l] ** 2, 0.0) / (m - 1)
            std_err[l] = math.sqrt(var_e2 / m)
        else:
            std_err[l] = math.inf
        # xhat = x + err, so the OLS slope of xhat on x uses shifted sums
        cov = (sums["x2"] + sums["xe"]) - sums["x"] * (sums["x"] + sums["e"]) / m
        var = sums["x2"] - sums["x"] ** 2 / m
        slope[l] = cov / var if var > 0.0 else math.nan

    return SimReport(samples=m, empirical_bias=bias, empirical_mse=mse,
                     mse_std_err=std_err, regression_slope=slope)


def information_quantities(layer: GaussianLayer, design: TestChannelDesign,
                           layer_index: int = 0) -> InfoQuantities:
    """Gaussian information quantities of the scheme at its predicted D.

    The estimate decomposes as Xhat = X + W with W independent of X and
    Var W = D, so I(X; Xhat) = 0.5 ln(1 + sigma_x2 / D) and the posterior
    variance of X given Xhat is (1/sigma_x2 + 1/D)^-1.  The generic lower
    bound on the posterior variance of any estimate with this mutual
    information, sigma_x2 exp(-2 I), is met with equality here.
    """
    d = float(design.predicted_distortion[layer_index])
    mi = 0.5 * math.log1p(layer.sigma_x2 / d)
    return InfoQuantities(
        mi_x_xhat=mi,
        cond_var_bound=layer.sigma_x2 * math.exp(-2.0 * mi),
        cond_var_actual=1.0 / (1.0 / layer.sigma_x2 + 1.0 / d),
    )


def subset_info_inequality(layer: GaussianLayer, rates, subset) -> InfoInequality:
    """Exponentiated mutual-information inequality for a worker subset.

    For messages C_A from subset A, any scheme satisfies
    (1/sigma_x2) exp(2 I(X; C_A)) <= 1/sigma_x2 + sum_{k in A} z_k.  For the
    Gaussian test channels I(X; U_A) is available in closed form and the
    inequality is tight; ``holds`` allows a 1e-12 absolute cushion.
    """
    r = _validate_rates(layer, rates)
    idx = _validate_subset(layer.num_workers, subset)
    z = z_from_r(r, layer.noise_var)
    z_sum = math.fsum(z[list(idx)]) if idx else 0.0
    inv_sx2 = 1.0 / layer.sigma_x2
    mi = 0.5 * math.log1p(layer.sigma_x2 * z_sum)
    lhs = inv_sx2 * math.exp(2.0 * mi)
    rhs = inv_sx2 + z_sum
    return InfoInequality(mutual_information=mi, lhs=lhs, rhs=rhs,
                          holds=lhs <= rhs + 1e-12)
