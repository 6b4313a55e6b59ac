"""Communication limits of distributed gradient aggregation.

The package computes the minimum number of bits workers must send so that
a coordinator can reconstruct the average gradient to a target mean-squared
error, and turns those limits into training cost plans:

* rate regions for jointly Gaussian gradient models (``region``),
* weighted-sum optimal rate allocations on the boundary (``boundary``),
* Monte Carlo verification of the achieving quantization scheme
  (``achievability``),
* iteration counts and total-bit budgets for SGD-style training
  (``planning``),
* statistics estimation from exported gradient data (``tracestats``),
* a synthetic distributed SGD simulator (``sgdsim``), and
* a command line front end (``aggrate`` / ``python -m aggrate``).

Rates are handled in nats internally; ``BITS_PER_NAT`` converts for display.
"""

from .achievability import (
    InfoInequality,
    InfoQuantities,
    SimReport,
    TestChannelDesign,
    design_test_channels,
    information_quantities,
    simulate,
    subset_info_inequality,
)
from .boundary import (
    BoundarySolution,
    allocate_rates,
    kkt_residual,
    solve_boundary,
)
from .model import (
    BITS_PER_NAT,
    LN2,
    ConvergenceParams,
    DistortionBudget,
    GaussianLayer,
    GradientTrace,
    InfeasibleDistortionError,
    LayeredGaussianSpec,
    NoiseQuantRates,
    RateAllocation,
    SolverConvergenceError,
    WeightVector,
    min_distortion,
    r_from_z,
    z_from_r,
)
from .planning import (
    CostPlan,
    DistortionSweep,
    SignSgdComparison,
    convergence_gap,
    iterations_lower_bound,
    iterations_required,
    optimal_distortion_static,
    per_iteration_cost,
    plan_static,
    plan_trace,
    signsgd_comparison,
)
from .region import (
    Membership,
    SubsetAudit,
    SubsetBound,
    SurfaceCheck,
    WaterFilling,
    check_surface,
    corner_point,
    heterogeneous_sum_rate,
    independent_sum_rate,
    membership_test,
    min_subset_slack,
    order_from_weights,
    subset_rate_bound,
    sum_rate_distortion,
)
from .sgdsim import (
    RhoSweep,
    RhoSweepEntry,
    SgdRunResult,
    SyntheticProblem,
    make_problem,
    sweep_rho,
    theory_step_size,
)
from .tracestats import (
    GaussianFit,
    GradientSampleSet,
    StatEstimates,
    estimate_stats,
    gaussian_fit,
    load_samples,
    load_trace,
    pearson,
    spec_from_samples,
)

__all__ = [
    "BITS_PER_NAT",
    "LN2",
    "BoundarySolution",
    "ConvergenceParams",
    "CostPlan",
    "DistortionBudget",
    "DistortionSweep",
    "GaussianFit",
    "GaussianLayer",
    "GradientTrace",
    "GradientSampleSet",
    "InfeasibleDistortionError",
    "InfoInequality",
    "InfoQuantities",
    "LayeredGaussianSpec",
    "Membership",
    "NoiseQuantRates",
    "RateAllocation",
    "RhoSweep",
    "RhoSweepEntry",
    "SgdRunResult",
    "SignSgdComparison",
    "SimReport",
    "SolverConvergenceError",
    "StatEstimates",
    "SubsetAudit",
    "SubsetBound",
    "SurfaceCheck",
    "SyntheticProblem",
    "TestChannelDesign",
    "WaterFilling",
    "WeightVector",
    "allocate_rates",
    "check_surface",
    "convergence_gap",
    "corner_point",
    "design_test_channels",
    "estimate_stats",
    "gaussian_fit",
    "heterogeneous_sum_rate",
    "independent_sum_rate",
    "information_quantities",
    "iterations_lower_bound",
    "iterations_required",
    "kkt_residual",
    "load_samples",
    "load_trace",
    "make_problem",
    "membership_test",
    "min_distortion",
    "min_subset_slack",
    "optimal_distortion_static",
    "order_from_weights",
    "pearson",
    "per_iteration_cost",
    "plan_static",
    "plan_trace",
    "r_from_z",
    "signsgd_comparison",
    "simulate",
    "solve_boundary",
    "spec_from_samples",
    "subset_info_inequality",
    "subset_rate_bound",
    "sum_rate_distortion",
    "sweep_rho",
    "theory_step_size",
    "z_from_r",
]

__version__ = "0.1.0"
