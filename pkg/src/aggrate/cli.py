"""Command line front end.

Every module is exposed as a subcommand that prints one JSON record (the
output envelope: command, parameters, results, units, seed) to standard
output and can additionally write a CSV table via --output.  Rates are
displayed in bits by default; --units nats switches both the interpretation
of rate-valued inputs and the emitted results, and the two displays differ
exactly by the factor log2(e).

Exit codes: 0 success, 1 usage or input error, 2 infeasible parameters
(the message names the feasibility bound), 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv as _csv
import io
import json
import math
import os
import secrets
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .achievability import design_test_channels, simulate
from .boundary import allocate_rates, solve_boundary
from .model import (
    BITS_PER_NAT,
    LN2,
    ConvergenceParams,
    DistortionBudget,
    GaussianLayer,
    InfeasibleDistortionError,
    LayeredGaussianSpec,
    NoiseQuantRates,
    SolverConvergenceError,
    WeightVector,
    min_distortion,
)
from .planning import (
    optimal_distortion_static,
    plan_static,
    plan_trace,
    signsgd_comparison,
)
from .region import (
    check_surface,
    corner_point,
    heterogeneous_sum_rate,
    independent_sum_rate,
    order_from_weights,
    sum_rate_distortion,
)
from .sgdsim import make_problem, run as run_sgd, sweep_rho
from .tracestats import estimate_stats, gaussian_fit, load_samples, load_trace, pearson

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_NO_CONVERGENCE = 3

OUTPUT_DIR_VAR = "AGGRATE_OUTPUT_DIR"


@dataclass(frozen=True)
class OutputEnvelope:
    command: str
    parameters: dict
    results: dict
    units: str
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "command": self.command,
                "parameters": self.parameters,
                "results": self.results,
                "units": self.units,
                "seed": self.seed,
            },
            sort_keys=True,
        )


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors by default; the CLI contract
    # reserves 2 for infeasible parameters
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def _convert_rates(results: dict, rate_keys, units: str) -> dict:
    """Results are built in nats; bit display multiplies rate keys once."""
    out = {}
    for key, value in results.items():
        if key in rate_keys and units == "bits":
            scaled = np.asarray(value, dtype=float) * BITS_PER_NAT
            value = float(scaled) if scaled.ndim == 0 else scaled
        out[key] = _jsonable(value)
    return out


def _floats(text: str):
    try:
        values = [float(piece) for piece in text.split(",") if piece.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated numbers, got '{text}'") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _matrix(text: str) -> np.ndarray:
    """Workers x layers matrix: commas within a layer, ';' between layers."""
    layers = [_floats(piece) for piece in text.split(";") if piece.strip()]
    if not layers:
        raise argparse.ArgumentTypeError("expected at least one layer")
    width = len(layers[0])
    if any(len(col) != width for col in layers):
        raise argparse.ArgumentTypeError("every layer needs the same worker count")
    return np.array(layers, dtype=float).T


def _grid(text: str) -> np.ndarray:
    """Comma list, 'lo:hi:n' for linear, or 'log:lo:hi:n' for log spacing."""
    spec = text.split(":")
    try:
        if len(spec) == 4 and spec[0] == "log":
            return np.geomspace(float(spec[1]), float(spec[2]), int(spec[3]))
        if len(spec) == 3:
            return np.linspace(float(spec[0]), float(spec[1]), int(spec[2]))
        return np.array(_floats(text))
    except (ValueError, argparse.ArgumentTypeError):
        raise argparse.ArgumentTypeError(
            f"expected values, lo:hi:n, or log:lo:hi:n, got '{text}'") from None


def _resolve_seed(value) -> int:
    # randomized commands always report the seed they ran with
    return secrets.randbits(63) if value is None else int(value)


def _in_factor(units: str) -> float:
    return LN2 if units == "bits" else 1.0


def _results_csv(results: dict) -> str:
    buf = io.StringIO()
    writer = _csv.writer(buf)
    writer.writerow(["key", "value"])
    for key in sorted(results):
        writer.writerow([key, json.dumps(results[key])])
    return buf.getvalue()


def _cmd_sumrate(args):
    sn = args.sigma_n2
    params = {"sigma_x2": args.sigma_x2, "sigma_n2": sn,
              "workers": args.workers, "distortion": args.distortion}
    if len(sn) == 1:
        if args.workers is None:
            raise ValueError("--workers is required with a scalar --sigma-n2")
        k = args.workers
        rate = sum_rate_distortion(args.sigma_x2, sn[0], k, args.distortion)
        rin = independent_sum_rate(args.sigma_x2, sn[0], k, args.distortion)
        results = {
            "sum_rate": rate,
            "independent_sum_rate": rin,
            "correlation_gain": rin - rate,
            "min_distortion": sn[0] / k,
        }
        rate_keys = {"sum_rate", "independent_sum_rate", "correlation_gain"}
    else:
        if args.workers is not None and args.workers != len(sn):
            raise ValueError(
                f"--workers {args.workers} contradicts the {len(sn)} "
                f"noise variances given")
        layer = GaussianLayer(args.sigma_x2, np.array(sn))
        wf = heterogeneous_sum_rate(layer, args.distortion)
        results = {
            "sum_rate": wf.sum_rate,
            "per_worker_rates": wf.rates,
            "z": wf.z,
            "water_level": wf.water_level,
            "min_distortion": layer.min_distortion(),
        }
        rate_keys = {"sum_rate", "per_worker_rates"}
    return params, results, rate_keys, None, None


def _cmd_corner(args):
    layer = GaussianLayer(args.sigma_x2, np.array(args.noise_var))
    rates = np.array(args.rates) * _in_factor(args.units)
    params = {"sigma_x2": args.sigma_x2, "noise_var": args.noise_var,
              "rates": args.rates, "weights": args.weights,
              "distortion": args.distortion}
    order = None
    if args.weights is not None:
        if len(args.weights) != layer.num_workers:
            raise ValueError("--weights length must match the worker count")
        order = order_from_weights(args.weights)
    point = corner_point(layer, rates, order=order)
    results = {
        "per_worker_rates": point,
        "total_rate": math.fsum(point),
        "order": (order if order is not None
                  else np.arange(layer.num_workers)).tolist(),
    }
    if args.distortion is not None:
        surf = check_surface(layer, rates, args.distortion)
        results["on_surface"] = surf.on_surface
        results["surface_residual"] = surf.residual
    return params, results, {"per_worker_rates", "total_rate"}, None, None


def _build_spec(args) -> LayeredGaussianSpec:
    return LayeredGaussianSpec(global_var=np.array(args.sigma_x2),
                               noise_var=args.noise_var)


def _boundary_results(spec, sol):
    results = {
        "objective": sol.objective,
        "per_worker_rates": sol.rates.per_worker,
        "layer_distortions": sol.layer_distortions,
        "z": sol.z,
        "kkt_residual": sol.kkt_residual,
        "split_residual": sol.split_residual,
        "min_distortion": min_distortion(spec),
    }
    if spec.num_layers > 1:
        results["per_worker_layer_rates"] = sol.rates.per_worker_layer
    return results


def _cmd_boundary(args):
    spec = _build_spec(args)
    weights = np.array(args.weights) if args.weights is not None \
        else np.ones(spec.num_workers)
    params = {"sigma_x2": args.sigma_x2, "noise_var": args.noise_var,
              "weights": weights, "distortion": args.distortion}
    budget = args.distortion
    if args.layer_distortions is not None:
        budget = DistortionBudget(args.distortion,
                                  per_layer=np.array(args.layer_distortions))
        params["layer_distortions"] = args.layer_distortions
    sol = solve_boundary(spec, WeightVector(weights), budget)
    results = _boundary_results(spec, sol)
    rate_keys = {"objective", "per_worker_rates", "per_worker_layer_rates"}
    return params, results, rate_keys, None, None


def _cmd_allocate(args):
    spec = _build_spec(args)
    costs = np.array(args.costs)
    params = {"sigma_x2": args.sigma_x2, "noise_var": args.noise_var,
              "costs": costs, "distortion": args.distortion}
    sol = allocate_rates(spec, WeightVector(costs), args.distortion)
    results = _boundary_results(spec, sol)
    # the objective is money-per-symbol (cost-per-nat times nats), not a rate
    results["total_cost"] = results.pop("objective")
    rate_keys = {"per_worker_rates", "per_worker_layer_rates"}
    return params, results, rate_keys, None, None


def _cmd_plan(args):
    cparams = ConvergenceParams(radius_sq=args.radius_sq,
                                smoothness=args.smoothness,
                                target_gap=args.target_gap,
                                model_dim=args.model_dim)
    params = {"radius_sq": args.radius_sq, "smoothness": args.smoothness,
              "target_gap": args.target_gap, "model_dim": args.model_dim,
              "workers": args.workers}
    if args.trace is not None:
        if args.rho is None:
            raise ValueError("--rho is required with --trace")
        params.update({"trace": str(args.trace), "rho": args.rho})
        trace = load_trace(args.trace)
        plan = plan_trace(cparams, args.workers, trace, args.rho)
        per_nats = plan.per_iteration_bits * LN2
        results = {
            "iterations": plan.iterations,
            "per_iteration": per_nats,
            "total": plan.total_bits * LN2,
            "distortion": plan.distortion,
            "rho": plan.rho,
            "unbounded": plan.unbounded,
        }
        rows = ["iteration,distortion,cost"]
        rows += [f"{int(t)},{float(d)!r},{float(c)!r}" for t, d, c in
                 zip(trace.iterations, plan.distortion,
                     per_nats * (BITS_PER_NAT if args.units == "bits" else 1.0))]
        return params, results, {"per_iteration", "total"}, \
            "\n".join(rows) + "\n", None
    if args.sigma_x2 is None or args.sigma_n2 is None:
        raise ValueError("static plans need --sigma-x2 and --sigma-n2")
    params.update({"sigma_x2": args.sigma_x2, "sigma_n2": args.sigma_n2})
    if args.distortion_grid is not None:
        params["distortion_grid"] = args.distortion_grid
        sweep = optimal_distortion_static(cparams, args.workers, args.sigma_x2,
                                          args.sigma_n2, args.distortion_grid)
        totals_nats = sweep.total_bits * LN2
        results = {
            "best_distortion": sweep.best_distortion,
            "best_total": sweep.best_plan.total_bits * LN2,
            "best_iterations": sweep.best_plan.iterations,
            "grid": sweep.grid,
            "grid_totals": totals_nats,
        }
        shown = totals_nats * (BITS_PER_NAT if args.units == "bits" else 1.0)
        rows = ["distortion,total_cost"]
        rows += [f"{float(d)!r},{float(c)!r}" for d, c in zip(sweep.grid, shown)]
        return params, results, {"best_total", "grid_totals"}, \
            "\n".join(rows) + "\n", None
    if args.distortion is None:
        raise ValueError("static plans need --distortion or --distortion-grid")
    params["distortion"] = args.distortion
    plan = plan_static(cparams, args.workers, args.sigma_x2, args.sigma_n2,
                       args.distortion)
    results = {
        "distortion": plan.distortion,
        "iterations": plan.iterations,
        "per_iteration": float(plan.per_iteration_bits[0]) * LN2,
        "total": plan.total_bits * LN2,
    }
    return params, results, {"per_iteration", "total"}, None, None


def _cmd_signsgd(args):
    cmp = signsgd_comparison(args.workers, args.sigma_x2, args.sigma_n2)
    params = {"sigma_x2": args.sigma_x2, "sigma_n2": args.sigma_n2,
              "workers": args.workers}
    results = {
        "signsgd_per_dim": cmp.signsgd_bits_per_dim * LN2,
        "ideal_quant": cmp.ideal_quant_bits * LN2,
        "sum_rate_at_signsgd_distortion": cmp.r_sum_bits * LN2,
        "signsgd_distortion": cmp.signsgd_distortion,
    }
    rate_keys = {"signsgd_per_dim", "ideal_quant",
                 "sum_rate_at_signsgd_distortion"}
    return params, results, rate_keys, None, None


def _cmd_simulate_ceo(args):
    spec = _build_spec(args)
    rates = args.rates * _in_factor(args.units)
    if rates.shape != spec.noise_var.shape:
        raise ValueError("--rates must match the noise-var matrix shape")
    seed = _resolve_seed(args.seed)
    design = design_test_channels(spec, NoiseQuantRates(rates))
    report = simulate(spec, design, args.samples, seed)
    params = {"sigma_x2": args.sigma_x2, "noise_var": args.noise_var,
              "rates": args.rates, "samples": args.samples}
    results = {
        "aux_noise_var": design.aux_noise_var,
        "decoder_weights": design.decoder_weights,
        "predicted_distortion": design.predicted_distortion,
        "empirical_bias": report.empirical_bias,
        "empirical_mse": report.empirical_mse,
        "mse_std_err": report.mse_std_err,
        "regression_slope": report.regression_slope,
        "samples": report.samples,
    }
    return params, results, set(), None, seed


def _sgd_problem(args):
    problem_seed = _resolve_seed(args.problem_seed)
    problem = make_problem(args.dim, args.data_points, args.condition_number,
                           problem_seed, noise_scale=args.noise_scale)
    return problem, problem_seed


def _cmd_simulate_sgd(args):
    problem, problem_seed = _sgd_problem(args)
    seed = _resolve_seed(args.seed)
    result = run_sgd(problem, args.workers, args.batch_size,
                     args.learning_rate, args.rho, args.target_gap,
                     args.max_iters, seed, noise_mode=args.noise_mode)
    params = {"dim": args.dim, "data_points": args.data_points,
              "condition_number": args.condition_number,
              "noise_scale": args.noise_scale, "problem_seed": problem_seed,
              "workers": args.workers, "batch_size": args.batch_size,
              "learning_rate": args.learning_rate, "rho": args.rho,
              "target_gap": args.target_gap, "max_iters": args.max_iters,
              "noise_mode": args.noise_mode}
    results = {
        "iterations_to_target": result.iterations_to_target,
        "converged": result.converged,
        "diverged": result.diverged,
        "avg_sum_rate": result.avg_sum_rate_bits * LN2,
        "final_loss": float(result.loss_history[-1]),
        "optimum_loss": problem.optimum_loss,
        "smoothness": problem.smoothness,
    }
    rows = ["iteration,loss"]
    rows += [f"{t},{float(loss)!r}" for t, loss in enumerate(result.loss_history)]
    return params, results, {"avg_sum_rate"}, "\n".join(rows) + "\n", seed


def _cmd_sweep_rho(args):
    problem, problem_seed = _sgd_problem(args)
    seed = _resolve_seed(args.seed)
    sweep = sweep_rho(problem, args.workers, args.rho, args.replicates, seed,
                      batch_size=args.batch_size,
                      learning_rate=args.learning_rate,
                      target_gap=args.target_gap, max_iters=args.max_iters,
                      noise_mode=args.noise_mode)
    params = {"dim": args.dim, "data_points": args.data_points,
              "condition_number": args.condition_number,
              "noise_scale": args.noise_scale, "problem_seed": problem_seed,
              "workers": args.workers, "batch_size": args.batch_size,
              "learning_rate": args.learning_rate, "rho": args.rho,
              "replicates": args.replicates, "target_gap": args.target_gap,
              "max_iters": args.max_iters, "noise_mode": args.noise_mode}
    results = {
        "rho": [e.rho for e in sweep.entries],
        "median_iterations": [e.median_iterations for e in sweep.entries],
        "mean_rate": [e.mean_rate_bits * LN2 for e in sweep.entries],
        "converged_fraction": [e.converged_fraction for e in sweep.entries],
    }
    return params, results, {"mean_rate"}, sweep.to_csv(), seed


def _cmd_stats(args):
    if (args.trace is None) == (args.samples is None):
        raise ValueError("give exactly one of --trace or --samples")
    if args.trace is not None:
        trace = load_trace(args.trace)
        params = {"trace": str(args.trace)}
        results = {
            "entries": len(trace),
            "iterations": trace.iterations,
            "sigma_x2": trace.sigma_x2,
            "sigma_n2": trace.sigma_n2,
        }
        rows = ["iteration,sigma_x2,sigma_n2"]
        rows += [f"{int(t)},{float(x)!r},{float(n)!r}" for t, x, n in
                 zip(trace.iterations, trace.sigma_x2, trace.sigma_n2)]
        return params, results, set(), "\n".join(rows) + "\n", None
    sample_set = load_samples(args.samples)
    est = estimate_stats(sample_set)
    fit = gaussian_fit(sample_set.global_samples.ravel(), args.bins)
    params = {"samples": str(args.samples), "bins": args.bins}
    results = {
        "num_samples": sample_set.global_samples.shape[0],
        "num_dims": sample_set.num_dims,
        "workers": sample_set.num_workers,
        "iteration": sample_set.iteration,
        "sigma_x2": est.sigma_x2,
        "sigma_n2": est.sigma_n2,
        "fit_mean": fit.mean,
        "fit_variance": fit.variance,
        "fit_r_squared": fit.r_squared,
    }
    if args.pearson_dims is not None:
        i, j = (int(v) for v in args.pearson_dims)
        params["pearson_dims"] = [i, j]
        results["pearson"] = pearson(sample_set.global_samples[:, i],
                                     sample_set.global_samples[:, j])
    return params, results, set(), None, None


def _add_common(sp):
    sp.add_argument("--units", choices=("bits", "nats"), default="bits",
                    help="unit for rate inputs and outputs (default: bits)")
    sp.add_argument("--output", default=None, metavar="PATH",
                    help="also write a CSV table here (relative paths land "
                         f"in ${OUTPUT_DIR_VAR} when set)")


def _add_sgd_flags(sp):
    sp.add_argument("--dim", type=int, required=True,
                    help="model dimension of the synthetic problem")
    sp.add_argument("--data-points", type=int, required=True)
    sp.add_argument("--condition-number", type=float, default=10.0)
    sp.add_argument("--noise-scale", type=float, default=1.0,
                    help="target noise in the planted least-squares instance")
    sp.add_argument("--problem-seed", type=int, default=None)
    sp.add_argument("--workers", type=int, required=True)
    sp.add_argument("--batch-size", type=int, required=True)
    sp.add_argument("--learning-rate", type=float, required=True)
    sp.add_argument("--target-gap", type=float, required=True)
    sp.add_argument("--max-iters", type=int, default=10000)
    sp.add_argument("--noise-mode", choices=("aggregate", "per-worker"),
                    default="aggregate")
    sp.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="aggrate",
        description="Minimum communication cost of distributed gradient "
                    "aggregation: rate regions, allocations, cost plans, "
                    "and simulators.",
    )
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    sp = sub.add_parser("sumrate", help="minimum total rate at a distortion")
    sp.add_argument("--sigma-x2", type=float, required=True)
    sp.add_argument("--sigma-n2", type=_floats, required=True,
                    help="scalar, or comma list for heterogeneous workers")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--distortion", type=float, required=True)
    _add_common(sp)
    sp.set_defaults(handler=_cmd_sumrate)

    sp = sub.add_parser("corner", help="corner point for given worker rates")
    sp.add_argument("--sigma-x2", type=float, required=True)
    sp.add_argument("--noise-var", type=_floats, required=True)
    sp.add_argument("--rates", type=_floats, required=True,
                    help="per-worker auxiliary rates, in --units")
    sp.add_argument("--weights", type=_floats, default=None,
                    help="serve workers in nonincreasing-weight order")
    sp.add_argument("--distortion", type=float, default=None,
                    help="also check the rates against this target")
    _add_common(sp)
    sp.set_defaults(handler=_cmd_corner)

    for name, help_text in (("boundary", "weighted-sum optimal rates"),
                            ("allocate", "cheapest rates under bandwidth prices")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--sigma-x2", type=_floats, required=True,
                        help="per-layer source variances")
        sp.add_argument("--noise-var", type=_matrix, required=True,
                        help="commas within a layer, ';' between layers")
        if name == "boundary":
            sp.add_argument("--weights", type=_floats, default=None)
        else:
            sp.add_argument("--costs", type=_floats, required=True,
                            help="bandwidth price per nat, per worker")
        sp.add_argument("--distortion", type=float, required=True)
        sp.add_argument("--layer-distortions", type=_floats, default=None,
                        help="fix the per-layer split instead of optimizing")
        _add_common(sp)
        sp.set_defaults(handler=_cmd_boundary if name == "boundary"
                        else _cmd_allocate)

    sp = sub.add_parser("plan", help="iterations and total bits to a target gap")
    sp.add_argument("--radius-sq", type=float, required=True)
    sp.add_argument("--smoothness", type=float, required=True)
    sp.add_argument("--target-gap", type=float, required=True)
    sp.add_argument("--model-dim", type=int, default=1)
    sp.add_argument("--workers", type=int, required=True)
    sp.add_argument("--sigma-x2", type=float, default=None)
    sp.add_argument("--sigma-n2", type=float, default=None)
    sp.add_argument("--distortion", type=float, default=None)
    sp.add_argument("--distortion-grid", type=_grid, default=None,
                    help="values, lo:hi:n, or log:lo:hi:n; scans for the "
                         "cheapest distortion")
    sp.add_argument("--trace", default=None, metavar="CSV",
                    help="per-iteration statistics; switches to trace planning")
    sp.add_argument("--rho", type=float, default=None,
                    help="quantization-to-gradient-noise ratio for --trace")
    _add_common(sp)
    sp.set_defaults(handler=_cmd_plan)

    sp = sub.add_parser("signsgd", help="sign quantization vs optimal coding")
    sp.add_argument("--sigma-x2", type=float, required=True)
    sp.add_argument("--sigma-n2", type=float, required=True)
    sp.add_argument("--workers", type=int, required=True)
    _add_common(sp)
    sp.set_defaults(handler=_cmd_signsgd)

    sp = sub.add_parser("simulate-ceo",
                        help="Monte Carlo check of the quantization scheme")
    sp.add_argument("--sigma-x2", type=_floats, required=True)
    sp.add_argument("--noise-var", type=_matrix, required=True)
    sp.add_argument("--rates", type=_matrix, required=True,
                    help="per-worker rates in --units; ';' between layers")
    sp.add_argument("--samples", type=int, default=1000000)
    sp.add_argument("--seed", type=int, default=None)
    _add_common(sp)
    sp.set_defaults(handler=_cmd_simulate_ceo)

    sp = sub.add_parser("simulate-sgd", help="one distributed SGD run")
    _add_sgd_flags(sp)
    sp.add_argument("--rho", type=float, required=True)
    _add_common(sp)
    sp.set_defaults(handler=_cmd_simulate_sgd)

    sp = sub.add_parser("sweep-rho", help="iterations/rate tradeoff over rho")
    _add_sgd_flags(sp)
    sp.add_argument("--rho", type=_floats, required=True)
    sp.add_argument("--replicates", type=int, default=5)
    _add_common(sp)
    sp.set_defaults(handler=_cmd_sweep_rho)

    sp = sub.add_parser("stats", help="estimate statistics from exported data")
    sp.add_argument("--trace", default=None, metavar="CSV")
    sp.add_argument("--samples", default=None, metavar="HEADER_JSON")
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--pearson-dims", type=_floats, default=None,
                    metavar="I,J", help="correlate two global dimensions")
    _add_common(sp)
    sp.set_defaults(handler=_cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        params, results, rate_keys, csv_text, seed = args.handler(args)
        envelope = OutputEnvelope(
            command=args.command,
            parameters=_jsonable(params),
            results=_convert_rates(results, rate_keys, args.units),
            units=args.units,
            seed=seed,
        )
        if args.output is not None:
            path = Path(args.output)
            if not path.is_absolute() and os.environ.get(OUTPUT_DIR_VAR):
                path = Path(os.environ[OUTPUT_DIR_VAR]) / path
            text = csv_text if csv_text is not None \
                else _results_csv(envelope.results)
            path.write_text(text)
    except InfeasibleDistortionError as exc:
        print(f"aggrate: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverConvergenceError as exc:
        print(f"aggrate: solver failed: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (ValueError, OSError) as exc:
        print(f"aggrate: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(envelope.to_json())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
