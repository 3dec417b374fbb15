"""Command-line entry point: run, sweep, match, solve-beam, report, kalman, simulate"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from beam import BeamSpec, solve_beam
from config import config
from config_loader import ConfigLoader
from experiment_runner import SWEEP_KINDS, ExperimentRunner
from experiment_suites import BigDataSuite, build_suite
from filter_errors import ConfigurationError, FilterError
from kalman_oracle import kalman_filter
from models import ExperimentConfig
from results_store import ResultsStore, load_runs_from, report_table


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="flat key = value experiment file")
    parser.add_argument("--seed", type=int, help="root seed of the repeats")
    parser.add_argument("--threads", type=int, help="worker threads for independent repeats")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value (repeatable)")
    parser.add_argument("--quiet", action="store_true", help="hide progress bars")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlbpf", description="Multilevel bootstrap particle filter experiments")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="run one configuration and write runs.csv / summary.csv")
    _add_config_flags(run)

    sweep = subparsers.add_parser("sweep", help="grid over the level-0 multiplier, theta0 or a size factor")
    _add_config_flags(sweep)
    sweep.add_argument("--kind", choices=SWEEP_KINDS, default="multipliers")
    sweep.add_argument("--time-matched", action="store_true",
                       help="time-match every multiplier point to the target BPF first")

    match = subparsers.add_parser("match", help="match the configured schedule and a BPF on wall-clock or error")
    _add_config_flags(match)
    match.add_argument("--target", default="bpf", help="single-level algorithm compared against (default: bpf)")
    match.add_argument("--by", choices=("time", "error"), default="time",
                       help="time: scale the configured schedule to the target's wall-clock; "
                            "error: scale the target's size to the configured schedule's mean MSE")
    match.add_argument("--tolerance", type=float, help="tolerance in percent")

    solve = subparsers.add_parser("solve-beam", help="write the beam deflection (position, deflection) CSV")
    _add_config_flags(solve)
    solve.add_argument("--position", type=float, required=True, help="load position x")
    solve.add_argument("--theta", type=int, help="mesh intervals (default: theta1)")

    report = subparsers.add_parser("report", help="summarize runs.csv tables")
    report.add_argument("paths", nargs="+", help="output directories or runs.csv files")
    report.add_argument("--out", help="also write report.csv into this directory")

    kalman = subparsers.add_parser("kalman", help="exact filter (step, mean, variance) CSV for a bigdata sequence")
    _add_config_flags(kalman)
    kalman.add_argument("--sequence", type=int, default=0)

    simulate = subparsers.add_parser("simulate", help="write one synthetic trajectory (step, state, obs_k) CSV")
    _add_config_flags(simulate)
    simulate.add_argument("--sequence", type=int, default=0)
    return parser


def _load(args) -> ExperimentConfig:
    return ConfigLoader().load(args.config, overrides=args.overrides, seed=args.seed,
                               threads=args.threads, out=args.out)


def cmd_run(args) -> int:
    experiment_config = _load(args)
    runner = ExperimentRunner(experiment_config)
    _, summary, output_dir = runner.run_and_save(show_progress=not args.quiet)
    print(f"{summary.algorithm}: {summary.n_runs} runs ({summary.n_failed} failed), "
          f"mean MSE {summary.mse_mean:.6g}, median MSE {summary.mse_median:.6g}, "
          f"mean RMSE {summary.rmse_mean:.6g}")
    print(f"Results written to {output_dir}")
    return 0


def cmd_sweep(args) -> int:
    experiment_config = _load(args)
    ConfigLoader().write_resolved(experiment_config, experiment_config.output_dir)
    runner = ExperimentRunner(experiment_config)
    rows = runner.sweep(args.kind, time_matched=args.time_matched, show_progress=not args.quiet)
    path = ResultsStore(experiment_config.output_dir).write_sweep(rows)
    for row in rows:
        print(", ".join(f"{key}={value}" for key, value in row.items() if key in
                        ("c0", "n0", "n1", "theta0", "scale", "total_size", "mse_mean", "rmse_mean", "n_failed")))
    print(f"Sweep written to {path}")
    return 0


def cmd_match(args) -> int:
    experiment_config = _load(args)
    runner = ExperimentRunner(experiment_config)
    if args.by == "error":
        return _match_error(args, experiment_config, runner)
    result = runner.time_match(target_algorithm=args.target, tolerance_pct=args.tolerance)
    matched = experiment_config.model_copy(update={
        "multipliers": list(result.schedule.multipliers),
        "base_size": result.schedule.base_size,
    })
    path = ConfigLoader().write_resolved(matched, experiment_config.output_dir, name="matched.cfg")
    status = "converged" if result.converged else "NOT converged (best found)"
    print(f"Target {args.target}: {result.target_seconds:.4g} s; "
          f"matched multipliers {result.schedule.multipliers} x base size {result.schedule.base_size} "
          f"(sizes {[result.schedule.level_size(l) for l in range(result.schedule.n_levels)]}): "
          f"{result.matched_seconds:.4g} s after {result.iterations} rounds, {status}")
    print(f"Matched config written to {path}")
    return 0


def _match_error(args, experiment_config: ExperimentConfig, runner: ExperimentRunner) -> int:
    result = runner.error_match(candidate_algorithm=args.target, tolerance_pct=args.tolerance,
                                show_progress=not args.quiet)
    matched = experiment_config.model_copy(update={
        "algorithm": args.target,
        "base_size": result.schedule.base_size,
    })
    path = ConfigLoader().write_resolved(matched, experiment_config.output_dir, name="matched.cfg")
    status = "converged" if result.converged else "NOT converged (best found)"
    print(f"Target {experiment_config.algorithm} {experiment_config.schedule.multipliers} x "
          f"{experiment_config.schedule.base_size}: mean MSE {result.target_mse:.6g}, "
          f"{result.target_seconds:.4g} s per run")
    print(f"Matched {args.target} with N={result.schedule.total_size}: mean MSE {result.matched_mse:.6g}, "
          f"{result.matched_seconds:.4g} s per run after {result.iterations} rounds, {status}")
    print(f"Cost ratio {args.target}/{experiment_config.algorithm}: {result.cost_ratio:.4g}")
    print(f"Matched config written to {path}")
    return 0


def cmd_solve_beam(args) -> int:
    experiment_config = _load(args)
    spec = BeamSpec.isotropic(
        sensors=experiment_config.sensors,
        noise_var=experiment_config.noise_var,
        length=experiment_config.beam_length,
        stiffness=experiment_config.stiffness,
        load_profile=experiment_config.load_profile,
        load_width=experiment_config.load_width,
    )
    theta = args.theta or experiment_config.theta1
    solution = solve_beam(spec, args.position, theta)
    path = ResultsStore(experiment_config.output_dir).write_deflections(solution)
    readings = ", ".join(f"W({s:g}) = {v:.6g}" for s, v in zip(spec.sensors, solution.sensor_values))
    print(f"theta={theta}, load at {args.position:g}: {readings}")
    print(f"Deflection written to {path}")
    return 0


def cmd_report(args) -> int:
    table = report_table(load_runs_from(args.paths))
    print(table.to_string(index=False))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "report.csv")
        table.to_csv(path, index=False, float_format=config.FLOAT_FORMAT, lineterminator="\n")
        print(f"Report written to {path}")
    return 0


def cmd_kalman(args) -> int:
    experiment_config = _load(args)
    suite = build_suite(experiment_config)
    if not isinstance(suite, BigDataSuite):
        raise ConfigurationError("the exact filter is only available for the bigdata experiment")
    trajectory = suite.generate_data(args.sequence)
    states = kalman_filter(trajectory.observations, experiment_config.sigma, suite.covariance,
                           init_mean=experiment_config.init_mean)
    store = ResultsStore(experiment_config.output_dir)
    path = store.write_kalman(states)
    store.save_covariance(suite.covariance.full)
    print(f"{len(states)} Kalman steps written to {path}")
    return 0


def cmd_simulate(args) -> int:
    experiment_config = _load(args)
    trajectory = build_suite(experiment_config).generate_data(args.sequence)
    path = ResultsStore(experiment_config.output_dir).write_trajectory(trajectory)
    print(f"{trajectory.n_steps} steps (data seed {trajectory.seed}) written to {path}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "match": cmd_match,
    "solve-beam": cmd_solve_beam,
    "report": cmd_report,
    "kalman": cmd_kalman,
    "simulate": cmd_simulate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FilterError, ValidationError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
