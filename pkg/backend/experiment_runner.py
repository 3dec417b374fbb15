import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from config import config as runtime_config
from config_loader import ConfigLoader
from experiment_suites import ExperimentSuite, build_suite, squared_errors
from filter_algorithms import AlgorithmManager
from filter_errors import ConfigurationError, FilterError, StepError
from models import ErrorMatchResult, ExperimentConfig, LevelSchedule, RunResult, RunSummary, TimeMatchResult
from reference_cache import ReferenceCache, ReferenceEntry
from results_store import ResultsStore

logger = logging.getLogger(__name__)

SWEEP_KINDS = ("multipliers", "theta0", "scales")


def aggregate(results: Sequence[RunResult], algorithm: Optional[str] = None) -> RunSummary:
    """
    Mean, median and quartiles of the MSE over the successful runs.

    Raises:
        FilterError: if there are no results or every run failed
    """
    if not results:
        raise FilterError("no runs to aggregate")
    successful = [r for r in results if not r.failed]
    if not successful:
        raise FilterError(f"all {len(results)} runs failed; first error: {results[0].error}")
    mse = np.array([r.mse for r in successful])
    q1, median, q3 = np.percentile(mse, [25, 50, 75])
    return RunSummary(
        algorithm=algorithm or successful[0].algorithm,
        n_runs=len(results),
        n_failed=len(results) - len(successful),
        mse_mean=float(mse.mean()),
        mse_median=float(median),
        mse_q1=float(q1),
        mse_q3=float(q3),
        rmse_mean=float(np.mean([r.rmse for r in successful])),
        wall_clock_mean=float(np.mean([r.wall_clock for r in successful])),
        negative_fraction_mean=float(np.mean([np.mean(r.negative_fraction_trace) if r.negative_fraction_trace else 0.0
                                              for r in successful])),
        degenerate_steps=sum(e.degenerate_normalizer for r in successful for e in r.per_step_estimates),
    )


class ExperimentRunner:
    """Main orchestrator for repeated filter runs, time matching and sweeps"""

    def __init__(self, experiment_config: ExperimentConfig,
                 suite: Optional[ExperimentSuite] = None,
                 algorithms: Optional[AlgorithmManager] = None,
                 cache: Optional[ReferenceCache] = None,
                 clock: Callable[[], float] = time.perf_counter):
        self.config = experiment_config

        # Problem pieces shared by every compared algorithm
        self.suite = suite or build_suite(experiment_config)
        self.model = self.suite.build_model()
        self.algorithms = algorithms or AlgorithmManager.default()
        self.cache = cache or ReferenceCache()
        self.clock = clock

    def prepare_sequence(self, sequence: int) -> ReferenceEntry:
        """Observation sequence and reference means, computed once per data seed"""
        def compute() -> ReferenceEntry:
            trajectory = self.suite.generate_data(sequence)
            return ReferenceEntry(trajectory=trajectory,
                                  reference_means=self.suite.reference_means(trajectory))
        return self.cache.get_or_compute(self.suite.cache_key(sequence), compute)

    def repeat_seed(self, sequence: int, repeat: int) -> int:
        return self.config.root_seed + sequence * self.config.n_repeats + repeat

    def run_single(self, algorithm: str, schedule: LevelSchedule, entry: ReferenceEntry,
                   sequence: int, repeat: int, n_steps: Optional[int] = None) -> RunResult:
        """
        One repeat on one observation sequence. Only the filter itself is timed.

        A FilterError marks the result as failed instead of propagating.
        """
        n_steps = self.config.n_steps if n_steps is None else n_steps
        started = self.clock()
        try:
            estimates = self.algorithms.run_algorithm(
                algorithm,
                model=self.model,
                schedule=schedule,
                observations=entry.trajectory.observations,
                n_steps=n_steps,
                rng_seed=self.repeat_seed(sequence, repeat),
            )
        except FilterError as e:
            elapsed = self.clock() - started
            failed_step = e.step if isinstance(e, StepError) else None
            logger.warning("%s sequence %d repeat %d failed: %s", algorithm, sequence, repeat, e)
            return RunResult(algorithm=algorithm, sequence=sequence, repeat=repeat, wall_clock=elapsed,
                             failed=True, failed_step=failed_step, error=str(e))
        elapsed = self.clock() - started

        errors = squared_errors(estimates, entry.reference_means)
        mse = float(errors.mean()) if len(errors) else float("nan")
        return RunResult(
            algorithm=algorithm,
            sequence=sequence,
            repeat=repeat,
            per_step_estimates=estimates,
            reference_means=[float(m) for m in entry.reference_means[:len(estimates)]],
            mse=mse,
            rmse=math.sqrt(mse),
            wall_clock=elapsed,
            negative_fraction_trace=[e.negative_fraction for e in estimates],
        )

    def run_experiment(self, algorithm: Optional[str] = None, schedule: Optional[LevelSchedule] = None,
                       show_progress: bool = True) -> List[RunResult]:
        """
        Run n_repeats repeats on each of n_sequences observation sequences.

        Results come back ordered by (sequence, repeat) and do not depend on
        the number of worker threads.
        """
        algorithm = algorithm or self.config.algorithm
        schedule = schedule or self.config.schedule
        # Invalid schedules fail here, before any repeat runs
        self.algorithms.get(algorithm).prepare(self.model, schedule)

        results: List[RunResult] = []
        total = self.config.n_sequences * self.config.n_repeats
        with tqdm(total=total, desc=f"{algorithm} x{schedule.total_size}", disable=not show_progress) as progress:
            for sequence in range(self.config.n_sequences):
                entry = self.prepare_sequence(sequence)
                with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                    futures = [pool.submit(self.run_single, algorithm, schedule, entry, sequence, repeat)
                               for repeat in range(self.config.n_repeats)]
                    for future in futures:
                        results.append(future.result())
                        progress.update(1)
        failed = sum(r.failed for r in results)
        logger.info("%s: %d runs, %d failed", algorithm, len(results), failed)
        return results

    def measure_seconds(self, algorithm: str, schedule: LevelSchedule) -> float:
        """Median wall-clock of a few short sequential runs on the first sequence"""
        entry = self.prepare_sequence(0)
        n_steps = min(self.config.timing_steps, self.config.n_steps)
        timings = []
        for trial in range(runtime_config.TIME_MATCH_RUNS):
            started = self.clock()
            self.algorithms.run_algorithm(algorithm, model=self.model, schedule=schedule,
                                          observations=entry.trajectory.observations,
                                          n_steps=n_steps, rng_seed=self.repeat_seed(0, trial))
            timings.append(self.clock() - started)
        return float(np.median(timings))

    def time_match(self, target_algorithm: str = "bpf", target_schedule: Optional[LevelSchedule] = None,
                   candidate_algorithm: Optional[str] = None,
                   candidate_schedule: Optional[LevelSchedule] = None,
                   tolerance_pct: Optional[float] = None) -> TimeMatchResult:
        """
        Scale the candidate's base size until its wall-clock matches the target's.

        The level ratios of the candidate schedule stay fixed. The base size is
        doubled or halved until the target time is bracketed, then bisected.
        When the tolerance is not met within TIME_MATCH_MAX_ITER rounds, the
        closest schedule found is returned with converged=False.
        """
        target_schedule = target_schedule or LevelSchedule(multipliers=[1], base_size=self.config.match_target_size)
        candidate_algorithm = candidate_algorithm or self.config.algorithm
        candidate_schedule = candidate_schedule or self.config.schedule
        tolerance = (tolerance_pct if tolerance_pct is not None else self.config.match_tolerance_pct) / 100.0

        target = self.measure_seconds(target_algorithm, target_schedule)
        if not target > 0:
            raise ConfigurationError(f"target run took {target} s; cannot match against it")

        best: Optional[LevelSchedule] = None
        best_seconds = math.inf
        converged = False
        iterations = 0
        too_fast: Optional[int] = None
        too_slow: Optional[int] = None
        base = candidate_schedule.base_size

        while iterations < runtime_config.TIME_MATCH_MAX_ITER:
            schedule = LevelSchedule(multipliers=list(candidate_schedule.multipliers), base_size=base)
            seconds = self.measure_seconds(candidate_algorithm, schedule)
            iterations += 1
            logger.info("time match round %d: base size %d -> %.4g s (target %.4g s)",
                        iterations, base, seconds, target)
            if abs(seconds - target) < abs(best_seconds - target):
                best, best_seconds = schedule, seconds
            if abs(seconds - target) <= tolerance * target:
                converged = True
                break

            if seconds < target:
                too_fast = base
            else:
                too_slow = base
            if too_slow is None:
                next_base = base * 2
            elif too_fast is None:
                next_base = max(1, base // 2)
            else:
                next_base = (too_fast + too_slow) // 2
            if next_base in (base, too_fast, too_slow):
                break
            base = next_base

        if not converged:
            logger.warning("time matching stopped after %d rounds at %.4g s vs target %.4g s",
                           iterations, best_seconds, target)
        return TimeMatchResult(schedule=best, target_seconds=target, matched_seconds=best_seconds,
                               iterations=iterations, converged=converged)

    def error_match(self, target_algorithm: Optional[str] = None,
                    target_schedule: Optional[LevelSchedule] = None,
                    candidate_algorithm: str = "bpf",
                    candidate_schedule: Optional[LevelSchedule] = None,
                    tolerance_pct: Optional[float] = None,
                    show_progress: bool = False) -> ErrorMatchResult:
        """
        Scale the candidate's base size until its mean MSE matches the target's.

        The target defaults to the configured algorithm and schedule, the
        candidate to a bootstrap filter of match_target_size particles. Larger
        sizes are assumed to give smaller errors: the base size is doubled or
        halved until the target MSE is bracketed, then bisected. The cost ratio
        is the candidate's mean wall-clock over the target's.
        """
        target_algorithm = target_algorithm or self.config.algorithm
        target_schedule = target_schedule or self.config.schedule
        candidate_schedule = candidate_schedule or LevelSchedule(multipliers=[1],
                                                                 base_size=self.config.match_target_size)
        tolerance = (tolerance_pct if tolerance_pct is not None else self.config.match_tolerance_pct) / 100.0

        target = aggregate(self.run_experiment(target_algorithm, target_schedule, show_progress), target_algorithm)
        if not target.mse_mean > 0:
            raise ConfigurationError(f"target mean MSE is {target.mse_mean}; cannot match against it")

        best: Optional[LevelSchedule] = None
        best_summary: Optional[RunSummary] = None
        converged = False
        iterations = 0
        too_small: Optional[int] = None
        large_enough: Optional[int] = None
        base = candidate_schedule.base_size

        while iterations < runtime_config.TIME_MATCH_MAX_ITER:
            schedule = LevelSchedule(multipliers=list(candidate_schedule.multipliers), base_size=base)
            summary = aggregate(self.run_experiment(candidate_algorithm, schedule, show_progress),
                                candidate_algorithm)
            iterations += 1
            gap = abs(summary.mse_mean - target.mse_mean)
            logger.info("error match round %d: base size %d -> MSE %.4g (target %.4g)",
                        iterations, base, summary.mse_mean, target.mse_mean)
            if best_summary is None or gap < abs(best_summary.mse_mean - target.mse_mean):
                best, best_summary = schedule, summary
            if gap <= tolerance * target.mse_mean:
                converged = True
                break

            if summary.mse_mean > target.mse_mean:
                too_small = base
            else:
                large_enough = base
            if large_enough is None:
                next_base = base * 2
            elif too_small is None:
                next_base = max(1, base // 2)
            else:
                next_base = (too_small + large_enough) // 2
            if next_base in (base, too_small, large_enough):
                break
            base = next_base

        if not converged:
            logger.warning("error matching stopped after %d rounds at MSE %.4g vs target %.4g",
                           iterations, best_summary.mse_mean, target.mse_mean)
        cost_ratio = (best_summary.wall_clock_mean / target.wall_clock_mean
                      if target.wall_clock_mean > 0 else math.nan)
        return ErrorMatchResult(schedule=best, target_mse=target.mse_mean, matched_mse=best_summary.mse_mean,
                                target_seconds=target.wall_clock_mean, matched_seconds=best_summary.wall_clock_mean,
                                cost_ratio=cost_ratio, iterations=iterations, converged=converged)

    def _summary_row(self, row: Dict, results: List[RunResult], algorithm: str) -> Dict:
        try:
            row.update(aggregate(results, algorithm).model_dump())
        except FilterError as e:
            logger.warning("sweep point %s has no successful runs: %s", row, e)
            row.update({"algorithm": algorithm, "n_runs": len(results), "n_failed": len(results)})
        return row

    def sweep(self, kind: str, time_matched: bool = False, show_progress: bool = True) -> List[Dict]:
        """
        Grid study over one knob.

        Args:
            kind: "multipliers" (level-0 multiplier c_0 of a two-level schedule),
                "theta0" (coarse beam mesh) or "scales" (schedule size factor)
            time_matched: rescale every multiplier point to the target's wall-clock first

        Returns:
            One row per grid point: the swept values followed by the RunSummary fields
        """
        if kind not in SWEEP_KINDS:
            raise ConfigurationError(f"unknown sweep '{kind}', expected one of {', '.join(SWEEP_KINDS)}")
        rows = []

        if kind == "multipliers":
            if not self.config.sweep_multipliers:
                raise ConfigurationError("sweep_multipliers is empty")
            for c0 in self.config.sweep_multipliers:
                schedule = LevelSchedule(multipliers=[c0, 1], base_size=self.config.base_size)
                if time_matched:
                    schedule = self.time_match(candidate_algorithm="mlbpf", candidate_schedule=schedule).schedule
                results = self.run_experiment("mlbpf", schedule, show_progress)
                rows.append(self._summary_row(
                    {"c0": c0, "n0": schedule.level_size(0), "n1": schedule.level_size(1)}, results, "mlbpf"))

        elif kind == "theta0":
            if self.config.experiment != "beam":
                raise ConfigurationError("theta0 sweeps need the beam experiment")
            if not self.config.sweep_theta0:
                raise ConfigurationError("sweep_theta0 is empty")
            for theta0 in self.config.sweep_theta0:
                if theta0 > self.config.theta1:
                    raise ConfigurationError(f"theta0 {theta0} exceeds theta1 {self.config.theta1}")
                point = ExperimentRunner(self.config.model_copy(update={"theta0": theta0}),
                                         algorithms=self.algorithms, cache=self.cache, clock=self.clock)
                results = point.run_experiment(show_progress=show_progress)
                rows.append(self._summary_row({"theta0": theta0}, results, self.config.algorithm))

        else:
            if not self.config.sweep_scales:
                raise ConfigurationError("sweep_scales is empty")
            for factor in self.config.sweep_scales:
                schedule = self.config.schedule.scaled(factor)
                results = self.run_experiment(self.config.algorithm, schedule, show_progress)
                rows.append(self._summary_row(
                    {"scale": factor, "base_size": schedule.base_size, "total_size": schedule.total_size},
                    results, self.config.algorithm))
        return rows

    def run_and_save(self, show_progress: bool = True):
        """
        Run the configured experiment and write runs.csv, summary.csv and resolved.cfg.

        Returns:
            Tuple of (results, summary, output directory)
        """
        store = ResultsStore(self.config.output_dir)
        ConfigLoader().write_resolved(self.config, self.config.output_dir)
        results = self.run_experiment(show_progress=show_progress)
        store.write_runs(results, self.config.record_timing)
        summary = aggregate(results, self.config.algorithm)
        store.write_summary([summary], self.config.record_timing)
        return results, summary, self.config.output_dir
