"""Tests for repeated runs, aggregation, time matching and sweeps"""

import unittest
from unittest.mock import patch
import sys
import os
import tempfile
import shutil

import numpy as np
import pandas as pd

sys.path.append(os.path.dirname(os.path.dirname(__file__)))

from experiment_runner import ExperimentRunner, aggregate
from filter_algorithms import AlgorithmManager, MlbpfAlgorithm
from filter_errors import ConfigurationError, DegenerateEnsembleError, FilterError, StepError
from models import ExperimentConfig, LevelSchedule
from reference_cache import ReferenceCache
from test_helpers import StepClock, make_run_result, small_bigdata_config


class FailingAlgorithm(MlbpfAlgorithm):
    """Registered as mlbpf; every run dies at step 3"""

    def run(self, *args, **kwargs):
        raise StepError(3, DegenerateEnsembleError("all telescoped weights are zero"))


def small_beam_config(**overrides) -> ExperimentConfig:
    values = dict(
        experiment="beam",
        reference="reference_bpf",
        algorithm="mlbpf",
        multipliers=[2, 1],
        base_size=10,
        n_steps=3,
        n_repeats=2,
        sigma=0.02,
        init_mean=1.0,
        theta0=10,
        theta1=20,
        reference_theta=20,
        reference_size=400,
        data_seed=4,
        root_seed=1,
        record_timing=False,
    )
    values.update(overrides)
    return ExperimentConfig(**values)


class TestAggregate(unittest.TestCase):
    """Summary statistics of a set of runs"""

    def test_mean_median_quartiles(self):
        results = [make_run_result(m, repeat=i) for i, m in enumerate([1.0, 2.0, 3.0, 10.0])]
        summary = aggregate(results)
        self.assertEqual(summary.mse_mean, 4.0)
        self.assertEqual(summary.mse_median, 2.5)
        self.assertAlmostEqual(summary.mse_q1, 1.75)
        self.assertAlmostEqual(summary.mse_q3, 4.75)
        self.assertEqual(summary.n_runs, 4)
        self.assertEqual(summary.n_failed, 0)

    def test_failed_runs_counted_but_not_averaged(self):
        results = [make_run_result(1.0), make_run_result(3.0, repeat=1),
                   make_run_result(float("nan"), repeat=2, failed=True)]
        summary = aggregate(results)
        self.assertEqual(summary.n_runs, 3)
        self.assertEqual(summary.n_failed, 1)
        self.assertEqual(summary.mse_mean, 2.0)

    def test_negative_fraction_mean(self):
        summary = aggregate([make_run_result(1.0, negative_fractions=[0.0, 0.5]),
                             make_run_result(1.0, repeat=1, negative_fractions=[0.5, 0.5])])
        self.assertAlmostEqual(summary.negative_fraction_mean, 0.375)

    def test_nothing_to_aggregate(self):
        with self.assertRaises(FilterError):
            aggregate([])
        with self.assertRaises(FilterError):
            aggregate([make_run_result(float("nan"), failed=True)])


class TestRunExperiment(unittest.TestCase):
    """Repeats over sequences on the small big-data problem"""

    def setUp(self):
        self.config = small_bigdata_config()
        self.runner = ExperimentRunner(self.config)

    def test_results_ordered_by_sequence_and_repeat(self):
        runner = ExperimentRunner(small_bigdata_config(n_sequences=2))
        results = runner.run_experiment(show_progress=False)
        self.assertEqual([(r.sequence, r.repeat) for r in results], [(0, 0), (0, 1), (1, 0), (1, 1)])
        for result in results:
            self.assertFalse(result.failed)
            self.assertEqual(len(result.per_step_estimates), 5)
            self.assertEqual(len(result.reference_means), 5)
            self.assertAlmostEqual(result.rmse, np.sqrt(result.mse))

    def test_thread_count_does_not_change_results(self):
        single = ExperimentRunner(small_bigdata_config(threads=1, n_repeats=4)).run_experiment(show_progress=False)
        pooled = ExperimentRunner(small_bigdata_config(threads=3, n_repeats=4)).run_experiment(show_progress=False)
        self.assertEqual([r.mse for r in single], [r.mse for r in pooled])

    def test_repeats_differ(self):
        results = self.runner.run_experiment(show_progress=False)
        self.assertNotEqual(results[0].mse, results[1].mse)

    def test_reference_computed_once_per_sequence(self):
        self.runner.run_experiment(show_progress=False)
        self.runner.run_experiment("bpf", show_progress=False)
        self.assertEqual(self.runner.cache.computed, 1)

    def test_compared_algorithms_share_the_sequence(self):
        entry = self.runner.prepare_sequence(0)
        mlbpf = self.runner.run_single("mlbpf", self.config.schedule, entry, 0, 0)
        bpf = self.runner.run_single("bpf", self.config.schedule, entry, 0, 0)
        self.assertEqual(mlbpf.reference_means, bpf.reference_means)

    def test_mismatched_schedule_fails_before_running(self):
        with self.assertRaises(ConfigurationError):
            self.runner.run_experiment("mlbpf", LevelSchedule(multipliers=[2, 2, 1], base_size=5),
                                       show_progress=False)

    def test_failures_are_recorded(self):
        manager = AlgorithmManager()
        manager.register_algorithm(FailingAlgorithm())
        runner = ExperimentRunner(self.config, algorithms=manager)
        with self.assertLogs("experiment_runner", level="WARNING"):
            results = runner.run_experiment(show_progress=False)
        self.assertTrue(all(r.failed for r in results))
        self.assertEqual(results[0].failed_step, 3)
        self.assertIn("telescoped", results[0].error)
        with self.assertRaises(FilterError):
            aggregate(results)

    def test_only_the_filter_is_timed(self):
        runner = ExperimentRunner(self.config, clock=StepClock(tick=0.5))
        entry = runner.prepare_sequence(0)
        result = runner.run_single("mlbpf", self.config.schedule, entry, 0, 0)
        self.assertEqual(result.wall_clock, 0.5)


class TestTimeMatching(unittest.TestCase):
    """Bracketing and bisection of the base size"""

    def setUp(self):
        self.runner = ExperimentRunner(small_bigdata_config(match_target_size=250))

    def fake_seconds(self, algorithm, schedule):
        return schedule.total_size * 1e-4

    def test_converges_with_fixed_level_ratios(self):
        with patch.object(self.runner, "measure_seconds", side_effect=self.fake_seconds):
            result = self.runner.time_match(tolerance_pct=5.0)
        self.assertTrue(result.converged)
        self.assertEqual(result.schedule.multipliers, [3, 1])
        self.assertLessEqual(abs(result.schedule.total_size - 250), 12.5)
        self.assertAlmostEqual(result.target_seconds, 0.025)
        self.assertEqual(result.iterations, 4)

    def test_best_schedule_returned_when_tolerance_unreachable(self):
        with patch.object(self.runner, "measure_seconds", side_effect=self.fake_seconds):
            with self.assertLogs("experiment_runner", level="WARNING"):
                result = self.runner.time_match(tolerance_pct=0.01)
        self.assertFalse(result.converged)
        self.assertIn(result.schedule.total_size, (248, 252))

    def test_shrinks_an_oversized_schedule(self):
        candidate = LevelSchedule(multipliers=[3, 1], base_size=500)
        with patch.object(self.runner, "measure_seconds", side_effect=self.fake_seconds):
            result = self.runner.time_match(candidate_schedule=candidate, tolerance_pct=5.0)
        self.assertTrue(result.converged)
        self.assertLess(result.schedule.base_size, 500)

    def test_zero_target_time_rejected(self):
        with patch.object(self.runner, "measure_seconds", return_value=0.0):
            with self.assertRaises(ConfigurationError):
                self.runner.time_match()

    def test_measure_seconds_uses_the_clock(self):
        runner = ExperimentRunner(small_bigdata_config(), clock=StepClock(tick=0.25))
        self.assertEqual(runner.measure_seconds("bpf", LevelSchedule(multipliers=[1], base_size=10)), 0.25)


class TestErrorMatching(unittest.TestCase):
    """Sizing a bootstrap filter to the mean MSE of the configured schedule"""

    def setUp(self):
        self.runner = ExperimentRunner(small_bigdata_config(match_target_size=100))

    def fake_runs(self, target_mse):
        def run_experiment(algorithm, schedule, show_progress=True):
            if algorithm == "mlbpf":
                return [make_run_result(target_mse, wall_clock=0.2, repeat=i) for i in range(2)]
            size = schedule.total_size
            return [make_run_result(2.5 / size, algorithm=algorithm, wall_clock=size * 1e-3, repeat=i)
                    for i in range(2)]
        return run_experiment

    def test_bisects_to_the_target_error(self):
        with patch.object(self.runner, "run_experiment", side_effect=self.fake_runs(0.01)):
            result = self.runner.error_match(tolerance_pct=5.0)
        self.assertTrue(result.converged)
        self.assertEqual(result.schedule.multipliers, [1])
        self.assertEqual(result.schedule.base_size, 250)
        self.assertEqual(result.iterations, 5)
        self.assertAlmostEqual(result.target_mse, 0.01)
        self.assertAlmostEqual(result.matched_seconds, 0.25)
        self.assertAlmostEqual(result.cost_ratio, 1.25)

    def test_closest_size_returned_when_tolerance_unreachable(self):
        with patch.object(self.runner, "run_experiment", side_effect=self.fake_runs(0.0099)):
            with self.assertLogs("experiment_runner", level="WARNING"):
                result = self.runner.error_match(tolerance_pct=0.01)
        self.assertFalse(result.converged)
        self.assertIn(result.schedule.base_size, (252, 253))

    def test_shrinks_an_oversized_filter(self):
        candidate = LevelSchedule(multipliers=[1], base_size=1000)
        with patch.object(self.runner, "run_experiment", side_effect=self.fake_runs(0.01)):
            result = self.runner.error_match(candidate_schedule=candidate, tolerance_pct=5.0)
        self.assertTrue(result.converged)
        self.assertLess(result.schedule.base_size, 1000)

    def test_zero_target_error_rejected(self):
        with patch.object(self.runner, "run_experiment", side_effect=self.fake_runs(0.0)):
            with self.assertRaises(ConfigurationError):
                self.runner.error_match()

    def test_cost_ratio_uses_the_clock(self):
        runner = ExperimentRunner(small_bigdata_config(), clock=StepClock(tick=0.5))
        result = runner.error_match(tolerance_pct=1e6)
        self.assertTrue(result.converged)
        self.assertEqual(result.iterations, 1)
        self.assertEqual(result.target_seconds, 0.5)
        self.assertEqual(result.matched_seconds, 0.5)
        self.assertEqual(result.cost_ratio, 1.0)
        self.assertGreater(result.target_mse, 0.0)


class TestSweeps(unittest.TestCase):
    """Grid studies"""

    def test_multiplier_sweep(self):
        runner = ExperimentRunner(small_bigdata_config(sweep_multipliers=[2, 4]))
        rows = runner.sweep("multipliers", show_progress=False)
        self.assertEqual([(row["c0"], row["n0"], row["n1"]) for row in rows], [(2, 40, 20), (4, 80, 20)])
        self.assertTrue(all(row["algorithm"] == "mlbpf" for row in rows))

    def test_scale_sweep(self):
        runner = ExperimentRunner(small_bigdata_config(sweep_scales=[0.5, 2.0]))
        rows = runner.sweep("scales", show_progress=False)
        self.assertEqual([row["base_size"] for row in rows], [10, 40])
        self.assertEqual([row["total_size"] for row in rows], [40, 160])

    def test_theta0_sweep_needs_the_beam(self):
        runner = ExperimentRunner(small_bigdata_config(sweep_theta0=[10]))
        with self.assertRaises(ConfigurationError):
            runner.sweep("theta0", show_progress=False)

    def test_theta0_sweep_reuses_the_reference(self):
        runner = ExperimentRunner(small_beam_config(sweep_theta0=[5, 10]))
        rows = runner.sweep("theta0", show_progress=False)
        self.assertEqual([row["theta0"] for row in rows], [5, 10])
        self.assertEqual(runner.cache.computed, 1)

    def test_empty_grid_and_unknown_kind(self):
        runner = ExperimentRunner(small_bigdata_config())
        for kind in ("multipliers", "scales", "mesh"):
            with self.subTest(kind=kind):
                with self.assertRaises(ConfigurationError):
                    runner.sweep(kind, show_progress=False)


class TestRunAndSave(unittest.TestCase):
    """Files written by a complete run"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def run_into(self, name):
        output_dir = os.path.join(self.temp_dir, name)
        ExperimentRunner(small_bigdata_config(output_dir=output_dir)).run_and_save(show_progress=False)
        return output_dir

    def test_outputs(self):
        output_dir = self.run_into("a")
        for name in ("runs.csv", "summary.csv", "resolved.cfg"):
            self.assertTrue(os.path.exists(os.path.join(output_dir, name)), name)
        runs = pd.read_csv(os.path.join(output_dir, "runs.csv"))
        self.assertEqual(len(runs), 2 * 5)
        self.assertTrue((runs["wall_clock"] == 0.0).all())

    def test_same_seeds_give_identical_files(self):
        first = self.run_into("a")
        second = self.run_into("b")
        for name in ("runs.csv", "summary.csv"):
            with open(os.path.join(first, name), "rb") as a, open(os.path.join(second, name), "rb") as b:
                self.assertEqual(a.read(), b.read(), name)


class TestBeamExperiment(unittest.TestCase):
    """End to end on a tiny beam problem"""

    def test_runs_against_the_reference_filter(self):
        runner = ExperimentRunner(small_beam_config(), cache=ReferenceCache())
        results = runner.run_experiment(show_progress=False)
        self.assertEqual(len(results), 2)
        for result in results:
            self.assertFalse(result.failed)
            self.assertTrue(np.isfinite(result.mse))
            self.assertEqual(len(result.reference_means), 3)


if __name__ == "__main__":
    unittest.main()
