"""Smoke tests for the command-line entry point"""

import unittest
import sys
import os
import io
import tempfile
import shutil
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pandas as pd

sys.path.append(os.path.dirname(os.path.dirname(__file__)))

from cli import build_parser, main
from results_store import ResultsStore

SMALL_BIGDATA = ["--set", "p=3", "--set", "n_steps=4", "--set", "n_repeats=2", "--set", "base_size=10",
                 "--set", "multipliers=2,1", "--set", "record_timing=false", "--quiet"]


class TestCommandLine(unittest.TestCase):
    """Subcommands write their files and report errors with exit code 1"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def call(self, argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = main(argv)
        return code, out.getvalue(), err.getvalue()

    def test_parser_knows_every_command(self):
        parser = build_parser()
        for command in ("run", "sweep", "match", "solve-beam", "kalman", "simulate"):
            with self.subTest(command=command):
                extra = ["--position", "1.0"] if command == "solve-beam" else []
                self.assertEqual(parser.parse_args([command] + extra).command, command)
        self.assertEqual(parser.parse_args(["report", "a", "b"]).paths, ["a", "b"])

    def test_run_then_report(self):
        code, out, _ = self.call(["run", "--out", self.temp_dir, "--seed", "5"] + SMALL_BIGDATA)
        self.assertEqual(code, 0)
        self.assertIn("mlbpf", out)
        for name in ("runs.csv", "summary.csv", "resolved.cfg"):
            self.assertTrue(os.path.exists(os.path.join(self.temp_dir, name)), name)

        report_dir = os.path.join(self.temp_dir, "report")
        code, out, _ = self.call(["report", self.temp_dir, "--out", report_dir])
        self.assertEqual(code, 0)
        table = pd.read_csv(os.path.join(report_dir, "report.csv"))
        self.assertEqual(table["n_runs"].tolist(), [2])

    def test_simulate(self):
        code, _, _ = self.call(["simulate", "--out", self.temp_dir] + SMALL_BIGDATA)
        self.assertEqual(code, 0)
        frame = pd.read_csv(os.path.join(self.temp_dir, "trajectory.csv"))
        self.assertEqual(list(frame.columns), ["step", "state", "obs_1", "obs_2", "obs_3"])
        self.assertEqual(len(frame), 4)

    def test_kalman_writes_the_covariance(self):
        code, _, _ = self.call(["kalman", "--out", self.temp_dir] + SMALL_BIGDATA)
        self.assertEqual(code, 0)
        frame = pd.read_csv(os.path.join(self.temp_dir, "kalman.csv"))
        self.assertEqual(list(frame.columns), ["step", "mean", "variance"])
        matrix = ResultsStore(self.temp_dir).load_covariance()
        self.assertEqual(matrix.shape, (3, 3))
        np.testing.assert_array_equal(matrix, matrix.T)

    def test_solve_beam(self):
        code, out, _ = self.call(["solve-beam", "--position", "2.0", "--theta", "40", "--out", self.temp_dir,
                                  "--set", "experiment=beam", "--set", "reference=reference_bpf"])
        self.assertEqual(code, 0)
        frame = pd.read_csv(os.path.join(self.temp_dir, "deflection.csv"))
        self.assertEqual(list(frame.columns), ["position", "deflection"])
        self.assertEqual(len(frame), 41)
        self.assertIn("theta=40", out)

    def test_match_by_error_writes_the_bpf_config(self):
        code, out, _ = self.call(["match", "--by", "error", "--tolerance", "1e6", "--out", self.temp_dir,
                                  "--set", "match_target_size=40"] + SMALL_BIGDATA)
        self.assertEqual(code, 0)
        self.assertIn("Cost ratio bpf/mlbpf", out)
        with open(os.path.join(self.temp_dir, "matched.cfg"), encoding="utf-8") as file:
            text = file.read()
        self.assertIn("algorithm = bpf\n", text)
        self.assertIn("base_size = 40\n", text)

    def test_kalman_refuses_the_beam(self):
        code, _, err = self.call(["kalman", "--out", self.temp_dir,
                                  "--set", "experiment=beam", "--set", "reference=reference_bpf"])
        self.assertEqual(code, 1)
        self.assertIn("bigdata", err)

    def test_bad_config_exits_with_one(self):
        code, _, err = self.call(["run", "--config", os.path.join(self.temp_dir, "missing.cfg")])
        self.assertEqual(code, 1)
        self.assertIn("Error", err)

    def test_bad_override_exits_with_one(self):
        code, _, err = self.call(["simulate", "--out", self.temp_dir, "--set", "n_steps=-3"])
        self.assertEqual(code, 1)


if __name__ == "__main__":
    unittest.main()
