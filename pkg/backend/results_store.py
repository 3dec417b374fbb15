import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from beam import MeshSolution
from config import config
from filter_errors import ConfigurationError
from hmm_models import SyntheticTrajectory
from models import KalmanState, RunResult, RunSummary

logger = logging.getLogger(__name__)

# Frozen column orders
RUNS_COLUMNS = ["repeat", "step", "estimate", "reference", "sq_err", "neg_frac", "wall_clock",
                "sequence", "algorithm"]
SUMMARY_COLUMNS = list(RunSummary.model_fields)
KALMAN_COLUMNS = ["step", "mean", "variance"]
DEFLECTION_COLUMNS = ["position", "deflection"]

COVARIANCE_HEADER = np.dtype("<u8")
COVARIANCE_VALUES = np.dtype("<f8")


class ResultsStore:
    """CSV and binary persistence for experiment outputs under one directory"""

    def __init__(self, output_dir: str, float_format: Optional[str] = None):
        self.output_dir = output_dir
        self.float_format = float_format or config.FLOAT_FORMAT

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def _write(self, frame: pd.DataFrame, name: str) -> str:
        os.makedirs(self.output_dir, exist_ok=True)
        path = self.path(name)
        frame.to_csv(path, index=False, float_format=self.float_format, lineterminator="\n")
        return path

    @staticmethod
    def runs_frame(results: Sequence[RunResult], record_timing: bool = True) -> pd.DataFrame:
        """One row per (run, step) of every completed run"""
        rows = []
        for result in results:
            if result.failed:
                continue
            for estimate, reference in zip(result.per_step_estimates, result.reference_means):
                value = estimate.filter_mean[0]
                rows.append({
                    "repeat": result.repeat,
                    "step": estimate.step,
                    "estimate": value,
                    "reference": reference,
                    "sq_err": (value - reference) ** 2,
                    "neg_frac": estimate.negative_fraction,
                    "wall_clock": estimate.wall_clock if record_timing else 0.0,
                    "sequence": result.sequence,
                    "algorithm": result.algorithm,
                })
        return pd.DataFrame(rows, columns=RUNS_COLUMNS)

    def write_runs(self, results: Sequence[RunResult], record_timing: bool = True,
                   name: str = "runs.csv") -> str:
        failed = [r for r in results if r.failed]
        if failed:
            logger.warning("%d failed run(s) have no rows in %s", len(failed), name)
        return self._write(self.runs_frame(results, record_timing), name)

    def write_summary(self, summaries: Sequence[RunSummary], record_timing: bool = True,
                      name: str = "summary.csv") -> str:
        rows = [summary.model_dump() for summary in summaries]
        frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
        if not record_timing:
            frame["wall_clock_mean"] = 0.0
        return self._write(frame, name)

    def write_sweep(self, rows: Sequence[Dict], name: str = "sweep.csv") -> str:
        """Sweep table: the swept parameter columns followed by the summary columns"""
        frame = pd.DataFrame(list(rows))
        leading = [column for column in frame.columns if column not in SUMMARY_COLUMNS]
        return self._write(frame[leading + [c for c in SUMMARY_COLUMNS if c in frame.columns]], name)

    def write_kalman(self, states: Sequence[KalmanState], name: str = "kalman.csv") -> str:
        frame = pd.DataFrame(
            [{"step": step, "mean": state.mean, "variance": state.variance} for step, state in enumerate(states)],
            columns=KALMAN_COLUMNS)
        return self._write(frame, name)

    def write_trajectory(self, trajectory: SyntheticTrajectory, name: str = "trajectory.csv") -> str:
        observations = np.atleast_2d(trajectory.observations)
        n_obs = observations.shape[1] if trajectory.n_steps else 0
        frame = pd.DataFrame({"step": np.arange(trajectory.n_steps), "state": trajectory.states})
        for k in range(n_obs):
            frame[f"obs_{k + 1}"] = observations[:, k]
        return self._write(frame, name)

    def write_deflections(self, solution: MeshSolution, name: str = "deflection.csv") -> str:
        frame = pd.DataFrame({"position": solution.nodes, "deflection": solution.deflections},
                             columns=DEFLECTION_COLUMNS)
        return self._write(frame, name)

    def save_covariance(self, matrix: np.ndarray, name: str = "covariance.bin") -> str:
        """Dimension p as one little-endian uint64, then the p x p matrix as row-major float64"""
        matrix = np.asarray(matrix, dtype=COVARIANCE_VALUES)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConfigurationError(f"covariance must be square, got shape {matrix.shape}")
        os.makedirs(self.output_dir, exist_ok=True)
        path = self.path(name)
        with open(path, 'wb') as file:
            file.write(np.array([matrix.shape[0]], dtype=COVARIANCE_HEADER).tobytes())
            file.write(np.ascontiguousarray(matrix).tobytes(order="C"))
        return path

    def load_covariance(self, name: str = "covariance.bin") -> np.ndarray:
        with open(self.path(name), 'rb') as file:
            payload = file.read()
        header = COVARIANCE_HEADER.itemsize
        if len(payload) < header:
            raise ConfigurationError(f"{name} is too short for a covariance header")
        p = int(np.frombuffer(payload[:header], dtype=COVARIANCE_HEADER)[0])
        values = np.frombuffer(payload[header:], dtype=COVARIANCE_VALUES)
        if values.size != p * p:
            raise ConfigurationError(f"{name} holds {values.size} values, expected {p * p}")
        return values.reshape(p, p).copy()

    def read_runs(self, name: str = "runs.csv") -> pd.DataFrame:
        path = self.path(name)
        if not os.path.exists(path):
            raise ConfigurationError(f"no {name} in {self.output_dir}")
        frame = pd.read_csv(path, float_precision="round_trip")
        missing = [column for column in RUNS_COLUMNS if column not in frame.columns]
        if missing:
            raise ConfigurationError(f"{name} is missing columns {missing}")
        return frame


def per_run_mse(runs: pd.DataFrame) -> pd.DataFrame:
    """MSE, RMSE, wall-clock and mean negative fraction per (algorithm, sequence, repeat)"""
    grouped = runs.groupby(["algorithm", "sequence", "repeat"], sort=True)
    table = grouped.agg(mse=("sq_err", "mean"), wall_clock=("wall_clock", "sum"),
                        neg_frac=("neg_frac", "mean")).reset_index()
    table["rmse"] = np.sqrt(table["mse"])
    return table


def report_table(runs: pd.DataFrame) -> pd.DataFrame:
    """Per-algorithm summary of a runs.csv table"""
    table = per_run_mse(runs)
    grouped = table.groupby("algorithm", sort=True)
    return grouped.agg(
        n_runs=("mse", "size"),
        mse_mean=("mse", "mean"),
        mse_median=("mse", "median"),
        mse_q1=("mse", lambda s: s.quantile(0.25)),
        mse_q3=("mse", lambda s: s.quantile(0.75)),
        rmse_mean=("rmse", "mean"),
        wall_clock_mean=("wall_clock", "mean"),
        negative_fraction_mean=("neg_frac", "mean"),
    ).reset_index()


def load_runs_from(paths: List[str]) -> pd.DataFrame:
    """Concatenate runs.csv tables from several output directories or files"""
    frames = []
    for path in paths:
        if os.path.isdir(path):
            frames.append(ResultsStore(path).read_runs())
        else:
            directory, name = os.path.split(path)
            frames.append(ResultsStore(directory or ".").read_runs(name))
    if not frames:
        raise ConfigurationError("no runs tables given")
    return pd.concat(frames, ignore_index=True)
