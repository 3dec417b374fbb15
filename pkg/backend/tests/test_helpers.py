"""Test helper utilities and fixtures for filter and experiment testing"""

import os
import sys
from typing import List, Sequence

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(__file__)))

from hmm_models import Ar1Signal, HmmModel, simulate
from likelihood_ladder import LikelihoodLadder
from mlbpf import SignedEnsemble
from models import ExperimentConfig, FilterEstimate, LevelSchedule, RunResult


class GaussianLadder(LikelihoodLadder):
    """Scalar observation y = x + noise, each level assuming its own noise variance"""

    def __init__(self, variances: Sequence[float]):
        super().__init__()
        self.variances = list(variances)

    @property
    def n_levels(self) -> int:
        return len(self.variances)

    def log_likelihood(self, level: int, states: np.ndarray, step: int) -> np.ndarray:
        y = float(np.reshape(self.observation(step), -1)[0])
        return -0.5 * (y - states[:, 0]) ** 2 / self.variances[level]


class FixedLadder(LikelihoodLadder):
    """Level likelihoods given as plain functions of the state (observations ignored)"""

    def __init__(self, functions):
        super().__init__()
        self.functions = list(functions)

    @property
    def n_levels(self) -> int:
        return len(self.functions)

    def log_likelihood(self, level: int, states: np.ndarray, step: int) -> np.ndarray:
        values = np.array([self.functions[level](state[0]) for state in states], dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(values)


def point_mass_model(value: float, ladder: LikelihoodLadder) -> HmmModel:
    """Prior and kernel both stay at one point"""
    return HmmModel(
        prior_sampler=lambda rng, n: np.full((n, 1), value),
        transition_sampler=lambda rng, states: states.copy(),
        likelihoods=ladder,
        name="point-mass",
    )


def linear_gaussian_model(sigma: float = 1.0, variances: Sequence[float] = (1.0,),
                          init_mean: float = 0.0) -> HmmModel:
    """Random walk observed in scalar Gaussian noise, one level per variance"""
    return Ar1Signal(init_mean=init_mean, sigma=sigma).model(GaussianLadder(variances), name="linear-gaussian")


def linear_gaussian_data(n_steps: int, seed: int, sigma: float = 1.0, obs_var: float = 1.0,
                         init_mean: float = 0.0):
    """Trajectory of the scalar linear-Gaussian model"""
    def sampler(rng, x, step):
        return np.array([x + np.sqrt(obs_var) * rng.standard_normal()])
    return simulate(Ar1Signal(init_mean=init_mean, sigma=sigma), n_steps, sampler, seed, obs_dim=1)


def make_ensemble(states: Sequence[float], signs: Sequence[float] = None,
                  schedule: LevelSchedule = None, raw_weights: Sequence[float] = None,
                  step_index: int = 0) -> SignedEnsemble:
    """Ensemble of scalar states, one level by default"""
    states = np.asarray(states, dtype=float).reshape(-1, 1)
    schedule = schedule or LevelSchedule(multipliers=[1], base_size=len(states))
    signs = np.ones(len(states)) if signs is None else np.asarray(signs, dtype=float)
    raw = None if raw_weights is None else np.asarray(raw_weights, dtype=float)
    return SignedEnsemble(states=states, signs=signs, schedule=schedule, raw_weights=raw, step_index=step_index)


def small_bigdata_config(**overrides) -> ExperimentConfig:
    """Fast bigdata configuration used across harness tests"""
    values = dict(
        experiment="bigdata",
        algorithm="mlbpf",
        multipliers=[3, 1],
        base_size=20,
        n_steps=5,
        n_repeats=2,
        p=4,
        sigma=0.1,
        root_seed=3,
        data_seed=5,
        covariance_seed=2,
        timing_steps=2,
        record_timing=False,
    )
    values.update(overrides)
    return ExperimentConfig(**values)


def make_run_result(mse: float, algorithm: str = "mlbpf", repeat: int = 0, failed: bool = False,
                    negative_fractions: List[float] = (), wall_clock: float = 0.0) -> RunResult:
    """RunResult with a given MSE and no per-step payload"""
    estimates = [FilterEstimate(step=i, filter_mean=[0.0], filter_std=[0.0], prediction_mean=[0.0],
                                pre_resample_mean=[0.0], normalizer=1.0, negative_fraction=f)
                 for i, f in enumerate(negative_fractions)]
    return RunResult(algorithm=algorithm, sequence=0, repeat=repeat, per_step_estimates=estimates,
                     mse=mse, rmse=float(np.sqrt(mse)) if not failed else float("nan"),
                     negative_fraction_trace=list(negative_fractions), failed=failed,
                     failed_step=1 if failed else None, error="boom" if failed else None,
                     wall_clock=wall_clock)


class StepClock:
    """Deterministic clock for timing tests: every call advances by a fixed tick"""

    def __init__(self, tick: float = 1.0):
        self.tick = tick
        self.now = 0.0
        self.calls = 0

    def __call__(self) -> float:
        self.calls += 1
        self.now += self.tick
        return self.now
