"""Problem builders for the two experiments.

A suite turns an ExperimentConfig into the pieces a comparison needs: the
observation sequences (one per data seed), the reference filter means on each
sequence and the multilevel model every algorithm is built from. Sequences and
references are produced outside the timed region of a run.
"""

import logging
from abc import ABC, abstractmethod
from typing import Dict, Hashable, List, Type

import numpy as np

from beam import BeamSpec, beam_observation_sampler, build_beam_model
from bigdata import ObservationCovariance, build_bigdata_model, generate_covariance, observation_sampler
from filter_errors import ConfigurationError
from hmm_models import Ar1Signal, HmmModel, SyntheticTrajectory, simulate
from kalman_oracle import kalman_filter
from mlbpf import run_filter
from models import ExperimentConfig, LevelSchedule

logger = logging.getLogger(__name__)

# Keeps reference-filter streams apart from the streams of the compared repeats
REFERENCE_SEED_OFFSET = 1 << 40


class ExperimentSuite(ABC):
    """Abstract base class for experiment problem builders"""

    name = ""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.signal = Ar1Signal(init_mean=config.init_mean, sigma=config.sigma)

    def data_seed(self, sequence: int) -> int:
        return self.config.data_seed + sequence

    def cache_key(self, sequence: int) -> Hashable:
        """Everything the sequence and its reference depend on"""
        return (self.name, self.data_seed(sequence), self.config.n_steps) + self._reference_key()

    @abstractmethod
    def _reference_key(self) -> tuple:
        pass

    @abstractmethod
    def generate_data(self, sequence: int) -> SyntheticTrajectory:
        """Synthetic observation sequence number `sequence`"""
        pass

    @abstractmethod
    def reference_means(self, trajectory: SyntheticTrajectory) -> List[float]:
        """Filter means the estimates of every algorithm are scored against"""
        pass

    @abstractmethod
    def build_model(self) -> HmmModel:
        """Unbound multilevel model shared by every compared algorithm"""
        pass


class BigDataSuite(ExperimentSuite):
    """Scalar random walk seen through p correlated Gaussian coordinates, scored against Kalman"""

    name = "bigdata"

    def __init__(self, config: ExperimentConfig):
        super().__init__(config)
        self.covariance: ObservationCovariance = generate_covariance(config.p, config.covariance_seed)
        logger.info("bigdata suite: p=%d, covariance seed %d", config.p, self.covariance.seed)

    def _reference_key(self) -> tuple:
        c = self.config
        return (c.p, c.covariance_seed, c.sigma, c.init_mean)

    def generate_data(self, sequence: int) -> SyntheticTrajectory:
        return simulate(self.signal, self.config.n_steps, observation_sampler(self.covariance),
                        self.data_seed(sequence), obs_dim=self.config.p)

    def reference_means(self, trajectory: SyntheticTrajectory) -> List[float]:
        states = kalman_filter(trajectory.observations, self.config.sigma, self.covariance,
                               init_mean=self.config.init_mean)
        return [state.mean for state in states]

    def build_model(self) -> HmmModel:
        return build_bigdata_model(self.config.p, self.config.sigma, self.config.covariance_seed,
                                   covariance=self.covariance, init_mean=self.config.init_mean)


class BeamSuite(ExperimentSuite):
    """Moving load on a clamped beam, scored against a large fine-mesh bootstrap filter"""

    name = "beam"

    def __init__(self, config: ExperimentConfig):
        super().__init__(config)
        self.spec = BeamSpec.isotropic(
            sensors=config.sensors,
            noise_var=config.noise_var,
            length=config.beam_length,
            stiffness=config.stiffness,
            load_profile=config.load_profile,
            load_width=config.load_width,
        )

    def _reference_key(self) -> tuple:
        c = self.config
        return (c.reference_size, c.reference_theta, c.sigma, c.init_mean, tuple(c.sensors),
                c.noise_var, c.beam_length, c.stiffness, c.load_profile, c.load_width)

    def generate_data(self, sequence: int) -> SyntheticTrajectory:
        # Data come from the finest mesh in play
        sampler = beam_observation_sampler(self.spec, self.config.reference_theta)
        return simulate(self.signal, self.config.n_steps, sampler, self.data_seed(sequence),
                        obs_dim=self.spec.n_sensors)

    def reference_means(self, trajectory: SyntheticTrajectory) -> List[float]:
        c = self.config
        theta = c.reference_theta
        reference_model = build_beam_model(self.spec, theta, theta, c.sigma, init_mean=c.init_mean).restricted(1)
        schedule = LevelSchedule(multipliers=[1], base_size=c.reference_size)
        logger.info("reference filter: N=%d, theta=%d, seed %d", c.reference_size, theta, trajectory.seed)
        estimates = run_filter(reference_model, schedule, trajectory.n_steps, trajectory.observations,
                               trajectory.seed + REFERENCE_SEED_OFFSET)
        return [estimate.filter_mean[0] for estimate in estimates]

    def build_model(self) -> HmmModel:
        c = self.config
        return build_beam_model(self.spec, c.theta0, c.theta1, c.sigma, init_mean=c.init_mean)


SUITES: Dict[str, Type[ExperimentSuite]] = {
    BigDataSuite.name: BigDataSuite,
    BeamSuite.name: BeamSuite,
}


def build_suite(config: ExperimentConfig) -> ExperimentSuite:
    if config.experiment not in SUITES:
        raise ConfigurationError(f"unknown experiment '{config.experiment}'")
    return SUITES[config.experiment](config)


def squared_errors(estimates, reference_means: List[float]) -> np.ndarray:
    """Per-step squared deviation of the filter mean from the reference mean"""
    means = np.array([estimate.filter_mean[0] for estimate in estimates])
    reference = np.asarray(reference_means[:len(means)], dtype=float)
    return (means - reference) ** 2
