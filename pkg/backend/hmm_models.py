"""Hidden Markov models: the generic container and the Gaussian AR(1) signal"""

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from filter_errors import ConfigurationError
from likelihood_ladder import LikelihoodLadder
from rng_streams import Phase, as_streams

PriorSampler = Callable[[np.random.Generator, int], np.ndarray]
TransitionSampler = Callable[[np.random.Generator, np.ndarray], np.ndarray]
ObservationSampler = Callable[[np.random.Generator, float, int], np.ndarray]


@dataclass(frozen=True)
class HmmModel:
    """Signal prior, transition kernel and the ordered level likelihoods"""
    prior_sampler: PriorSampler            # (rng, n) -> (n, d) draws from pi_0
    transition_sampler: TransitionSampler  # (rng, states) -> states moved through K
    likelihoods: LikelihoodLadder          # g^0..g^L
    name: str = "hmm"

    @property
    def n_levels(self) -> int:
        return self.likelihoods.n_levels

    @property
    def top_level(self) -> int:
        return self.likelihoods.n_levels - 1

    def with_observations(self, observations: Sequence) -> "HmmModel":
        """Copy whose likelihoods read the given observation sequence"""
        return replace(self, likelihoods=self.likelihoods.bind(observations))

    def restricted(self, level: int) -> "HmmModel":
        """Single-level model that weights with g^level only"""
        return replace(self, likelihoods=self.likelihoods.restrict(level),
                       name=f"{self.name}[level {level}]")


def ar1_prior(init_mean: float, sigma: float, rng: np.random.Generator, size=None):
    """X_0 ~ N(init_mean, sigma^2)"""
    if sigma < 0:
        raise ConfigurationError(f"sigma must be nonnegative, got {sigma}")
    return init_mean + sigma * rng.standard_normal(size)


def ar1_step(x, sigma: float, rng: np.random.Generator):
    """X_n | X_{n-1} = x ~ N(x, sigma^2), elementwise for arrays"""
    if sigma < 0:
        raise ConfigurationError(f"sigma must be nonnegative, got {sigma}")
    x = np.asarray(x, dtype=float)
    return x + sigma * rng.standard_normal(x.shape)


@dataclass(frozen=True)
class Ar1Signal:
    """Gaussian random-walk signal shared by both experiments"""
    init_mean: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"AR(1) signal needs sigma > 0, got {self.sigma}")

    def prior_sampler(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return ar1_prior(self.init_mean, self.sigma, rng, size=(n, 1))

    def transition_sampler(self, rng: np.random.Generator, states: np.ndarray) -> np.ndarray:
        return ar1_step(states, self.sigma, rng)

    def model(self, likelihoods: LikelihoodLadder, name: str = "ar1") -> HmmModel:
        return HmmModel(prior_sampler=self.prior_sampler,
                        transition_sampler=self.transition_sampler,
                        likelihoods=likelihoods, name=name)


@dataclass
class SyntheticTrajectory:
    """Realized signal path and the observations drawn from it"""
    states: np.ndarray        # (n_steps,)
    observations: np.ndarray  # (n_steps, m)
    seed: int

    def __post_init__(self):
        if len(self.states) != len(self.observations):
            raise ConfigurationError(
                f"{len(self.states)} states but {len(self.observations)} observations")

    @property
    def n_steps(self) -> int:
        return len(self.states)


def simulate(signal: Ar1Signal, n_steps: int, obs_sampler: ObservationSampler,
             rng_seed: int, obs_dim: Optional[int] = None) -> SyntheticTrajectory:
    """
    Draw a signal path and its observations.

    Args:
        signal: AR(1) parameters
        n_steps: number of observation steps
        obs_sampler: (rng, x, step) -> observation vector, using the exact model
        rng_seed: data seed; the same seed reproduces identical data
        obs_dim: observation dimension, only needed to shape an empty trajectory

    Returns:
        SyntheticTrajectory with states x_0..x_{n-1} and observations y_0..y_{n-1}
    """
    if n_steps < 0:
        raise ConfigurationError(f"n_steps must be nonnegative, got {n_steps}")
    streams = as_streams(rng_seed)
    states = np.empty(n_steps)
    observations = []
    x = 0.0
    for step in range(n_steps):
        rng = streams.stream(step, Phase.DATA)
        if step == 0:
            x = float(ar1_prior(signal.init_mean, signal.sigma, rng))
        else:
            x = float(ar1_step(x, signal.sigma, rng))
        states[step] = x
        y = np.atleast_1d(np.asarray(obs_sampler(streams.stream(step, Phase.OBSERVATION), x, step), dtype=float))
        observations.append(y)
    if observations:
        obs_array = np.vstack(observations)
    else:
        obs_array = np.empty((0, obs_dim or 0))
    return SyntheticTrajectory(states=states, observations=obs_array, seed=streams.root_seed)
