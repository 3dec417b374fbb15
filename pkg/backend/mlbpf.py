"""Multilevel bootstrap particle filter engine.

Particles are split into levels by a LevelSchedule. Level-l particles are
weighted by the telescoped likelihood difference g^l - g^{l-1}, so weights
can be negative. Resampling draws particles with probability proportional to
the modulus of their weight and hands every survivor the sign of the summed
weight at its state. Afterwards every weight is +1 or -1, or 0 for a survivor
whose state carries weights that cancel exactly. With a single level the
engine is the classical bootstrap particle filter.

Ensembles are immutable: each operation returns a new one.
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from config import config
from filter_errors import (
    ConfigurationError,
    DegenerateEnsembleError,
    EstimateDegenerateError,
    FilterError,
    StepError,
    TransitionError,
)
from hmm_models import HmmModel
from models import FilterEstimate, LevelSchedule
from rng_streams import Phase, as_streams

logger = logging.getLogger(__name__)

TestFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SignedEnsemble:
    """Particle states with +/-1 signs, split into levels"""
    states: np.ndarray                        # (S, d)
    signs: np.ndarray                         # (S,) of +1.0 / -1.0, 0.0 on exactly cancelled states
    schedule: LevelSchedule
    step_index: int = 0
    raw_weights: Optional[np.ndarray] = None  # telescoped weights, set between reweight and resample
    negative_fraction: float = 0.0

    @property
    def total_size(self) -> int:
        return self.schedule.total_size

    def level_states(self, level: int) -> np.ndarray:
        return self.states[self.schedule.level_slice(level)]

    def level_signs(self, level: int) -> np.ndarray:
        return self.signs[self.schedule.level_slice(level)]


@dataclass
class SignedMeasureView:
    """Atoms of one level's signed measure"""
    level: int
    states: np.ndarray
    weights: np.ndarray

    @property
    def atoms(self):
        return list(zip(self.states, self.weights))


def _identity(states: np.ndarray) -> np.ndarray:
    return states


def _as_state_array(values: np.ndarray, n: int) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim == 1:
        array = array.reshape(n, -1)
    if array.shape[0] != n:
        raise ConfigurationError(f"sampler returned {array.shape[0]} states, expected {n}")
    return array


def init(model: HmmModel, schedule: LevelSchedule, rng_seed) -> SignedEnsemble:
    """Draw total_size particles from the prior, one substream per level, all signs +1"""
    if schedule.n_levels != model.n_levels:
        raise ConfigurationError(
            f"schedule has {schedule.n_levels} levels but the model has {model.n_levels}")
    streams = as_streams(rng_seed)
    blocks = []
    for level in range(schedule.n_levels):
        n = schedule.level_size(level)
        rng = streams.stream(0, Phase.INIT, level)
        blocks.append(_as_state_array(model.prior_sampler(rng, n), n))
    states = np.concatenate(blocks, axis=0)
    return SignedEnsemble(states=states, signs=np.ones(schedule.total_size),
                          schedule=schedule, step_index=0)


def reweight(ensemble: SignedEnsemble, model: HmmModel, obs_step: int) -> SignedEnsemble:
    """
    Attach telescoped weights (g^l - g^{l-1}) * sign / (c_l N) to every particle.

    Raises:
        ConfigurationError: if the ensemble already carries raw weights
        EvaluationError: if a likelihood value is non-finite
        DegenerateEnsembleError: if every telescoped weight is exactly zero
    """
    if ensemble.raw_weights is not None:
        raise ConfigurationError("ensemble is already weighted; resample it first")
    schedule = ensemble.schedule
    level_states = [ensemble.level_states(level) for level in range(schedule.n_levels)]
    offsets = [schedule.offset(level) for level in range(schedule.n_levels)]
    evaluations = model.likelihoods.evaluate(level_states, obs_step, offsets)

    raw = np.empty(schedule.total_size)
    for evaluation in evaluations:
        level = evaluation.level
        raw[schedule.level_slice(level)] = (
            evaluation.delta * ensemble.level_signs(level) / schedule.level_size(level))
    if not np.any(raw):
        raise DegenerateEnsembleError(f"all telescoped weights are zero at step {obs_step}")
    return replace(ensemble, raw_weights=raw)


def _state_groups(states: np.ndarray):
    """First occurrence of every distinct state and the group index of each particle"""
    if states.shape[1] == 1:
        _, first, inverse = np.unique(states[:, 0], return_index=True, return_inverse=True)
    else:
        _, first, inverse = np.unique(states, axis=0, return_index=True, return_inverse=True)
    return first, inverse.reshape(-1)


def state_signs(states: np.ndarray, raw_weights: np.ndarray) -> np.ndarray:
    """Sign of the summed raw weight at each particle's state, aligned with the particles"""
    first, inverse = _state_groups(states)
    totals = np.bincount(inverse, weights=raw_weights, minlength=len(first))
    return np.sign(totals[inverse])


def draw_total_variation(weights: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial draw of particle indices with probabilities |w^i| / sum_j |w^j|"""
    cumulative = np.cumsum(np.abs(weights))
    total = cumulative[-1] if len(cumulative) else 0.0
    if not total > 0:
        raise DegenerateEnsembleError("total variation of the weighted ensemble is zero")
    u = rng.random(size) * total
    indices = np.searchsorted(cumulative, u, side="right")
    # u can round up to the total; never land past the last particle with mass
    return np.minimum(indices, np.flatnonzero(weights)[-1])


def resample(ensemble: SignedEnsemble, rng_seed) -> SignedEnsemble:
    """
    Draw total_size survivors with probabilities |w^i| / sum_j |w^j| and assign signs.

    Each survivor's sign is the sign of the summed raw weight of all source
    particles sharing its state, so a survivor on a state whose weights
    cancel exactly gets sign 0.

    Raises:
        DegenerateEnsembleError: if the total variation is zero or every
            survivor gets sign 0
    """
    if ensemble.raw_weights is None:
        raise ConfigurationError("ensemble has no raw weights; call reweight first")
    streams = as_streams(rng_seed)
    rng = streams.stream(ensemble.step_index, Phase.RESAMPLE)
    indices = draw_total_variation(ensemble.raw_weights, ensemble.total_size, rng)
    signs = state_signs(ensemble.states, ensemble.raw_weights)[indices]
    if not np.any(signs):
        raise DegenerateEnsembleError("every survivor sits on a state whose weights cancel")
    return SignedEnsemble(
        states=ensemble.states[indices],
        signs=signs,
        schedule=ensemble.schedule,
        step_index=ensemble.step_index,
        raw_weights=None,
        negative_fraction=float(np.mean(signs < 0)),
    )


def mutate(ensemble: SignedEnsemble, model: HmmModel, rng_seed) -> SignedEnsemble:
    """Advance every particle through the transition kernel; signs are carried over"""
    if ensemble.raw_weights is not None:
        raise ConfigurationError("cannot mutate a weighted ensemble; resample it first")
    streams = as_streams(rng_seed)
    schedule = ensemble.schedule
    blocks = []
    for level in range(schedule.n_levels):
        states = ensemble.level_states(level)
        rng = streams.stream(ensemble.step_index, Phase.MUTATE, level)
        try:
            moved = _as_state_array(model.transition_sampler(rng, states), len(states))
        except FilterError:
            raise
        except Exception as exc:
            raise TransitionError(f"transition sampler failed: {exc}", schedule.offset(level)) from exc
        bad = np.flatnonzero(~np.all(np.isfinite(moved), axis=1))
        if bad.size:
            raise TransitionError("transition produced a non-finite state", int(schedule.offset(level) + bad[0]))
        blocks.append(moved)
    return replace(ensemble, states=np.concatenate(blocks, axis=0),
                   step_index=ensemble.step_index + 1)


def _weighted_ratio(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    total = weights.sum()
    if total == 0:
        raise EstimateDegenerateError("signed normalizer is exactly zero")
    values = np.asarray(values, dtype=float)
    return np.tensordot(weights, values, axes=(0, 0)) / total


def estimate(ensemble: SignedEnsemble, test_fn: TestFunction = _identity):
    """Sum_i w^i phi(x^i) / sum_i w^i over the signed particles"""
    result = _weighted_ratio(ensemble.signs, test_fn(ensemble.states))
    return float(np.reshape(result, -1)[0]) if np.size(result) == 1 else result


def pre_resample_estimate(ensemble: SignedEnsemble, test_fn: TestFunction = _identity):
    """Self-normalised estimate with the telescoped weights, before resampling"""
    if ensemble.raw_weights is None:
        raise ConfigurationError("ensemble has no raw weights")
    result = _weighted_ratio(ensemble.raw_weights, test_fn(ensemble.states))
    return float(np.reshape(result, -1)[0]) if np.size(result) == 1 else result


def level_view(ensemble: SignedEnsemble, level: int) -> SignedMeasureView:
    """Atoms of the level-l signed measure (raw weights if present, else signs / (c_l N))"""
    schedule = ensemble.schedule
    window = schedule.level_slice(level)
    if ensemble.raw_weights is not None:
        weights = ensemble.raw_weights[window]
    else:
        weights = ensemble.signs[window] / schedule.level_size(level)
    return SignedMeasureView(level=level, states=ensemble.states[window], weights=weights)


def level_measure(ensemble: SignedEnsemble, level: int, test_fn: TestFunction = None,
                  absolute: bool = False) -> float:
    """
    Level-l unnormalised measure (1 / c_l N) sum_{i in P_l} w^i phi(x^i).

    With ``absolute`` the signs are replaced by their moduli (total variation).
    """
    schedule = ensemble.schedule
    window = schedule.level_slice(level)
    signs = ensemble.signs[window]
    weights = np.abs(signs) if absolute else signs
    states = ensemble.states[window]
    values = np.ones(len(states)) if test_fn is None else np.asarray(test_fn(states), dtype=float).reshape(len(states))
    return float(np.dot(weights, values) / schedule.level_size(level))


def _moments(ensemble: SignedEnsemble):
    mean = np.atleast_1d(estimate(ensemble))
    second = np.atleast_1d(estimate(ensemble, lambda x: x * x))
    return mean, np.sqrt(np.maximum(second - mean * mean, 0.0))


def run_filter(model: HmmModel, schedule: LevelSchedule, n_steps: int,
               observations: Optional[Sequence], rng_seed,
               eps_norm: Optional[float] = None,
               on_step: Optional[Callable[[int, SignedEnsemble], None]] = None) -> List[FilterEstimate]:
    """
    Run the filter for n_steps observation steps.

    Args:
        model: HMM with its level likelihoods
        schedule: level sample sizes; a single level gives the classical BPF
        n_steps: number of steps to run
        observations: observation sequence bound into the likelihoods (None if
            the model is already bound)
        rng_seed: root seed or RandomStreams
        eps_norm: degenerate-normalizer guard (defaults to config.EPS_NORM)
        on_step: optional callback receiving each post-resampling ensemble

    Returns:
        One FilterEstimate per step

    Raises:
        StepError: wrapping the first failure, with its step index
    """
    if n_steps < 0:
        raise ConfigurationError(f"n_steps must be nonnegative, got {n_steps}")
    if n_steps == 0:
        return []
    if observations is not None:
        if len(observations) < n_steps:
            raise ConfigurationError(f"{len(observations)} observations for {n_steps} steps")
        model = model.with_observations(observations)
    eps = config.EPS_NORM if eps_norm is None else eps_norm
    streams = as_streams(rng_seed)

    estimates: List[FilterEstimate] = []
    ensemble: Optional[SignedEnsemble] = None
    for step in range(n_steps):
        started = time.perf_counter()
        try:
            if ensemble is None:
                ensemble = init(model, schedule, streams)
            else:
                ensemble = mutate(ensemble, model, streams)
            prediction = np.atleast_1d(estimate(ensemble))
            weighted = reweight(ensemble, model, step)
            try:
                pre_mean = np.atleast_1d(pre_resample_estimate(weighted))
            except EstimateDegenerateError:
                pre_mean = np.full(prediction.shape, np.nan)
            ensemble = resample(weighted, streams)
            sign_total = float(ensemble.signs.sum())
            degenerate = abs(sign_total) < eps * ensemble.total_size
            if degenerate:
                logger.warning("step %d: normalizer %.3g below guard (%d particles, %.1f%% negative)",
                               step, sign_total / ensemble.total_size, ensemble.total_size,
                               100 * ensemble.negative_fraction)
            mean, std = _moments(ensemble)
        except FilterError as exc:
            raise StepError(step, exc) from exc
        if on_step is not None:
            on_step(step, ensemble)
        estimates.append(FilterEstimate(
            step=step,
            filter_mean=mean.tolist(),
            filter_std=std.tolist(),
            prediction_mean=prediction.tolist(),
            pre_resample_mean=pre_mean.tolist(),
            normalizer=sign_total / ensemble.total_size,
            negative_fraction=ensemble.negative_fraction,
            wall_clock=time.perf_counter() - started,
            degenerate_normalizer=degenerate,
        ))
    return estimates
