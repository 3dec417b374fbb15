"""Ordered families of level likelihoods g^0..g^L.

A ladder evaluates, for the particles of every level l, the pair
(g^l, g^{l-1}) needed for the telescoped weights, with g^{-1} = 0. Values
are produced in log space and exponentiated at the end; ladders that set
``joint_log_shift`` subtract one common maximum over all levels first, so the
differences g^l - g^{l-1} keep their meaning while avoiding underflow.
"""

import copy
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from filter_errors import ConfigurationError, EvaluationError

logger = logging.getLogger(__name__)


@dataclass
class LevelEvaluation:
    """Likelihood values at the particles of one level"""
    level: int
    fine: np.ndarray    # g^l
    coarse: np.ndarray  # g^{l-1}, zeros for level 0

    @property
    def delta(self) -> np.ndarray:
        return self.fine - self.coarse


class LikelihoodLadder(ABC):
    """Abstract base class for level likelihood families"""

    joint_log_shift: bool = False

    def __init__(self):
        self.observations: Optional[Sequence] = None

    @property
    @abstractmethod
    def n_levels(self) -> int:
        """Number of levels L + 1"""

    @abstractmethod
    def log_likelihood(self, level: int, states: np.ndarray, step: int) -> np.ndarray:
        """log g^level_step at each row of states"""

    def calibrate(self, states: np.ndarray, fine_log_values: np.ndarray, step: int) -> None:
        """Hook run on the top-level particles before the lower levels are evaluated"""

    def reset(self) -> None:
        """Drop per-run state (fitted corrections, memos)"""

    def bind(self, observations: Sequence) -> "LikelihoodLadder":
        """Copy of this ladder reading its observations from the given sequence"""
        bound = copy.copy(self)
        bound.observations = observations
        bound.reset()
        return bound

    def restrict(self, level: int) -> "LikelihoodLadder":
        """Single-level ladder using only g^level"""
        if not 0 <= level < self.n_levels:
            raise ConfigurationError(f"cannot restrict to level {level} of {self.n_levels}")
        return RestrictedLadder(self, level)

    def observation(self, step: int):
        if self.observations is None:
            raise ConfigurationError("likelihood ladder has no observations bound")
        if not 0 <= step < len(self.observations):
            raise ConfigurationError(f"no observation for step {step} ({len(self.observations)} available)")
        return self.observations[step]

    def evaluate(self, level_states: Sequence[np.ndarray], step: int,
                 offsets: Optional[Sequence[int]] = None) -> List[LevelEvaluation]:
        """
        Evaluate every level's likelihood pair at its own particles.

        The top level is evaluated first and handed to ``calibrate`` so that
        corrections fitted on top-level particles are in place before any
        lower level is weighted.

        Args:
            level_states: states of each level, index l holding the level-l particles
            step: observation step
            offsets: global index of each level's first particle (for error messages)

        Returns:
            One LevelEvaluation per level, in level order
        """
        n_levels = self.n_levels
        if len(level_states) != n_levels:
            raise ConfigurationError(f"got states for {len(level_states)} levels, ladder has {n_levels}")
        if offsets is None:
            offsets = np.concatenate([[0], np.cumsum([len(s) for s in level_states])])[:-1]
        top = n_levels - 1

        fine_logs: List[Optional[np.ndarray]] = [None] * n_levels
        coarse_logs: List[Optional[np.ndarray]] = [None] * n_levels

        fine_logs[top] = self._checked(top, level_states[top], step, offsets[top])
        if top > 0 and len(level_states[top]) > 0:
            self.calibrate(level_states[top], fine_logs[top], step)

        for level in range(top, -1, -1):
            if fine_logs[level] is None:
                fine_logs[level] = self._checked(level, level_states[level], step, offsets[level])
            if level > 0:
                coarse_logs[level] = self._checked(level - 1, level_states[level], step, offsets[level])

        shift = self._common_shift(fine_logs + coarse_logs) if self.joint_log_shift else 0.0

        evaluations = []
        for level in range(n_levels):
            fine = np.exp(fine_logs[level] - shift)
            if coarse_logs[level] is None:
                coarse = np.zeros_like(fine)
            else:
                coarse = np.exp(coarse_logs[level] - shift)
            evaluations.append(LevelEvaluation(level=level, fine=fine, coarse=coarse))
        return evaluations

    def _checked(self, level: int, states: np.ndarray, step: int, offset: int) -> np.ndarray:
        if len(states) == 0:
            return np.zeros(0)
        logs = np.asarray(self.log_likelihood(level, states, step), dtype=float).reshape(-1)
        if logs.shape[0] != len(states):
            raise ConfigurationError(
                f"level {level} likelihood returned {logs.shape[0]} values for {len(states)} states")
        bad = np.flatnonzero(np.isnan(logs) | (logs == np.inf))
        if bad.size:
            raise EvaluationError("non-finite likelihood value", int(offset + bad[0]), level)
        return logs

    @staticmethod
    def _common_shift(log_arrays: Sequence[Optional[np.ndarray]]) -> float:
        maxima = [arr[np.isfinite(arr)].max() for arr in log_arrays
                  if arr is not None and np.isfinite(arr).any()]
        return float(max(maxima)) if maxima else 0.0


class RestrictedLadder(LikelihoodLadder):
    """One level of a parent ladder, exposed as a single-level family"""

    def __init__(self, parent: LikelihoodLadder, level: int):
        super().__init__()
        self.parent = parent
        self.level = level
        self.joint_log_shift = parent.joint_log_shift
        self.observations = parent.observations

    @property
    def n_levels(self) -> int:
        return 1

    def log_likelihood(self, level: int, states: np.ndarray, step: int) -> np.ndarray:
        return self.parent.log_likelihood(self.level, states, step)

    def bind(self, observations: Sequence) -> "LikelihoodLadder":
        return RestrictedLadder(self.parent.bind(observations), self.level)

