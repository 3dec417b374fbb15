"""Exact filter for the scalar random walk observed through y = x * 1_p + V, V ~ N(0, Sigma).

The observation matrix is the all-ones column, the same broadcast reading the
big-data likelihoods use. Step n of the output conditions on y_0..y_n.
"""

from typing import List, Sequence, Union

import numpy as np
from scipy.linalg import cho_solve

from bigdata import ObservationCovariance
from filter_errors import ConfigurationError
from models import KalmanState

CovarianceLike = Union[ObservationCovariance, np.ndarray]


def _as_covariance(cov: CovarianceLike) -> ObservationCovariance:
    if isinstance(cov, ObservationCovariance):
        return cov
    return ObservationCovariance.from_matrix(np.atleast_2d(np.asarray(cov, dtype=float)))


def kalman_predict(state: KalmanState, sigma: float) -> KalmanState:
    """Random-walk predict: the mean stays, the variance grows by sigma^2"""
    return KalmanState(mean=state.mean, variance=state.variance + sigma ** 2)


def kalman_update(state: KalmanState, y_vector, cov: CovarianceLike) -> KalmanState:
    """
    Condition the scalar state on one p-dimensional observation.

    With a = 1' Sigma^-1 1 and b = 1' Sigma^-1 y (one two-column solve against
    the Cholesky factor) the posterior is
    mean = (m + v b) / (1 + v a), variance = v / (1 + v a).
    """
    y = np.atleast_1d(np.asarray(y_vector, dtype=float))
    chol = _as_covariance(cov).chol_full
    if chol.shape[0] != y.shape[0]:
        raise ConfigurationError(f"observation has length {y.shape[0]}, covariance is {chol.shape[0]}x{chol.shape[0]}")
    if state.variance == 0.0:
        return state
    ones = np.ones_like(y)
    solved = cho_solve((chol, True), np.column_stack([ones, y]))
    a = float(ones @ solved[:, 0])
    b = float(ones @ solved[:, 1])
    v = state.variance
    denominator = 1.0 + v * a
    return KalmanState(mean=(state.mean + v * b) / denominator, variance=v / denominator)


def kalman_filter(observations: Sequence, sigma: float, cov: CovarianceLike,
                  init_mean: float = 0.0) -> List[KalmanState]:
    """Fold predict + update over the observations, starting from (init_mean, 0)"""
    cov = _as_covariance(cov)
    state = KalmanState(mean=init_mean, variance=0.0)
    states = []
    for y in observations:
        state = kalman_update(kalman_predict(state, sigma), y, cov)
        states.append(state)
    return states
