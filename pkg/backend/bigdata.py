"""High-dimensional Gaussian observations with a dense random covariance.

The exact likelihood (level 1) needs triangular solves against the full
Cholesky factor, Theta(p^2) per particle; the level-0 approximation keeps only
the diagonal, Theta(p). Level 0 is rescaled each step by the least-squares
multiplier C fitted on the level-1 particles.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from config import config
from filter_errors import ConfigurationError
from hmm_models import Ar1Signal, HmmModel
from likelihood_ladder import LikelihoodLadder
from models import ScalingCorrection
from rng_streams import Phase, as_streams

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class ObservationCovariance:
    """Full covariance, its diagonal and lower Cholesky factor"""
    full: np.ndarray
    diag: np.ndarray
    chol_full: np.ndarray
    seed: Optional[int] = None

    @property
    def p(self) -> int:
        return self.full.shape[0]

    @property
    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol_full))))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, seed: Optional[int] = None) -> "ObservationCovariance":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ConfigurationError(f"covariance must be square, got shape {matrix.shape}")
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(matrix).max())):
            raise ConfigurationError("covariance must be symmetric")
        try:
            chol = cholesky(matrix, lower=True)
        except LinAlgError as exc:
            raise ConfigurationError(f"covariance is not positive definite: {exc}") from exc
        return cls(full=matrix, diag=np.diag(matrix).copy(), chol_full=chol, seed=seed)


def random_covariance_matrix(p: int, rng: np.random.Generator) -> np.ndarray:
    """Sigma_ij = B_ij exp(-2|i - j|) with B = A A', A_ij ~ U[0, 1)"""
    a = rng.random((p, p))
    b = a @ a.T
    lags = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    matrix = b * np.exp(-2.0 * lags)
    # A A' is symmetric only up to rounding
    return 0.5 * (matrix + matrix.T)


def generate_covariance(p: int, rng_seed: int, max_retries: Optional[int] = None) -> ObservationCovariance:
    """
    Generate a random observation covariance, regenerating with the next seed
    when the factorization fails.

    Raises:
        ConfigurationError: if p < 1 or every retry failed
    """
    if p < 1:
        raise ConfigurationError(f"observation dimension must be >= 1, got {p}")
    retries = config.COVARIANCE_RETRIES if max_retries is None else max_retries
    seed = int(rng_seed)
    for attempt in range(retries + 1):
        rng = as_streams(seed).stream(0, Phase.COVARIANCE)
        try:
            return ObservationCovariance.from_matrix(random_covariance_matrix(p, rng), seed=seed)
        except ConfigurationError as exc:
            logger.warning("covariance seed %d failed to factorize (%s); retrying with seed %d",
                           seed, exc, seed + 1)
            seed += 1
    raise ConfigurationError(f"no factorizable covariance after {retries} retries from seed {rng_seed}")


def _residuals(x, y: np.ndarray, p: int) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != p:
        raise ConfigurationError(f"observation has length {y.shape[0]}, expected {p}")
    x = np.asarray(x, dtype=float).reshape(-1)
    residuals = y[None, :] - x[:, None]
    if not np.all(np.isfinite(residuals)):
        raise ConfigurationError("non-finite state or observation")
    return residuals


def _shape_like(values: np.ndarray, x):
    return float(values[0]) if np.ndim(x) == 0 else values


def loglik_full(x, y, cov: ObservationCovariance, include_constants: bool = False):
    """
    log N(y; x 1_p, Sigma) via a triangular solve against the Cholesky factor.

    Without constants this is -r' Sigma^-1 r / 2 with r = y - x 1_p.
    """
    residuals = _residuals(x, y, cov.p)
    solved = solve_triangular(cov.chol_full, residuals.T, lower=True, check_finite=False)
    values = -0.5 * np.sum(solved * solved, axis=0)
    if include_constants:
        values = values - 0.5 * cov.log_det - 0.5 * cov.p * LOG_2PI
    return _shape_like(values, x)


def loglik_diag(x, y, cov: ObservationCovariance, include_constants: bool = False):
    """Independent-coordinates approximation: -sum_k r_k^2 / (2 Sigma_kk)"""
    if np.any(cov.diag <= 0):
        raise ConfigurationError("diagonal covariance entries must be positive")
    residuals = _residuals(x, y, cov.p)
    values = -0.5 * np.sum(residuals * residuals / cov.diag[None, :], axis=1)
    if include_constants:
        values = values - 0.5 * float(np.sum(np.log(cov.diag))) - 0.5 * cov.p * LOG_2PI
    return _shape_like(values, x)


def fit_scaling(level1_states, g0_values, g1_values) -> ScalingCorrection:
    """C = sum g0 g1 / sum g0^2, the minimiser of sum (c g0 - g1)^2 over the level-1 particles"""
    g0 = np.asarray(g0_values, dtype=float).reshape(-1)
    g1 = np.asarray(g1_values, dtype=float).reshape(-1)
    if g0.shape != g1.shape or (level1_states is not None and len(level1_states) != len(g0)):
        raise ConfigurationError("scaling fit needs one g0 and one g1 value per level-1 particle")
    denominator = float(np.dot(g0, g0))
    if not denominator > 0:
        logger.warning("level-0 likelihood vanished on all %d level-1 particles; using C = 1", len(g0))
        return ScalingCorrection(c=1.0, fallback=True)
    return ScalingCorrection(c=float(np.dot(g0, g1)) / denominator)


class BigDataLadder(LikelihoodLadder):
    """Two-level ladder: diagonal (rescaled) at level 0, full covariance at level 1"""

    joint_log_shift = True

    def __init__(self, cov: ObservationCovariance):
        super().__init__()
        self.cov = cov
        self.log_scale = 0.0
        self.last_correction: Optional[ScalingCorrection] = None

    @property
    def n_levels(self) -> int:
        return 2

    def reset(self) -> None:
        self.log_scale = 0.0
        self.last_correction = None

    def log_likelihood(self, level: int, states: np.ndarray, step: int) -> np.ndarray:
        y = self.observation(step)
        x = states[:, 0]
        if level == 1:
            return loglik_full(x, y, self.cov, include_constants=True)
        return self.log_scale + loglik_diag(x, y, self.cov, include_constants=True)

    def calibrate(self, states: np.ndarray, fine_log_values: np.ndarray, step: int) -> None:
        coarse = loglik_diag(states[:, 0], self.observation(step), self.cov, include_constants=True)
        finite = np.concatenate([coarse[np.isfinite(coarse)], fine_log_values[np.isfinite(fine_log_values)]])
        shift = float(finite.max()) if finite.size else 0.0
        # C is invariant to a common shift of both families
        correction = fit_scaling(states, np.exp(coarse - shift), np.exp(fine_log_values - shift))
        self.last_correction = correction
        if correction.c > 0:
            self.log_scale = float(np.log(correction.c))
        else:
            logger.warning("step %d: fitted scaling C = %.3g is not positive; keeping C = 1", step, correction.c)
            self.log_scale = 0.0


def observation_sampler(cov: ObservationCovariance):
    """y = x 1_p + V with V ~ N(0, Sigma), drawn with the exact covariance"""
    def sample(rng: np.random.Generator, x: float, step: int) -> np.ndarray:
        return x + cov.chol_full @ rng.standard_normal(cov.p)
    return sample


def build_bigdata_model(p: int, sigma: float, rng_seed: int,
                        observations: Optional[Sequence] = None,
                        covariance: Optional[ObservationCovariance] = None,
                        init_mean: float = 0.0) -> HmmModel:
    """
    Two-level model for the high-dimensional Gaussian experiment.

    Args:
        p: observation dimension
        sigma: random-walk standard deviation
        rng_seed: covariance seed, ignored when covariance is given
        observations: optional sequence to bind right away
        covariance: share an existing covariance across compared algorithms
        init_mean: prior mean of X_0

    Returns:
        HmmModel with a BigDataLadder
    """
    cov = covariance if covariance is not None else generate_covariance(p, rng_seed)
    if cov.p != p:
        raise ConfigurationError(f"covariance is {cov.p}-dimensional, expected {p}")
    ladder: LikelihoodLadder = BigDataLadder(cov)
    if observations is not None:
        ladder = ladder.bind(observations)
    return Ar1Signal(init_mean=init_mean, sigma=sigma).model(ladder, name="bigdata")
