"""Clamped-clamped Euler-Bernoulli beam under a moving load, observed by deflection sensors.

EI W''''(l) = F_x(l) on [0, L] with W = W' = 0 at both ends is discretized on a
uniform mesh of theta intervals (nodes 0..theta). The five-point stencil with
ghost nodes W_{-1} = W_1 and W_{theta+1} = W_{theta-1} gives a symmetric
positive-definite pentadiagonal system for the theta - 1 interior nodes,
factorized once per mesh size in banded storage.

Level 1 reads the sensors off the fine mesh theta1. Level 0 uses the coarse
mesh theta0 plus a per-sensor linear correction alpha_i + beta_i x fitted each
step on the level-1 particles.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky, cholesky_banded, solve_triangular
from scipy.stats import norm, triang

from filter_errors import ConfigurationError, SolverError
from hmm_models import Ar1Signal, HmmModel
from likelihood_ladder import LikelihoodLadder

logger = logging.getLogger(__name__)

MIN_MESH_SIZE = 5
SOLVE_CHUNK = 4096


# Load profiles: (positions (k,), nodes (n,), width, length) -> densities (k, n)

def gaussian_load(positions: np.ndarray, nodes: np.ndarray, width: float, length: float) -> np.ndarray:
    """Gaussian bump of total force 1 on [0, L], centred at the load position"""
    positions = positions[:, None]
    mass = norm.cdf(length, loc=positions, scale=width) - norm.cdf(0.0, loc=positions, scale=width)
    density = norm.pdf(nodes[None, :], loc=positions, scale=width)
    return np.divide(density, mass, out=np.zeros_like(density), where=mass > 0)


def hat_load(positions: np.ndarray, nodes: np.ndarray, width: float, length: float) -> np.ndarray:
    """Triangular load of half-width `width` and total force 1 on [0, L]"""
    positions = positions[:, None]
    shape = dict(c=0.5, loc=positions - width, scale=2.0 * width)
    mass = triang.cdf(length, **shape) - triang.cdf(0.0, **shape)
    density = triang.pdf(nodes[None, :], **shape)
    return np.divide(density, mass, out=np.zeros_like(density), where=mass > 0)


def uniform_load(positions: np.ndarray, nodes: np.ndarray, width: float, length: float) -> np.ndarray:
    """Unit load density everywhere, whatever the position"""
    return np.ones((len(positions), len(nodes)))


LOAD_PROFILES: Dict[str, Callable[..., np.ndarray]] = {
    "gaussian": gaussian_load,
    "hat": hat_load,
    "uniform": uniform_load,
}


@dataclass(frozen=True, eq=False)
class BeamSpec:
    """Beam geometry, stiffness, load shape and sensor layout"""
    length: float = 4.0
    stiffness: float = 1.0                            # EI
    sensors: Tuple[float, ...] = (1.0, 1.75)
    noise_cov: np.ndarray = field(default_factory=lambda: 0.0002 * np.eye(2))
    load_profile: str = "gaussian"
    load_width: float = 0.2

    def __post_init__(self):
        if not self.length > 0:
            raise ConfigurationError(f"beam length must be positive, got {self.length}")
        if not self.stiffness > 0:
            raise ConfigurationError(f"stiffness EI must be positive, got {self.stiffness}")
        if not self.load_width > 0:
            raise ConfigurationError(f"load width must be positive, got {self.load_width}")
        if self.load_profile not in LOAD_PROFILES:
            raise ConfigurationError(
                f"unknown load profile '{self.load_profile}', expected one of {sorted(LOAD_PROFILES)}")
        sensors = tuple(float(s) for s in self.sensors)
        if not sensors:
            raise ConfigurationError("beam needs at least one sensor")
        if any(not 0.0 <= s <= self.length for s in sensors):
            raise ConfigurationError(f"sensors {sensors} must lie on [0, {self.length}]")
        noise = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        if noise.shape != (len(sensors), len(sensors)):
            raise ConfigurationError(f"noise covariance is {noise.shape}, expected {len(sensors)}x{len(sensors)}")
        if not np.allclose(noise, noise.T):
            raise ConfigurationError("noise covariance must be symmetric")
        try:
            noise_chol = cholesky(noise, lower=True)
        except LinAlgError as exc:
            raise ConfigurationError(f"noise covariance is not positive definite: {exc}") from exc
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "noise_cov", noise)
        object.__setattr__(self, "noise_chol", noise_chol)

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    @classmethod
    def isotropic(cls, sensors: Sequence[float] = (1.0, 1.75), noise_var: float = 0.0002,
                  **kwargs) -> "BeamSpec":
        """Beam whose sensors have independent noise of equal variance"""
        return cls(sensors=tuple(sensors), noise_cov=noise_var * np.eye(len(sensors)), **kwargs)

    def load(self, positions, nodes: np.ndarray) -> np.ndarray:
        positions = np.atleast_1d(np.asarray(positions, dtype=float))
        return LOAD_PROFILES[self.load_profile](positions, nodes, self.load_width, self.length)


@dataclass
class MeshSolution:
    """Deflection at the mesh nodes and at the sensors"""
    mesh_size: int            # theta, number of intervals
    nodes: np.ndarray         # (theta + 1,)
    deflections: np.ndarray   # (theta + 1,), zero at both ends
    sensor_values: np.ndarray  # (m,)


@dataclass
class RegressionCorrection:
    """Per-sensor affine model of fine-minus-coarse sensor values as a function of x"""
    intercepts: np.ndarray
    slopes: np.ndarray
    fallback: bool = False  # fewer than two distinct positions, slope forced to zero

    @classmethod
    def zero(cls, n_sensors: int) -> "RegressionCorrection":
        return cls(intercepts=np.zeros(n_sensors), slopes=np.zeros(n_sensors))

    def apply(self, positions, sensor_values: np.ndarray) -> np.ndarray:
        positions = np.atleast_1d(np.asarray(positions, dtype=float))
        return sensor_values + self.intercepts[None, :] + positions[:, None] * self.slopes[None, :]


def _check_mesh(mesh_size: int) -> int:
    if int(mesh_size) != mesh_size or mesh_size < MIN_MESH_SIZE:
        raise ConfigurationError(f"mesh size must be an integer >= {MIN_MESH_SIZE}, got {mesh_size}")
    return int(mesh_size)


@lru_cache(maxsize=32)
def _stencil_factor(mesh_size: int) -> np.ndarray:
    """Upper banded Cholesky factor of the clamped five-point stencil (theta - 1 unknowns)"""
    n = mesh_size - 1
    bands = np.zeros((3, n))
    bands[0, 2:] = 1.0
    bands[1, 1:] = -4.0
    bands[2, :] = 6.0
    # Ghost nodes fold W_1 back onto the first and last rows
    bands[2, 0] = bands[2, -1] = 7.0
    try:
        factor = cholesky_banded(bands, lower=False)
    except LinAlgError as exc:
        raise SolverError(f"clamped stencil with {mesh_size} intervals is not positive definite: {exc}") from exc
    factor.setflags(write=False)
    return factor


def mesh_nodes(spec: BeamSpec, mesh_size: int) -> np.ndarray:
    return np.linspace(0.0, spec.length, _check_mesh(mesh_size) + 1)


def solve_deflections(spec: BeamSpec, positions, mesh_size: int, load_scale: float = 1.0) -> np.ndarray:
    """
    Nodal deflections for a batch of load positions.

    Returns:
        Array of shape (len(positions), theta + 1)
    """
    theta = _check_mesh(mesh_size)
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    nodes = mesh_nodes(spec, theta)
    h = spec.length / theta
    factor = _stencil_factor(theta)

    deflections = np.zeros((len(positions), theta + 1))
    for start in range(0, len(positions), SOLVE_CHUNK):
        chunk = positions[start:start + SOLVE_CHUNK]
        rhs = (h ** 4 * load_scale / spec.stiffness) * spec.load(chunk, nodes[1:-1])
        deflections[start:start + len(chunk), 1:-1] = cho_solve_banded(
            (factor, False), rhs.T, check_finite=False).T
    return deflections


def _interpolation_weights(nodes: np.ndarray, points: Sequence[float]):
    """Left node index and right-node weight for linear interpolation at each point"""
    h = nodes[1] - nodes[0]
    points = np.asarray(points, dtype=float)
    left = np.clip(np.floor(points / h).astype(int), 0, len(nodes) - 2)
    frac = (points - nodes[left]) / h
    return left, frac


def interpolate_sensors(nodes: np.ndarray, deflections: np.ndarray, sensors: Sequence[float]) -> np.ndarray:
    """Linear interpolation of (k, n) nodal deflections at the sensors, (k, m)"""
    left, frac = _interpolation_weights(nodes, sensors)
    return (1.0 - frac)[None, :] * deflections[:, left] + frac[None, :] * deflections[:, left + 1]


def sensor_values(spec: BeamSpec, positions, mesh_size: int) -> np.ndarray:
    """h^theta(x) for a batch of positions, shape (k, m)"""
    nodes = mesh_nodes(spec, mesh_size)
    return interpolate_sensors(nodes, solve_deflections(spec, positions, mesh_size), spec.sensors)


def solve_beam(spec: BeamSpec, load_position: float, mesh_size: int, load_scale: float = 1.0) -> MeshSolution:
    """Deflection of the clamped beam under one load, with its sensor readings"""
    nodes = mesh_nodes(spec, mesh_size)
    deflections = solve_deflections(spec, [load_position], mesh_size, load_scale)
    return MeshSolution(
        mesh_size=int(mesh_size),
        nodes=nodes,
        deflections=deflections[0],
        sensor_values=interpolate_sensors(nodes, deflections, spec.sensors)[0],
    )


def gaussian_sensor_loglik(spec: BeamSpec, predicted: np.ndarray, y) -> np.ndarray:
    """-(y - h)' Sigma^-1 (y - h) / 2 for each row of predicted sensor values"""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != spec.n_sensors:
        raise ConfigurationError(f"observation has length {y.shape[0]}, beam has {spec.n_sensors} sensors")
    residuals = y[None, :] - np.atleast_2d(predicted)
    solved = solve_triangular(spec.noise_chol, residuals.T, lower=True, check_finite=False)
    return -0.5 * np.sum(solved * solved, axis=0)


def sensor_loglik(spec: BeamSpec, load_position: float, mesh_size: int, y) -> float:
    """Gaussian log-likelihood of one sensor reading, constants dropped"""
    predicted = sensor_values(spec, [load_position], mesh_size)
    return float(gaussian_sensor_loglik(spec, predicted, y)[0])


def fit_regression(level1_positions, coarse_sensors, fine_sensors) -> RegressionCorrection:
    """
    Ordinary least squares of (fine - coarse) on x, separately for every sensor.

    With fewer than two distinct positions the slope is zero and the
    intercept is the mean difference; the result is flagged.
    """
    x = np.asarray(level1_positions, dtype=float).reshape(-1)
    diff = np.atleast_2d(np.asarray(fine_sensors, dtype=float) - np.asarray(coarse_sensors, dtype=float))
    if diff.shape[0] != len(x):
        raise ConfigurationError(f"{diff.shape[0]} sensor rows for {len(x)} positions")
    if len(x) == 0:
        return RegressionCorrection.zero(diff.shape[1])
    if len(np.unique(x)) < 2:
        logger.warning("regression correction fitted on %d particle(s) at one position; using zero slope", len(x))
        return RegressionCorrection(intercepts=diff.mean(axis=0), slopes=np.zeros(diff.shape[1]), fallback=True)
    slopes, intercepts = np.polyfit(x, diff, deg=1)
    return RegressionCorrection(intercepts=np.atleast_1d(intercepts), slopes=np.atleast_1d(slopes))


class BeamLadder(LikelihoodLadder):
    """Coarse mesh plus regression correction at level 0, fine mesh at level 1"""

    joint_log_shift = True

    def __init__(self, spec: BeamSpec, theta0: int, theta1: int):
        super().__init__()
        self.spec = spec
        self.theta0 = _check_mesh(theta0)
        self.theta1 = _check_mesh(theta1)
        self.correction = RegressionCorrection.zero(spec.n_sensors)
        self._fine_memo: Optional[Tuple[int, np.ndarray, np.ndarray]] = None

    @property
    def n_levels(self) -> int:
        return 2

    def reset(self) -> None:
        self.correction = RegressionCorrection.zero(self.spec.n_sensors)
        self._fine_memo = None

    def predicted_sensors(self, level: int, positions: np.ndarray) -> np.ndarray:
        if level == 1:
            return sensor_values(self.spec, positions, self.theta1)
        return self.correction.apply(positions, sensor_values(self.spec, positions, self.theta0))

    def log_likelihood(self, level: int, states: np.ndarray, step: int) -> np.ndarray:
        positions = states[:, 0]
        predicted = self.predicted_sensors(level, positions)
        if level == 1:
            self._fine_memo = (step, states, predicted)
        return gaussian_sensor_loglik(self.spec, predicted, self.observation(step))

    def calibrate(self, states: np.ndarray, fine_log_values: np.ndarray, step: int) -> None:
        positions = states[:, 0]
        memo = self._fine_memo
        if memo is not None and memo[0] == step and memo[1] is states:
            fine = memo[2]
        else:
            fine = sensor_values(self.spec, positions, self.theta1)
        coarse = sensor_values(self.spec, positions, self.theta0)
        self.correction = fit_regression(positions, coarse, fine)
        self._fine_memo = None


def beam_observation_sampler(spec: BeamSpec, mesh_size: int):
    """y = h^theta(x) + V with V ~ N(0, Sigma)"""
    def sample(rng: np.random.Generator, x: float, step: int) -> np.ndarray:
        exact = sensor_values(spec, [x], mesh_size)[0]
        return exact + spec.noise_chol @ rng.standard_normal(spec.n_sensors)
    return sample


def build_beam_model(spec: BeamSpec, theta0: int, theta1: int, sigma_signal: float,
                     init_mean: float = 1.0, observations: Optional[Sequence] = None) -> HmmModel:
    """
    Two-level beam model: level 0 on the coarse mesh theta0, level 1 on theta1.

    theta0 == theta1 is accepted; the telescoped correction then vanishes.
    """
    if theta0 > theta1:
        raise ConfigurationError(f"theta0 ({theta0}) must not exceed theta1 ({theta1})")
    ladder: LikelihoodLadder = BeamLadder(spec, theta0, theta1)
    if observations is not None:
        ladder = ladder.bind(observations)
    return Ar1Signal(init_mean=init_mean, sigma=sigma_signal).model(ladder, name="beam")
