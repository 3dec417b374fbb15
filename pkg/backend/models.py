from typing import List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field

from filter_errors import ConfigurationError

class LevelSchedule(BaseModel):
    """Level sample sizes: level l holds multipliers[l] * base_size particles"""
    model_config = ConfigDict(frozen=True)

    multipliers: List[int]  # c_0..c_L, last one is always 1
    base_size: int          # N

    def model_post_init(self, __context) -> None:
        if not self.multipliers:
            raise ConfigurationError("schedule needs at least one level")
        if any(c < 1 for c in self.multipliers):
            raise ConfigurationError(f"multipliers must be >= 1, got {self.multipliers}")
        if self.multipliers[-1] != 1:
            raise ConfigurationError(f"top-level multiplier must be 1, got {self.multipliers[-1]}")
        if self.base_size < 1:
            raise ConfigurationError(f"base size must be >= 1, got {self.base_size}")

    @classmethod
    def from_level_sizes(cls, sizes: List[int]) -> "LevelSchedule":
        """Schedule closest to the requested per-level sizes, anchored on the top level"""
        if not sizes or sizes[-1] < 1:
            raise ConfigurationError(f"top level needs at least one particle, got {sizes}")
        base = sizes[-1]
        multipliers = [max(1, round(n / base)) for n in sizes[:-1]] + [1]
        return cls(multipliers=multipliers, base_size=base)

    @property
    def top_level(self) -> int:
        return len(self.multipliers) - 1

    @property
    def n_levels(self) -> int:
        return len(self.multipliers)

    @property
    def total_size(self) -> int:
        return sum(self.multipliers) * self.base_size

    def level_size(self, level: int) -> int:
        self._check_level(level)
        return self.multipliers[level] * self.base_size

    def offset(self, level: int) -> int:
        """I_l(N): number of particles stored before level l"""
        if not 0 <= level <= self.n_levels:
            raise ConfigurationError(f"level {level} outside 0..{self.n_levels}")
        return sum(self.multipliers[:level]) * self.base_size

    def level_slice(self, level: int) -> slice:
        """Zero-based array slice of the particles of one level"""
        self._check_level(level)
        return slice(self.offset(level), self.offset(level + 1))

    def index_set(self, level: int) -> range:
        """One-based index set P_l = {I_l + 1, ..., I_{l+1}}"""
        self._check_level(level)
        return range(self.offset(level) + 1, self.offset(level + 1) + 1)

    def level_labels(self) -> List[int]:
        """Level of every particle in storage order"""
        labels: List[int] = []
        for level in range(self.n_levels):
            labels.extend([level] * self.level_size(level))
        return labels

    def scaled(self, factor: float) -> "LevelSchedule":
        """Same multipliers with the base size scaled by factor (at least 1)"""
        return LevelSchedule(multipliers=list(self.multipliers),
                             base_size=max(1, round(self.base_size * factor)))

    def _check_level(self, level: int):
        if not 0 <= level <= self.top_level:
            raise ConfigurationError(f"level {level} outside 0..{self.top_level}")

class FilterEstimate(BaseModel):
    """Per-step output of a filter run"""
    step: int
    filter_mean: List[float]               # post-resampling estimate (primary output)
    filter_std: List[float]
    prediction_mean: List[float]           # particles before weighting at this step
    pre_resample_mean: List[float]         # self-normalised telescoped weights
    normalizer: float                      # sum of signs / total size, in [-1, 1]
    negative_fraction: float               # share of -1 signs after resampling
    wall_clock: float = 0.0                # seconds spent in this step
    degenerate_normalizer: bool = False    # |sum of signs| below the EPS_NORM guard

class KalmanState(BaseModel):
    """Gaussian filter moments of the scalar random-walk state"""
    mean: float
    variance: float = Field(..., ge=0.0)

class ScalingCorrection(BaseModel):
    """Least-squares multiplier applied to the diagonal level-0 likelihood"""
    c: float
    fallback: bool = False  # True when the denominator vanished and c defaulted to 1

class ExperimentConfig(BaseModel):
    """Declarative description of one experiment run"""
    model_config = ConfigDict(extra="forbid")

    experiment: Literal["bigdata", "beam"] = "bigdata"
    algorithm: Literal["mlbpf", "bpf", "coarse_bpf"] = "mlbpf"

    # Schedule
    multipliers: List[int] = [1]
    base_size: int = 250
    level_sizes: List[int] = []  # N_0..N_L, replaces multipliers and base_size when given

    # Run shape
    n_steps: int = Field(50, ge=0)
    n_repeats: int = Field(1, ge=1)
    n_sequences: int = Field(1, ge=1)
    root_seed: int = Field(0, ge=0)
    data_seed: int = Field(0, ge=0)
    covariance_seed: int = Field(0, ge=0)

    # Signal
    sigma: float = Field(0.1, gt=0.0)
    init_mean: float = 0.0

    # Big-data observations
    p: int = Field(100, ge=1)

    # Beam
    beam_length: float = Field(4.0, gt=0.0)
    stiffness: float = Field(1.0, gt=0.0)
    sensors: List[float] = [1.0, 1.75]
    noise_var: float = Field(0.0002, gt=0.0)
    load_profile: Literal["gaussian", "hat"] = "gaussian"
    load_width: float = Field(0.2, gt=0.0)
    theta0: int = Field(60, ge=5)
    theta1: int = Field(500, ge=5)

    # Reference filter
    reference: Literal["kalman", "reference_bpf"] = "kalman"
    reference_size: int = Field(20000, ge=1)
    reference_theta: int = Field(500, ge=5)

    # Sweeps and time matching
    sweep_multipliers: List[int] = []
    sweep_theta0: List[int] = []
    sweep_scales: List[float] = []
    match_target_size: int = Field(250, ge=1)
    match_tolerance_pct: float = Field(5.0, gt=0.0)
    timing_steps: int = Field(10, ge=1)

    # Output
    output_dir: str = "./results"
    threads: int = Field(1, ge=1)
    record_timing: bool = True

    def model_post_init(self, __context) -> None:
        if self.level_sizes:
            resolved = LevelSchedule.from_level_sizes(self.level_sizes)
            self.multipliers = list(resolved.multipliers)
            self.base_size = resolved.base_size
            self.level_sizes = []
        compared = self.schedule.total_size
        if self.experiment == "bigdata" and self.reference != "kalman":
            raise ConfigurationError("bigdata experiments are scored against the Kalman filter")
        if self.experiment == "beam" and self.reference != "reference_bpf":
            raise ConfigurationError("beam experiments need reference = reference_bpf")
        if self.experiment == "beam" and self.theta0 >= self.theta1:
            raise ConfigurationError(f"theta0 ({self.theta0}) must be below theta1 ({self.theta1})")
        if self.experiment == "beam" and any(not 0.0 <= s <= self.beam_length for s in self.sensors):
            raise ConfigurationError(f"sensors {self.sensors} must lie on [0, {self.beam_length}]")
        if self.reference == "reference_bpf":
            if self.reference_size < 10 * compared:
                raise ConfigurationError(
                    f"reference_size {self.reference_size} must be >= 10x the compared size {compared}")

    @property
    def schedule(self) -> LevelSchedule:
        if self.algorithm == "mlbpf":
            return LevelSchedule(multipliers=self.multipliers, base_size=self.base_size)
        # Single-level algorithms run every particle at one level
        return LevelSchedule(multipliers=[1], base_size=self.base_size)

class RunResult(BaseModel):
    """One repeat of one algorithm on one observation sequence"""
    algorithm: str
    sequence: int
    repeat: int
    per_step_estimates: List[FilterEstimate] = []
    reference_means: List[float] = []
    mse: float = float("nan")
    rmse: float = float("nan")
    wall_clock: float = 0.0
    negative_fraction_trace: List[float] = []
    failed: bool = False
    failed_step: Optional[int] = None
    error: Optional[str] = None

class RunSummary(BaseModel):
    """Aggregate statistics over the repeats of one configuration"""
    algorithm: str
    n_runs: int
    n_failed: int
    mse_mean: float
    mse_median: float
    mse_q1: float
    mse_q3: float
    rmse_mean: float
    wall_clock_mean: float
    negative_fraction_mean: float
    degenerate_steps: int = 0

class TimeMatchResult(BaseModel):
    """Outcome of scaling a schedule to the wall-clock of a target run"""
    schedule: LevelSchedule
    target_seconds: float
    matched_seconds: float
    iterations: int
    converged: bool

class ErrorMatchResult(BaseModel):
    """Outcome of sizing a filter to the mean MSE of a target run"""
    schedule: LevelSchedule
    target_mse: float
    matched_mse: float
    target_seconds: float
    matched_seconds: float
    cost_ratio: float  # matched wall-clock over target wall-clock, nan without timings
    iterations: int
    converged: bool
