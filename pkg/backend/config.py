import os
from dataclasses import dataclass
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

@dataclass
class Config:
    """Runtime defaults for filter runs and experiment orchestration"""
    # Worker threads for independent repeats (results never depend on this)
    THREADS: int = int(os.getenv("MLBPF_THREADS", "1"))

    # Where run/sweep/match write their CSV files
    OUTPUT_DIR: str = os.getenv("MLBPF_OUTPUT_DIR", "./results")

    # Degenerate normalizer guard: flag when |sum of signs| < EPS_NORM * total size
    EPS_NORM: float = float(os.getenv("MLBPF_EPS_NORM", "1e-6"))

    # Covariance generation retries when the Cholesky factorization fails
    COVARIANCE_RETRIES: int = int(os.getenv("MLBPF_COVARIANCE_RETRIES", "10"))

    # Time matching
    TIME_MATCH_RUNS: int = int(os.getenv("MLBPF_TIME_MATCH_RUNS", "3"))
    TIME_MATCH_MAX_ITER: int = int(os.getenv("MLBPF_TIME_MATCH_MAX_ITER", "20"))

    # Output formatting
    LOG_LEVEL: str = os.getenv("MLBPF_LOG_LEVEL", "INFO")
    FLOAT_FORMAT: str = os.getenv("MLBPF_FLOAT_FORMAT", "%.17g")

    def __post_init__(self):
        if self.THREADS < 1:
            raise ValueError("MLBPF_THREADS must be at least 1")
        if self.EPS_NORM < 0:
            raise ValueError("MLBPF_EPS_NORM must be nonnegative")

config = Config()
