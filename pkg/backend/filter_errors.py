"""Exceptions raised by the filter engine, the models and the experiment harness"""

from typing import Optional


class FilterError(Exception):
    """Base class for every error the package raises on purpose"""


class ConfigurationError(FilterError, ValueError):
    """Invalid schedule, model parameters or experiment configuration"""


class EvaluationError(FilterError):
    """A level likelihood returned a non-finite or negative value"""

    def __init__(self, message: str, particle_index: int, level: int):
        super().__init__(f"{message} (particle {particle_index}, level {level})")
        self.particle_index = particle_index
        self.level = level


class DegenerateEnsembleError(FilterError):
    """All telescoped weights vanished, so there is nothing to resample from"""


class EstimateDegenerateError(FilterError, ZeroDivisionError):
    """The signed normalizer is exactly zero"""


class TransitionError(FilterError):
    """The transition sampler failed while advancing a particle"""

    def __init__(self, message: str, particle_index: Optional[int] = None):
        where = f" (particle {particle_index})" if particle_index is not None else ""
        super().__init__(f"{message}{where}")
        self.particle_index = particle_index


class SolverError(FilterError):
    """The banded beam system could not be factorized"""


class StepError(FilterError):
    """Wraps any failure inside run_filter with the step it happened at"""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause
