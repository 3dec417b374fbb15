from typing import Any, Callable, Dict, List, Optional, Sequence
from abc import ABC, abstractmethod

from filter_errors import ConfigurationError
from hmm_models import HmmModel
from mlbpf import SignedEnsemble, run_filter
from models import FilterEstimate, LevelSchedule


class FilterAlgorithm(ABC):
    """Abstract base class for every filter the harness can run"""

    @abstractmethod
    def get_algorithm_definition(self) -> Dict[str, Any]:
        """Return the name and a short description of this algorithm"""
        pass

    @abstractmethod
    def prepare(self, model: HmmModel, schedule: LevelSchedule):
        """Return the (model, schedule) pair this algorithm actually runs"""
        pass

    def run(self, model: HmmModel, schedule: LevelSchedule, observations: Sequence,
            n_steps: int, rng_seed,
            on_step: Optional[Callable[[int, SignedEnsemble], None]] = None) -> List[FilterEstimate]:
        """
        Run the filter on one observation sequence.

        Args:
            model: full multilevel model of the experiment
            schedule: level sizes requested by the experiment
            observations: observation sequence, shared by every compared algorithm
            n_steps: number of steps to filter
            rng_seed: root seed of this repeat

        Returns:
            One FilterEstimate per step
        """
        model, schedule = self.prepare(model, schedule)
        return run_filter(model, schedule, n_steps, observations, rng_seed, on_step=on_step)


class MlbpfAlgorithm(FilterAlgorithm):
    """Multilevel filter over every level of the model"""

    def get_algorithm_definition(self) -> Dict[str, Any]:
        return {
            "name": "mlbpf",
            "description": "Multilevel bootstrap particle filter with telescoped signed weights",
        }

    def prepare(self, model: HmmModel, schedule: LevelSchedule):
        if schedule.n_levels != model.n_levels:
            raise ConfigurationError(
                f"mlbpf needs {model.n_levels} level sizes, got multipliers {schedule.multipliers}")
        return model, schedule


class SingleLevelAlgorithm(FilterAlgorithm):
    """Classical bootstrap filter weighting with one level of the model"""

    name = ""
    description = ""

    def get_algorithm_definition(self) -> Dict[str, Any]:
        return {"name": self.name, "description": self.description}

    @abstractmethod
    def level(self, model: HmmModel) -> int:
        pass

    def prepare(self, model: HmmModel, schedule: LevelSchedule):
        single = LevelSchedule(multipliers=[1], base_size=schedule.total_size)
        if model.n_levels == 1:
            return model, single
        return model.restricted(self.level(model)), single


class BpfAlgorithm(SingleLevelAlgorithm):
    name = "bpf"
    description = "Bootstrap particle filter with the exact (top-level) likelihood"

    def level(self, model: HmmModel) -> int:
        return model.top_level


class CoarseBpfAlgorithm(SingleLevelAlgorithm):
    name = "coarse_bpf"
    description = "Bootstrap particle filter with the cheapest likelihood only (no upper levels)"

    def level(self, model: HmmModel) -> int:
        return 0


class AlgorithmManager:
    """Registry of the algorithms selectable by name"""

    def __init__(self):
        self.algorithms: Dict[str, FilterAlgorithm] = {}

    def register_algorithm(self, algorithm: FilterAlgorithm):
        """Register any algorithm that implements the FilterAlgorithm interface"""
        name = algorithm.get_algorithm_definition().get("name")
        if not name:
            raise ConfigurationError("Algorithm must have a 'name' in its definition")
        self.algorithms[name] = algorithm

    def get_algorithm_definitions(self) -> list:
        return [algorithm.get_algorithm_definition() for algorithm in self.algorithms.values()]

    def get(self, name: str) -> FilterAlgorithm:
        if name not in self.algorithms:
            raise ConfigurationError(
                f"Algorithm '{name}' not found. Available algorithms: {', '.join(self.algorithms)}")
        return self.algorithms[name]

    def run_algorithm(self, name: str, **kwargs) -> List[FilterEstimate]:
        """Run an algorithm by name with the given arguments"""
        return self.get(name).run(**kwargs)

    @classmethod
    def default(cls) -> "AlgorithmManager":
        manager = cls()
        for algorithm in (MlbpfAlgorithm(), BpfAlgorithm(), CoarseBpfAlgorithm()):
            manager.register_algorithm(algorithm)
        return manager
