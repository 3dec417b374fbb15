import threading
from dataclasses import dataclass
from typing import Callable, Dict, Hashable, List, Optional

from hmm_models import SyntheticTrajectory


@dataclass
class ReferenceEntry:
    """Observation sequence and the reference filter means computed on it"""
    trajectory: SyntheticTrajectory
    reference_means: List[float]


class ReferenceCache:
    """Keeps one reference per observation sequence so it is computed only once"""

    def __init__(self, max_entries: int = 64):
        self.max_entries = max_entries
        self.entries: Dict[Hashable, ReferenceEntry] = {}
        self.computed = 0
        self._lock = threading.Lock()

    def get(self, key: Hashable) -> Optional[ReferenceEntry]:
        with self._lock:
            return self.entries.get(key)

    def get_or_compute(self, key: Hashable, compute: Callable[[], ReferenceEntry]) -> ReferenceEntry:
        """Return the cached entry for key, computing and storing it on a miss"""
        with self._lock:
            if key in self.entries:
                return self.entries[key]
            entry = compute()
            self.computed += 1
            self.entries[key] = entry

            # Oldest sequences go first
            while len(self.entries) > self.max_entries:
                self.entries.pop(next(iter(self.entries)))
            return entry

    def clear(self):
        with self._lock:
            self.entries = {}
