"""Counter-based random streams for reproducible filter runs.

Every draw in a run comes from a substream addressed by (step, phase, level)
under one root seed. Substreams are Philox generators keyed through a
SeedSequence spawn key, so any substream can be created independently of the
others and in any order: running levels or repeats on several workers cannot
change the numbers each of them sees.
"""

from enum import IntEnum

import numpy as np


class Phase(IntEnum):
    """Which part of the algorithm consumes a substream"""
    INIT = 0
    RESAMPLE = 1
    MUTATE = 2
    DATA = 3
    COVARIANCE = 4
    OBSERVATION = 5


class RandomStreams:
    """Factory of independent numpy Generators derived from one root seed"""

    def __init__(self, root_seed: int):
        if root_seed < 0:
            raise ValueError(f"root seed must be nonnegative, got {root_seed}")
        self.root_seed = int(root_seed)

    def stream(self, step: int, phase: Phase, level: int = 0) -> np.random.Generator:
        """Generator for one (step, phase, level) cell"""
        seed_seq = np.random.SeedSequence(
            entropy=self.root_seed,
            spawn_key=(int(step), int(phase), int(level)),
        )
        return np.random.Generator(np.random.Philox(seed_seq))

    def __repr__(self) -> str:
        return f"RandomStreams(root_seed={self.root_seed})"


def as_streams(seed) -> RandomStreams:
    """Accept either an integer seed or an existing RandomStreams"""
    if isinstance(seed, RandomStreams):
        return seed
    return RandomStreams(int(seed))
