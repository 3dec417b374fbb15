"""Classical bootstrap particle filter, coded independently of the multilevel engine.

It weights with the exact (top-level) likelihood only and resamples
multinomially. It draws from the same substreams as a single-level
multilevel run, which makes it a direct oracle for the reduction of the
multilevel filter to the textbook algorithm.
"""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from filter_errors import DegenerateEnsembleError
from hmm_models import HmmModel
from rng_streams import Phase, as_streams


class BootstrapParticleFilter:
    """Mutate, weight by g, resample proportionally to the weights"""

    def __init__(self, model: HmmModel, n_particles: int):
        if n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {n_particles}")
        # Only the exact likelihood is used
        self.model = model if model.n_levels == 1 else model.restricted(model.top_level)
        self.n_particles = n_particles

    def run(self, observations: Sequence, n_steps: int, rng_seed,
            on_step: Optional[Callable[[int, np.ndarray], None]] = None) -> List[Tuple[float, np.ndarray]]:
        """
        Filter the first n_steps observations.

        Returns:
            List of (filter mean, resampled particles) per step
        """
        streams = as_streams(rng_seed)
        model = self.model.with_observations(observations)
        n = self.n_particles
        history = []

        particles = np.asarray(model.prior_sampler(streams.stream(0, Phase.INIT, 0), n), dtype=float)
        particles = particles.reshape(n, -1)
        for t in range(n_steps):
            # Propagation
            if t > 0:
                rng = streams.stream(t - 1, Phase.MUTATE, 0)
                particles = np.asarray(model.transition_sampler(rng, particles), dtype=float).reshape(n, -1)

            # Weighting: w^i = g(x^i) / N
            likelihood = model.likelihoods.evaluate([particles], t)[0].fine
            weights = likelihood / n

            # Multinomial resampling
            cumulative = np.cumsum(weights)
            if not cumulative[-1] > 0:
                raise DegenerateEnsembleError(f"all weights vanished at step {t}")
            u = streams.stream(t, Phase.RESAMPLE).random(n) * cumulative[-1]
            ancestors = np.minimum(np.searchsorted(cumulative, u, side="right"),
                                   np.flatnonzero(weights)[-1])
            particles = particles[ancestors]

            if on_step is not None:
                on_step(t, particles)
            history.append((float(particles[:, 0].mean()), particles.copy()))
        return history
