"""Tests for the AR(1) signal, the HMM container and trajectory simulation"""

import unittest
import sys
import os

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(__file__)))

from filter_errors import ConfigurationError
from hmm_models import Ar1Signal, SyntheticTrajectory, ar1_prior, ar1_step, simulate
from rng_streams import Phase, RandomStreams
from test_helpers import GaussianLadder, linear_gaussian_data


class TestAr1Kernel(unittest.TestCase):
    """Gaussian random-walk prior and transition"""

    def test_zero_sigma_keeps_state(self):
        rng = np.random.default_rng(0)
        self.assertEqual(float(ar1_step(3.5, 0.0, rng)), 3.5)
        self.assertEqual(float(ar1_prior(1.25, 0.0, rng)), 1.25)

    def test_negative_sigma_rejected(self):
        with self.assertRaises(ConfigurationError):
            ar1_step(0.0, -1.0, np.random.default_rng(0))

    def test_step_moments(self):
        rng = np.random.default_rng(1)
        draws = ar1_step(np.full(200000, 2.0), 0.5, rng)
        self.assertAlmostEqual(draws.mean(), 2.0, delta=0.01)
        self.assertAlmostEqual(draws.var(), 0.25, delta=0.01)

    def test_two_steps_compose_variances(self):
        rng = np.random.default_rng(2)
        x = ar1_step(ar1_step(np.zeros(200000), 0.3, rng), 0.4, rng)
        self.assertAlmostEqual(x.var(), 0.25, delta=0.01)

    def test_signal_requires_positive_sigma(self):
        with self.assertRaises(ConfigurationError):
            Ar1Signal(init_mean=0.0, sigma=0.0)

    def test_samplers_shape(self):
        signal = Ar1Signal(init_mean=1.0, sigma=0.1)
        rng = np.random.default_rng(3)
        prior = signal.prior_sampler(rng, 7)
        self.assertEqual(prior.shape, (7, 1))
        self.assertEqual(signal.transition_sampler(rng, prior).shape, (7, 1))


class TestHmmModel(unittest.TestCase):
    """Binding and restricting the level likelihoods"""

    def setUp(self):
        self.model = Ar1Signal(init_mean=0.0, sigma=1.0).model(GaussianLadder([2.0, 1.0]))

    def test_levels(self):
        self.assertEqual(self.model.n_levels, 2)
        self.assertEqual(self.model.top_level, 1)

    def test_with_observations_leaves_original_unbound(self):
        bound = self.model.with_observations([[0.5]])
        self.assertEqual(bound.likelihoods.observation(0), [0.5])
        with self.assertRaises(ConfigurationError):
            self.model.likelihoods.observation(0)

    def test_restricted_uses_one_level(self):
        restricted = self.model.with_observations([[0.0]]).restricted(0)
        self.assertEqual(restricted.n_levels, 1)
        values = restricted.likelihoods.log_likelihood(0, np.array([[2.0]]), 0)
        self.assertAlmostEqual(float(values[0]), -1.0)

    def test_restrict_out_of_range(self):
        with self.assertRaises(ConfigurationError):
            self.model.restricted(2)


class TestSimulate(unittest.TestCase):
    """Synthetic trajectories"""

    def test_same_seed_same_trajectory(self):
        first = linear_gaussian_data(n_steps=15, seed=11)
        second = linear_gaussian_data(n_steps=15, seed=11)
        np.testing.assert_array_equal(first.states, second.states)
        np.testing.assert_array_equal(first.observations, second.observations)
        self.assertEqual(first.seed, 11)

    def test_different_seeds_differ(self):
        first = linear_gaussian_data(n_steps=5, seed=1)
        second = linear_gaussian_data(n_steps=5, seed=2)
        self.assertFalse(np.array_equal(first.states, second.states))

    def test_first_state_comes_from_the_prior_stream(self):
        signal = Ar1Signal(init_mean=4.0, sigma=0.5)
        trajectory = simulate(signal, 3, lambda rng, x, step: np.array([x]), rng_seed=6)
        expected = 4.0 + 0.5 * RandomStreams(6).stream(0, Phase.DATA).standard_normal()
        self.assertAlmostEqual(trajectory.states[0], expected)
        np.testing.assert_array_equal(trajectory.observations[:, 0], trajectory.states)

    def test_observation_sampler_sees_step(self):
        steps = []
        simulate(Ar1Signal(init_mean=0.0, sigma=1.0), 4,
                 lambda rng, x, step: steps.append(step) or np.zeros(2), rng_seed=0)
        self.assertEqual(steps, [0, 1, 2, 3])

    def test_empty_trajectory(self):
        trajectory = simulate(Ar1Signal(init_mean=0.0, sigma=1.0), 0,
                              lambda rng, x, step: np.zeros(3), rng_seed=0, obs_dim=3)
        self.assertEqual(trajectory.n_steps, 0)
        self.assertEqual(trajectory.observations.shape, (0, 3))

    def test_length_mismatch(self):
        with self.assertRaises(ConfigurationError):
            SyntheticTrajectory(states=np.zeros(3), observations=np.zeros((2, 1)), seed=0)


if __name__ == "__main__":
    unittest.main()
