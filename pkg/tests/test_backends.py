"""Tests for the sampling backends the learner programs."""

import numpy as np
import pytest
from scipy.special import expit

from neuroquansa.backends import ExactBackend, GibbsBackend, SNNBackend
from neuroquansa.boltzmann import EmpiricalDistribution, dkl, exact_marginal
from neuroquansa.calibration import CalibrationProtocol, calibrate
from neuroquansa.errors import CapacityError
from neuroquansa.hardware import HardwareModel
from neuroquansa.snn_sampler import NetworkConfig


def _marginal(samples):
    return EmpiricalDistribution.from_states(samples.visible, samples.n_visible, samples.row_weights())


class TestProgramming:
    def test_exact_keeps_continuous_weights(self):
        state = ExactBackend().program(np.array([[1.5]]), np.array([16.0, -16.0]))
        np.testing.assert_array_equal(state.weights, [[1.5]])
        np.testing.assert_allclose(state.rbm.W, [[1.5 / 16]])
        np.testing.assert_allclose(state.rbm.b_v, [1.0])
        np.testing.assert_allclose(state.rbm.b_h, [-1.0])

    def test_gibbs_writes_integer_weights(self):
        backend = GibbsBackend(hardware=HardwareModel(grid_step=4))
        state = backend.program(np.array([[1.4, 70.0, -5.6]]), np.zeros(4))
        np.testing.assert_array_equal(state.weights, [[0.0, 63.0, -4.0]])

    def test_capacity(self):
        with pytest.raises(CapacityError):
            GibbsBackend().program(np.zeros((100, 97)), np.zeros(197))
        with pytest.raises(CapacityError):
            ExactBackend().program(np.zeros((12, 11)), np.zeros(23))


def test_clones_do_not_share_state():
    backend = GibbsBackend(burn_in=10, seed=1)
    backend.sample(backend.program(np.zeros((2, 2)), np.zeros(4)), 100, iteration=1, run=0)
    drifting = backend.with_hardware(HardwareModel(drift_sigma=0.1))
    assert not backend.hardware.drifts
    assert drifting.hardware.drifts
    independent = backend.independent()
    assert backend.persistent and not independent.persistent
    assert independent._chains == {}
    assert 0 in backend._chains


def test_gibbs_backend_matches_exact_marginal():
    rng = np.random.default_rng(4)
    backend = GibbsBackend(burn_in=200, seed=2)
    state = backend.program(rng.integers(-20, 21, size=(3, 2)).astype(float), rng.integers(-8, 9, size=5).astype(float))
    samples = backend.sample(state, 100_000, iteration=1, run=0)
    assert len(samples) == 100_000
    assert dkl(_marginal(samples), exact_marginal(state.rbm)) < 1e-2


def test_exact_backend_drift_is_per_iteration():
    backend = ExactBackend(hardware=HardwareModel(drift_sigma=0.3, seed=1))
    state = backend.program(np.array([[8.0, -8.0], [4.0, 0.0]]), np.zeros(4))
    a = _marginal(backend.sample(state, 1, iteration=0, run=0)).probabilities
    b = _marginal(backend.sample(state, 1, iteration=0, run=0)).probabilities
    c = _marginal(backend.sample(state, 1, iteration=1, run=0)).probabilities
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_exact_backend_drift_follows_run_index():
    hardware = HardwareModel(drift_sigma=0.3, seed=1)
    weights, biases = np.array([[8.0, -8.0], [4.0, 0.0]]), np.zeros(4)
    two_runs = ExactBackend(hardware=hardware, runs_per_iteration=2)
    one_run = ExactBackend(hardware=hardware)
    state = two_runs.program(weights, biases)
    first = _marginal(two_runs.sample(state, 1, iteration=0, run=0)).probabilities
    second = _marginal(two_runs.sample(state, 1, iteration=0, run=1)).probabilities
    assert not np.allclose(first, second)
    # iteration 1, run 0 is global run 2 with two runs per iteration
    later = _marginal(two_runs.sample(state, 1, iteration=1, run=0)).probabilities
    same = _marginal(one_run.sample(one_run.program(weights, biases), 1, iteration=2, run=0)).probabilities
    np.testing.assert_array_equal(later, same)


@pytest.fixture(scope="module")
def snn_backend():
    template = NetworkConfig.homogeneous(2, 2, rng_seed=3)
    protocol = CalibrationProtocol(sweep_points=8, sweep_half_width=25.0, duration=2000.0, reference_weight=16, seed=1)
    return SNNBackend(template, calibrate(template, protocol), seed=5)


@pytest.mark.slow
def test_snn_bias_map_sets_single_unit_activation(snn_backend):
    biases = np.array([16.0, -16.0, 0.0, 8.0])
    state = snn_backend.program(np.zeros((2, 2)), biases)
    samples = snn_backend.sample(state, 20_000, iteration=0, run=0)
    on = samples.states.mean(axis=0)
    np.testing.assert_allclose(on, expit(biases / 16), atol=0.05)


@pytest.mark.slow
def test_snn_samples_weak_boltzmann_distribution(snn_backend):
    abstract = np.array([[0.5, -0.4], [-0.3, 0.5]])
    weights = snn_backend.calibration.integer_weights(abstract)
    state = snn_backend.program(weights, np.array([4.0, -4.0, 0.0, 2.0]))
    samples = snn_backend.sample(state, 20_000, iteration=0, run=1)
    assert dkl(exact_marginal(state.rbm), _marginal(samples)) < 0.05
