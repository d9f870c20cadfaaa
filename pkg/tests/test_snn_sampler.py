"""Tests for the event-driven LIF sampler and refractory-state decoding."""

import math

import numpy as np
import pytest

from neuroquansa.errors import CapacityError, ConfigurationError
from neuroquansa.snn_sampler import (
    NetworkConfig,
    NeuronParams,
    NoisePoolConfig,
    SpikeRecord,
    StateSamples,
    decode_states,
    indices_to_states,
    sample_states,
    simulate,
    states_to_indices,
)


def _pair(weight: float = 0.0, **kwargs) -> NetworkConfig:
    block = np.array([[weight]])
    return NetworkConfig.homogeneous(1, 1, weights=NetworkConfig.symmetric_from_block(block), **kwargs)


def test_free_neuron_fires_periodically():
    neuron = NeuronParams(leak_potential=-40.0)
    config = NetworkConfig.homogeneous(1, 0, neuron=neuron, noise=NoisePoolConfig.silent())
    record = simulate(config, 20.0, seed=0)

    assert len(record) > 10
    # First crossing starts from reset, every later one after a refractory period.
    assert record.times[0] == pytest.approx(neuron.membrane_time * math.log(13.0 / 10.0), abs=1e-9)
    np.testing.assert_allclose(np.diff(record.times), neuron.isi_period(), atol=1e-9)


def test_silent_network_below_threshold_never_fires():
    config = NetworkConfig.homogeneous(2, 2, neuron=NeuronParams(leak_potential=-60.0), noise=NoisePoolConfig.silent())
    assert len(simulate(config, 50.0, seed=1)) == 0


def test_refractory_exclusion_holds_under_noise():
    w = NetworkConfig.symmetric_from_block(np.array([[20.0, -20.0], [10.0, 0.0]]))
    config = NetworkConfig.homogeneous(2, 2, weights=w)
    record = simulate(config, 300.0, seed=3)
    assert len(record) > 0
    record.check_refractory(config.refractory_times)


def test_simulation_is_deterministic_per_seed():
    config = _pair(10.0)
    a = simulate(config, 100.0, seed=7)
    b = simulate(config, 100.0, seed=7)
    c = simulate(config, 100.0, seed=8)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.neuron_ids, b.neuron_ids)
    assert len(a) != len(c) or not np.array_equal(a.times, c.times)


def test_occupancy_matches_spike_count():
    config = _pair(0.0)
    duration = 2000.0
    record = simulate(config, duration, seed=11)
    samples = decode_states(record, config)
    counts = record.spike_counts()
    assert len(samples) == int(duration)
    for k in range(config.n_neurons):
        assert abs(int(samples.states[:, k].sum()) - int(counts[k])) <= 1


def test_zero_weights_factorize():
    config = _pair(0.0)
    samples = sample_states(config, 5000, seed=5)
    z = samples.states.astype(float)
    n = len(samples)
    for a in (0, 1):
        for b in (0, 1):
            joint = float(np.mean((z[:, 0] == a) & (z[:, 1] == b)))
            product = float(np.mean(z[:, 0] == a) * np.mean(z[:, 1] == b))
            sigma = math.sqrt(max(product * (1 - product), 1.0 / n) / n)
            assert abs(joint - product) <= 5 * sigma


def test_positive_weight_raises_coactivation():
    samples = sample_states(_pair(30.0), 5000, seed=9)
    z = samples.states.astype(float)
    p11 = float(np.mean(z[:, 0] * z[:, 1]))
    assert p11 > float(z[:, 0].mean() * z[:, 1].mean())


def test_decode_window_is_half_open():
    config = _pair(0.0, noise=NoisePoolConfig.silent())
    record = SpikeRecord(np.array([0.5, 1.0, 2.5]), np.array([0, 1, 0]), 4.0, 2)
    samples = decode_states(record, config)
    # Readouts at t = 1, 2, 3, 4; z_k(t) = 1 iff a spike fell in (t - 1, t].
    np.testing.assert_array_equal(samples.states, [[1, 1], [0, 0], [1, 0], [0, 0]])


def test_decode_at_explicit_times():
    config = _pair(0.0, noise=NoisePoolConfig.silent())
    record = SpikeRecord(np.array([0.25]), np.array([1]), 2.0, 2)
    samples = decode_states(record, config, readout_times=[0.2, 0.3, 1.24, 1.25])
    np.testing.assert_array_equal(samples.states[:, 1], [0, 1, 1, 0])


def test_index_convention_puts_v0_in_lowest_bit():
    states = np.array([[1, 0, 0], [0, 0, 1], [1, 1, 1]])
    np.testing.assert_array_equal(states_to_indices(states), [1, 4, 7])
    np.testing.assert_array_equal(indices_to_states(np.array([1, 4, 7]), 3), states)


def test_state_samples_weights_normalize():
    s = StateSamples(np.array([[0, 1], [1, 0]]), 1, weights=np.array([1.0, 3.0]))
    np.testing.assert_allclose(s.row_weights(), [0.25, 0.75])
    with pytest.raises(ConfigurationError):
        StateSamples.concatenate([s, s])


def test_network_toml_round_trip(tmp_path):
    w = NetworkConfig.symmetric_from_block(np.array([[3.0, -63.0]]))
    config = NetworkConfig.homogeneous(1, 2, weights=w, biases=np.array([-49.0, -51.0, -50.0]), rng_seed=4,
                                       noise=NoisePoolConfig(mode="shared"))
    loaded = NetworkConfig.load(config.write(tmp_path / "network.toml"))
    np.testing.assert_array_equal(loaded.weights, config.weights)
    np.testing.assert_array_equal(loaded.biases, config.biases)
    assert loaded.noise_assignment == config.noise_assignment
    assert loaded.neuron_params == config.neuron_params


class TestNetworkValidation:
    def test_capacity(self):
        with pytest.raises(CapacityError) as info:
            NetworkConfig.homogeneous(100, 97)
        assert info.value.limit == 196
        assert info.value.requested == 197

    def test_weight_range_and_integrality(self):
        with pytest.raises(ConfigurationError):
            _pair(64.0)
        with pytest.raises(ConfigurationError):
            _pair(1.5)
        _pair(1.5, effective=True)

    def test_symmetry_and_bipartiteness(self):
        w = np.zeros((2, 2))
        w[0, 1] = 3.0
        with pytest.raises(ConfigurationError):
            NetworkConfig.homogeneous(1, 1, weights=w)
        w = np.zeros((3, 3))
        w[0, 1] = w[1, 0] = 2.0
        with pytest.raises(ConfigurationError):
            NetworkConfig.homogeneous(2, 1, weights=w)

    def test_reset_below_threshold(self):
        with pytest.raises(ConfigurationError):
            NeuronParams(reset=-50.0, threshold=-50.0)

    def test_negative_duration(self):
        with pytest.raises(ConfigurationError):
            simulate(_pair(0.0), -1.0, seed=0)
