"""Tests for activation fits and the physical <-> abstract parameter map."""

import numpy as np
import pytest

from neuroquansa.calibration import (
    ActivationFit,
    CalibrationMap,
    CalibrationProtocol,
    calibrate,
    fit_logistic,
    measure_activation,
)
from neuroquansa.errors import ConfigurationError
from neuroquansa.fitting import logistic
from neuroquansa.snn_sampler import NetworkConfig, NeuronParams, NoisePoolConfig


def _curve(u0: float, alpha: float):
    v = np.linspace(u0 - 6 * alpha, u0 + 6 * alpha, 15)
    return list(zip(v, logistic(v, u0, alpha)))


def test_fit_logistic_recovers_exact_curve():
    fit = fit_logistic(_curve(0.0, 1.0))
    assert fit.u0 == pytest.approx(0.0, abs=1e-6)
    assert fit.alpha == pytest.approx(1.0, abs=1e-6)


def test_fit_logistic_is_translation_equivariant():
    base = fit_logistic(_curve(-50.0, 3.0))
    shifted = fit_logistic([(v + 2.0, p) for v, p in _curve(-50.0, 3.0)])
    assert shifted.u0 == pytest.approx(base.u0 + 2.0, abs=1e-6)
    assert shifted.alpha == pytest.approx(base.alpha, abs=1e-6)


def test_fit_logistic_needs_points():
    with pytest.raises(ConfigurationError):
        fit_logistic([(0.0, 0.5), (1.0, 0.7)])


def test_activation_fit_rejects_nonpositive_slope():
    with pytest.raises(ConfigurationError):
        ActivationFit(u0=0.0, alpha=0.0, residual_norm=0.0)


class TestCalibrationMap:
    def setup_method(self):
        self.cmap = CalibrationMap(
            fits=(ActivationFit(-50.0, 2.0, 0.0), ActivationFit(-48.0, 4.0, 0.0)),
            weight_factors=np.array([0.05, 0.07]),
        )

    def test_bias_map(self):
        np.testing.assert_allclose(self.cmap.abstract_biases([-50.0, -48.0]), [0.0, 0.0])
        np.testing.assert_allclose(self.cmap.abstract_biases([-48.0, -44.0]), [1.0, 1.0])

    def test_bias_round_trip(self):
        b = np.array([-1.3, 0.4])
        np.testing.assert_allclose(self.cmap.abstract_biases(self.cmap.leak_potentials(b)), b)

    def test_weight_translation(self):
        assert self.cmap.weight_translation_factor == pytest.approx(0.06)
        np.testing.assert_allclose(self.cmap.abstract_weights(np.array([10.0])), [0.6])
        np.testing.assert_array_equal(self.cmap.integer_weights(np.array([0.6, 100.0, -100.0])), [10.0, 63.0, -63.0])

    def test_rows(self):
        rows = self.cmap.to_rows()
        assert [r["neuron_id"] for r in rows] == [0, 1]
        assert rows[1]["gamma_w"] == pytest.approx(0.07)


def test_measure_activation_needs_enough_points():
    with pytest.raises(ConfigurationError):
        measure_activation(NeuronParams(), NoisePoolConfig(), [-60.0, -50.0, -40.0], 100.0)


@pytest.mark.slow
def test_measured_activation_is_logistic_and_monotone():
    neuron = NeuronParams()
    sweep = np.linspace(-75.0, -25.0, 10)
    duration = 3000.0
    curve = measure_activation(neuron, NoisePoolConfig(), sweep, duration, seed=2)
    p = curve.probabilities
    sigma = np.sqrt(np.maximum(p * (1 - p), 1.0 / duration) / duration)
    assert np.all(np.diff(p) >= -3 * (sigma[1:] + sigma[:-1]))
    assert curve.bracketed

    fit = fit_logistic(curve)
    assert fit.alpha > 0
    assert sweep[0] < fit.u0 < sweep[-1]


@pytest.mark.slow
def test_calibrate_shares_fits_between_identical_neurons():
    template = NetworkConfig.homogeneous(2, 1)
    protocol = CalibrationProtocol(sweep_points=8, sweep_half_width=25.0, duration=2000.0, reference_weight=16, seed=1)
    cmap = calibrate(template, protocol)

    assert len(cmap.fits) == 3
    assert cmap.fits[0] == cmap.fits[1] == cmap.fits[2]
    assert cmap.weight_translation_factor > 0
    assert all(c.bracketed for c in cmap.curves)
