"""Tests for the weight-resolution, pseudo-update and stability experiments."""

import numpy as np
import pytest

from neuroquansa.backends import GibbsBackend
from neuroquansa.errors import ConfigurationError
from neuroquansa.hardware import HardwareModel, pseudo_update
from neuroquansa.limitations import (
    ConvergenceCurve,
    checkpoint_schedule,
    prefix_distributions,
    run_pseudo_update_experiment,
    run_resolution_experiment,
    run_stability_experiment,
)
from neuroquansa.snn_sampler import StateSamples


def _gibbs(**kwargs) -> GibbsBackend:
    base = dict(weight_scale=1.0 / 64, bias_scale=1.0 / 64, n_chains=128, burn_in=200, seed=7)
    base.update(kwargs)
    return GibbsBackend(**base)


def test_checkpoint_schedule_is_log_spaced_and_ends_at_duration():
    cps = checkpoint_schedule(100_000, 10)
    assert cps[0] == 100
    assert cps[-1] == 100_000
    assert np.all(np.diff(cps) > 0)
    with pytest.raises(ConfigurationError):
        checkpoint_schedule(0, 5)


def test_prefix_distributions():
    states = np.array([[0, 1], [1, 1], [1, 1], [0, 1]])
    samples = StateSamples(states, 1)
    first, full = prefix_distributions(samples, [1, 4])
    np.testing.assert_allclose(first, [1.0, 0.0])
    np.testing.assert_allclose(full, [0.5, 0.5])
    with pytest.raises(ConfigurationError):
        prefix_distributions(samples, [5])
    with pytest.raises(ConfigurationError):
        prefix_distributions(StateSamples(states, 1, weights=np.ones(4)), [2])


class TestConvergenceCurve:
    curve = ConvergenceCurve(np.array([10, 100, 1000, 10_000]), np.array([1.0, 0.1, 0.01, 0.005]), np.zeros(4))

    def test_slope_over_prefix(self):
        assert self.curve.loglog_slope(max_samples=1000) == pytest.approx(-1.0)

    def test_saturated_tail(self):
        assert self.curve.saturated(0.25) == pytest.approx(0.005)
        assert self.curve.saturated(0.5) == pytest.approx(0.0075)

    def test_slope_needs_two_points(self):
        with pytest.raises(ConfigurationError):
            self.curve.loglog_slope(max_samples=50)


def test_resolution_orders_grid_coarseness():
    rows = run_resolution_experiment(_gibbs(), [1, 2, 16, 64], repetitions=8, duration=50_000,
                                     n_visible=4, n_hidden=6, seed=1)
    by_step = {r.grid_step: r for r in rows}
    assert [r.n_values for r in rows] == [127, 65, 9, 3]
    assert by_step[64].dkl_mean > by_step[16].dkl_mean > by_step[1].dkl_mean
    assert by_step[2].dkl_mean < by_step[16].dkl_mean
    # fine grids stay on the sampling-noise plateau
    assert by_step[2].dkl_mean <= 2 * by_step[1].dkl_mean


def test_resolution_rejects_invalid_step():
    with pytest.raises(ConfigurationError):
        run_resolution_experiment(_gibbs(), [3], 1, 100, n_visible=2, n_hidden=2)


@pytest.mark.slow
def test_stability_without_drift_converges_as_inverse_samples():
    result = run_stability_experiment(_gibbs(), HardwareModel(), n_repeats=10, duration=50_000,
                                      n_visible=4, n_hidden=6, seed=2)
    assert result.self_convergence.loglog_slope() == pytest.approx(-1.0, abs=0.2)
    assert result.drift_sigma == 0.0


@pytest.mark.slow
def test_drift_raises_the_run_average_plateau():
    kwargs = dict(n_repeats=8, duration=50_000, n_visible=4, n_hidden=6, seed=3)
    steady = run_stability_experiment(_gibbs(), HardwareModel(), **kwargs)
    drifting = run_stability_experiment(_gibbs(), HardwareModel(drift_sigma=0.1, seed=4), **kwargs)
    assert drifting.average_convergence.saturated() > 2 * steady.average_convergence.saturated()


@pytest.mark.slow
def test_pseudo_update_plateau_grows_with_flip_fraction():
    backend = _gibbs(weight_scale=1.0 / 32, n_chains=256, burn_in=500)
    # 40 weights: p = 0.025 changes one entry, p = 0.1 changes four
    assert np.count_nonzero(pseudo_update(np.zeros((4, 10)), 0.025, 0)) == 1
    curves = run_pseudo_update_experiment(backend, [0.025, 0.1], 400_000,
                                          reference_duration=2_000_000, n_visible=4, n_hidden=10,
                                          repetitions=6, seed=5)
    assert set(curves) == {0.025, 0.1}
    assert curves[0.025].saturated() < curves[0.1].saturated()
    assert curves[0.025].samples[-1] == 400_000
