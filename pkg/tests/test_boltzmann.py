"""Tests for the exact and Gibbs-sampled Boltzmann references."""

import math

import numpy as np
import pytest

from neuroquansa.boltzmann import (
    EmpiricalDistribution,
    GibbsChains,
    RBMParams,
    dkl,
    exact_joint,
    exact_marginal,
    gibbs_sample,
)
from neuroquansa.errors import CapacityError, ConfigurationError
from neuroquansa.snn_sampler import states_to_indices


@pytest.fixture
def rbm():
    return RBMParams.random(3, 2, np.random.default_rng(42), scale=1.0)


def test_exact_marginal_normalized(rbm):
    p = exact_marginal(rbm).probabilities
    assert p.shape == (8,)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_marginal_sums_the_joint(rbm):
    z, probs = exact_joint(rbm)
    idx = states_to_indices(z[:, : rbm.n_visible])
    summed = np.bincount(idx, weights=probs, minlength=8)
    np.testing.assert_allclose(exact_marginal(rbm).probabilities, summed, atol=1e-12)


def test_single_unit_marginal_is_logistic():
    params = RBMParams(np.zeros((1, 0)), np.array([0.7]), np.zeros(0))
    p = exact_marginal(params).probabilities
    assert p[1] == pytest.approx(1.0 / (1.0 + math.exp(-0.7)))


def test_zero_parameters_give_uniform_marginal():
    p = exact_marginal(RBMParams.zeros(4, 3)).probabilities
    np.testing.assert_allclose(p, np.full(16, 1 / 16))


def test_log_partition_matches_brute_force(rbm):
    z, _ = exact_joint(rbm)
    brute = math.log(np.exp(-rbm.energy(z)).sum())
    assert exact_marginal(rbm).log_partition == pytest.approx(brute, rel=1e-12)


def test_capacity_limits():
    with pytest.raises(CapacityError):
        exact_marginal(RBMParams.zeros(21, 0))
    with pytest.raises(CapacityError):
        exact_joint(RBMParams.zeros(12, 11))


def test_gibbs_matches_exact_marginal(rbm):
    empirical = gibbs_sample(rbm, 200_000, burn_in=200, seed=3)
    assert empirical.total_samples == 200_000
    assert dkl(empirical, exact_marginal(rbm)) < 5e-3


def test_gibbs_hidden_rows_follow_conditional(rbm):
    chains = GibbsChains(256, np.random.default_rng(0))
    z = chains.sample(rbm, 100_000, burn_in=100).astype(float)
    v, h = z[:, :3], z[:, 3:]
    # Every hidden row is drawn from p(h | v) of its own visible row.
    expected = rbm.hidden_probabilities(v).mean(axis=0)
    np.testing.assert_allclose(h.mean(axis=0), expected, atol=1e-2)


@pytest.mark.slow
def test_gibbs_estimator_converges_as_inverse_sample_count(rbm):
    exact = exact_marginal(rbm)
    sizes = np.array([2_000, 8_000, 32_000, 128_000])
    values = []
    for n in sizes:
        runs = [dkl(gibbs_sample(rbm, int(n), burn_in=200, seed=s), exact) for s in range(20)]
        values.append(np.mean(runs))
    slope, _ = np.polyfit(np.log(sizes), np.log(values), 1)
    assert slope == pytest.approx(-1.0, abs=0.2)


class TestDkl:
    def test_identity_is_zero(self):
        p = np.array([0.1, 0.2, 0.7])
        assert dkl(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_known_value(self):
        value = dkl([0.5, 0.5], [0.25, 0.75])
        assert value == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3))

    def test_zero_in_q_is_smoothed(self):
        assert math.isfinite(dkl([0.5, 0.5], [1.0, 0.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            dkl([0.5, 0.5], [0.2, 0.3, 0.5])


def test_empirical_distribution_counts_by_index():
    d = EmpiricalDistribution.from_states(np.array([[1, 0], [1, 0], [0, 1]]), 2)
    np.testing.assert_array_equal(d.counts, [0, 2, 1, 0])
    assert d.as_mapping() == {1: 2.0, 2: 1.0}
    with pytest.raises(ConfigurationError):
        EmpiricalDistribution(np.zeros(4), 2).probabilities
