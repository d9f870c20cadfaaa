"""Tests for gradient estimation, Adam and the training loop."""

import numpy as np
import pytest

from neuroquansa.backends import ExactBackend, GibbsBackend
from neuroquansa.boltzmann import RBMParams, exact_joint, exact_marginal
from neuroquansa.errors import ConfigurationError
from neuroquansa.learner import (
    AdamState,
    TrainingConfig,
    TrainingTrace,
    TraceRow,
    adam_step,
    checkpoint_iteration,
    estimate_gradient,
    initial_parameters,
    lr_schedule,
    train,
)
from neuroquansa.snn_sampler import StateSamples
from neuroquansa.tfim import (
    TFIMSpec,
    exact_ground_state,
    fidelity,
    mean_magnetization,
    mix_distributions,
    variational_energy,
)


def _energy(params: RBMParams, spec: TFIMSpec) -> float:
    return variational_energy(exact_marginal(params).probabilities, spec, 0.0).energy


def _exact_samples(params: RBMParams) -> StateSamples:
    z, probs = exact_joint(params)
    return StateSamples(z, params.n_visible, weights=probs)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    nv = 3 + seed % 2
    nh = 1 + seed % 3
    spec = TFIMSpec(nv, 1.0, float(rng.uniform(0.3, 2.0)))
    params = RBMParams.random(nv, nh, rng, scale=1.0)
    grad = estimate_gradient(_exact_samples(params), spec, epsilon=0.0)

    step = 1e-5
    numeric_w = np.zeros((nv, nh))
    for i in range(nv):
        for j in range(nh):
            up, down = params.W.copy(), params.W.copy()
            up[i, j] += step
            down[i, j] -= step
            numeric_w[i, j] = (
                _energy(RBMParams(up, params.b_v, params.b_h), spec)
                - _energy(RBMParams(down, params.b_v, params.b_h), spec)
            ) / (2 * step)
    numeric_b = np.zeros(nv + nh)
    full = params.full_biases()
    for k in range(nv + nh):
        up, down = full.copy(), full.copy()
        up[k] += step
        down[k] -= step
        numeric_b[k] = (
            _energy(RBMParams(params.W, up[:nv], up[nv:]), spec)
            - _energy(RBMParams(params.W, down[:nv], down[nv:]), spec)
        ) / (2 * step)

    np.testing.assert_allclose(grad.block, numeric_w, rtol=1e-4, atol=1e-7)
    np.testing.assert_allclose(grad.db, numeric_b, rtol=1e-4, atol=1e-7)
    np.testing.assert_allclose(grad.dW, grad.dW.T)
    assert grad.energy == pytest.approx(_energy(params, spec), rel=1e-12)


def test_gradient_rejects_mismatched_model():
    samples = StateSamples(np.zeros((4, 5), dtype=np.uint8), 3)
    with pytest.raises(ConfigurationError):
        estimate_gradient(samples, TFIMSpec(4))
    with pytest.raises(ConfigurationError):
        estimate_gradient(StateSamples(np.zeros((0, 5), dtype=np.uint8), 3), TFIMSpec(3))


class TestAdam:
    def test_first_step_moves_against_the_gradient_sign(self):
        state = AdamState.zeros(3)
        delta, state = adam_step(state, np.array([0.5, -2.0, 1e-3]), lr=0.1)
        np.testing.assert_allclose(delta, [-0.1, 0.1, -0.1], rtol=1e-4)
        assert state.step == 1

    def test_constant_gradient_gives_constant_steps(self):
        state = AdamState.zeros(2)
        for _ in range(10):
            delta, state = adam_step(state, np.array([3.0, -3.0]), lr=0.5)
            np.testing.assert_allclose(delta, [-0.5, 0.5], rtol=1e-6)

    def test_first_two_steps_by_hand(self):
        state = AdamState.zeros(1)
        delta, state = adam_step(state, np.array([2.0]), lr=0.5)
        assert delta[0] == pytest.approx(-0.5, rel=1e-8)
        # m = 0.08, v = 0.004996; corrected 0.08 / 0.19 and 0.004996 / 0.001999
        delta, state = adam_step(state, np.array([-1.0]), lr=0.5)
        assert delta[0] == pytest.approx(-0.5 * 0.26633704, rel=1e-5)
        np.testing.assert_allclose(state.first_moment, [0.08])
        np.testing.assert_allclose(state.second_moment, [0.004996])

    def test_quadratic_bowl_matches_reference_recursion(self):
        a, centre, lr = 1.5, 1.0, 0.1
        x, state = 5.0, AdamState.zeros(1)
        x_ref, m, v = 5.0, 0.0, 0.0
        for t in range(1, 101):
            delta, state = adam_step(state, np.array([a * (x - centre)]), lr)
            x += delta[0]
            g = a * (x_ref - centre)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x_ref -= lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert state.step == 100
        assert x == pytest.approx(x_ref, rel=1e-12)
        assert abs(x - centre) < 1.0

    def test_zero_gradient(self):
        delta, state = adam_step(AdamState.zeros(2), np.zeros(2), lr=1.0)
        np.testing.assert_array_equal(delta, [0.0, 0.0])
        assert state.step == 1

        _, state = adam_step(AdamState.zeros(1), np.array([2.0]), lr=1.0)
        delta, _ = adam_step(state, np.zeros(1), lr=1.0)
        # momentum keeps moving the same way, below the step size
        assert -1.0 < delta[0] < 0.0

    def test_rejects_bad_gradients(self):
        with pytest.raises(ConfigurationError):
            adam_step(AdamState.zeros(2), np.array([1.0]), 0.1)
        with pytest.raises(ConfigurationError):
            adam_step(AdamState.zeros(1), np.array([np.nan]), 0.1)


def test_lr_schedule():
    assert lr_schedule(1) == 1.0
    assert lr_schedule(3, 2.0, 0.5) == pytest.approx(0.5)
    with pytest.raises(ConfigurationError):
        lr_schedule(0)


def test_initial_parameters_are_seeded_integers():
    config = TrainingConfig(seed=5, weight_init=5, bias_init_offset=-2.0)
    w, b = initial_parameters(4, 6, config)
    w2, _ = initial_parameters(4, 6, config)
    np.testing.assert_array_equal(w, w2)
    assert w.shape == (4, 6) and np.all(np.abs(w) <= 5) and np.all(w == np.round(w))
    np.testing.assert_array_equal(b, np.full(10, -2.0))


def test_training_config_validation():
    with pytest.raises(ConfigurationError):
        TrainingConfig(iterations=0)
    with pytest.raises(ConfigurationError):
        TrainingConfig(lr_decay=1.5)
    with pytest.raises(ConfigurationError):
        TrainingConfig(weight_init=64)


def test_window_stats():
    trace = TrainingTrace([TraceRow(t, 0.0, float(t), 0.0, 0.0, 0.0, 0.0, 1.0, 0.0) for t in range(1, 101)])
    stats = trace.window_stats("delta_energy", 11)
    assert stats["median"] == pytest.approx(95.0)
    assert stats["p15"] < stats["median"] < stats["p85"]


def _exact_config(**kwargs) -> TrainingConfig:
    base = dict(iterations=150, samples_per_iteration=1, runs_per_iteration=1, learning_rate=2.0,
                lr_decay=0.995, history_window=20, seed=3, checkpoint_every=10)
    base.update(kwargs)
    return TrainingConfig(**base)


def test_exact_training_reduces_infidelity():
    spec = TFIMSpec(4, 1.0, 1.0)
    rows = []
    result = train(spec, ExactBackend(), 4, _exact_config(), on_iteration=rows.append)

    assert len(result.trace) == 150
    assert [r.iteration for r in rows] == list(range(1, 151))
    first, last = result.trace.rows[0], result.trace.rows[-1]
    assert last.infidelity < 0.5 * first.infidelity
    assert last.delta_energy < first.delta_energy
    assert len(result.window_distributions) == 20
    assert result.window_distribution.sum() == pytest.approx(1.0)
    assert not result.aborted


def test_resume_continues_the_same_trajectory(tmp_path):
    spec = TFIMSpec(3, 1.0, 0.8)
    reference = exact_ground_state(spec)
    full = train(spec, ExactBackend(), 2, _exact_config(iterations=30), reference=reference)

    checkpoint = tmp_path / "checkpoint.npz"
    train(spec, ExactBackend(), 2, _exact_config(iterations=20), reference=reference, checkpoint_path=checkpoint)
    assert checkpoint_iteration(checkpoint) == 20
    resumed = train(spec, ExactBackend(), 2, _exact_config(iterations=30, resume=True), reference=reference,
                    checkpoint_path=checkpoint)

    assert [r.iteration for r in resumed.trace.rows] == list(range(21, 31))
    np.testing.assert_allclose(resumed.weights, full.weights)
    np.testing.assert_allclose(resumed.biases, full.biases)
    assert checkpoint_iteration(checkpoint) == 30
    assert checkpoint_iteration(tmp_path / "missing.npz") is None


def test_resuming_a_finished_run_reports_its_distribution(tmp_path):
    spec = TFIMSpec(3, 1.0, 0.8)
    reference = exact_ground_state(spec)
    checkpoint = tmp_path / "checkpoint.npz"
    finished = train(spec, ExactBackend(), 2, _exact_config(iterations=20), reference=reference,
                     checkpoint_path=checkpoint)

    again = train(spec, ExactBackend(), 2, _exact_config(iterations=20, resume=True), reference=reference,
                  checkpoint_path=checkpoint)

    assert again.trace.rows == []
    np.testing.assert_array_equal(again.weights, finished.weights)
    stored = exact_marginal(ExactBackend().program(finished.weights, finished.biases).rbm).probabilities
    np.testing.assert_allclose(again.distribution, stored)
    assert not np.allclose(again.distribution, 1 / 8)
    assert checkpoint_iteration(checkpoint) == 20


class _FlakyBackend(ExactBackend):
    def __init__(self, failures: int) -> None:
        super().__init__()
        self.failures = failures

    def sample(self, state, n_samples, *, iteration, run):
        if iteration == 3 and self.failures > 0:
            self.failures -= 1
            raise RuntimeError("sampler glitch")
        return super().sample(state, n_samples, iteration=iteration, run=run)


def test_single_sampling_failure_is_retried():
    result = train(TFIMSpec(3), _FlakyBackend(failures=1), 2, _exact_config(iterations=5))
    assert not result.aborted
    assert len(result.trace) == 5


def test_repeated_sampling_failure_aborts_with_partial_trace():
    result = train(TFIMSpec(3), _FlakyBackend(failures=2), 2, _exact_config(iterations=5))
    assert result.aborted
    assert "iteration 3" in result.abort_reason
    assert [r.iteration for r in result.trace.rows] == [1, 2]


def test_gibbs_training_tracks_integer_weights():
    spec = TFIMSpec(3, 1.0, 1.0)
    backend = GibbsBackend(n_chains=32, burn_in=50, reburn=5, runs_per_iteration=2, seed=1)
    config = _exact_config(iterations=30, samples_per_iteration=2000, runs_per_iteration=2)
    result = train(spec, backend, 3, config)

    assert np.all(result.programmed_weights == np.round(result.programmed_weights))
    assert np.all(np.abs(result.weights) <= 63)
    assert result.weight_histogram.sum() == 20 * 9
    assert all(0.0 <= r.flip_fraction <= 1.0 for r in result.trace.rows)
    assert result.trace.rows[0].flip_fraction == 0.0


@pytest.mark.slow
def test_gibbs_training_learns_small_chain():
    spec = TFIMSpec(4, 1.0, 1.0)
    backend = GibbsBackend(n_chains=64, burn_in=200, reburn=20, runs_per_iteration=2, seed=2)
    config = _exact_config(iterations=300, samples_per_iteration=20_000, runs_per_iteration=2,
                           learning_rate=1.0, lr_decay=0.999, history_window=50)
    result = train(spec, backend, 6, config)
    assert result.trace.window_stats("infidelity", 50)["median"] < result.trace.rows[0].infidelity
    assert result.trace.window_stats("infidelity", 50)["median"] < 0.05


def test_exact_training_reaches_the_near_uniform_target():
    spec = TFIMSpec(3, 1.0, 10.0)
    config = TrainingConfig(iterations=300, samples_per_iteration=1, runs_per_iteration=1, seed=1)
    result = train(spec, ExactBackend(), 5, config)
    assert len(result.trace) == 300
    assert result.trace.column("delta_energy").min() < 1e-4


@pytest.mark.slow
def test_exact_training_six_spins_at_the_critical_field():
    spec = TFIMSpec(6, 1.0, 1.0)
    config = TrainingConfig(iterations=1500, samples_per_iteration=1, runs_per_iteration=1, seed=1)
    result = train(spec, ExactBackend(), 10, config)
    assert result.trace.window_stats("infidelity", 200)["median"] < 1e-3


def _initial_magnetization(n_visible: int, n_hidden: int, config: TrainingConfig) -> float:
    w, b = initial_parameters(n_visible, n_hidden, config)
    return mean_magnetization(exact_marginal(ExactBackend().program(w, b).rbm).probabilities, n_visible)


@pytest.mark.slow
def test_bias_offset_selects_opposite_magnetization_modes():
    spec = TFIMSpec(4, 1.0, 0.1)
    base = dict(iterations=300, samples_per_iteration=1, runs_per_iteration=1, weight_init=2)

    def initial(seed: int) -> tuple:
        return (_initial_magnetization(4, 2, TrainingConfig(seed=seed, **base)),
                _initial_magnetization(4, 2, TrainingConfig(seed=seed, bias_init_offset=-2.0, **base)))

    # a seed whose random weights tilt the unshifted start against the shifted one
    starts = ((s, initial(s)) for s in range(200))
    seed, (m_plain, m_shifted) = next(
        (s, m) for s, m in starts if m[0] * m[1] < 0 and min(abs(m[0]), abs(m[1])) > 0.01
    )

    reference = exact_ground_state(spec)
    plain = train(spec, ExactBackend(), 2, TrainingConfig(seed=seed, **base), reference=reference)
    shifted = train(spec, ExactBackend(), 2, TrainingConfig(seed=seed, bias_init_offset=-2.0, **base),
                    reference=reference)

    final_plain = mean_magnetization(plain.distribution, 4)
    final_shifted = mean_magnetization(shifted.distribution, 4)
    assert final_plain * m_plain > 0
    assert final_shifted * m_shifted > 0
    assert final_plain * final_shifted < 0

    mixed = mix_distributions(plain.distribution, shifted.distribution)
    single = max(fidelity(plain.distribution, reference), fidelity(shifted.distribution, reference))
    assert fidelity(mixed, reference) > single
