"""Sample-based energy gradients, Adam with decaying step size, and the training loop.

Master parameters live in backend units (weights in LSB, biases in bias LSB)
and stay continuous; each iteration writes their quantized image to the
backend, samples, and applies an Adam step to the masters.
"""
from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Deque, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from .backends import ProgrammedState, SamplingBackend
from .boltzmann import EmpiricalDistribution, dkl
from .errors import ConfigurationError
from .paths import atomic_output
from .scheduler import WorkerPool
from .snn_sampler import WEIGHT_LIMIT, StateSamples
from .tfim import (
    DEFAULT_EPSILON,
    GroundStateSolution,
    TFIMSpec,
    exact_ground_state,
    fidelity,
    local_energy_table,
    relative_energy_error,
)

WINDOW_DISTRIBUTION_LIMIT = 12


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    """dE/d(theta) in abstract units; dW is the full symmetric matrix with bipartite support."""

    dW: np.ndarray
    db: np.ndarray
    energy: float
    n_samples: int
    n_visible: int
    distribution: np.ndarray

    @property
    def block(self) -> np.ndarray:
        return self.dW[: self.n_visible, self.n_visible :]


def estimate_gradient(samples: StateSamples, spec: TFIMSpec, epsilon: float = DEFAULT_EPSILON) -> GradientEstimate:
    """Two passes over one sample set.

    Pass 1 builds the visible histogram and the local-energy table; pass 2
    averages (E_loc(v) - E) z_i z_j and (E_loc(v) - E) z_k over the raw rows.
    """
    if len(samples) == 0:
        raise ConfigurationError("estimate_gradient: empty sample set")
    nv = samples.n_visible
    if nv != spec.n_spins:
        raise ConfigurationError(f"estimate_gradient: {nv} visible units for a {spec.n_spins}-spin model")
    weights = samples.row_weights()
    p_hat = EmpiricalDistribution.from_states(samples.visible, nv, weights=weights).probabilities
    table = local_energy_table(p_hat, spec, epsilon)
    energy = table.mean

    z = samples.states.astype(float)
    centred = table.values[samples.visible_indices()] - energy
    coeff = weights * centred
    db = coeff @ z
    dW = np.zeros((z.shape[1], z.shape[1]))
    block = (z[:, :nv] * coeff[:, None]).T @ z[:, nv:]
    dW[:nv, nv:] = block
    dW[nv:, :nv] = block.T
    return GradientEstimate(dW, db, energy, len(samples), nv, p_hat)


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, **kwargs: float) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, **kwargs)


def adam_step(state: AdamState, grad: np.ndarray, lr: float) -> Tuple[np.ndarray, AdamState]:
    """One Adam update; returns (parameter delta, new state).

    Raw moments are stored and bias-corrected at update time; under a steady
    gradient every component of the delta has magnitude lr.
    """
    g = np.asarray(grad, dtype=float).reshape(-1)
    if g.shape != state.first_moment.shape:
        raise ConfigurationError(f"adam_step: gradient has {g.size} entries, state has {state.first_moment.size}")
    if not np.all(np.isfinite(g)):
        raise ConfigurationError("adam_step: gradient contains non-finite values")
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    delta = -lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return delta, replace(state, first_moment=m, second_moment=v, step=t)


def lr_schedule(t: int, initial: float = 1.0, decay: float = 0.999) -> float:
    """eta(t) = initial * decay^(t-1) for iterations t >= 1."""
    if t < 1:
        raise ConfigurationError(f"lr_schedule: iteration must be >= 1, got {t}")
    return initial * decay ** (t - 1)


@dataclass(frozen=True)
class TrainingConfig:
    iterations: int = 1500
    samples_per_iteration: int = 200_000
    runs_per_iteration: int = 3
    learning_rate: float = 1.0
    lr_decay: float = 0.999
    epsilon: float = DEFAULT_EPSILON
    bias_init_offset: float = 0.0
    weight_init: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    history_window: int = 200
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 100
    resume: bool = False
    progress: bool = False

    def __post_init__(self) -> None:
        for name in ("iterations", "samples_per_iteration", "runs_per_iteration", "history_window",
                     "log_every", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"TrainingConfig.{name} must be >= 1")
        if not self.learning_rate > 0 or not 0 < self.lr_decay <= 1:
            raise ConfigurationError("TrainingConfig: learning_rate > 0 and 0 < lr_decay <= 1 required")
        if self.epsilon < 0 or self.adam_epsilon <= 0:
            raise ConfigurationError("TrainingConfig: epsilon >= 0 and adam_epsilon > 0 required")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("TrainingConfig: Adam betas must lie in [0, 1)")
        if not 0 <= self.weight_init <= WEIGHT_LIMIT:
            raise ConfigurationError(f"TrainingConfig.weight_init must lie in [0, {WEIGHT_LIMIT}]")
        if not math.isfinite(self.bias_init_offset):
            raise ConfigurationError("TrainingConfig.bias_init_offset must be finite")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    energy: float
    delta_energy: float
    infidelity: float
    dkl: float
    flip_fraction: float
    clip_fraction: float
    lr: float
    wall_time: float


@dataclass
class TrainingTrace:
    rows: List[TraceRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def tail(self, window: int) -> "TrainingTrace":
        return TrainingTrace(self.rows[-window:])

    def window_stats(self, name: str, window: int) -> Dict[str, float]:
        """Median and 15/85 percentiles of one column over the last `window` rows."""
        values = self.tail(window).column(name)
        if values.size == 0:
            return {"median": math.nan, "p15": math.nan, "p85": math.nan}
        p15, median, p85 = np.percentile(values, [15, 50, 85])
        return {"median": float(median), "p15": float(p15), "p85": float(p85)}


@dataclass(eq=False)
class TrainingResult:
    trace: TrainingTrace
    weights: np.ndarray
    biases: np.ndarray
    programmed_weights: np.ndarray
    distribution: np.ndarray
    reference: GroundStateSolution
    weight_histogram: np.ndarray
    window_distributions: List[np.ndarray]
    aborted: bool = False
    abort_reason: Optional[str] = None

    @property
    def edge_fraction(self) -> float:
        """Share of accumulated window weights sitting at the clip edges."""
        total = self.weight_histogram.sum()
        if total == 0:
            return 0.0
        return float((self.weight_histogram[0] + self.weight_histogram[-1]) / total)

    @property
    def window_distribution(self) -> np.ndarray:
        """Average visible distribution over the history window (final one if none were kept)."""
        if not self.window_distributions:
            return self.distribution
        return np.mean(self.window_distributions, axis=0)


def initial_parameters(n_visible: int, n_hidden: int, config: TrainingConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform integer weights in [-weight_init, weight_init]; every bias at midpoint plus offset."""
    rng = np.random.default_rng(config.seed)
    w = rng.integers(-config.weight_init, config.weight_init + 1, size=(n_visible, n_hidden)).astype(float)
    b = np.full(n_visible + n_hidden, float(config.bias_init_offset))
    return w, b


def _draw(
    backend: SamplingBackend,
    state: ProgrammedState,
    config: TrainingConfig,
    iteration: int,
    pool: Optional[WorkerPool],
) -> StateSamples:
    runs = config.runs_per_iteration
    per_run = -(-config.samples_per_iteration // runs)

    def one(run: int) -> StateSamples:
        return backend.sample(state, per_run, iteration=iteration, run=run)

    first = one(0)
    if first.weights is not None:
        return first
    rest = pool.map_ordered(one, range(1, runs)) if pool is not None else [one(r) for r in range(1, runs)]
    return StateSamples.concatenate([first, *rest])


def _save_checkpoint(path: Path, iteration: int, w: np.ndarray, b: np.ndarray, adam: AdamState) -> None:
    with atomic_output(path) as tmp:
        with tmp.open("wb") as f:
            np.savez(
                f,
                iteration=iteration,
                weights=w,
                biases=b,
                first_moment=adam.first_moment,
                second_moment=adam.second_moment,
                step=adam.step,
            )
    logger.bind(action="checkpoint", iteration=iteration).debug(f"checkpoint written: {path}")


def checkpoint_iteration(path: Path) -> Optional[int]:
    """Last completed iteration stored in a checkpoint, or None when there is none."""
    if not Path(path).exists():
        return None
    with np.load(path) as data:
        return int(data["iteration"])


def load_checkpoint(path: Path, config: TrainingConfig) -> Tuple[int, np.ndarray, np.ndarray, AdamState]:
    with np.load(path) as data:
        adam = AdamState(
            data["first_moment"].copy(),
            data["second_moment"].copy(),
            int(data["step"]),
            config.beta1,
            config.beta2,
            config.adam_epsilon,
        )
        return int(data["iteration"]), data["weights"].copy(), data["biases"].copy(), adam


def train(
    spec: TFIMSpec,
    backend: SamplingBackend,
    n_hidden: int,
    config: TrainingConfig,
    *,
    reference: Optional[GroundStateSolution] = None,
    on_iteration: Optional[Callable[[TraceRow], None]] = None,
    checkpoint_path: Optional[Path] = None,
    pool: Optional[WorkerPool] = None,
) -> TrainingResult:
    """Alternate backend sampling with Adam updates of the master parameters.

    A failing sampling step is retried once; a second failure ends training
    with the partial trace and `aborted=True`.
    """
    nv = spec.n_spins
    backend.capabilities.check(nv, n_hidden)
    reference = reference or exact_ground_state(spec)
    w, b = initial_parameters(nv, n_hidden, config)
    adam = AdamState.zeros(w.size + b.size, beta1=config.beta1, beta2=config.beta2, epsilon=config.adam_epsilon)
    start = 1
    if config.resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        done, w, b, adam = load_checkpoint(Path(checkpoint_path), config)
        start = done + 1
        logger.bind(action="train", status="resume", iteration=done).info(f"resuming after iteration {done}")

    clip = backend.hardware.weight_clip if backend.integer_weights else math.inf
    trace = TrainingTrace()
    histogram = np.zeros(2 * WEIGHT_LIMIT + 1)
    window: Deque[np.ndarray] = deque(maxlen=config.history_window)
    keep_window = nv <= WINDOW_DISTRIBUTION_LIMIT
    previous: Optional[np.ndarray] = None
    state = backend.program(w, b)
    p_hat = np.full(1 << nv, 1.0 / (1 << nv))
    aborted, reason = False, None
    hist_from = config.iterations - config.history_window + 1

    iterations = tqdm(range(start, config.iterations + 1), desc="Iterations", disable=not config.progress)
    for t in iterations:
        t0 = time.perf_counter()
        state = backend.program(w, b)
        try:
            samples = _draw(backend, state, config, t, pool)
        except Exception as first_error:
            logger.bind(action="train_iteration", status="retry", iteration=t).warning(
                f"sampling failed ({first_error}); retrying once"
            )
            try:
                samples = _draw(backend, state, config, t, pool)
            except Exception as e:
                aborted, reason = True, f"iteration {t}: {e}"
                logger.bind(action="train", status="aborted", iteration=t).error(f"training aborted: {e}")
                break

        grad = estimate_gradient(samples, spec, config.epsilon)
        p_hat = grad.distribution
        lr = lr_schedule(t, config.learning_rate, config.lr_decay)
        flat = np.concatenate([backend.weight_scale * grad.block.ravel(), backend.bias_scale * grad.db])
        delta, adam = adam_step(adam, flat, lr)
        w = np.clip(w + delta[: w.size].reshape(w.shape), -clip, clip)
        b = b + delta[w.size :]

        written = state.weights
        flip = float(np.mean(written != previous)) if previous is not None else 0.0
        previous = written
        if backend.integer_weights and t >= hist_from:
            histogram += np.bincount((written.ravel() + WEIGHT_LIMIT).astype(int), minlength=histogram.size)
        if keep_window:
            window.append(p_hat)

        row = TraceRow(
            iteration=t,
            energy=grad.energy,
            delta_energy=relative_energy_error(grad.energy, reference.energy, nv),
            infidelity=1.0 - fidelity(p_hat, reference),
            dkl=dkl(reference.probabilities, p_hat),
            flip_fraction=flip,
            clip_fraction=float(np.mean(np.abs(written) >= WEIGHT_LIMIT)) if backend.integer_weights else 0.0,
            lr=lr,
            wall_time=time.perf_counter() - t0,
        )
        trace.rows.append(row)
        if on_iteration is not None:
            on_iteration(row)
        bound = logger.bind(action="train_iteration", **asdict(row))
        if t % config.log_every == 0 or t == config.iterations:
            bound.info(
                f"iter {t}: E={row.energy:.6f} dE={row.delta_energy:.3e} 1-F={row.infidelity:.3e} "
                f"flips={row.flip_fraction:.3f}"
            )
        else:
            bound.debug("iteration complete")
        if checkpoint_path is not None and t % config.checkpoint_every == 0:
            _save_checkpoint(Path(checkpoint_path), t, w, b, adam)

    if start > config.iterations:
        # checkpoint already covers every iteration: report what it holds
        samples = _draw(backend, state, config, start - 1, pool)
        p_hat = EmpiricalDistribution.from_states(samples.visible, nv, weights=samples.row_weights()).probabilities
        logger.bind(action="train", status="complete", iteration=start - 1).info(
            f"checkpoint already at iteration {start - 1}; sampled its parameters"
        )
    if checkpoint_path is not None and trace.rows and not aborted:
        _save_checkpoint(Path(checkpoint_path), trace.rows[-1].iteration, w, b, adam)
    return TrainingResult(
        trace=trace,
        weights=w,
        biases=b,
        programmed_weights=state.weights,
        distribution=p_hat,
        reference=reference,
        weight_histogram=histogram,
        window_distributions=list(window),
        aborted=aborted,
        abort_reason=reason,
    )
