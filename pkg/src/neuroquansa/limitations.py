"""Hardware limitation experiments: weight resolution, pseudo updates, run-to-run stability.

Durations count readouts (samples), not model time. Every experiment draws
from `backend.independent()`, so repetitions never share sampler state.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from .backends import SamplingBackend
from .boltzmann import EmpiricalDistribution, dkl
from .errors import ConfigurationError
from .hardware import HardwareModel, check_grid_step, pseudo_update, quantize_to_grid, weight_grid
from .scheduler import WorkerPool, task_rng, task_seed
from .snn_sampler import WEIGHT_LIMIT, StateSamples

PSEUDO_WEIGHT_RANGE = 62
SLOPE_FRACTION = 1.0 / 8.0


@dataclass(frozen=True)
class ResolutionRow:
    grid_step: int
    dkl_mean: float
    dkl_std: float
    n_values: int


@dataclass(frozen=True, eq=False)
class ConvergenceCurve:
    """D_KL against the number of samples t; one value per checkpoint."""

    samples: np.ndarray
    dkl: np.ndarray
    dkl_std: np.ndarray
    label: str = ""

    def saturated(self, fraction: float = 0.25) -> float:
        """Mean over the last `fraction` of checkpoints."""
        k = max(1, int(math.ceil(fraction * self.dkl.size)))
        return float(np.mean(self.dkl[-k:]))

    def loglog_slope(self, max_samples: Optional[float] = None) -> float:
        """Least-squares slope of log D_KL over log t, using points with t <= max_samples."""
        limit = max_samples if max_samples is not None else SLOPE_FRACTION * float(self.samples[-1])
        use = (self.samples <= limit) & (self.dkl > 0)
        if use.sum() < 2:
            raise ConfigurationError("loglog_slope: fewer than two usable checkpoints")
        slope, _ = np.polyfit(np.log(self.samples[use]), np.log(self.dkl[use]), 1)
        return float(slope)


@dataclass(frozen=True, eq=False)
class PerturbedRun:
    """A full-run reference and the prefix histograms of one perturbed run."""

    reference: np.ndarray
    partials: List[np.ndarray]
    checkpoints: np.ndarray
    duration: int


@dataclass(frozen=True, eq=False)
class StabilityResult:
    self_convergence: ConvergenceCurve
    average_convergence: ConvergenceCurve
    drift_sigma: float


def checkpoint_schedule(duration: int, n_points: int) -> np.ndarray:
    """Log-spaced sample counts ending at `duration`."""
    if duration < 1 or n_points < 2:
        raise ConfigurationError("checkpoint_schedule: duration >= 1 and n_points >= 2 required")
    start = min(duration, max(100, duration // 1000))
    return np.unique(np.geomspace(start, duration, n_points).astype(np.int64))


def prefix_distributions(samples: StateSamples, checkpoints: Sequence[int]) -> List[np.ndarray]:
    """Visible histograms over the first t samples for every checkpoint t."""
    if samples.weights is not None:
        raise ConfigurationError("prefix distributions need drawn samples; the exact backend enumerates")
    idx = samples.visible_indices()
    n_states = 1 << samples.n_visible
    out = []
    for t in checkpoints:
        if t > idx.size:
            raise ConfigurationError(f"checkpoint {t} exceeds the {idx.size} available samples")
        out.append(np.bincount(idx[: int(t)], minlength=n_states) / float(t))
    return out


def _random_weights(rng: np.random.Generator, n_visible: int, n_hidden: int, limit: int) -> np.ndarray:
    return rng.integers(-limit, limit + 1, size=(n_visible, n_hidden)).astype(float)


def _distribution(samples: StateSamples) -> np.ndarray:
    return EmpiricalDistribution.from_states(samples.visible, samples.n_visible, samples.row_weights()).probabilities


def run_resolution_experiment(
    backend: SamplingBackend,
    grid_steps: Sequence[int],
    repetitions: int,
    duration: int,
    *,
    n_visible: int,
    n_hidden: int,
    seed: int = 0,
    pool: Optional[WorkerPool] = None,
) -> List[ResolutionRow]:
    """D_KL(p_full || p_dw) between full-resolution and grid-quantized weights.

    Each repetition draws w ~ U(-63, 63) with biases at the activation
    midpoints; every configuration, the full one included, gets its own
    sampling run, so the dw = 1 row measures the sampling-noise floor.
    """
    for step in grid_steps:
        check_grid_step(step)
    if repetitions < 1 or duration < 1:
        raise ConfigurationError("run_resolution_experiment: repetitions and duration must be >= 1")
    sampler = backend.with_hardware(replace(backend.hardware, grid_step=1))
    biases = np.zeros(n_visible + n_hidden)

    def repetition(r: int) -> np.ndarray:
        w_full = _random_weights(task_rng(seed, r), n_visible, n_hidden, WEIGHT_LIMIT)
        p_full = _distribution(sampler.sample(sampler.program(w_full, biases), duration, iteration=r, run=0))
        row = np.empty(len(grid_steps))
        for k, step in enumerate(grid_steps):
            state = sampler.program(quantize_to_grid(w_full, step), biases)
            row[k] = dkl(p_full, _distribution(sampler.sample(state, duration, iteration=r, run=k + 1)))
        logger.bind(action="resolution", repetition=r).debug("repetition complete")
        return row

    reps = range(repetitions)
    table = np.array(pool.map_ordered(repetition, reps) if pool is not None else [repetition(r) for r in reps])
    ddof = 1 if repetitions > 1 else 0
    rows = [
        ResolutionRow(int(step), float(table[:, k].mean()), float(table[:, k].std(ddof=ddof)), int(weight_grid(step).size))
        for k, step in enumerate(grid_steps)
    ]
    for row in rows:
        logger.bind(action="resolution", status="ok", **asdict(row)).info(
            f"dw={row.grid_step}: D_KL={row.dkl_mean:.3e} +- {row.dkl_std:.1e}"
        )
    return rows


def perturbed_run(
    backend: SamplingBackend,
    weights: np.ndarray,
    perturbed: np.ndarray,
    biases: np.ndarray,
    duration: int,
    reference_duration: int,
    checkpoints: Sequence[int],
    *,
    iteration: int = 0,
) -> PerturbedRun:
    reference = _distribution(backend.sample(backend.program(weights, biases), reference_duration, iteration=iteration, run=0))
    samples = backend.sample(backend.program(perturbed, biases), duration, iteration=iteration, run=1)
    cps = np.asarray(checkpoints, dtype=np.int64)
    return PerturbedRun(reference, prefix_distributions(samples, cps), cps, duration)


def run_pseudo_update_experiment(
    backend: SamplingBackend,
    flip_fractions: Sequence[float],
    duration: int,
    *,
    reference_duration: int,
    n_visible: int,
    n_hidden: int,
    n_checkpoints: int = 20,
    repetitions: int = 1,
    seed: int = 0,
    pool: Optional[WorkerPool] = None,
) -> Dict[float, ConvergenceCurve]:
    """D_KL(p~(t) || p(T)) of a pseudo-updated configuration against the original one.

    w ~ U(-62, 62) integers gives the reference p(T); w' = pseudo_update(w, p_flip)
    is sampled for `duration` readouts and compared prefix by prefix.
    """
    if not flip_fractions:
        raise ConfigurationError("run_pseudo_update_experiment: no flip fractions given")
    sampler = backend.independent()
    cps = checkpoint_schedule(duration, n_checkpoints)
    biases = np.zeros(n_visible + n_hidden)
    curves: Dict[float, ConvergenceCurve] = {}

    for k, p_flip in enumerate(flip_fractions):

        def repetition(r: int, k: int = k, p_flip: float = p_flip) -> np.ndarray:
            w = _random_weights(task_rng(seed, r), n_visible, n_hidden, PSEUDO_WEIGHT_RANGE)
            w_new = pseudo_update(w, p_flip, task_seed(seed, r, k))
            run = perturbed_run(sampler, w, w_new, biases, duration, reference_duration, cps,
                                iteration=r * len(flip_fractions) + k)
            return np.array([dkl(p, run.reference) for p in run.partials])

        reps = range(repetitions)
        values = np.array(pool.map_ordered(repetition, reps) if pool is not None else [repetition(r) for r in reps])
        curve = ConvergenceCurve(cps, values.mean(axis=0), values.std(axis=0), label=f"p_flip={p_flip:g}")
        curves[float(p_flip)] = curve
        logger.bind(action="pseudo_update", status="ok", p_flip=p_flip).info(
            f"p_flip={p_flip:g}: saturated D_KL={curve.saturated():.3e}"
        )
    return curves


def run_stability_experiment(
    backend: SamplingBackend,
    model: HardwareModel,
    n_repeats: int = 30,
    duration: int = 1_000_000,
    *,
    n_visible: int,
    n_hidden: int,
    n_checkpoints: int = 20,
    seed: int = 0,
    pool: Optional[WorkerPool] = None,
) -> StabilityResult:
    """Convergence of one static configuration over repeated runs.

    self_convergence: D_KL(p~_r(t) || p_r(T)) averaged over runs r.
    average_convergence: D_KL(p~_r(t) || <p(T)>_n), the distance to the multi-run average,
    which saturates once drift dominates sampling noise.
    """
    if n_repeats < 1:
        raise ConfigurationError("run_stability_experiment: n_repeats must be >= 1")
    if not model.drifts:
        logger.bind(action="stability", status="warn").warning(
            "no drift configured; the multi-run curve is the no-drift control"
        )
    sampler = backend.with_hardware(model)
    cps = checkpoint_schedule(duration, n_checkpoints)
    weights = _random_weights(task_rng(seed), n_visible, n_hidden, WEIGHT_LIMIT)
    state = sampler.program(weights, np.zeros(n_visible + n_hidden))

    def one_run(r: int) -> List[np.ndarray]:
        samples = sampler.sample(state, duration, iteration=r, run=0)
        logger.bind(action="stability", run=r).debug("run complete")
        return prefix_distributions(samples, cps)

    reps = range(n_repeats)
    runs = pool.map_ordered(one_run, reps) if pool is not None else [one_run(r) for r in reps]
    average = np.mean([r[-1] for r in runs], axis=0)
    a = np.array([[dkl(p, r[-1]) for p in r] for r in runs])
    b = np.array([[dkl(p, average) for p in r] for r in runs])
    result = StabilityResult(
        ConvergenceCurve(cps, a.mean(axis=0), a.std(axis=0), label="single run"),
        ConvergenceCurve(cps, b.mean(axis=0), b.std(axis=0), label="run average"),
        model.drift_sigma,
    )
    try:
        slope = f"{result.self_convergence.loglog_slope():.2f}"
    except ConfigurationError:
        slope = "n/a"
    logger.bind(action="stability", status="ok", drift_sigma=model.drift_sigma).info(
        f"single-run slope={slope}, run-average plateau={result.average_convergence.saturated():.3e}"
    )
    return result
