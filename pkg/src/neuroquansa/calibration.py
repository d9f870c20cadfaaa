"""Activation measurements and the physical <-> abstract parameter map.

A neuron's occupancy p(z=1) as a function of its leak potential follows a
logistic curve with inflection u0 and slope scale alpha. Biases map through
b = (V_l - u0)/alpha; integer weights map through a linear factor gamma_w
measured from the shift a reference synapse induces.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .errors import CalibrationError, ConfigurationError, FitConvergenceError
from .fitting import fit_curve, inverse_logistic, logistic
from .scheduler import WorkerPool, task_seed
from .snn_sampler import (
    WEIGHT_LIMIT,
    NetworkConfig,
    NeuronParams,
    NoisePoolConfig,
    decode_states,
    simulate,
)

MIN_SWEEP_POINTS = 8
DEGENERATE_ALPHA = 1e-6


@dataclass(frozen=True)
class ActivationCurve:
    points: Tuple[Tuple[float, float], ...]
    bracketed: bool

    @property
    def leak_potentials(self) -> np.ndarray:
        return np.array([v for v, _ in self.points])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.points])


@dataclass(frozen=True)
class ActivationFit:
    u0: float
    alpha: float
    residual_norm: float
    u0_std: float = 0.0
    alpha_std: float = 0.0

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ConfigurationError(f"ActivationFit.alpha must be > 0, got {self.alpha}")

    def probability(self, leak_potential: float) -> float:
        return float(logistic(np.array([leak_potential]), self.u0, self.alpha)[0])


@dataclass(frozen=True)
class CalibrationProtocol:
    sweep_points: int = 12
    sweep_half_width: float = 25.0
    duration: float = 20000.0
    reference_weight: int = 16
    seed: int = 0

    def sweep_for(self, neuron: NeuronParams) -> List[float]:
        return list(
            np.linspace(
                neuron.threshold - self.sweep_half_width,
                neuron.threshold + self.sweep_half_width,
                self.sweep_points,
            )
        )


@dataclass(frozen=True, eq=False)
class CalibrationMap:
    """Per-neuron activation fits plus the weight translation factor.

    `weight_factors` holds the per-neuron measurements; the network-wide
    `weight_translation_factor` (their mean) realizes symmetric weights.
    """

    fits: Tuple[ActivationFit, ...]
    weight_factors: np.ndarray
    curves: Tuple[ActivationCurve, ...] = field(default=())

    @property
    def weight_translation_factor(self) -> float:
        return float(np.mean(self.weight_factors))

    @property
    def inflections(self) -> np.ndarray:
        return np.array([f.u0 for f in self.fits])

    @property
    def slopes(self) -> np.ndarray:
        return np.array([f.alpha for f in self.fits])

    def abstract_biases(self, leak_potentials: Sequence[float]) -> np.ndarray:
        return (np.asarray(leak_potentials, dtype=float) - self.inflections) / self.slopes

    def leak_potentials(self, abstract_biases: Sequence[float]) -> np.ndarray:
        return self.inflections + self.slopes * np.asarray(abstract_biases, dtype=float)

    def abstract_weights(self, integer_weights: np.ndarray) -> np.ndarray:
        return self.weight_translation_factor * np.asarray(integer_weights, dtype=float)

    def integer_weights(self, abstract_weights: np.ndarray) -> np.ndarray:
        w = np.round(np.asarray(abstract_weights, dtype=float) / self.weight_translation_factor)
        return np.clip(w, -WEIGHT_LIMIT, WEIGHT_LIMIT)

    def to_rows(self) -> List[Dict[str, float]]:
        return [
            {
                "neuron_id": k,
                "u0": f.u0,
                "alpha": f.alpha,
                "u0_std": f.u0_std,
                "alpha_std": f.alpha_std,
                "residual_norm": f.residual_norm,
                "gamma_w": float(self.weight_factors[k]),
            }
            for k, f in enumerate(self.fits)
        ]


def _occupancy(config: NetworkConfig, neuron_id: int, duration: float, seed: int) -> float:
    record = simulate(config, duration, seed)
    states = decode_states(record, config)
    if len(states) == 0:
        return 0.0
    return float(states.states[:, neuron_id].mean())


def measure_activation(
    neuron_params: NeuronParams,
    noise: NoisePoolConfig,
    leak_sweep: Sequence[float],
    duration: float,
    *,
    seed: int = 0,
    pool: Optional[WorkerPool] = None,
) -> ActivationCurve:
    """Occupancy of a lone noise-driven neuron at every leak potential of the sweep."""
    sweep = sorted(float(v) for v in leak_sweep)
    if len(sweep) < MIN_SWEEP_POINTS:
        raise ConfigurationError(
            f"measure_activation: need >= {MIN_SWEEP_POINTS} sweep points, got {len(sweep)}"
        )

    def one(i: int) -> float:
        neuron = replace(neuron_params, leak_potential=sweep[i])
        cfg = NetworkConfig.homogeneous(1, 0, neuron=neuron, noise=noise, rng_seed=seed)
        return _occupancy(cfg, 0, duration, task_seed(seed, i))

    indices = list(range(len(sweep)))
    probs = pool.map_ordered(one, indices) if pool is not None else [one(i) for i in indices]
    bracketed = probs[0] < 0.5 < probs[-1]
    if not bracketed:
        logger.bind(action="measure_activation", status="warn").warning(
            f"leak sweep [{sweep[0]:.3g}, {sweep[-1]:.3g}] does not bracket the inflection "
            f"(p from {probs[0]:.3f} to {probs[-1]:.3f})"
        )
    return ActivationCurve(tuple(zip(sweep, (float(p) for p in probs))), bracketed)


def fit_logistic(curve: ActivationCurve | Sequence[Tuple[float, float]]) -> ActivationFit:
    """Least-squares logistic fit p = 1/(1 + exp(-(V_l - u0)/alpha))."""
    points = curve.points if isinstance(curve, ActivationCurve) else tuple(curve)
    if len(points) < 3:
        raise ConfigurationError("fit_logistic: need at least 3 points")
    v = np.array([x for x, _ in points], dtype=float)
    p = np.array([y for _, y in points], dtype=float)
    order = np.argsort(v)
    v, p = v[order], p[order]

    u0_guess = float(v[np.argmin(np.abs(p - 0.5))])
    alpha_guess = max(float(v[-1] - v[0]) / 10.0, 1e-3)
    result = fit_curve(
        lambda x, th: logistic(x, th[0], th[1]),
        v,
        p,
        [u0_guess, alpha_guess],
        bounds=([-np.inf, 1e-12], [np.inf, np.inf]),
        label="fit_logistic",
    )
    u0, alpha = (float(x) for x in result.params)
    return ActivationFit(u0, alpha, result.residual_norm, float(result.stds[0]), float(result.stds[1]))


def _param_key(neuron: NeuronParams) -> NeuronParams:
    return replace(neuron, leak_potential=0.0)


def _measure_weight_factor(
    neuron: NeuronParams,
    fit: ActivationFit,
    noise: NoisePoolConfig,
    protocol: CalibrationProtocol,
    weight_lsb_current: float,
    seed: int,
) -> float:
    """gamma_w from the log-odds shift a saturated presynaptic partner induces.

    The presynaptic neuron sits far above threshold and fires about once per
    refractory period; the shift is divided by its measured occupancy so the
    factor refers to a presynaptic z = 1.
    """
    w_ref = protocol.reference_weight
    pre = replace(neuron, leak_potential=neuron.threshold + protocol.sweep_half_width)
    post = replace(neuron, leak_potential=fit.u0)
    weights = NetworkConfig.symmetric_from_block(np.array([[float(w_ref)]]))
    cfg = NetworkConfig(
        1, 1, weights, np.array([pre.leak_potential, post.leak_potential]), (pre, post),
        noise=noise, rng_seed=seed, weight_lsb_current=weight_lsb_current,
    )
    record = simulate(cfg, protocol.duration, seed)
    z = decode_states(record, cfg).states
    if z.shape[0] == 0:
        raise CalibrationError("weight calibration produced no readouts", neuron_id=-1)
    p_pre = float(z[:, 0].mean())
    p_post = float(z[:, 1].mean())
    clip = 1.0 / max(2, z.shape[0])
    shift = inverse_logistic(p_post, fit.u0, fit.alpha, clip=clip) - fit.u0
    return shift / (w_ref * fit.alpha * max(p_pre, clip))


def calibrate(
    config: NetworkConfig,
    protocol: CalibrationProtocol = CalibrationProtocol(),
    *,
    pool: Optional[WorkerPool] = None,
) -> CalibrationMap:
    """Measure activation fits and gamma_w for every neuron of `config`.

    Neurons with identical parameters (up to their leak potential) share one
    measurement.
    """
    classes: Dict[NeuronParams, int] = {}
    for k, neuron in enumerate(config.neuron_params):
        classes.setdefault(_param_key(neuron), k)

    def measure(item: Tuple[NeuronParams, int]) -> Tuple[ActivationCurve, ActivationFit, float]:
        key, first = item
        neuron = config.neuron_params[first]
        class_seed = task_seed(protocol.seed, first)
        curve = measure_activation(neuron, config.noise, protocol.sweep_for(neuron), protocol.duration, seed=class_seed)
        try:
            fit = fit_logistic(curve)
        except (FitConvergenceError, ConfigurationError) as e:
            raise CalibrationError(f"activation fit failed for neuron {first}: {e}", neuron_id=first) from e
        if fit.alpha < DEGENERATE_ALPHA:
            raise CalibrationError(f"degenerate activation fit for neuron {first} (alpha={fit.alpha:.3g})", neuron_id=first)
        gamma = _measure_weight_factor(neuron, fit, config.noise, protocol, config.weight_lsb_current, class_seed + 1)
        if not np.isfinite(gamma) or gamma <= 0:
            raise CalibrationError(f"weight factor for neuron {first} is not positive ({gamma!r})", neuron_id=first)
        logger.bind(action="calibrate", neuron=first, u0=fit.u0, alpha=fit.alpha, gamma_w=gamma).info(
            f"neuron class {first}: u0={fit.u0:.4g} alpha={fit.alpha:.4g} gamma_w={gamma:.4g}"
        )
        return curve, fit, gamma

    items = list(classes.items())
    measured = pool.map_ordered(measure, items) if pool is not None else [measure(it) for it in items]
    by_key = {key: m for (key, _), m in zip(items, measured)}

    curves, fits, gammas = [], [], []
    for neuron in config.neuron_params:
        curve, fit, gamma = by_key[_param_key(neuron)]
        curves.append(curve)
        fits.append(fit)
        gammas.append(gamma)
    return CalibrationMap(tuple(fits), np.asarray(gammas), tuple(curves))
