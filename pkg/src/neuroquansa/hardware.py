"""Hardware parameter constraints: 6-bit signed weights, coarse grids, drift, pseudo updates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np

from .boltzmann import RBMParams
from .calibration import CalibrationMap
from .errors import ConfigurationError
from .snn_sampler import WEIGHT_LIMIT, NetworkConfig

VALID_GRID_STEPS = (1, 2, 4, 8, 16, 32, 64)
GRID_SPAN = 64

DriftMode = Literal["white", "walk"]


@dataclass(frozen=True)
class HardwareModel:
    """Limits and perturbations of the emulated substrate.

    drift_sigma and bias_jitter are in abstract units; without a calibration
    they apply directly to the programmed values.
    """

    weight_clip: int = WEIGHT_LIMIT
    grid_step: int = 1
    drift_sigma: float = 0.0
    bias_jitter: float = 0.0
    pseudo_flip_fraction: float = 0.1
    drift_mode: DriftMode = "white"
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.weight_clip <= WEIGHT_LIMIT:
            raise ConfigurationError(f"HardwareModel.weight_clip must lie in [1, {WEIGHT_LIMIT}], got {self.weight_clip}")
        check_grid_step(self.grid_step)
        for name in ("drift_sigma", "bias_jitter"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"HardwareModel.{name} must be finite and >= 0, got {value!r}")
        if not 0.0 <= self.pseudo_flip_fraction <= 1.0:
            raise ConfigurationError(
                f"HardwareModel.pseudo_flip_fraction must lie in [0, 1], got {self.pseudo_flip_fraction}"
            )
        if self.drift_mode not in ("white", "walk"):
            raise ConfigurationError(f"HardwareModel.drift_mode must be 'white' or 'walk', got {self.drift_mode!r}")

    @property
    def drifts(self) -> bool:
        return self.drift_sigma > 0 or self.bias_jitter > 0

    def write_weights(self, master: np.ndarray) -> np.ndarray:
        """Integer weights a master matrix programs: round, clip, then snap to the grid."""
        w = np.clip(np.round(np.asarray(master, dtype=float)), -self.weight_clip, self.weight_clip)
        if self.grid_step > 1:
            w = quantize_to_grid(w, self.grid_step)
        return w


def check_grid_step(step: int) -> None:
    if step not in VALID_GRID_STEPS:
        raise ConfigurationError(f"grid step must be one of {list(VALID_GRID_STEPS)}, got {step!r}")


def weight_grid(step: int) -> np.ndarray:
    """Grid from 0 in +-step increments up to +-64, with the outermost points moved to +-63."""
    check_grid_step(step)
    positive = np.arange(0, GRID_SPAN + 1, step)
    positive = np.where(positive == GRID_SPAN, WEIGHT_LIMIT, positive)
    return np.unique(np.concatenate([-positive, positive])).astype(float)


def quantize_to_grid(w: np.ndarray, step: int) -> np.ndarray:
    """Round every weight to its nearest grid point; ties go toward zero."""
    grid = weight_grid(step)
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ConfigurationError("quantize_to_grid: weights must be finite")
    pos = np.clip(np.searchsorted(grid, w), 1, grid.size - 1)
    lo, hi = grid[pos - 1], grid[pos]
    d_lo, d_hi = np.abs(w - lo), np.abs(hi - w)
    tie_pick = np.where(np.abs(lo) < np.abs(hi), lo, hi)
    out = np.where(d_lo < d_hi, lo, np.where(d_hi < d_lo, hi, tie_pick))
    return out


def _drift_noise(model: HardwareModel, run_index: int, n_weights: Tuple[int, ...], n_biases: int) -> Tuple[np.ndarray, np.ndarray]:
    """Standard-normal weight and bias perturbations for one run (scaled by the caller)."""

    def draw(r: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([model.seed, r])
        return rng.standard_normal(n_weights), rng.standard_normal(n_biases)

    if model.drift_mode == "white":
        return draw(run_index)
    dw, db = np.zeros(n_weights), np.zeros(n_biases)
    for r in range(run_index + 1):
        sw, sb = draw(r)
        dw += sw
        db += sb
    return dw, db


def apply_drift(
    config: NetworkConfig,
    model: HardwareModel,
    run_index: int,
    calibration: Optional[CalibrationMap] = None,
) -> NetworkConfig:
    """Effective network for one run: programmed values plus per-run Gaussian drift.

    With a calibration the abstract sigmas convert to LSB (weights) and
    slope-scaled volts (biases); the programmed config is never modified.
    """
    if not model.drifts:
        return config
    nv, nh = config.n_visible, config.n_hidden
    z_w, z_b = _drift_noise(model, run_index, (nv, nh), nv + nh)
    sigma_w = model.drift_sigma / calibration.weight_translation_factor if calibration else model.drift_sigma
    sigma_b = model.bias_jitter * calibration.slopes if calibration else np.full(nv + nh, model.bias_jitter)
    block = config.weights[:nv, nv:] + sigma_w * z_w
    return config.with_values(
        weights=NetworkConfig.symmetric_from_block(block),
        biases=config.biases + sigma_b * z_b,
        effective=True,
    )


def apply_drift_rbm(params: RBMParams, model: HardwareModel, run_index: int) -> RBMParams:
    """The same per-run drift applied directly to abstract RBM parameters."""
    if not model.drifts:
        return params
    z_w, z_b = _drift_noise(model, run_index, params.W.shape, params.n_visible + params.n_hidden)
    b = params.full_biases() + model.bias_jitter * z_b
    return RBMParams(params.W + model.drift_sigma * z_w, b[: params.n_visible], b[params.n_visible :])


def pseudo_update(w: np.ndarray, p_flip: float, seed: int, *, clip: int = WEIGHT_LIMIT) -> np.ndarray:
    """Change exactly round(p_flip * n) uniformly chosen entries by +-1.

    An entry sitting at the clip edge whose drawn sign points outward moves
    inward instead, so every chosen entry changes by exactly one.
    """
    if not 0.0 <= p_flip <= 1.0:
        raise ConfigurationError(f"pseudo_update: p_flip must lie in [0, 1], got {p_flip}")
    w = np.asarray(w, dtype=float)
    out = w.copy().reshape(-1)
    n_flip = int(math.floor(p_flip * out.size + 0.5))
    if n_flip == 0:
        return out.reshape(w.shape)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(out.size, size=n_flip, replace=False)
    signs = rng.choice(np.array([-1.0, 1.0]), size=n_flip)
    signs = np.where(out[chosen] + signs > clip, -1.0, signs)
    signs = np.where(out[chosen] + signs < -clip, 1.0, signs)
    out[chosen] += signs
    return out.reshape(w.shape)
