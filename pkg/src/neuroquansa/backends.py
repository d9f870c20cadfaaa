"""Sampling backends the learner programs and draws joint (v, h) samples from.

Parameters are written in hardware units (weights in LSB, biases in bias
LSB); each backend converts them to abstract RBM parameters with its own
`weight_scale` and `bias_scale`.
"""
from __future__ import annotations

import copy
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Literal, Optional

import numpy as np
from loguru import logger

from .boltzmann import JOINT_LIMIT, GibbsChains, RBMParams, exact_joint
from .calibration import CalibrationMap
from .errors import BackendError, CapacityError
from .hardware import HardwareModel, apply_drift, apply_drift_rbm
from .scheduler import task_rng, task_seed
from .snn_sampler import SAMPLER_CAPACITY, NetworkConfig, StateSamples, decode_states, simulate

WeightDomain = Literal["continuous", "integer"]


@dataclass(frozen=True)
class BackendCapabilities:
    name: str
    max_total: int
    weight_domain: WeightDomain

    def check(self, n_visible: int, n_hidden: int) -> None:
        total = n_visible + n_hidden
        if total > self.max_total:
            raise CapacityError(
                f"{self.name} backend supports N + N_h <= {self.max_total}, got {total}",
                limit=self.max_total,
                requested=total,
            )


@dataclass(frozen=True, eq=False)
class ProgrammedState:
    """What one iteration wrote to the backend."""

    weights: np.ndarray
    biases: np.ndarray
    rbm: RBMParams


class SamplingBackend(ABC):
    name: str = "backend"

    def __init__(
        self,
        *,
        weight_scale: float,
        bias_scale: float,
        integer_weights: bool,
        hardware: Optional[HardwareModel] = None,
        runs_per_iteration: int = 1,
        seed: int = 0,
    ) -> None:
        self.weight_scale = float(weight_scale)
        self.bias_scale = float(bias_scale)
        self.integer_weights = integer_weights
        self.hardware = hardware or HardwareModel()
        self.runs_per_iteration = runs_per_iteration
        self.seed = seed

    @property
    @abstractmethod
    def capabilities(self) -> BackendCapabilities: ...

    def program(self, weights: np.ndarray, biases: np.ndarray) -> ProgrammedState:
        """Quantize master parameters (N x N_h weights, N + N_h biases) and map them to abstract units."""
        weights = np.asarray(weights, dtype=float)
        biases = np.asarray(biases, dtype=float)
        nv, nh = weights.shape
        self.capabilities.check(nv, nh)
        written = self.hardware.write_weights(weights) if self.integer_weights else weights.copy()
        rbm = RBMParams(self.weight_scale * written, self.bias_scale * biases[:nv], self.bias_scale * biases[nv:])
        return ProgrammedState(written, biases.copy(), rbm)

    @abstractmethod
    def sample(self, state: ProgrammedState, n_samples: int, *, iteration: int, run: int) -> StateSamples:
        """Joint samples for one sampling run; must be safe to call concurrently for distinct `run`."""

    def run_index(self, iteration: int, run: int) -> int:
        """Global run counter; drift realizations are keyed on it."""
        return iteration * self.runs_per_iteration + run

    def reset(self) -> None:
        """Drop any state carried between calls."""

    def independent(self) -> "SamplingBackend":
        """A backend whose runs share no sampler state, keyed only by (iteration, run)."""
        return self

    def with_hardware(self, hardware: HardwareModel) -> "SamplingBackend":
        """Independent copy of this backend sampling under another hardware model."""
        clone = copy.copy(self.independent())
        clone.hardware = hardware
        return clone


class ExactBackend(SamplingBackend):
    """Full enumeration of p(z); every call returns all joint states weighted by probability."""

    name = "exact"

    def __init__(self, *, weight_scale: float = 1.0 / 16, bias_scale: float = 1.0 / 16,
                 hardware: Optional[HardwareModel] = None, runs_per_iteration: int = 1, seed: int = 0) -> None:
        super().__init__(weight_scale=weight_scale, bias_scale=bias_scale, integer_weights=False,
                         hardware=hardware, runs_per_iteration=runs_per_iteration, seed=seed)

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(self.name, JOINT_LIMIT, "continuous")

    def sample(self, state: ProgrammedState, n_samples: int, *, iteration: int, run: int) -> StateSamples:
        rbm = state.rbm
        if self.hardware.drifts:
            rbm = apply_drift_rbm(rbm, self.hardware, self.run_index(iteration, run))
        z, probs = exact_joint(rbm)
        return StateSamples(z, rbm.n_visible, None, probs)


class GibbsBackend(SamplingBackend):
    """Block-Gibbs chains on the abstract RBM; one chain set per run slot."""

    name = "gibbs"

    def __init__(
        self,
        *,
        weight_scale: float = 1.0 / 16,
        bias_scale: float = 1.0 / 16,
        integer_weights: bool = True,
        n_chains: int = 64,
        burn_in: int = 1000,
        thinning: int = 1,
        reburn: int = 50,
        persistent: bool = True,
        hardware: Optional[HardwareModel] = None,
        runs_per_iteration: int = 1,
        seed: int = 0,
    ) -> None:
        super().__init__(weight_scale=weight_scale, bias_scale=bias_scale, integer_weights=integer_weights,
                         hardware=hardware, runs_per_iteration=runs_per_iteration, seed=seed)
        self.n_chains = n_chains
        self.burn_in = burn_in
        self.thinning = thinning
        self.reburn = reburn
        self.persistent = persistent
        self._chains: Dict[int, GibbsChains] = {}
        self._lock = threading.Lock()

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(self.name, SAMPLER_CAPACITY, "integer" if self.integer_weights else "continuous")

    def _chains_for(self, run: int, iteration: int) -> tuple[GibbsChains, int]:
        with self._lock:
            if self.persistent and run in self._chains:
                return self._chains[run], self.reburn
            rng = task_rng(self.seed, run) if self.persistent else task_rng(self.seed, iteration, run)
            chains = GibbsChains(self.n_chains, rng)
            if self.persistent:
                self._chains[run] = chains
            return chains, self.burn_in

    def sample(self, state: ProgrammedState, n_samples: int, *, iteration: int, run: int) -> StateSamples:
        rbm = state.rbm
        if self.hardware.drifts:
            rbm = apply_drift_rbm(rbm, self.hardware, self.run_index(iteration, run))
        chains, burn = self._chains_for(run, iteration)
        try:
            z = chains.sample(rbm, n_samples, burn, self.thinning)
        except (FloatingPointError, ValueError) as e:
            raise BackendError(f"gibbs sampling failed: {e}") from e
        return StateSamples(z, rbm.n_visible)

    def reset(self) -> None:
        with self._lock:
            self._chains.clear()

    def independent(self) -> "GibbsBackend":
        clone = copy.copy(self)
        clone.persistent = False
        clone._chains = {}
        clone._lock = threading.Lock()
        return clone


class SNNBackend(SamplingBackend):
    """Event-driven LIF network realizing the RBM through a calibration map."""

    name = "snn"

    def __init__(
        self,
        template: NetworkConfig,
        calibration: CalibrationMap,
        *,
        bias_scale: float = 1.0 / 16,
        readout_interval: Optional[float] = None,
        hardware: Optional[HardwareModel] = None,
        runs_per_iteration: int = 1,
        seed: int = 0,
    ) -> None:
        super().__init__(weight_scale=calibration.weight_translation_factor, bias_scale=bias_scale,
                         integer_weights=True, hardware=hardware,
                         runs_per_iteration=runs_per_iteration, seed=seed)
        self.template = template
        self.calibration = calibration
        self.readout_interval = readout_interval

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(self.name, SAMPLER_CAPACITY, "integer")

    def network_for(self, state: ProgrammedState) -> NetworkConfig:
        leak = self.calibration.leak_potentials(self.bias_scale * state.biases)
        return self.template.with_values(weights=NetworkConfig.symmetric_from_block(state.weights), biases=leak)

    def sample(self, state: ProgrammedState, n_samples: int, *, iteration: int, run: int) -> StateSamples:
        if state.weights.shape != (self.template.n_visible, self.template.n_hidden):
            raise BackendError(
                f"snn backend template is {self.template.n_visible}x{self.template.n_hidden}, "
                f"got weights {state.weights.shape}"
            )
        config = self.network_for(state)
        if self.hardware.drifts:
            config = apply_drift(config, self.hardware, self.run_index(iteration, run),
                                 self.calibration)
        interval = self.readout_interval or float(config.refractory_times[0])
        seed = task_seed(self.seed, iteration, run)
        record = simulate(config, n_samples * interval, seed)
        logger.bind(action="snn_sample", iteration=iteration, run=run, spikes=len(record)).debug("snn run complete")
        return decode_states(record, config, interval)
