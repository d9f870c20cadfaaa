"""Event-driven LIF network simulation and refractory-state decoding.

Neurons are current-based leaky integrate-and-fire units with exponential
synaptic kernels. Between two input events the membrane has a closed form
(sum of two exponentials), so the simulator jumps from event to event and
locates threshold crossings with a bracketed root search. There is no global
timestep.

Time is dimensionless model time with the synaptic time constant as unit.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import brentq
from tomlkit import dumps as toml_dumps

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python <3.11 not supported per pyproject
    tomllib = None  # type: ignore

from .errors import CapacityError, ConfigurationError


WEIGHT_LIMIT = 63
# Neurons left after routing 64 of 256 spike sources to noise generators.
SAMPLER_CAPACITY = 196
NOISE_CHUNK = 500.0

NoiseMode = Literal["independent", "shared"]


def _require_finite(owner: str, **values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise ConfigurationError(f"{owner}.{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class NeuronParams:
    """Physical LIF parameters of one neuron (voltages in mV-like units)."""

    membrane_capacitance: float = 0.1
    leak_conductance: float = 1.0
    leak_potential: float = -50.0
    threshold: float = -50.0
    reset: float = -53.0
    refractory_time: float = 1.0
    synaptic_time: float = 1.0

    def __post_init__(self) -> None:
        _require_finite(
            "NeuronParams",
            membrane_capacitance=self.membrane_capacitance,
            leak_conductance=self.leak_conductance,
            leak_potential=self.leak_potential,
            threshold=self.threshold,
            reset=self.reset,
            refractory_time=self.refractory_time,
            synaptic_time=self.synaptic_time,
        )
        if self.membrane_capacitance <= 0 or self.leak_conductance <= 0:
            raise ConfigurationError("NeuronParams: capacitance and leak conductance must be > 0")
        if not self.reset < self.threshold:
            raise ConfigurationError(
                f"NeuronParams: reset ({self.reset}) must lie below threshold ({self.threshold})"
            )
        if self.refractory_time <= 0:
            raise ConfigurationError("NeuronParams.refractory_time must be > 0")
        if self.synaptic_time <= 0:
            raise ConfigurationError("NeuronParams.synaptic_time must be > 0")
        if self.membrane_time >= self.refractory_time:
            logger.bind(action="neuron_params", status="warn").warning(
                f"tau_m={self.membrane_time:.4g} >= tau_ref={self.refractory_time:.4g}: "
                "outside the high-conductance regime, sampling quality degrades"
            )

    @property
    def membrane_time(self) -> float:
        return self.membrane_capacitance / self.leak_conductance

    def isi_period(self) -> float:
        """Inter-spike interval of an input-free neuron with V_l above threshold."""
        if self.leak_potential <= self.threshold:
            return math.inf
        ratio = (self.leak_potential - self.reset) / (self.leak_potential - self.threshold)
        return self.refractory_time + self.membrane_time * math.log(ratio)


@dataclass(frozen=True)
class NoisePoolConfig:
    """Poisson background stimulus shared by (or private to) the network neurons."""

    n_excitatory_sources: int = 32
    n_inhibitory_sources: int = 32
    sources_per_neuron: int = 10
    rate_per_source: float = 2.0
    noise_weight_exc: float = 2.0
    noise_weight_inh: float = 2.0
    mode: NoiseMode = "independent"

    def __post_init__(self) -> None:
        _require_finite(
            "NoisePoolConfig",
            rate_per_source=self.rate_per_source,
            noise_weight_exc=self.noise_weight_exc,
            noise_weight_inh=self.noise_weight_inh,
        )
        if self.n_excitatory_sources < 0 or self.n_inhibitory_sources < 0:
            raise ConfigurationError("NoisePoolConfig: source counts must be >= 0")
        if self.sources_per_neuron < 0:
            raise ConfigurationError("NoisePoolConfig.sources_per_neuron must be >= 0")
        if self.sources_per_neuron > self.n_sources:
            raise ConfigurationError(
                f"NoisePoolConfig: sources_per_neuron ({self.sources_per_neuron}) exceeds the pool "
                f"({self.n_sources})"
            )
        if self.rate_per_source < 0:
            raise ConfigurationError("NoisePoolConfig.rate_per_source must be >= 0")
        if self.mode not in ("independent", "shared"):
            raise ConfigurationError(f"NoisePoolConfig.mode must be 'independent' or 'shared', got {self.mode!r}")

    @property
    def n_sources(self) -> int:
        return self.n_excitatory_sources + self.n_inhibitory_sources

    def split_per_neuron(self) -> Tuple[int, int]:
        """Excitatory/inhibitory source counts seen by one neuron in independent mode."""
        if self.n_sources == 0:
            return 0, 0
        n_exc = int(round(self.sources_per_neuron * self.n_excitatory_sources / self.n_sources))
        return n_exc, self.sources_per_neuron - n_exc

    @classmethod
    def silent(cls) -> "NoisePoolConfig":
        return cls(rate_per_source=0.0)


def assign_noise_sources(n_neurons: int, noise: NoisePoolConfig, seed: int) -> Tuple[Tuple[int, ...], ...]:
    """Randomly assign `sources_per_neuron` pool sources to every neuron (no repeats per neuron)."""
    rng = np.random.default_rng(seed)
    return tuple(
        tuple(int(s) for s in np.sort(rng.choice(noise.n_sources, size=noise.sources_per_neuron, replace=False)))
        for _ in range(n_neurons)
    )


@dataclass(frozen=True, eq=False)
class NetworkConfig:
    """One programmed sampling network.

    `weights` is the full symmetric (N+N_h)x(N+N_h) matrix in integer LSB units,
    visible neurons first. `biases` are the per-neuron leak potentials V_l that
    realize the abstract biases. Configs with `effective=True` carry real-valued
    weights (after analog drift) and skip the integer-range checks.
    """

    n_visible: int
    n_hidden: int
    weights: np.ndarray
    biases: np.ndarray
    neuron_params: Tuple[NeuronParams, ...]
    noise: NoisePoolConfig = field(default_factory=NoisePoolConfig)
    noise_assignment: Optional[Tuple[Tuple[int, ...], ...]] = None
    rng_seed: int = 0
    weight_lsb_current: float = 0.25
    effective: bool = False

    def __post_init__(self) -> None:
        n = self.n_visible + self.n_hidden
        if self.n_visible < 1 or self.n_hidden < 0:
            raise ConfigurationError("NetworkConfig: need n_visible >= 1 and n_hidden >= 0")
        if n > SAMPLER_CAPACITY:
            raise CapacityError(
                f"NetworkConfig: {n} neurons exceed the sampler capacity of {SAMPLER_CAPACITY}",
                limit=SAMPLER_CAPACITY,
                requested=n,
            )
        w = np.array(self.weights, dtype=float)
        b = np.array(self.biases, dtype=float)
        if w.shape != (n, n):
            raise ConfigurationError(f"NetworkConfig.weights must have shape {(n, n)}, got {w.shape}")
        if b.shape != (n,):
            raise ConfigurationError(f"NetworkConfig.biases must have shape {(n,)}, got {b.shape}")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(b)):
            raise ConfigurationError("NetworkConfig: weights and biases must be finite")
        if not np.allclose(w, w.T, rtol=0.0, atol=1e-12):
            raise ConfigurationError("NetworkConfig.weights must be symmetric")
        nv = self.n_visible
        if np.any(np.diag(w) != 0) or np.any(w[:nv, :nv] != 0) or np.any(w[nv:, nv:] != 0):
            raise ConfigurationError("NetworkConfig.weights must be bipartite (zero vv, hh blocks and diagonal)")
        if not self.effective:
            if np.any(np.abs(w) > WEIGHT_LIMIT):
                raise ConfigurationError(f"NetworkConfig.weights must satisfy |w| <= {WEIGHT_LIMIT}")
            if np.any(w != np.round(w)):
                raise ConfigurationError("NetworkConfig.weights must be integer-valued")
        if len(self.neuron_params) != n:
            raise ConfigurationError(f"NetworkConfig.neuron_params needs {n} entries, got {len(self.neuron_params)}")
        _require_finite("NetworkConfig", weight_lsb_current=self.weight_lsb_current)
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "neuron_params", tuple(self.neuron_params))
        if self.noise.mode == "shared":
            assignment = self.noise_assignment
            if assignment is None:
                assignment = assign_noise_sources(n, self.noise, self.rng_seed)
            if len(assignment) != n or any(
                not 0 <= s < self.noise.n_sources for row in assignment for s in row
            ):
                raise ConfigurationError("NetworkConfig.noise_assignment does not match the noise pool")
            object.__setattr__(self, "noise_assignment", tuple(tuple(int(s) for s in row) for row in assignment))

    @property
    def n_neurons(self) -> int:
        return self.n_visible + self.n_hidden

    @property
    def refractory_times(self) -> np.ndarray:
        return np.array([p.refractory_time for p in self.neuron_params])

    @classmethod
    def homogeneous(
        cls,
        n_visible: int,
        n_hidden: int,
        *,
        neuron: Optional[NeuronParams] = None,
        weights: Optional[np.ndarray] = None,
        biases: Optional[np.ndarray] = None,
        **kwargs: Any,
    ) -> "NetworkConfig":
        """Network of identical neurons; weights default to zero, biases to V_l of `neuron`."""
        neuron = neuron or NeuronParams()
        n = n_visible + n_hidden
        w = np.zeros((n, n)) if weights is None else weights
        b = np.full(n, neuron.leak_potential) if biases is None else biases
        return cls(n_visible, n_hidden, w, b, tuple([neuron] * n), **kwargs)

    @staticmethod
    def symmetric_from_block(block: np.ndarray) -> np.ndarray:
        """Embed a visible x hidden block into the full symmetric matrix."""
        nv, nh = block.shape
        w = np.zeros((nv + nh, nv + nh))
        w[:nv, nv:] = block
        w[nv:, :nv] = block.T
        return w

    def with_values(self, *, weights: Optional[np.ndarray] = None, biases: Optional[np.ndarray] = None,
                    effective: Optional[bool] = None) -> "NetworkConfig":
        return replace(
            self,
            weights=self.weights if weights is None else weights,
            biases=self.biases if biases is None else biases,
            effective=self.effective if effective is None else effective,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_visible": self.n_visible,
            "n_hidden": self.n_hidden,
            "rng_seed": self.rng_seed,
            "weight_lsb_current": self.weight_lsb_current,
            "effective": self.effective,
            "weights": [[float(x) for x in row] for row in self.weights],
            "biases": [float(x) for x in self.biases],
            "noise": {
                "n_excitatory_sources": self.noise.n_excitatory_sources,
                "n_inhibitory_sources": self.noise.n_inhibitory_sources,
                "sources_per_neuron": self.noise.sources_per_neuron,
                "rate_per_source": self.noise.rate_per_source,
                "noise_weight_exc": self.noise.noise_weight_exc,
                "noise_weight_inh": self.noise.noise_weight_inh,
                "mode": self.noise.mode,
            },
            "noise_assignment": [list(row) for row in (self.noise_assignment or ())],
            "neurons": [p.__dict__.copy() for p in self.neuron_params],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkConfig":
        try:
            assignment = data.get("noise_assignment") or None
            return cls(
                n_visible=int(data["n_visible"]),
                n_hidden=int(data["n_hidden"]),
                weights=np.asarray(data["weights"], dtype=float),
                biases=np.asarray(data["biases"], dtype=float),
                neuron_params=tuple(NeuronParams(**p) for p in data["neurons"]),
                noise=NoisePoolConfig(**data.get("noise", {})),
                noise_assignment=None if assignment is None else tuple(tuple(r) for r in assignment),
                rng_seed=int(data.get("rng_seed", 0)),
                weight_lsb_current=float(data.get("weight_lsb_current", 0.25)),
                effective=bool(data.get("effective", False)),
            )
        except KeyError as e:
            raise ConfigurationError(f"network config is missing key {e.args[0]!r}") from e

    def to_toml(self) -> str:
        return toml_dumps(self.to_dict())

    def write(self, path: Path) -> Path:
        from .paths import atomic_write_text

        return atomic_write_text(path, self.to_toml())

    @classmethod
    def load(cls, path: Path) -> "NetworkConfig":
        if tomllib is None:  # pragma: no cover
            raise ConfigurationError("tomllib unavailable")
        with Path(path).open("rb") as f:
            return cls.from_dict(tomllib.load(f))


@dataclass(frozen=True, eq=False)
class SpikeRecord:
    """All output spikes of a run, ordered by time."""

    times: np.ndarray
    neuron_ids: np.ndarray
    duration: float
    n_neurons: int

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        ids = np.asarray(self.neuron_ids, dtype=np.int64)
        if t.shape != ids.shape:
            raise ConfigurationError("SpikeRecord: times and neuron_ids differ in length")
        if t.size and np.any(np.diff(t) < 0):
            raise ConfigurationError("SpikeRecord.times must be non-decreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "neuron_ids", ids)

    def __len__(self) -> int:
        return int(self.times.size)

    def spike_times(self, neuron_id: int) -> np.ndarray:
        return self.times[self.neuron_ids == neuron_id]

    def spike_counts(self) -> np.ndarray:
        return np.bincount(self.neuron_ids, minlength=self.n_neurons)

    def check_refractory(self, refractory_times: Sequence[float], tol: float = 1e-9) -> None:
        """Raise if any neuron fires twice within its refractory time."""
        for k, tau_ref in enumerate(refractory_times):
            gaps = np.diff(self.spike_times(k))
            if gaps.size and gaps.min() < tau_ref - tol:
                raise AssertionError(
                    f"neuron {k} fired twice within {gaps.min():.6g} < tau_ref={tau_ref:.6g}"
                )

    @classmethod
    def empty(cls, n_neurons: int, duration: float = 0.0) -> "SpikeRecord":
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64), duration, n_neurons)


@dataclass(frozen=True, eq=False)
class StateSamples:
    """Binary network states, one row per readout (or per enumerated state).

    `weights`, when present, are per-row probabilities summing to one; plain
    samples count equally.
    """

    states: np.ndarray
    n_visible: int
    readout_interval: Optional[float] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        z = np.asarray(self.states, dtype=np.uint8)
        if z.ndim != 2:
            raise ConfigurationError("StateSamples.states must be a 2-D matrix")
        if self.weights is not None:
            wts = np.asarray(self.weights, dtype=float)
            if wts.shape != (z.shape[0],) or np.any(wts < 0):
                raise ConfigurationError("StateSamples.weights must be non-negative, one per row")
            object.__setattr__(self, "weights", wts)
        object.__setattr__(self, "states", z)

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def visible(self) -> np.ndarray:
        return self.states[:, : self.n_visible]

    def row_weights(self) -> np.ndarray:
        if self.weights is not None:
            return self.weights / self.weights.sum()
        n = len(self)
        return np.full(n, 1.0 / n) if n else np.zeros(0)

    def visible_indices(self) -> np.ndarray:
        """Basis index of every visible row (bit i of the index is v_i)."""
        return states_to_indices(self.visible)

    @staticmethod
    def concatenate(parts: Sequence["StateSamples"]) -> "StateSamples":
        if not parts:
            raise ConfigurationError("cannot concatenate an empty list of StateSamples")
        if any(p.weights is not None for p in parts):
            raise ConfigurationError("weighted StateSamples cannot be concatenated")
        return StateSamples(
            np.concatenate([p.states for p in parts], axis=0),
            parts[0].n_visible,
            parts[0].readout_interval,
        )


def states_to_indices(states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    if states.shape[1] == 0:
        return np.zeros(states.shape[0], dtype=np.int64)
    return states @ (np.int64(1) << np.arange(states.shape[1], dtype=np.int64))


def indices_to_states(indices: np.ndarray, n_bits: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    return ((indices[:, None] >> np.arange(n_bits, dtype=np.int64)) & 1).astype(np.uint8)


class _Membrane:
    """Closed-form free membrane trajectory u(s) for one neuron.

    u(s) = V_l + a*exp(-s/tau_m) + c*exp(-s/tau_syn) when tau_m != tau_syn,
    u(s) = V_l + (a + c*s/tau_m)*exp(-s/tau_m) otherwise.
    """

    __slots__ = ("v_l", "tau_m", "tau_s", "a", "c", "degenerate")

    def __init__(self, u0: float, current: float, v_l: float, g_l: float, tau_m: float, tau_s: float) -> None:
        self.v_l = v_l
        self.tau_m = tau_m
        self.tau_s = tau_s
        self.degenerate = abs(tau_m - tau_s) <= 1e-9 * tau_s
        if self.degenerate:
            self.c = current / g_l
            self.a = u0 - v_l
        else:
            self.c = (current / g_l) * tau_s / (tau_s - tau_m)
            self.a = (u0 - v_l) - self.c

    def __call__(self, s: float) -> float:
        if self.degenerate:
            return self.v_l + (self.a + self.c * s / self.tau_m) * math.exp(-s / self.tau_m)
        return self.v_l + self.a * math.exp(-s / self.tau_m) + self.c * math.exp(-s / self.tau_s)

    def extremum(self) -> Optional[float]:
        """Time of the single interior extremum, if it lies at s > 0."""
        if self.degenerate:
            if self.c == 0:
                return None
            s = self.tau_m * (self.c - self.a) / self.c
            return s if s > 0 else None
        if self.a == 0 or self.c == 0:
            return None
        ratio = -(self.c * self.tau_m) / (self.a * self.tau_s)
        if ratio <= 0:
            return None
        rate = 1.0 / self.tau_m - 1.0 / self.tau_s
        s = -math.log(ratio) / rate
        return s if s > 0 else None

    def first_crossing(self, theta: float) -> float:
        """Smallest s >= 0 with u(s) = theta, or inf if the trajectory stays below."""
        u0 = self(0.0)
        if u0 >= theta:
            return 0.0
        s_ext = self.extremum()
        if s_ext is not None and self(s_ext) >= theta:
            return brentq(lambda s: self(s) - theta, 0.0, s_ext, xtol=1e-13, rtol=1e-13)
        if self.v_l <= theta:
            return math.inf
        lo = s_ext if s_ext is not None else 0.0
        hi = lo + max(self.tau_m, self.tau_s)
        while self(hi) < theta:
            lo, hi = hi, hi + 2.0 * (hi - lo)
        return brentq(lambda s: self(s) - theta, lo, hi, xtol=1e-13, rtol=1e-13)


def _noise_chunks(
    config: NetworkConfig, duration: float, rng: np.random.Generator
) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield time-sorted (times, targets, amplitudes) noise events window by window."""
    noise = config.noise
    n = config.n_neurons
    if noise.rate_per_source <= 0 or noise.sources_per_neuron == 0 or duration <= 0:
        return
    t0 = 0.0
    while t0 < duration:
        t1 = min(duration, t0 + NOISE_CHUNK)
        span = t1 - t0
        times: List[np.ndarray] = []
        targets: List[np.ndarray] = []
        amps: List[np.ndarray] = []
        if noise.mode == "independent":
            n_exc, n_inh = noise.split_per_neuron()
            for k in range(n):
                for count, amp in ((n_exc, noise.noise_weight_exc), (n_inh, -noise.noise_weight_inh)):
                    if count == 0:
                        continue
                    m = rng.poisson(noise.rate_per_source * count * span)
                    times.append(t0 + rng.random(m) * span)
                    targets.append(np.full(m, k, dtype=np.int64))
                    amps.append(np.full(m, amp))
        else:
            assert config.noise_assignment is not None
            listeners: Dict[int, List[int]] = {}
            for k, row in enumerate(config.noise_assignment):
                for s in row:
                    listeners.setdefault(s, []).append(k)
            for s in range(noise.n_sources):
                m = rng.poisson(noise.rate_per_source * span)
                src_times = t0 + rng.random(m) * span
                amp = noise.noise_weight_exc if s < noise.n_excitatory_sources else -noise.noise_weight_inh
                for k in listeners.get(s, []):
                    times.append(src_times)
                    targets.append(np.full(m, k, dtype=np.int64))
                    amps.append(np.full(m, amp))
        if times:
            t_all = np.concatenate(times)
            order = np.argsort(t_all, kind="stable")
            yield t_all[order], np.concatenate(targets)[order], np.concatenate(amps)[order]
        t0 = t1


def simulate(config: NetworkConfig, duration: float, seed: int) -> SpikeRecord:
    """Run the network for `duration` and return every output spike.

    Ties between a predicted network spike and a noise event at the same time
    resolve in favour of the spike; simultaneous predicted spikes fire in the
    order they were scheduled.
    """
    if not math.isfinite(duration) or duration < 0:
        raise ConfigurationError(f"simulate: duration must be finite and >= 0, got {duration!r}")
    n = config.n_neurons
    if duration == 0:
        return SpikeRecord.empty(n)

    rng = np.random.default_rng(seed)
    params = config.neuron_params
    v_l = [float(x) for x in config.biases]
    g_l = [p.leak_conductance for p in params]
    tau_m = [p.membrane_time for p in params]
    tau_s = [p.synaptic_time for p in params]
    theta = [p.threshold for p in params]
    v_reset = [p.reset for p in params]
    tau_ref = [p.refractory_time for p in params]

    w = config.weights * config.weight_lsb_current
    post: List[List[Tuple[int, float]]] = [
        [(j, float(w[k, j])) for j in np.flatnonzero(w[k])] for k in range(n)
    ]

    u = [min(v_l[k], theta[k]) if v_l[k] < theta[k] else v_reset[k] for k in range(n)]
    current = [0.0] * n
    t_upd = [0.0] * n
    refr_end = [-math.inf] * n
    version = [0] * n
    heap: List[Tuple[float, int, int, int]] = []
    seq = 0

    def advance(k: int, t: float) -> None:
        tl = t_upd[k]
        if t <= refr_end[k]:
            current[k] *= math.exp(-(t - tl) / tau_s[k])
            u[k] = v_reset[k]
        else:
            if tl < refr_end[k]:
                current[k] *= math.exp(-(refr_end[k] - tl) / tau_s[k])
                u[k] = v_reset[k]
                tl = refr_end[k]
            s = t - tl
            if s > 0:
                mem = _Membrane(u[k], current[k], v_l[k], g_l[k], tau_m[k], tau_s[k])
                u[k] = min(mem(s), theta[k])
                current[k] *= math.exp(-s / tau_s[k])
        t_upd[k] = t

    def predict(k: int) -> None:
        nonlocal seq
        version[k] += 1
        start = max(t_upd[k], refr_end[k])
        if start > t_upd[k]:
            u_start = v_reset[k]
            i_start = current[k] * math.exp(-(start - t_upd[k]) / tau_s[k])
        else:
            u_start, i_start = u[k], current[k]
        mem = _Membrane(u_start, i_start, v_l[k], g_l[k], tau_m[k], tau_s[k])
        s = mem.first_crossing(theta[k])
        t_fire = start + s
        if t_fire <= duration:
            seq += 1
            heapq.heappush(heap, (t_fire, seq, k, version[k]))

    for k in range(n):
        predict(k)

    spike_t: List[float] = []
    spike_k: List[int] = []
    chunks = _noise_chunks(config, duration, rng)
    ext_t, ext_k, ext_a = np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0)
    ext_i = 0

    while True:
        if ext_i >= ext_t.size:
            nxt = next(chunks, None)
            if nxt is not None:
                ext_t, ext_k, ext_a = nxt
                ext_i = 0
                continue
        t_ext = float(ext_t[ext_i]) if ext_i < ext_t.size else math.inf
        while heap and heap[0][3] != version[heap[0][2]]:
            heapq.heappop(heap)
        t_spk = heap[0][0] if heap else math.inf
        if t_spk == math.inf and t_ext == math.inf:
            break
        if t_spk <= t_ext:
            t_f, _, k, _ = heapq.heappop(heap)
            advance(k, t_f)
            spike_t.append(t_f)
            spike_k.append(k)
            u[k] = v_reset[k]
            refr_end[k] = t_f + tau_ref[k]
            for j, wkj in post[k]:
                advance(j, t_f)
                current[j] += wkj
                if j != k:
                    predict(j)
            predict(k)
        else:
            k = int(ext_k[ext_i])
            advance(k, t_ext)
            current[k] += float(ext_a[ext_i])
            ext_i += 1
            predict(k)

    logger.bind(action="simulate", neurons=n, duration=duration, spikes=len(spike_t)).debug("simulation complete")
    return SpikeRecord(np.asarray(spike_t), np.asarray(spike_k, dtype=np.int64), float(duration), n)


def decode_states(
    record: SpikeRecord,
    config: NetworkConfig,
    readout_interval: Optional[float] = None,
    *,
    readout_times: Optional[Sequence[float]] = None,
) -> StateSamples:
    """Read the refractory indicator of every neuron at periodic readout times.

    z_k(t) = 1 iff neuron k spiked within (t - tau_ref_k, t]. Readouts default
    to t = interval, 2*interval, ... up to the record duration; the interval
    defaults to the first neuron's refractory time.
    """
    tau_ref = config.refractory_times
    interval = float(readout_interval) if readout_interval is not None else float(tau_ref[0])
    if interval <= 0:
        raise ConfigurationError("decode_states: readout_interval must be > 0")
    if readout_times is None:
        n_rows = int(math.floor(record.duration / interval + 1e-12))
        times = interval * np.arange(1, n_rows + 1)
    else:
        times = np.asarray(readout_times, dtype=float)
    z = np.zeros((times.size, config.n_neurons), dtype=np.uint8)
    for k in range(config.n_neurons):
        s = record.spike_times(k)
        if s.size == 0:
            continue
        last = np.searchsorted(s, times, side="right") - 1
        has = last >= 0
        z[has, k] = (s[last[has]] > times[has] - tau_ref[k]).astype(np.uint8)
    return StateSamples(z, config.n_visible, interval)


def sample_states(
    config: NetworkConfig, n_samples: int, seed: int, readout_interval: Optional[float] = None
) -> StateSamples:
    """Simulate long enough for `n_samples` readouts and decode them."""
    interval = float(readout_interval) if readout_interval is not None else float(config.refractory_times[0])
    record = simulate(config, n_samples * interval, seed)
    return decode_states(record, config, interval)
