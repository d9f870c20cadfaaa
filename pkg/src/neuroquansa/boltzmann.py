"""Exact and block-Gibbs reference distributions for bipartite Boltzmann machines.

State index convention: bit i of an index is visible unit v_i (then hidden
units for joint indices). The same convention indexes the TFIM basis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np
from loguru import logger
from scipy.special import expit, logsumexp

from .errors import CapacityError, ConfigurationError
from .snn_sampler import indices_to_states, states_to_indices

MARGINAL_LIMIT = 20
JOINT_LIMIT = 22
ZERO_SMOOTHING = 1e-6


@dataclass(frozen=True, eq=False)
class RBMParams:
    W: np.ndarray
    b_v: np.ndarray
    b_h: np.ndarray

    def __post_init__(self) -> None:
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        b_v = np.asarray(self.b_v, dtype=float).reshape(-1)
        b_h = np.asarray(self.b_h, dtype=float).reshape(-1)
        if W.size == 0 and b_h.size == 0:
            W = np.zeros((b_v.size, 0))
        if W.shape != (b_v.size, b_h.size):
            raise ConfigurationError(f"RBMParams: W has shape {W.shape}, expected {(b_v.size, b_h.size)}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b_v)) and np.all(np.isfinite(b_h))):
            raise ConfigurationError("RBMParams: all entries must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b_v", b_v)
        object.__setattr__(self, "b_h", b_h)

    @property
    def n_visible(self) -> int:
        return int(self.b_v.size)

    @property
    def n_hidden(self) -> int:
        return int(self.b_h.size)

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RBMParams":
        return cls(np.zeros((n_visible, n_hidden)), np.zeros(n_visible), np.zeros(n_hidden))

    @classmethod
    def random(cls, n_visible: int, n_hidden: int, rng: np.random.Generator, scale: float = 1.0) -> "RBMParams":
        return cls(
            rng.uniform(-scale, scale, (n_visible, n_hidden)),
            rng.uniform(-scale, scale, n_visible),
            rng.uniform(-scale, scale, n_hidden),
        )

    @classmethod
    def from_full(cls, weights: np.ndarray, biases: np.ndarray, n_visible: int) -> "RBMParams":
        """Split a full symmetric (N+N_h) matrix and bias vector into RBM blocks."""
        return cls(weights[:n_visible, n_visible:], biases[:n_visible], biases[n_visible:])

    def full_weights(self) -> np.ndarray:
        n = self.n_visible + self.n_hidden
        w = np.zeros((n, n))
        w[: self.n_visible, self.n_visible :] = self.W
        w[self.n_visible :, : self.n_visible] = self.W.T
        return w

    def full_biases(self) -> np.ndarray:
        return np.concatenate([self.b_v, self.b_h])

    def energy(self, z: np.ndarray) -> np.ndarray:
        """Network energy -(v.W.h + b_v.v + b_h.h) for rows of joint states."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        v, h = z[:, : self.n_visible], z[:, self.n_visible :]
        return -(np.einsum("si,ij,sj->s", v, self.W, h) + v @ self.b_v + h @ self.b_h)

    def hidden_probabilities(self, v: np.ndarray) -> np.ndarray:
        return expit(np.atleast_2d(v) @ self.W + self.b_h)

    def visible_probabilities(self, h: np.ndarray) -> np.ndarray:
        return expit(np.atleast_2d(h) @ self.W.T + self.b_v)


@dataclass(frozen=True, eq=False)
class ExactDistribution:
    probabilities: np.ndarray
    log_partition: float

    @property
    def partition_sum(self) -> float:
        return float(np.exp(self.log_partition))

    @property
    def n_visible(self) -> int:
        return int(self.probabilities.size).bit_length() - 1


@dataclass(eq=False)
class EmpiricalDistribution:
    """Histogram over visible configurations, stored densely by basis index."""

    counts: np.ndarray
    n_visible: int

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (1 << self.n_visible,):
            raise ConfigurationError(
                f"EmpiricalDistribution: counts need {1 << self.n_visible} entries, got {self.counts.shape}"
            )
        if np.any(self.counts < 0):
            raise ConfigurationError("EmpiricalDistribution: counts must be >= 0")

    @property
    def total_samples(self) -> float:
        return float(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        total = self.total_samples
        if total <= 0:
            raise ConfigurationError("EmpiricalDistribution is empty")
        return self.counts / total

    def as_mapping(self) -> Dict[int, float]:
        return {int(i): float(c) for i, c in enumerate(self.counts) if c > 0}

    @classmethod
    def from_states(
        cls, visible_states: np.ndarray, n_visible: int, weights: Optional[np.ndarray] = None
    ) -> "EmpiricalDistribution":
        idx = states_to_indices(np.asarray(visible_states).reshape(-1, n_visible))
        counts = np.bincount(idx, weights=weights, minlength=1 << n_visible).astype(float)
        return cls(counts, n_visible)

    def merged(self, other: "EmpiricalDistribution") -> "EmpiricalDistribution":
        return EmpiricalDistribution(self.counts + other.counts, self.n_visible)


Distribution = Union[np.ndarray, ExactDistribution, EmpiricalDistribution]


def as_probabilities(dist: Distribution) -> np.ndarray:
    """Normalized probability vector of any distribution-like input."""
    if isinstance(dist, (ExactDistribution, EmpiricalDistribution)):
        return np.asarray(dist.probabilities, dtype=float)
    p = np.asarray(dist, dtype=float)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ConfigurationError("probabilities must be finite and non-negative")
    total = p.sum()
    if total <= 0:
        raise ConfigurationError("distribution has zero total mass")
    return p / total


def _check_capacity(n: int, limit: int, what: str) -> None:
    if n > limit:
        raise CapacityError(f"{what}: {n} units exceed the enumeration bound of {limit}", limit=limit, requested=n)


def exact_marginal(params: RBMParams) -> ExactDistribution:
    """p(v) proportional to exp(b_v.v) * prod_j (1 + exp(b_h_j + sum_i W_ij v_i))."""
    n = params.n_visible
    _check_capacity(n, MARGINAL_LIMIT, "exact_marginal")
    v = indices_to_states(np.arange(1 << n), n).astype(float)
    log_weights = v @ params.b_v + np.logaddexp(0.0, v @ params.W + params.b_h).sum(axis=1)
    log_z = float(logsumexp(log_weights))
    return ExactDistribution(np.exp(log_weights - log_z), log_z)


def exact_joint(params: RBMParams) -> Tuple[np.ndarray, np.ndarray]:
    """All 2^(N+N_h) joint states and their Boltzmann probabilities."""
    n = params.n_visible + params.n_hidden
    _check_capacity(n, JOINT_LIMIT, "exact_joint")
    z = indices_to_states(np.arange(1 << n), n)
    log_weights = -params.energy(z)
    return z, np.exp(log_weights - logsumexp(log_weights))


class GibbsChains:
    """Parallel block-Gibbs chains that can persist across parameter updates."""

    def __init__(self, n_chains: int, rng: np.random.Generator) -> None:
        if n_chains < 1:
            raise ConfigurationError("GibbsChains: n_chains must be >= 1")
        self.n_chains = n_chains
        self.rng = rng
        self.visible: Optional[np.ndarray] = None

    def _ensure(self, n_visible: int) -> None:
        if self.visible is None or self.visible.shape[1] != n_visible:
            self.visible = (self.rng.random((self.n_chains, n_visible)) < 0.5).astype(float)

    def _sweep(self, params: RBMParams) -> np.ndarray:
        assert self.visible is not None
        h = (self.rng.random((self.n_chains, params.n_hidden)) < params.hidden_probabilities(self.visible)).astype(float)
        v_new = (self.rng.random((self.n_chains, params.n_visible)) < params.visible_probabilities(h)).astype(float)
        joint = np.concatenate([self.visible, h], axis=1)
        self.visible = v_new
        return joint

    def sample(self, params: RBMParams, n_samples: int, burn_in: int, thinning: int = 1) -> np.ndarray:
        """Joint (v, h) rows; h in each row is drawn from p(h | v) of the same row."""
        if n_samples <= 0:
            raise ConfigurationError("gibbs sampling needs n_samples > 0")
        if thinning < 1 or burn_in < 0:
            raise ConfigurationError("gibbs sampling needs thinning >= 1 and burn_in >= 0")
        self._ensure(params.n_visible)
        for _ in range(burn_in):
            self._sweep(params)
        n_rounds = -(-n_samples // self.n_chains)
        rows = []
        for _ in range(n_rounds):
            for _ in range(thinning - 1):
                self._sweep(params)
            rows.append(self._sweep(params))
        return np.concatenate(rows, axis=0)[:n_samples].astype(np.uint8)


def gibbs_sample(
    params: RBMParams,
    n_samples: int,
    burn_in: int = 1000,
    thinning: int = 1,
    seed: int = 0,
    *,
    n_chains: int = 64,
) -> EmpiricalDistribution:
    """Visible-state histogram from block Gibbs sampling."""
    chains = GibbsChains(n_chains, np.random.default_rng(seed))
    z = chains.sample(params, n_samples, burn_in, thinning)
    logger.bind(action="gibbs_sample", samples=n_samples, chains=n_chains).debug("gibbs sampling complete")
    return EmpiricalDistribution.from_states(z[:, : params.n_visible], params.n_visible)


def dkl(p: Distribution, q: Distribution, smoothing: float = ZERO_SMOOTHING) -> float:
    """Kullback-Leibler divergence sum_v p(v) log(p(v)/q(v)).

    Entries of q that are zero where p is positive are replaced by `smoothing`
    and q is renormalized before taking ratios.
    """
    pa = as_probabilities(p)
    qa = as_probabilities(q)
    if pa.shape != qa.shape:
        raise ConfigurationError(f"dkl: shapes differ ({pa.shape} vs {qa.shape})")
    support = pa > 0
    qs = np.where(support & (qa == 0), smoothing, qa)
    qs = qs / qs.sum()
    value = float(np.sum(pa[support] * np.log(pa[support] / qs[support])))
    return max(value, 0.0)
