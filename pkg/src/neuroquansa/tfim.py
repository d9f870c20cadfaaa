"""Transverse-field Ising chain: Hamiltonian, exact reference and observables.

Basis: spin i is bit i of the state index; bit 1 is spin up (s = +1).
All estimators take a probability vector p(v) over the 2^N basis states and
interpret sqrt(p) as the (non-negative) wavefunction amplitude.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Literal, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sparse
from loguru import logger
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .boltzmann import Distribution, as_probabilities
from .errors import ConfigurationError, FitConvergenceError, GroundStateError
from .fitting import fit_curve

DENSE_LIMIT = 12
DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True)
class TFIMSpec:
    n_spins: int
    J: float = 1.0
    h: float = 1.0
    boundary: Literal["periodic"] = "periodic"

    def __post_init__(self) -> None:
        if self.n_spins < 3:
            raise ConfigurationError(f"TFIMSpec.n_spins must be >= 3, got {self.n_spins}")
        if not (math.isfinite(self.J) and math.isfinite(self.h)):
            raise ConfigurationError("TFIMSpec: J and h must be finite")
        if self.J < 0:
            raise ConfigurationError(f"TFIMSpec.J must be >= 0 (ferromagnetic), got {self.J}")
        if self.h < 0:
            raise ConfigurationError(f"TFIMSpec.h must be >= 0, got {self.h}")
        if self.boundary != "periodic":
            raise ConfigurationError("TFIMSpec: only periodic boundaries are supported")

    @property
    def dimension(self) -> int:
        return 1 << self.n_spins

    @classmethod
    def parse(cls, text: str) -> "TFIMSpec":
        """Parse 'N=8,J=1,h=0.5'."""
        values: Dict[str, str] = {}
        for part in text.split(","):
            if not part.strip():
                continue
            key, sep, value = part.partition("=")
            if not sep:
                raise ConfigurationError(f"spec term {part!r} is not key=value")
            values[key.strip()] = value.strip()
        try:
            return cls(int(values.pop("N")), float(values.pop("J", 1.0)), float(values.pop("h", 1.0)))
        except KeyError as e:
            raise ConfigurationError("spec needs N=<spins>") from e
        except ValueError as e:
            raise ConfigurationError(f"spec {text!r}: {e}") from e
        finally:
            if values:
                logger.warning(f"ignoring unknown spec keys: {sorted(values)}")


@lru_cache(maxsize=32)
def spin_table(n_spins: int) -> np.ndarray:
    """s[idx, i] in {-1, +1} for every basis index."""
    idx = np.arange(1 << n_spins, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n_spins, dtype=np.int64)) & 1
    s = (2 * bits - 1).astype(np.int8)
    s.setflags(write=False)
    return s


@lru_cache(maxsize=32)
def flip_table(n_spins: int) -> np.ndarray:
    """flip[idx, i] = idx with spin i flipped."""
    idx = np.arange(1 << n_spins, dtype=np.int64)
    f = idx[:, None] ^ (np.int64(1) << np.arange(n_spins, dtype=np.int64))
    f.setflags(write=False)
    return f


def bond_sums(n_spins: int) -> np.ndarray:
    s = spin_table(n_spins).astype(np.int64)
    return np.sum(s * np.roll(s, -1, axis=1), axis=1)


def diagonal_energies(spec: TFIMSpec) -> np.ndarray:
    return -spec.J * bond_sums(spec.n_spins).astype(float)


def build_hamiltonian(spec: TFIMSpec) -> sparse.csr_matrix:
    """Sparse H = -J sum s_i s_(i+1) - h sum sigma^x_i in the z basis."""
    dim = spec.dimension
    rows = [np.arange(dim)]
    cols = [np.arange(dim)]
    data = [diagonal_energies(spec)]
    if spec.h != 0:
        flips = flip_table(spec.n_spins)
        for i in range(spec.n_spins):
            rows.append(np.arange(dim))
            cols.append(flips[:, i])
            data.append(np.full(dim, -spec.h))
    H = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    H.sum_duplicates()
    return H


@dataclass(frozen=True, eq=False)
class GroundStateSolution:
    energy: float
    amplitudes: np.ndarray
    spec: TFIMSpec
    residual: float = 0.0

    @property
    def probabilities(self) -> np.ndarray:
        return self.amplitudes**2


def exact_ground_state(spec: TFIMSpec, *, dense_limit: int = DENSE_LIMIT, tol: float = 1e-12) -> GroundStateSolution:
    """Lowest eigenpair; dense solver up to `dense_limit` spins, Lanczos above."""
    H = build_hamiltonian(spec)
    if spec.n_spins <= dense_limit:
        evals, evecs = np.linalg.eigh(H.toarray())
        energy, psi = float(evals[0]), evecs[:, 0]
    else:
        logger.bind(action="ground_state", status="iterative").warning(
            f"N={spec.n_spins} above dense limit {dense_limit}; using iterative eigensolver"
        )
        rng = np.random.default_rng(0)
        try:
            evals, evecs = eigsh(H, k=1, which="SA", tol=tol, v0=rng.random(spec.dimension) + 0.1)
        except ArpackNoConvergence as e:
            if len(e.eigenvalues):
                psi = e.eigenvectors[:, 0]
                residual = float(np.linalg.norm(H @ psi - e.eigenvalues[0] * psi))
            else:
                residual = math.inf
            raise GroundStateError(f"eigensolver did not converge for {spec}", residual=residual) from e
        energy, psi = float(evals[0]), evecs[:, 0]

    if psi.sum() < 0:
        psi = -psi
    if spec.h > 0:
        psi = np.abs(psi)
    psi = psi / np.linalg.norm(psi)
    residual = float(np.linalg.norm(H @ psi - energy * psi))
    if residual > 1e-6 * max(1.0, abs(energy)):
        raise GroundStateError(f"ground state residual {residual:.3g} too large for {spec}", residual=residual)
    return GroundStateSolution(energy, psi, spec, residual)


def free_fermion_ground_energy(spec: TFIMSpec) -> float:
    """Closed-form E0 of the periodic chain from the Jordan-Wigner mapping."""
    m = np.arange(spec.n_spins)
    k = (2 * m + 1) * np.pi / spec.n_spins
    eps = np.sqrt(np.clip(spec.J**2 + spec.h**2 - 2 * spec.J * spec.h * np.cos(k), 0.0, None))
    return -float(eps.sum())


def _probability_vector(p_hat: Distribution, spec: TFIMSpec) -> np.ndarray:
    p = as_probabilities(p_hat)
    if p.size != spec.dimension:
        raise ConfigurationError(f"distribution has {p.size} entries, expected {spec.dimension}")
    return p


@dataclass(frozen=True, eq=False)
class LocalEnergyTable:
    values: np.ndarray
    probabilities: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    @property
    def mean(self) -> float:
        return float(self.probabilities @ self.values)


def local_energy_table(p_hat: Distribution, spec: TFIMSpec, epsilon: float = DEFAULT_EPSILON) -> LocalEnergyTable:
    """E_loc(v) for every basis state under the amplitudes sqrt(p_hat).

    States with p(v) + epsilon = 0 carry zero weight; their off-diagonal term is set to 0.
    """
    p = _probability_vector(p_hat, spec)
    diag = diagonal_energies(spec)
    if spec.h == 0:
        return LocalEnergyTable(diag, p, epsilon)
    root = np.sqrt(p + epsilon)
    neighbours = root[flip_table(spec.n_spins)].sum(axis=1)
    ratio = np.divide(neighbours, root, out=np.zeros_like(root), where=root > 0)
    return LocalEnergyTable(diag - spec.h * ratio, p, epsilon)


def local_energy(
    v: int | Sequence[int], p_hat: Distribution, spec: TFIMSpec, epsilon: float = DEFAULT_EPSILON
) -> float:
    """E_loc of one visible state, given as a basis index or a bit vector."""
    if isinstance(v, (int, np.integer)):
        idx = int(v)
    else:
        bits = np.asarray(v, dtype=np.int64)
        idx = int(bits @ (np.int64(1) << np.arange(bits.size, dtype=np.int64)))
    p = _probability_vector(p_hat, spec)
    diag = float(-spec.J * bond_sums(spec.n_spins)[idx])
    if spec.h == 0:
        return diag
    root = math.sqrt(p[idx] + epsilon)
    if root == 0:
        return diag
    neighbours = float(np.sqrt(p[flip_table(spec.n_spins)[idx]] + epsilon).sum())
    return diag - spec.h * neighbours / root


@dataclass(frozen=True)
class EnergyEstimate:
    energy: float
    delta: Optional[float] = None


def relative_energy_error(energy: float, reference_energy: float, n_spins: int) -> float:
    return abs(energy - reference_energy) / n_spins


def variational_energy(
    p_hat: Distribution,
    spec: TFIMSpec,
    epsilon: float = DEFAULT_EPSILON,
    reference: Optional[GroundStateSolution] = None,
) -> EnergyEstimate:
    """E = sum_v p(v) E_loc(v); with a reference also dE = |E - E0|/N."""
    table = local_energy_table(p_hat, spec, epsilon)
    e = table.mean
    delta = relative_energy_error(e, reference.energy, spec.n_spins) if reference is not None else None
    return EnergyEstimate(e, delta)


@dataclass(frozen=True)
class CorrelationFit:
    A: float
    xi: float
    B: float
    A_std: float = 0.0
    xi_std: float = 0.0
    B_std: float = 0.0
    residual_norm: float = 0.0
    identifiable: bool = True


@dataclass(frozen=True, eq=False)
class ObservableSet:
    magnetization_x: float
    czz: Dict[int, float]
    magnetization_histogram: Dict[float, float]
    correlation_fit: Optional[CorrelationFit] = None

    def energy(self, spec: TFIMSpec) -> float:
        """E = -J N C_zz(1) - h N <sigma^x>."""
        return -spec.J * spec.n_spins * self.czz[1] - spec.h * spec.n_spins * self.magnetization_x


def magnetizations(n_spins: int) -> np.ndarray:
    """m(v) = (n_up - n_down)/2 per basis state."""
    return spin_table(n_spins).sum(axis=1) / 2.0


def magnetization_histogram(p_hat: Distribution, n_spins: int) -> Dict[float, float]:
    p = as_probabilities(p_hat)
    m = magnetizations(n_spins)
    levels = np.arange(-n_spins, n_spins + 1, 2) / 2.0
    return {float(level): float(p[m == level].sum()) for level in levels}


def mean_magnetization(p_hat: Distribution, n_spins: int) -> float:
    return float(as_probabilities(p_hat) @ magnetizations(n_spins))


def mix_distributions(*dists: Distribution) -> np.ndarray:
    """Equal-weight average of several distributions over the same basis."""
    if not dists:
        raise ConfigurationError("mix_distributions needs at least one distribution")
    return np.mean([as_probabilities(d) for d in dists], axis=0)


def zz_correlations(p_hat: Distribution, n_spins: int) -> Dict[int, float]:
    """C_zz(d) = (1/N) sum_i <s_i s_(i+d)> for d = 0 .. floor(N/2)."""
    p = as_probabilities(p_hat)
    s = spin_table(n_spins).astype(float)
    out: Dict[int, float] = {}
    for d in range(n_spins // 2 + 1):
        per_state = np.mean(s * np.roll(s, -d, axis=1), axis=1)
        out[d] = float(np.clip(p @ per_state, -1.0, 1.0))
    return out


def x_magnetization(p_hat: Distribution, n_spins: int, epsilon: float = DEFAULT_EPSILON) -> float:
    p = as_probabilities(p_hat)
    root = np.sqrt(p + epsilon)
    total = float((root[:, None] * root[flip_table(n_spins)]).sum()) / n_spins
    return min(total, 1.0)


def observables(
    p_hat: Distribution, spec: TFIMSpec, epsilon: float = DEFAULT_EPSILON, *, fit: bool = True
) -> ObservableSet:
    p = _probability_vector(p_hat, spec)
    czz = zz_correlations(p, spec.n_spins)
    correlation = None
    if fit and len(czz) >= 4:
        try:
            correlation = fit_correlation_length(czz)
        except FitConvergenceError as e:
            logger.bind(action="observables", status="warn").warning(f"correlation fit failed: {e}")
    return ObservableSet(
        magnetization_x=x_magnetization(p, spec.n_spins, epsilon),
        czz=czz,
        magnetization_histogram=magnetization_histogram(p, spec.n_spins),
        correlation_fit=correlation,
    )


def fit_correlation_length(czz: Mapping[int, float]) -> CorrelationFit:
    """Fit C(d) = A exp(-d/xi) + B by nonlinear least squares."""
    if len(czz) < 4:
        raise ConfigurationError(f"fit_correlation_length: need >= 4 distances, got {len(czz)}")
    d = np.array(sorted(czz), dtype=float)
    c = np.array([czz[int(k)] for k in sorted(czz)], dtype=float)
    if np.ptp(c) < 1e-10:
        logger.bind(action="fit_correlation_length", status="flat").warning(
            "correlation data is flat; xi is unidentifiable"
        )
        return CorrelationFit(A=0.0, xi=math.nan, B=float(c.mean()), identifiable=False)

    amplitude = float(c[0] - c[-1])
    result = fit_curve(
        lambda x, th: th[0] * np.exp(-x / th[1]) + th[2],
        d,
        c,
        [amplitude if amplitude != 0 else 1.0, 1.0, float(c[-1])],
        bounds=([-np.inf, 1e-9, -np.inf], [np.inf, 1e6, np.inf]),
        label="fit_correlation_length",
    )
    A, xi, B = (float(x) for x in result.params)
    return CorrelationFit(
        A, xi, B,
        float(result.stds[0]), float(result.stds[1]), float(result.stds[2]),
        result.residual_norm,
    )


def fidelity(p_hat: Distribution, reference: GroundStateSolution) -> float:
    """F = sum_v sqrt(p_hat(v)) psi0(v), clipped to [0, 1]."""
    p = _probability_vector(p_hat, reference.spec)
    return float(np.clip(np.sqrt(p) @ reference.amplitudes, 0.0, 1.0))
