"""Exception hierarchy shared by all neuroquansa modules."""
from __future__ import annotations

from typing import Optional, Sequence


class NeuroquansaError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(NeuroquansaError, ValueError):
    """A parameter set violates a documented invariant."""


class CapacityError(NeuroquansaError):
    """A problem size exceeds what an operation or backend supports."""

    def __init__(self, message: str, *, limit: Optional[int] = None, requested: Optional[int] = None) -> None:
        super().__init__(message)
        self.limit = limit
        self.requested = requested


class FitConvergenceError(NeuroquansaError):
    """A nonlinear least-squares fit stopped without converging."""

    def __init__(self, message: str, *, best_params: Sequence[float], residual_norm: float) -> None:
        super().__init__(message)
        self.best_params = tuple(float(p) for p in best_params)
        self.residual_norm = float(residual_norm)


class CalibrationError(NeuroquansaError):
    """Calibration of one neuron produced a degenerate activation fit."""

    def __init__(self, message: str, *, neuron_id: int) -> None:
        super().__init__(message)
        self.neuron_id = neuron_id


class GroundStateError(NeuroquansaError):
    """The eigensolver failed to produce a converged ground state."""

    def __init__(self, message: str, *, residual: float) -> None:
        super().__init__(message)
        self.residual = float(residual)


class BackendError(NeuroquansaError):
    """A sampling backend failed while producing samples."""


class SchemaError(ConfigurationError):
    """An experiment config failed validation; `violations` holds dotted-path messages."""

    def __init__(self, violations: Sequence[str]) -> None:
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid configuration")
