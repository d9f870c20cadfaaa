"""Bounded nonlinear least squares shared by the activation and correlation fits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from .errors import FitConvergenceError


Model = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    stds: np.ndarray
    residual_norm: float
    n_evaluations: int


def fit_curve(
    model: Model,
    x: Sequence[float],
    y: Sequence[float],
    p0: Sequence[float],
    *,
    bounds: Tuple[Sequence[float], Sequence[float]] = ((), ()),
    max_nfev: int = 2000,
    label: str = "fit",
) -> FitResult:
    """Fit `model(x, params)` to y; parameter stds come from the scaled Jacobian covariance.

    Raises FitConvergenceError (carrying the best iterate) when the solver
    stops on its evaluation budget or reports failure.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    lo, hi = bounds
    lo = np.full(len(p0), -np.inf) if len(lo) == 0 else np.asarray(lo, dtype=float)
    hi = np.full(len(p0), np.inf) if len(hi) == 0 else np.asarray(hi, dtype=float)
    start = np.clip(np.asarray(p0, dtype=float), lo, hi)

    res = least_squares(
        lambda p: model(xa, p) - ya,
        start,
        bounds=(lo, hi),
        method="trf",
        xtol=1e-12,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=max_nfev,
    )
    norm = float(np.linalg.norm(res.fun))
    if res.status <= 0:
        raise FitConvergenceError(
            f"{label}: least squares did not converge ({res.message})",
            best_params=res.x,
            residual_norm=norm,
        )
    return FitResult(res.x.copy(), _param_stds(res.jac, res.fun), norm, int(res.nfev))


def _param_stds(jac: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    m, p = jac.shape
    dof = max(1, m - p)
    s2 = float(residuals @ residuals) / dof
    try:
        cov = np.linalg.pinv(jac.T @ jac) * s2
    except np.linalg.LinAlgError:
        return np.full(p, np.inf)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def logistic(x: np.ndarray, u0: float, alpha: float) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-(np.asarray(x, dtype=float) - u0) / alpha))


def inverse_logistic(p: float, u0: float, alpha: float, clip: Optional[float] = 1e-9) -> float:
    if clip is not None:
        p = min(max(p, clip), 1.0 - clip)
    return u0 + alpha * float(np.log(p / (1.0 - p)))
