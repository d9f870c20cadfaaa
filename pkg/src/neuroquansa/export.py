"""CSV result files. Every writer goes through a temp sibling and os.replace."""
from __future__ import annotations

import os
from dataclasses import asdict
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from .boltzmann import Distribution, as_probabilities
from .calibration import CalibrationMap
from .errors import ConfigurationError
from .learner import TraceRow
from .limitations import ConvergenceCurve, ResolutionRow
from .paths import atomic_output, temp_out_path
from .snn_sampler import SpikeRecord, StateSamples, indices_to_states
from .tfim import ObservableSet, TFIMSpec

# No wall_time: trace files are byte-identical across identical runs.
TRACE_COLUMNS = [
    "iteration", "energy", "delta_energy", "infidelity", "dkl",
    "flip_fraction", "clip_fraction", "lr",
]


def write_frame(df: pd.DataFrame, path: Path) -> Path:
    with atomic_output(Path(path)) as tmp:
        df.to_csv(tmp, index=False)
    return Path(path)


def bitstrings(n_visible: int) -> List[str]:
    """Basis labels with character i holding v_i."""
    states = indices_to_states(np.arange(1 << n_visible), n_visible)
    return ["".join(str(int(b)) for b in row) for row in states]


def spikes_frame(record: SpikeRecord) -> pd.DataFrame:
    return pd.DataFrame({"time": record.times, "neuron_id": record.neuron_ids})


def states_frame(samples: StateSamples) -> pd.DataFrame:
    nv = samples.n_visible
    cols = [f"v{i}" for i in range(nv)] + [f"h{j}" for j in range(samples.states.shape[1] - nv)]
    df = pd.DataFrame(samples.states, columns=cols)
    if samples.readout_interval is not None:
        df.insert(0, "time", samples.readout_interval * np.arange(1, len(samples) + 1))
    if samples.weights is not None:
        df["weight"] = samples.row_weights()
    return df


def distribution_frame(p: Distribution, n_visible: int, reference: Optional[Distribution] = None) -> pd.DataFrame:
    df = pd.DataFrame({"state": bitstrings(n_visible), "probability": as_probabilities(p)})
    if reference is not None:
        df["reference"] = as_probabilities(reference)
    return df


def read_distribution(path: Path) -> np.ndarray:
    """Probability vector from a distribution CSV, indexed by basis state."""
    df = pd.read_csv(path, dtype={"state": str})
    n = len(df["state"].iloc[0])
    idx = np.array([int(s[::-1], 2) for s in df["state"]])
    if idx.size != 1 << n:
        raise ConfigurationError(f"{path}: expected {1 << n} rows, got {idx.size}")
    p = np.zeros(1 << n)
    p[idx] = df["probability"].to_numpy(dtype=float)
    return p


def calibration_frame(calibration: CalibrationMap) -> pd.DataFrame:
    return pd.DataFrame(calibration.to_rows())


def activation_frame(calibration: CalibrationMap) -> pd.DataFrame:
    rows = [
        {"neuron_id": k, "leak_potential": v, "p_on": p, "bracketed": c.bracketed}
        for k, c in enumerate(calibration.curves)
        for v, p in c.points
    ]
    return pd.DataFrame(rows, columns=["neuron_id", "leak_potential", "p_on", "bracketed"])


def resolution_frame(rows: Sequence[ResolutionRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows], columns=["grid_step", "dkl_mean", "dkl_std", "n_values"])


def curves_frame(curves: Mapping[str, ConvergenceCurve]) -> pd.DataFrame:
    """Long format: one row per (curve, checkpoint)."""
    frames = [
        pd.DataFrame({"curve": name, "samples": c.samples, "dkl_mean": c.dkl, "dkl_std": c.dkl_std})
        for name, c in curves.items()
    ]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["curve", "samples", "dkl_mean", "dkl_std"]
    )


def records_frame(rows: Iterable[Mapping[str, object]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows))


class TraceWriter:
    """Streams training rows to a temp CSV and moves it into place on close.

    A run that fails keeps its partial trace: `close()` is also called from
    `__exit__` on error.
    """

    def __init__(self, path: Path, *, keep_until: Optional[int] = None) -> None:
        """`keep_until` carries over rows of an existing trace up to that iteration (resume)."""
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._tmp = temp_out_path(self.path)
        previous = pd.DataFrame(columns=TRACE_COLUMNS)
        if keep_until is not None and self.path.exists():
            previous = pd.read_csv(self.path)
            previous = previous[previous["iteration"] <= keep_until]
        self._rows = len(previous)
        previous.to_csv(self._tmp, index=False)

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    @property
    def rows(self) -> int:
        return self._rows

    def append(self, row: TraceRow) -> None:
        pd.DataFrame([asdict(row)], columns=TRACE_COLUMNS).to_csv(self._tmp, mode="a", header=False, index=False)
        self._rows += 1

    def close(self) -> None:
        if self._tmp.exists():
            os.replace(self._tmp, self.path)
            logger.bind(action="write", status="ok", rows=self._rows).debug(f"wrote {self.path}")


def observables_row(label: Mapping[str, object], obs: ObservableSet, spec: TFIMSpec) -> Dict[str, object]:
    """Flat row for an ObservableSet (used by sweeps)."""
    row: Dict[str, object] = dict(label)
    row["magnetization_x"] = obs.magnetization_x
    for d, c in obs.czz.items():
        row[f"czz_{d}"] = c
    fit = obs.correlation_fit
    row["xi"] = fit.xi if fit is not None else float("nan")
    row["xi_fit_std"] = fit.xi_std if fit is not None else float("nan")
    row["energy_from_correlations"] = obs.energy(spec)
    return row
