"""Expand sweep experiments into independent points.

Each point carries everything a worker needs: the model, the network size,
the sample budget and its own seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

from .config import ExperimentConfig
from .paths import format_value
from .scheduler import task_seed
from .tfim import TFIMSpec


@dataclass(frozen=True)
class SweepPoint:
    index: int
    label: str
    spec: TFIMSpec
    n_hidden: int
    samples: int
    seed: int
    bias_offset: Optional[float] = None


def _base_seed(cfg: ExperimentConfig) -> int:
    return cfg.seed if cfg.seed is not None else 0


def plan_phase_sweep(cfg: ExperimentConfig) -> List[SweepPoint]:
    """One point per (field, bias offset); N_h and N_sample come from the per-field table."""
    offsets = cfg.sweep.bias_offsets or [None]
    points: List[SweepPoint] = []
    for h in cfg.sweep.fields:
        spec = TFIMSpec(cfg.system.n_spins, cfg.system.J, h * cfg.system.J)
        for offset in offsets:
            label = f"h_{format_value(h)}"
            if offset is not None:
                label += f"_db_{format_value(offset)}"
            index = len(points)
            points.append(
                SweepPoint(
                    index=index,
                    label=label,
                    spec=spec,
                    n_hidden=cfg.n_hidden_for(h),
                    samples=cfg.samples_for(h),
                    seed=task_seed(_base_seed(cfg), index),
                    bias_offset=offset,
                )
            )
    return points


def plan_size_sweep(cfg: ExperimentConfig) -> List[SweepPoint]:
    """Grid over chain length N and hidden-layer size N_h at the configured field."""
    h_over_j = cfg.system.h / cfg.system.J
    points: List[SweepPoint] = []
    for n in cfg.sweep.sizes:
        spec = TFIMSpec(n, cfg.system.J, cfg.system.h)
        for nh in cfg.sweep.hidden_sizes:
            index = len(points)
            points.append(
                SweepPoint(
                    index=index,
                    label=f"N_{n}_Nh_{nh}",
                    spec=spec,
                    n_hidden=nh,
                    samples=cfg.samples_for(h_over_j, n),
                    seed=task_seed(_base_seed(cfg), index),
                )
            )
    return points
