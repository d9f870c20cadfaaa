from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover - Python <3.11 not supported per pyproject
    tomllib = None  # type: ignore

from tomlkit import dumps as toml_dumps

from .boltzmann import JOINT_LIMIT as EXACT_JOINT_LIMIT
from .boltzmann import MARGINAL_LIMIT as VISIBLE_LIMIT
from .errors import ConfigurationError, SchemaError
from .hardware import VALID_GRID_STEPS
from .snn_sampler import SAMPLER_CAPACITY, WEIGHT_LIMIT


DEFAULT_CONFIG_PATH = Path("~/.config/neuroquansa/config.toml").expanduser()
ENV_PREFIX = "NQS_"

ExperimentKind = Literal[
    "train", "sample", "calibrate", "phase-sweep", "size-sweep",
    "resolution", "pseudo-update", "stability", "diag",
]
BackendName = Literal["snn", "gibbs", "exact"]
SEEDED_KINDS = ("train", "sample")


class NeuroquansaSettings(BaseSettings):
    """Global settings.

    Priority (lowest -> highest):
    - Class defaults below
    - TOML file at `config_path` (default: ~/.config/neuroquansa/config.toml)
    - Environment variables with prefix NQS_
    - CLI overrides passed to `load(overrides=...)`
    """

    log_level: str = Field(default="INFO", description="Console log level")
    log_json: Optional[str] = Field(default=None, description="Path for structured JSON log file")
    jobs: int = Field(default=1, ge=1, description="Parallel sweep points / sampling runs")
    out_dir: str = Field(default="results", description="Root directory for result files")
    backend: BackendName = Field(default="gibbs", description="Default sampling backend")
    log_every: int = Field(default=50, ge=1, description="Log an INFO milestone every N training iterations")
    checkpoint_every: int = Field(default=100, ge=1, description="Write a checkpoint every N iterations")

    config_path: Path = Field(default=DEFAULT_CONFIG_PATH, exclude=True)

    model_config = SettingsConfigDict(env_prefix=ENV_PREFIX, extra="ignore")

    @staticmethod
    def default_config_path() -> Path:
        return DEFAULT_CONFIG_PATH

    @classmethod
    def _toml_file_source(cls, config_path: Path) -> Dict[str, Any]:
        if not config_path or not config_path.exists() or tomllib is None:
            return {}
        with config_path.open("rb") as f:
            data = tomllib.load(f)
        return data if isinstance(data, dict) else {}

    @classmethod
    def load(
        cls,
        *,
        config_path: Optional[Path] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> "NeuroquansaSettings":
        """Load settings from defaults + TOML + env + CLI overrides (None values are ignored)."""
        cp = config_path or DEFAULT_CONFIG_PATH
        base = cls(**cls._toml_file_source(cp))
        merged = base.model_dump()
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        settings = cls(**merged)
        settings.config_path = cp
        return settings

    def to_toml(self) -> str:
        data = {k: v for k, v in self.model_dump(exclude={"config_path"}).items() if v is not None}
        return toml_dumps(data)

    def write(self, path: Optional[Path] = None) -> Path:
        from .paths import atomic_write_text

        target = path or self.config_path or DEFAULT_CONFIG_PATH
        return atomic_write_text(target, self.to_toml())


def cli_overrides_from_args(args: Any) -> Dict[str, Any]:
    """Extract known settings keys from an argparse Namespace (None values kept for `load()` to filter)."""
    keys = {"log_level", "log_json", "jobs", "out_dir", "backend", "log_every", "checkpoint_every"}
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


# ---------------------------------------------------------------------------
# Experiment schema


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSection(_Section):
    n_spins: int = Field(default=8, ge=3)
    J: float = 1.0
    h: float = Field(default=1.0, ge=0.0)

    @field_validator("J")
    @classmethod
    def _ferromagnetic(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("J must be > 0 (ferromagnetic coupling keeps the model stoquastic)")
        return v


class NeuronSection(_Section):
    membrane_capacitance: float = Field(default=0.1, gt=0)
    leak_conductance: float = Field(default=1.0, gt=0)
    leak_potential: float = -50.0
    threshold: float = -50.0
    reset: float = -53.0
    refractory_time: float = Field(default=1.0, gt=0)
    synaptic_time: float = Field(default=1.0, gt=0)


class NoiseSection(_Section):
    n_excitatory_sources: int = Field(default=32, ge=0)
    n_inhibitory_sources: int = Field(default=32, ge=0)
    sources_per_neuron: int = Field(default=10, ge=0)
    rate_per_source: float = Field(default=2.0, ge=0)
    noise_weight_exc: float = 2.0
    noise_weight_inh: float = 2.0
    mode: Literal["independent", "shared"] = "independent"


class CalibrationSection(_Section):
    sweep_points: int = Field(default=12, ge=8)
    sweep_half_width: float = Field(default=25.0, gt=0)
    duration: float = Field(default=20000.0, gt=0)
    reference_weight: int = Field(default=16, ge=1, le=WEIGHT_LIMIT)


class NetworkSection(_Section):
    n_hidden: Optional[int] = Field(default=None, ge=0)
    default_hidden: int = Field(default=20, ge=0)
    exact_hidden: int = Field(default=5, ge=1)
    weight_init: int = Field(default=5, ge=0, le=WEIGHT_LIMIT)
    readout_interval: Optional[float] = Field(default=None, gt=0)
    weight_lsb_current: float = Field(default=0.25, gt=0)
    neuron: NeuronSection = Field(default_factory=NeuronSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    calibration: CalibrationSection = Field(default_factory=CalibrationSection)


class TrainingSection(_Section):
    iterations: int = Field(default=1500, ge=1)
    samples_per_iteration: Optional[int] = Field(default=None, ge=1)
    runs_per_iteration: int = Field(default=3, ge=1)
    learning_rate: float = Field(default=1.0, gt=0)
    lr_decay: float = Field(default=0.999, gt=0, le=1)
    epsilon: float = Field(default=1e-12, ge=0)
    bias_init_offset: float = 0.0
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_epsilon: float = Field(default=1e-8, gt=0)
    history_window: int = Field(default=200, ge=1)
    resume: bool = False


class GibbsSection(_Section):
    burn_in: int = Field(default=1000, ge=0)
    thinning: int = Field(default=1, ge=1)
    n_chains: int = Field(default=64, ge=1)
    reburn: int = Field(default=50, ge=0)
    persistent: bool = True
    weight_scale: float = Field(default=1.0 / 16.0, gt=0)
    bias_scale: float = Field(default=1.0 / 16.0, gt=0)


class HardwareSection(_Section):
    weight_clip: int = Field(default=WEIGHT_LIMIT, ge=1)
    grid_step: int = 1
    drift_sigma: float = Field(default=0.0, ge=0)
    bias_jitter: float = Field(default=0.0, ge=0)
    pseudo_flip_fraction: float = 0.1
    drift_mode: Literal["white", "walk"] = "white"
    seed: int = 0


class TableRow(_Section):
    h_over_J: float
    n_spins: int = Field(default=8, ge=3)
    samples: int = Field(ge=1)
    n_hidden: int = Field(ge=0)


class SweepSection(_Section):
    fields: List[float] = Field(default_factory=lambda: [0.1, 0.5, 0.9, 1.0, 1.25, 5.0, 10.0])
    sizes: List[int] = Field(default_factory=lambda: [4, 6, 8])
    hidden_sizes: List[int] = Field(default_factory=lambda: [5, 10, 20])
    grid_steps: List[int] = Field(default_factory=lambda: list(VALID_GRID_STEPS))
    flip_fractions: List[float] = Field(default_factory=lambda: [0.025, 0.1])
    bias_offsets: List[float] = Field(default_factory=list)
    repetitions: int = Field(default=10, ge=1)
    duration_samples: int = Field(default=100_000, ge=1)
    reference_samples: int = Field(default=1_000_000, ge=1)
    n_repeats: int = Field(default=30, ge=1)
    checkpoints: int = Field(default=20, ge=2)
    n_visible: int = Field(default=8, ge=1)
    n_hidden: int = Field(default=20, ge=0)


class ExperimentConfig(_Section):
    """One experiment: what to run, on which model, with which backend."""

    kind: ExperimentKind = "train"
    seed: Optional[int] = None
    backend: BackendName = "gibbs"
    out_dir: str = "results"
    jobs: int = Field(default=1, ge=1)
    system: SystemSection = Field(default_factory=SystemSection)
    network: NetworkSection = Field(default_factory=NetworkSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    gibbs: GibbsSection = Field(default_factory=GibbsSection)
    hardware: HardwareSection = Field(default_factory=HardwareSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    table: List[TableRow] = Field(default_factory=list)

    def table_row(self, h_over_J: float, n_spins: Optional[int] = None) -> Optional[TableRow]:
        """Per-field row tuned for this chain length, if any."""
        n = self.system.n_spins if n_spins is None else n_spins
        for row in self.table:
            if row.n_spins == n and abs(row.h_over_J - h_over_J) <= 1e-9 * max(1.0, abs(h_over_J)):
                return row
        return None

    def n_hidden_for(self, h_over_J: float, n_spins: Optional[int] = None) -> int:
        """Explicit network.n_hidden, else the exact-backend size, else the table, else network.default_hidden.

        The table is tuned for sampled runs; exact enumeration keeps
        N + N_h inside its joint limit.
        """
        if self.network.n_hidden is not None:
            return self.network.n_hidden
        n = self.system.n_spins if n_spins is None else n_spins
        if self.backend == "exact":
            return max(1, min(self.network.exact_hidden, EXACT_JOINT_LIMIT - n))
        row = self.table_row(h_over_J, n)
        return row.n_hidden if row is not None else self.network.default_hidden

    def samples_for(self, h_over_J: float, n_spins: Optional[int] = None) -> int:
        if self.training.samples_per_iteration is not None:
            return self.training.samples_per_iteration
        row = self.table_row(h_over_J, n_spins)
        return row.samples if row is not None else 200_000

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def to_toml(self) -> str:
        data = self.model_dump(mode="json", exclude_none=True)
        return toml_dumps(data)


# ---------------------------------------------------------------------------
# Loading and validation


def load_defaults() -> Dict[str, Any]:
    """Shipped defaults (tabulated per-field settings and optimizer constants)."""
    if tomllib is None:  # pragma: no cover
        return {}
    text = resources.files("neuroquansa").joinpath("defaults.toml").read_text(encoding="utf-8")
    return tomllib.loads(text)


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def dotted_overrides(overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Turn {'system.h': 1.0, 'seed': 3} into nested dicts; None values are dropped."""
    nested: Dict[str, Any] = {}
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


def _format_loc(loc: Any) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def _cross_field_violations(cfg: ExperimentConfig) -> List[str]:
    out: List[str] = []
    n = cfg.system.n_spins

    if cfg.kind in SEEDED_KINDS and cfg.seed is None:
        out.append(f"seed: required for kind '{cfg.kind}'")

    if n > VISIBLE_LIMIT:
        out.append(f"system.n_spins: {n} exceeds the enumeration limit of {VISIBLE_LIMIT}")

    fields = cfg.sweep.fields if cfg.kind == "phase-sweep" else [cfg.system.h / cfg.system.J]
    sizes = cfg.sweep.sizes if cfg.kind == "size-sweep" else [n]
    hidden = cfg.sweep.hidden_sizes if cfg.kind == "size-sweep" else [cfg.n_hidden_for(h) for h in fields]
    for size in sizes:
        for nh in hidden:
            total = size + nh
            if total > SAMPLER_CAPACITY:
                out.append(
                    f"network.n_hidden: N + N_h = {total} exceeds the sampler capacity of {SAMPLER_CAPACITY}"
                )
            if cfg.backend == "exact" and total > EXACT_JOINT_LIMIT:
                out.append(
                    f"backend: exact enumeration supports N + N_h <= {EXACT_JOINT_LIMIT}, got {total}"
                )
        if size > VISIBLE_LIMIT:
            out.append(f"sweep.sizes: {size} exceeds the enumeration limit of {VISIBLE_LIMIT}")

    if cfg.kind in ("resolution", "stability", "pseudo-update"):
        total = cfg.sweep.n_visible + cfg.sweep.n_hidden
        if total > SAMPLER_CAPACITY:
            out.append(f"sweep.n_hidden: N + N_h = {total} exceeds the sampler capacity of {SAMPLER_CAPACITY}")
        if cfg.backend == "exact" and total > EXACT_JOINT_LIMIT:
            out.append(f"backend: exact enumeration supports N + N_h <= {EXACT_JOINT_LIMIT}, got {total}")

    neuron = cfg.network.neuron
    if not neuron.reset < neuron.threshold:
        out.append("network.neuron.reset: must lie below network.neuron.threshold")
    noise = cfg.network.noise
    if noise.sources_per_neuron > noise.n_excitatory_sources + noise.n_inhibitory_sources:
        out.append("network.noise.sources_per_neuron: exceeds the number of pool sources")

    hw = cfg.hardware
    if hw.weight_clip > WEIGHT_LIMIT:
        out.append(f"hardware.weight_clip: must be <= {WEIGHT_LIMIT}, got {hw.weight_clip}")
    if hw.grid_step not in VALID_GRID_STEPS:
        out.append(f"hardware.grid_step: must be one of {list(VALID_GRID_STEPS)}, got {hw.grid_step}")
    for i, step in enumerate(cfg.sweep.grid_steps):
        if step not in VALID_GRID_STEPS:
            out.append(f"sweep.grid_steps.{i}: must be one of {list(VALID_GRID_STEPS)}, got {step}")
    if not 0.0 <= hw.pseudo_flip_fraction <= 1.0:
        out.append(f"hardware.pseudo_flip_fraction: must lie in [0, 1], got {hw.pseudo_flip_fraction}")
    for i, p in enumerate(cfg.sweep.flip_fractions):
        if not 0.0 <= p <= 1.0:
            out.append(f"sweep.flip_fractions.{i}: must lie in [0, 1], got {p}")
    for i, h in enumerate(cfg.sweep.fields):
        if h < 0:
            out.append(f"sweep.fields.{i}: field must be >= 0, got {h}")
    for i, size in enumerate(cfg.sweep.sizes):
        if size < 3:
            out.append(f"sweep.sizes.{i}: chain length must be >= 3, got {size}")

    if cfg.kind == "phase-sweep" and not cfg.sweep.fields:
        out.append("sweep.fields: phase-sweep needs at least one field value")
    if cfg.kind == "size-sweep" and (not cfg.sweep.sizes or not cfg.sweep.hidden_sizes):
        out.append("sweep.sizes: size-sweep needs at least one N and one N_h")
    return out


def validate(config: Union[ExperimentConfig, Mapping[str, Any]]) -> List[str]:
    """Schema plus cross-field checks; empty list means valid.

    Every message starts with the dotted path of the offending field.
    """
    if isinstance(config, ExperimentConfig):
        cfg = config
    else:
        try:
            cfg = ExperimentConfig.model_validate(dict(config))
        except ValidationError as e:
            return [f"{_format_loc(err['loc'])}: {err['msg']}" for err in e.errors()]
    return _cross_field_violations(cfg)


def resolve_experiment(
    config_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    *,
    base: Optional[Mapping[str, Any]] = None,
    use_defaults: bool = True,
) -> ExperimentConfig:
    """Shipped defaults < `base` (global settings) < experiment TOML file < dotted CLI overrides, then validate.

    Raises SchemaError carrying every violation.
    """
    data: Dict[str, Any] = load_defaults() if use_defaults else {}
    if base:
        data = deep_merge(data, dotted_overrides(base))
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        if tomllib is None:  # pragma: no cover
            raise ConfigurationError("tomllib unavailable")
        try:
            with path.open("rb") as f:
                file_data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise SchemaError([f"<file>: {path}: {e}"]) from e
        data = deep_merge(data, file_data)
    if overrides:
        data = deep_merge(data, dotted_overrides(overrides))
    violations = validate(data)
    if violations:
        raise SchemaError(violations)
    return ExperimentConfig.model_validate(data)
