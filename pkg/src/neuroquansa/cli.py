from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger

from .config import (
    ExperimentConfig,
    NeuroquansaSettings,
    cli_overrides_from_args,
    resolve_experiment,
)
from .errors import ConfigurationError, NeuroquansaError, SchemaError
from .runner import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR, run_experiment
from .tfim import TFIMSpec

KINDS = {
    "train": "Learn the TFIM ground state with the selected backend",
    "sample": "Sample a seeded network and compare with the exact marginal",
    "calibrate": "Measure activation curves and the weight translation factor",
    "phase-sweep": "Train across h/J and report learned vs exact observables",
    "size-sweep": "Train over a grid of chain lengths and hidden-layer sizes",
    "resolution": "D_KL between full-resolution and grid-quantized weights",
    "pseudo-update": "Convergence after random +-1 weight perturbations",
    "stability": "Single-run and run-average convergence under drift",
    "diag": "Exact ground state: print E0 and write psi0",
}


def configure_logging(log_level: str = "INFO", log_json_path: Optional[str] = None) -> None:
    """Configure Loguru for human console output and optional JSON lines file.

    log_level: Console log level (e.g., INFO, DEBUG, WARNING).
    log_json_path: If provided, write structured JSON lines to this path.
    """
    logger.remove()
    logger.add(sys.stderr, level=log_level.upper(), enqueue=True, backtrace=False, diagnose=False)
    if log_json_path:
        logger.add(log_json_path, level="DEBUG", serialize=True, enqueue=True)


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", dest="experiment_path", default=None, help="Experiment TOML file")
    p.add_argument("--seed", type=int, default=None, help="Master seed (required for train/sample)")
    p.add_argument("--jobs", type=int, default=None, help="Parallel sweep points / sampling runs")
    p.add_argument("--out", dest="out_dir", default=None, help="Root directory for result files")
    p.add_argument("--backend", choices=["snn", "gibbs", "exact"], default=None, help="Sampling backend")
    p.add_argument("--spec", default=None, help="Model as N=<spins>,J=<coupling>,h=<field>")
    p.add_argument("--N", dest="n_spins", type=int, default=None, help="Chain length")
    p.add_argument("--h-over-J", dest="h_over_j", type=float, default=None, help="Field in units of J")
    p.add_argument("--n-hidden", dest="n_hidden", type=int, default=None, help="Hidden units (else per-field table or network.default_hidden)")
    p.add_argument("--fields", type=_float_list, default=None, help="Comma-separated h/J values for phase-sweep")
    p.add_argument("--sizes", type=_int_list, default=None, help="Comma-separated N values for size-sweep")
    p.add_argument("--hidden-sizes", type=_int_list, default=None, help="Comma-separated N_h values for size-sweep")
    p.add_argument("--bias-offsets", type=_float_list, default=None, help="Comma-separated initial bias offsets (LSB)")
    p.add_argument("--grid-steps", type=_int_list, default=None, help="Comma-separated weight grid steps")
    p.add_argument("--flip-fractions", type=_float_list, default=None, help="Comma-separated pseudo-update fractions")
    p.add_argument("--drift-sigma", type=float, default=None, help="Per-run weight drift (abstract units)")
    p.add_argument("--iterations", type=int, default=None, help="Training iterations")
    p.add_argument("--samples", type=int, default=None, help="Samples per training iteration")
    p.add_argument("--resume", action="store_true", default=None, help="Resume training from checkpoints")
    p.add_argument("--progress", action="store_true", help="Show a progress bar while training")


def experiment_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted ExperimentConfig overrides from parsed flags; unset flags are dropped."""
    out: Dict[str, Any] = {
        "kind": args.cmd,
        "seed": args.seed,
        "jobs": args.jobs,
        "out_dir": args.out_dir,
        "backend": args.backend,
        "system.n_spins": args.n_spins,
        "network.n_hidden": args.n_hidden,
        "sweep.fields": args.fields,
        "sweep.sizes": args.sizes,
        "sweep.hidden_sizes": args.hidden_sizes,
        "sweep.bias_offsets": args.bias_offsets,
        "sweep.grid_steps": args.grid_steps,
        "sweep.flip_fractions": args.flip_fractions,
        "hardware.drift_sigma": args.drift_sigma,
        "training.iterations": args.iterations,
        "training.samples_per_iteration": args.samples,
        "training.resume": args.resume,
    }
    if args.spec:
        spec = TFIMSpec.parse(args.spec)
        out.update({"system.n_spins": spec.n_spins, "system.J": spec.J, "system.h": spec.h})
    return {k: v for k, v in out.items() if v is not None}


def resolve_from_args(args: argparse.Namespace, settings: NeuroquansaSettings) -> ExperimentConfig:
    base = {"jobs": settings.jobs, "out_dir": settings.out_dir, "backend": settings.backend}
    path = Path(args.experiment_path).expanduser() if args.experiment_path else None
    overrides = experiment_overrides(args)
    cfg = resolve_experiment(path, overrides, base=base)
    if args.h_over_j is not None:
        overrides["system.h"] = args.h_over_j * cfg.system.J
        cfg = resolve_experiment(path, overrides, base=base)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neuroquansa")
    p.add_argument(
        "--settings",
        dest="config_path",
        default=None,
        help="Path to global settings TOML (default: ~/.config/neuroquansa/config.toml)",
    )
    p.add_argument(
        "--write-config",
        action="store_true",
        help="Write current effective settings to the settings file and exit",
    )
    p.add_argument("--log-level", default=None, help="Console log level (DEBUG, INFO, WARNING, ERROR)")
    p.add_argument("--log-json", dest="log_json", default=None, help="Path to write JSON lines log (structured events)")
    sub = p.add_subparsers(dest="cmd")
    for kind, help_text in KINDS.items():
        _add_experiment_flags(sub.add_parser(kind, help=help_text))
    return p


def main(argv: Optional[List[str]] = None) -> int:
    p = build_parser()
    args = p.parse_args(argv)
    overrides = cli_overrides_from_args(args)
    settings_path = Path(args.config_path).expanduser() if args.config_path else None
    settings = NeuroquansaSettings.load(config_path=settings_path, overrides=overrides)

    if args.write_config:
        written = settings.write(settings_path)
        print(f"Config written to: {written}")
        return EXIT_OK
    if args.cmd is None:
        p.error("a command is required")

    configure_logging(settings.log_level, settings.log_json)
    try:
        cfg = resolve_from_args(args, settings)
    except SchemaError as e:
        for violation in e.violations:
            logger.bind(action="validate", status="error").error(violation)
        return EXIT_CONFIG_ERROR
    except ConfigurationError as e:
        logger.bind(action="validate", status="error").error(str(e))
        return EXIT_CONFIG_ERROR

    try:
        code, _ = run_experiment(cfg, settings, progress=args.progress)
    except ConfigurationError as e:
        logger.bind(action="run", status="error").error(str(e))
        return EXIT_CONFIG_ERROR
    except NeuroquansaError as e:
        logger.bind(action="run", status="error").error(str(e))
        return EXIT_RUNTIME_ERROR
    return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
