"""Experiment orchestration: one `cmd_*` per experiment kind.

Every command writes into `<out_dir>/<kind>/`, returns (exit_code, summary)
and leaves a manifest covering every file it wrote, also when it fails
part-way.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from .backends import ExactBackend, GibbsBackend, SamplingBackend, SNNBackend
from .boltzmann import MARGINAL_LIMIT, EmpiricalDistribution, dkl, exact_marginal
from .calibration import CalibrationMap, CalibrationProtocol, calibrate
from .config import ExperimentConfig, NeuroquansaSettings
from .errors import ConfigurationError, FitConvergenceError, NeuroquansaError
from .export import (
    TraceWriter,
    activation_frame,
    calibration_frame,
    curves_frame,
    distribution_frame,
    observables_row,
    records_frame,
    resolution_frame,
    spikes_frame,
    states_frame,
    write_frame,
)
from .hardware import HardwareModel
from .learner import TrainingConfig, TrainingResult, checkpoint_iteration, initial_parameters, train
from .limitations import run_pseudo_update_experiment, run_resolution_experiment, run_stability_experiment
from .manifest import ResultManifest, write_summary
from .paths import atomic_write_text, point_dir
from .planner import SweepPoint, plan_phase_sweep, plan_size_sweep
from .scheduler import WorkerPool
from .snn_sampler import NetworkConfig, NeuronParams, NoisePoolConfig, decode_states, simulate
from .tfim import (
    TFIMSpec,
    exact_ground_state,
    fidelity,
    fit_correlation_length,
    free_fermion_ground_energy,
    mix_distributions,
    observables,
    relative_energy_error,
    variational_energy,
)

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2

CommandResult = Tuple[int, Dict[str, Any]]


@dataclass
class RunContext:
    cfg: ExperimentConfig
    settings: NeuroquansaSettings
    run_dir: Path
    pool: WorkerPool
    manifest: ResultManifest
    progress: bool = False

    @property
    def seed(self) -> int:
        return self.cfg.seed if self.cfg.seed is not None else 0


# ---------------------------------------------------------------------------
# Builders


def build_hardware(cfg: ExperimentConfig) -> HardwareModel:
    hw = cfg.hardware
    return HardwareModel(
        weight_clip=hw.weight_clip,
        grid_step=hw.grid_step,
        drift_sigma=hw.drift_sigma,
        bias_jitter=hw.bias_jitter,
        pseudo_flip_fraction=hw.pseudo_flip_fraction,
        drift_mode=hw.drift_mode,
        seed=hw.seed,
    )


def network_template(cfg: ExperimentConfig, n_visible: int, n_hidden: int, seed: int) -> NetworkConfig:
    neuron = NeuronParams(**cfg.network.neuron.model_dump())
    noise = NoisePoolConfig(**cfg.network.noise.model_dump())
    return NetworkConfig.homogeneous(
        n_visible, n_hidden, neuron=neuron, noise=noise, rng_seed=seed,
        weight_lsb_current=cfg.network.weight_lsb_current,
    )


def calibration_protocol(cfg: ExperimentConfig, seed: int) -> CalibrationProtocol:
    c = cfg.network.calibration
    return CalibrationProtocol(c.sweep_points, c.sweep_half_width, c.duration, c.reference_weight, seed)


def build_backend(
    cfg: ExperimentConfig,
    n_visible: int,
    n_hidden: int,
    *,
    seed: int,
    calibration: Optional[CalibrationMap] = None,
    pool: Optional[WorkerPool] = None,
) -> SamplingBackend:
    hardware = build_hardware(cfg)
    g = cfg.gibbs
    if cfg.backend == "exact":
        return ExactBackend(weight_scale=g.weight_scale, bias_scale=g.bias_scale, hardware=hardware,
                            runs_per_iteration=cfg.training.runs_per_iteration, seed=seed)
    if cfg.backend == "gibbs":
        return GibbsBackend(
            weight_scale=g.weight_scale, bias_scale=g.bias_scale, n_chains=g.n_chains, burn_in=g.burn_in,
            thinning=g.thinning, reburn=g.reburn, persistent=g.persistent, hardware=hardware,
            runs_per_iteration=cfg.training.runs_per_iteration, seed=seed,
        )
    template = network_template(cfg, n_visible, n_hidden, seed)
    if calibration is None:
        calibration = calibrate(template, calibration_protocol(cfg, seed), pool=pool)
    return SNNBackend(
        template, calibration, bias_scale=g.bias_scale, readout_interval=cfg.network.readout_interval,
        hardware=hardware, runs_per_iteration=cfg.training.runs_per_iteration, seed=seed,
    )


def training_config(
    ctx: RunContext, samples: int, seed: int, bias_offset: Optional[float] = None, *, progress: bool = False
) -> TrainingConfig:
    t = ctx.cfg.training
    return TrainingConfig(
        iterations=t.iterations,
        samples_per_iteration=samples,
        runs_per_iteration=t.runs_per_iteration,
        learning_rate=t.learning_rate,
        lr_decay=t.lr_decay,
        epsilon=t.epsilon,
        bias_init_offset=t.bias_init_offset if bias_offset is None else bias_offset,
        weight_init=ctx.cfg.network.weight_init,
        beta1=t.beta1,
        beta2=t.beta2,
        adam_epsilon=t.adam_epsilon,
        history_window=t.history_window,
        seed=seed,
        log_every=ctx.settings.log_every,
        checkpoint_every=ctx.settings.checkpoint_every,
        resume=t.resume,
        progress=progress,
    )


# ---------------------------------------------------------------------------
# Training points


@dataclass
class PointOutcome:
    point: SweepPoint
    result: TrainingResult
    metrics: Dict[str, Any]


def _xi_window_std(result: TrainingResult, spec: TFIMSpec) -> float:
    values = []
    for p in result.window_distributions:
        try:
            fit = fit_correlation_length(observables(p, spec, fit=False).czz)
        except (FitConvergenceError, ConfigurationError):
            continue
        if fit.identifiable:
            values.append(fit.xi)
    return float(np.std(values)) if len(values) > 1 else float("nan")


def train_point(
    ctx: RunContext,
    point: SweepPoint,
    out_dir: Path,
    *,
    pool: Optional[WorkerPool] = None,
    progress: bool = False,
) -> PointOutcome:
    """Train one (model, network) point and write its trace, distribution and weights."""
    spec = point.spec
    reference = exact_ground_state(spec)
    backend = build_backend(ctx.cfg, spec.n_spins, point.n_hidden, seed=point.seed, pool=pool)
    if isinstance(backend, SNNBackend):
        write_frame(calibration_frame(backend.calibration), out_dir / "calibration.csv")
    config = training_config(ctx, point.samples, point.seed, point.bias_offset, progress=progress)
    ctx.manifest.add_seed(point.label, point.seed)

    checkpoint = out_dir / "checkpoint.npz"
    keep_until = checkpoint_iteration(checkpoint) if config.resume else None
    started = time.perf_counter()
    with TraceWriter(out_dir / "trace.csv", keep_until=keep_until) as writer:
        result = train(
            spec, backend, point.n_hidden, config,
            reference=reference, on_iteration=writer.append,
            checkpoint_path=checkpoint, pool=pool,
        )
    wall = time.perf_counter() - started

    write_frame(distribution_frame(result.distribution, spec.n_spins, reference.probabilities),
                out_dir / "distribution.csv")
    write_frame(records_frame({"visible": i, **{f"h{j}": w for j, w in enumerate(row)}}
                              for i, row in enumerate(result.programmed_weights)),
                out_dir / "weights.csv")
    window = config.history_window
    energy = variational_energy(result.distribution, spec, config.epsilon, reference)
    metrics: Dict[str, Any] = {
        "label": point.label,
        "N": spec.n_spins,
        "N_h": point.n_hidden,
        "h_over_J": spec.h / spec.J if spec.J else float("inf"),
        "bias_offset": config.bias_init_offset,
        "iterations": len(result.trace),
        "aborted": result.aborted,
        "E0": reference.energy,
        "E": energy.energy,
        "delta_energy": energy.delta,
        "infidelity": 1.0 - fidelity(result.distribution, reference),
        "edge_fraction": result.edge_fraction,
        "wall_time_s": round(wall, 3),
    }
    for column in ("delta_energy", "infidelity"):
        stats = result.trace.window_stats(column, window)
        metrics.update({f"{column}_{k}": v for k, v in stats.items()})
    metrics["flip_fraction_mean"] = float(np.mean(result.trace.tail(window).column("flip_fraction"))) if len(result.trace) else 0.0
    if result.aborted:
        metrics["abort_reason"] = result.abort_reason
    logger.bind(action="sweep_point", status="aborted" if result.aborted else "ok", point=point.label).info(
        f"{point.label}: dE={metrics['delta_energy']:.3e} 1-F={metrics['infidelity']:.3e}"
    )
    return PointOutcome(point, result, metrics)


def _run_points(
    ctx: RunContext, points: List[SweepPoint], fn: Callable[[SweepPoint], PointOutcome]
) -> List[PointOutcome]:
    """Fan points out over the pool; results come back in plan order."""
    return ctx.pool.map_ordered(fn, points)


# ---------------------------------------------------------------------------
# Commands


def cmd_train(ctx: RunContext) -> CommandResult:
    cfg = ctx.cfg
    spec = TFIMSpec(cfg.system.n_spins, cfg.system.J, cfg.system.h)
    h_over_j = cfg.system.h / cfg.system.J
    point = SweepPoint(0, "train", spec, cfg.n_hidden_for(h_over_j), cfg.samples_for(h_over_j), ctx.seed)
    outcome = train_point(ctx, point, ctx.run_dir, pool=ctx.pool, progress=ctx.progress)
    code = EXIT_RUNTIME_ERROR if outcome.result.aborted else EXIT_OK
    return code, outcome.metrics


def cmd_sample(ctx: RunContext) -> CommandResult:
    """Draw samples from a network with seeded random weights and compare with the exact marginal."""
    cfg = ctx.cfg
    n, nh = cfg.system.n_spins, cfg.n_hidden_for(cfg.system.h / cfg.system.J)
    n_samples = cfg.samples_for(cfg.system.h / cfg.system.J)
    backend = build_backend(cfg, n, nh, seed=ctx.seed, pool=ctx.pool)
    tc = training_config(ctx, n_samples, ctx.seed)
    weights, biases = initial_parameters(n, nh, tc)
    state = backend.program(weights, biases)
    ctx.manifest.add_seed("sample", ctx.seed)

    if isinstance(backend, SNNBackend):
        network = backend.network_for(state)
        network.write(ctx.run_dir / "network.toml")
        interval = cfg.network.readout_interval or float(network.refractory_times[0])
        record = simulate(network, n_samples * interval, ctx.seed)
        write_frame(spikes_frame(record), ctx.run_dir / "spikes.csv")
        samples = decode_states(record, network, interval)
        write_frame(calibration_frame(backend.calibration), ctx.run_dir / "calibration.csv")
    else:
        samples = backend.sample(state, n_samples, iteration=0, run=0)
    write_frame(states_frame(samples), ctx.run_dir / "states.csv")

    p_hat = EmpiricalDistribution.from_states(samples.visible, n, samples.row_weights()).probabilities
    summary: Dict[str, Any] = {"N": n, "N_h": nh, "backend": cfg.backend, "samples": len(samples)}
    reference = None
    if n <= MARGINAL_LIMIT:
        reference = exact_marginal(state.rbm).probabilities
        summary["dkl_to_exact_marginal"] = dkl(p_hat, reference)
    write_frame(distribution_frame(p_hat, n, reference), ctx.run_dir / "distribution.csv")
    return EXIT_OK, summary


def cmd_calibrate(ctx: RunContext) -> CommandResult:
    cfg = ctx.cfg
    n, nh = cfg.system.n_spins, cfg.n_hidden_for(cfg.system.h / cfg.system.J)
    template = network_template(cfg, n, nh, ctx.seed)
    calibration = calibrate(template, calibration_protocol(cfg, ctx.seed), pool=ctx.pool)
    write_frame(calibration_frame(calibration), ctx.run_dir / "calibration.csv")
    write_frame(activation_frame(calibration), ctx.run_dir / "activation.csv")
    ctx.manifest.add_seed("calibrate", ctx.seed)
    fit = calibration.fits[0]
    return EXIT_OK, {
        "neurons": len(calibration.fits),
        "gamma_w": calibration.weight_translation_factor,
        "u0": fit.u0,
        "alpha": fit.alpha,
        "bracketed": all(c.bracketed for c in calibration.curves),
    }


def cmd_phase_sweep(ctx: RunContext) -> CommandResult:
    """Learned and exact observables across h/J; bias offsets are averaged per field."""
    points = plan_phase_sweep(ctx.cfg)
    outcomes = _run_points(ctx, points, lambda p: train_point(ctx, p, point_dir(ctx.run_dir, p.label)))

    rows: List[Dict[str, Any]] = []
    by_field: Dict[float, List[PointOutcome]] = {}
    for o in outcomes:
        spec = o.point.spec
        learned = o.result.window_distribution
        obs = observables(learned, spec, ctx.cfg.training.epsilon)
        row = observables_row({"h_over_J": spec.h / spec.J, "bias_offset": o.metrics["bias_offset"], "source": "learned"}, obs, spec)
        row["xi_window_std"] = _xi_window_std(o.result, spec)
        row["fidelity"] = fidelity(learned, o.result.reference)
        row["delta_energy"] = o.metrics["delta_energy"]
        rows.append(row)
        by_field.setdefault(spec.h / spec.J, []).append(o)

    for h_over_j, group in by_field.items():
        spec = group[0].point.spec
        reference = group[0].result.reference
        theory = observables(reference.probabilities, spec, 0.0)
        row = observables_row({"h_over_J": h_over_j, "bias_offset": float("nan"), "source": "exact"}, theory, spec)
        row["fidelity"] = 1.0
        rows.append(row)
        if len(group) > 1:
            mixed = mix_distributions(*(o.result.window_distribution for o in group))
            avg = observables_row({"h_over_J": h_over_j, "bias_offset": float("nan"), "source": "offset_average"},
                                  observables(mixed, spec, ctx.cfg.training.epsilon), spec)
            avg["fidelity"] = fidelity(mixed, reference)
            avg["delta_energy"] = relative_energy_error(
                variational_energy(mixed, spec, ctx.cfg.training.epsilon).energy, reference.energy, spec.n_spins
            )
            rows.append(avg)

    write_frame(records_frame(rows), ctx.run_dir / "observables.csv")
    aborted = [o.point.label for o in outcomes if o.result.aborted]
    summary = {"points": len(outcomes), "aborted": len(aborted), "rows": rows}
    return (EXIT_RUNTIME_ERROR if aborted else EXIT_OK), summary


def cmd_size_sweep(ctx: RunContext) -> CommandResult:
    """Window statistics of dE and 1-F for every (N, N_h)."""
    points = plan_size_sweep(ctx.cfg)
    outcomes = _run_points(ctx, points, lambda p: train_point(ctx, p, point_dir(ctx.run_dir, p.label)))
    keys = ("N", "N_h", "delta_energy_median", "delta_energy_p15", "delta_energy_p85",
            "infidelity_median", "infidelity_p15", "infidelity_p85", "edge_fraction", "flip_fraction_mean", "aborted")
    rows = [{k: o.metrics[k] for k in keys} for o in outcomes]
    write_frame(records_frame(rows), ctx.run_dir / "size_sweep.csv")
    aborted = any(o.result.aborted for o in outcomes)
    return (EXIT_RUNTIME_ERROR if aborted else EXIT_OK), {"points": len(rows), "rows": rows}


def _experiment_backend(ctx: RunContext) -> SamplingBackend:
    s = ctx.cfg.sweep
    return build_backend(ctx.cfg, s.n_visible, s.n_hidden, seed=ctx.seed, pool=ctx.pool)


def cmd_resolution(ctx: RunContext) -> CommandResult:
    s = ctx.cfg.sweep
    rows = run_resolution_experiment(
        _experiment_backend(ctx), s.grid_steps, s.repetitions, s.duration_samples,
        n_visible=s.n_visible, n_hidden=s.n_hidden, seed=ctx.seed, pool=ctx.pool,
    )
    ctx.manifest.add_seed("resolution", ctx.seed)
    frame = resolution_frame(rows)
    write_frame(frame, ctx.run_dir / "resolution.csv")
    return EXIT_OK, {"rows": frame.to_dict(orient="records")}


def cmd_pseudo_update(ctx: RunContext) -> CommandResult:
    s = ctx.cfg.sweep
    curves = run_pseudo_update_experiment(
        _experiment_backend(ctx), s.flip_fractions or [ctx.cfg.hardware.pseudo_flip_fraction], s.duration_samples,
        reference_duration=s.reference_samples, n_visible=s.n_visible, n_hidden=s.n_hidden,
        n_checkpoints=s.checkpoints, repetitions=s.repetitions, seed=ctx.seed, pool=ctx.pool,
    )
    ctx.manifest.add_seed("pseudo_update", ctx.seed)
    write_frame(curves_frame({c.label: c for c in curves.values()}), ctx.run_dir / "pseudo_update.csv")
    rows = [{"p_flip": p, "saturated_dkl": c.saturated()} for p, c in curves.items()]
    return EXIT_OK, {"rows": rows}


def cmd_stability(ctx: RunContext) -> CommandResult:
    """Single-run and run-average convergence, plus a no-drift control when drift is configured."""
    s = ctx.cfg.sweep
    backend = _experiment_backend(ctx)
    model = build_hardware(ctx.cfg)
    kwargs = dict(n_visible=s.n_visible, n_hidden=s.n_hidden, n_checkpoints=s.checkpoints, seed=ctx.seed, pool=ctx.pool)
    result = run_stability_experiment(backend, model, s.n_repeats, s.duration_samples, **kwargs)
    curves = {"single_run": result.self_convergence, "run_average": result.average_convergence}
    summary: Dict[str, Any] = {
        "drift_sigma": model.drift_sigma,
        "bias_jitter": model.bias_jitter,
        "run_average_plateau": result.average_convergence.saturated(),
    }
    try:
        summary["single_run_slope"] = result.self_convergence.loglog_slope()
    except ConfigurationError as e:
        logger.bind(action="stability", status="warn").warning(str(e))
    if model.drifts:
        control = run_stability_experiment(backend, replace(model, drift_sigma=0.0, bias_jitter=0.0),
                                           s.n_repeats, s.duration_samples, **kwargs)
        curves["run_average_no_drift"] = control.average_convergence
        summary["no_drift_plateau"] = control.average_convergence.saturated()
    ctx.manifest.add_seed("stability", ctx.seed)
    write_frame(curves_frame(curves), ctx.run_dir / "stability.csv")
    return EXIT_OK, summary


def cmd_diag(ctx: RunContext) -> CommandResult:
    cfg = ctx.cfg
    spec = TFIMSpec(cfg.system.n_spins, cfg.system.J, cfg.system.h)
    solution = exact_ground_state(spec)
    frame = distribution_frame(solution.probabilities, spec.n_spins)
    frame.insert(1, "amplitude", solution.amplitudes)
    write_frame(frame, ctx.run_dir / "psi0.csv")
    obs = observables(solution.probabilities, spec, 0.0)
    fit = obs.correlation_fit
    print(f"E0 = {solution.energy:.12f}")
    return EXIT_OK, {
        "N": spec.n_spins,
        "J": spec.J,
        "h": spec.h,
        "E0": solution.energy,
        "E0_free_fermion": free_fermion_ground_energy(spec),
        "residual": solution.residual,
        "magnetization_x": obs.magnetization_x,
        "xi": fit.xi if fit is not None else float("nan"),
    }


COMMANDS: Dict[str, Callable[[RunContext], CommandResult]] = {
    "train": cmd_train,
    "sample": cmd_sample,
    "calibrate": cmd_calibrate,
    "phase-sweep": cmd_phase_sweep,
    "size-sweep": cmd_size_sweep,
    "resolution": cmd_resolution,
    "pseudo-update": cmd_pseudo_update,
    "stability": cmd_stability,
    "diag": cmd_diag,
}


def run_experiment(cfg: ExperimentConfig, settings: NeuroquansaSettings, *, progress: bool = False) -> CommandResult:
    """Run `cfg.kind`, then write the summary and the manifest whatever the outcome."""
    run_dir = Path(cfg.out_dir) / cfg.kind
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = ResultManifest(config_hash=cfg.config_hash(), kind=cfg.kind)
    atomic_write_text(run_dir / "config.toml", cfg.to_toml())
    started = time.perf_counter()
    logger.bind(action="run", status="start", kind=cfg.kind, backend=cfg.backend).info(
        f"{cfg.kind}: backend={cfg.backend} out={run_dir}"
    )
    with WorkerPool(cfg.jobs) as pool:
        ctx = RunContext(cfg, settings, run_dir, pool, manifest, progress)
        try:
            code, summary = COMMANDS[cfg.kind](ctx)
        except NeuroquansaError as e:
            logger.bind(action="run", status="error", kind=cfg.kind).error(f"{cfg.kind} failed: {e}")
            code, summary = EXIT_RUNTIME_ERROR, {"error": str(e), "error_type": type(e).__name__}
        except Exception as e:
            logger.bind(action="run", status="error", kind=cfg.kind).opt(exception=e).error(f"{cfg.kind} crashed: {e}")
            code, summary = EXIT_RUNTIME_ERROR, {"error": str(e), "error_type": type(e).__name__}

    tables = {"rows": summary.pop("rows")} if isinstance(summary.get("rows"), list) else None
    head = {"kind": cfg.kind, "backend": cfg.backend, "seed": cfg.seed, "config_hash": manifest.config_hash,
            "exit_code": code, "wall_time_s": round(time.perf_counter() - started, 3), **summary}
    write_summary(run_dir, f"neuroquansa {cfg.kind}", head, tables)
    manifest.write(run_dir)
    logger.bind(action="run", status="ok" if code == EXIT_OK else "failed", kind=cfg.kind).info(
        f"{cfg.kind} finished with exit code {code}"
    )
    return code, head
