"""Command-line experiment harness.

    pnp <train|run|sweep|hist|sncheck|oracle> --config FILE [--seed N] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 certificate or assertion failure.
"""
import argparse
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from pnp.cnn_train import load_model, make_patches, make_phantom, model_from_config, save_model, train
from pnp.config import (
    DenoiserKind,
    ExperimentConfig,
    FidelityKind,
    HistSpec,
    Method,
    NormMode,
    PairScheme,
    Settings,
    TaskType,
    load_experiment_config,
)
from pnp.conv_spectral import (
    ConvKernel,
    conv_adjoint,
    conv_forward,
    dense_sigma,
    power_sigma,
    reshape_sn_sigma,
)
from pnp.core import ImageTensor, inner, make_rng, psnr
from pnp.denoisers import (
    CnnDenoiser,
    Denoiser,
    IdentityDenoiser,
    blur_blend_denoiser,
    estimate_eps,
    iterate_pairs_from_trace,
    orthogonal_residual_denoiser,
    random_pairs,
)
from pnp.exceptions import CertificateError, ConfigError, GuardExceededError, NumericalFailure, PnPError
from pnp.fidelity import (
    FidelityModel,
    MriFidelity,
    MriProblem,
    QisFidelity,
    QisObservation,
    QuadraticFidelity,
    mri_model,
    poisson_model,
    qis_initial_estimate,
    qis_model,
    quadratic_model,
    random_mask,
    simulate_mri,
    simulate_poisson,
    simulate_qis,
    zero_filled,
)
from pnp.logging_config import configure_logging
from pnp.monitoring import metrics_collector, track_stage
from pnp.oracles import (
    finite_difference_grad,
    gradient_descent_prox,
    poisson_prox_oracle,
    qis_prox_oracle,
    relative_error,
)
from pnp.solvers import IterTrace, run
from pnp.storage import ArtifactRepository, read_complex, read_mask, read_tensor
from pnp.theory import contraction_stats, theory_drs, theory_fbs

logger = logging.getLogger(__name__)

EXIT_OK = 0
CERTIFICATE_SLACK = 1e-3
RATIO_SLACK = 1e-6
BOUND_SLACK = 1e-9


@dataclass
class Problem:
    """A reconstruction problem ready to hand to the solver."""

    fidelity: FidelityModel
    init: ImageTensor
    ground_truth: ImageTensor
    peak: float


def _require_path(path: Optional[str], field: str) -> Path:
    if path is None:
        raise ConfigError(f"'{field}' is required", field=field)
    target = Path(path)
    if not target.exists():
        raise ConfigError(f"Referenced file does not exist: {path}", field=field)
    return target


def load_ground_truth(cfg: ExperimentConfig) -> ImageTensor:
    """Configured image (or a seeded phantom) scaled to peak 1."""
    spec = cfg.image
    if spec.path is None:
        return make_phantom(spec.size, cfg.seed, spec.channels)
    image = read_tensor(_require_path(spec.path, "image.path"))
    top = float(image.data.max())
    return image * (1.0 / top) if top > 0 else image


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Fidelity model, starting point and reference for the configured experiment.

    Observations are simulated from the ground truth unless
    fidelity.observation_path points at saved ones.
    """
    x_true = load_ground_truth(cfg)
    spec = cfg.fidelity
    kind = FidelityKind(spec.kind)
    observed = spec.observation_path

    if kind == FidelityKind.QUADRATIC:
        if observed:
            b = read_tensor(_require_path(observed, "fidelity.observation_path"))
        else:
            noise = make_rng(cfg.seed, 0x6A55).standard_normal(x_true.shape)
            b = x_true + ImageTensor(spec.noise_sigma * noise)
        return Problem(quadratic_model(b), b, x_true, 1.0)

    if kind == FidelityKind.POISSON:
        peak = cfg.image.peak
        if observed:
            y = read_tensor(_require_path(observed, "fidelity.observation_path"))
        else:
            y = simulate_poisson(x_true, peak, cfg.seed)
        return Problem(poisson_model(y), y, x_true * peak, peak)

    if kind == FidelityKind.QIS:
        if observed:
            ones = read_tensor(_require_path(observed, "fidelity.observation_path")).data
            obs = QisObservation(spec.oversample - ones, ones, spec.alpha_sg, spec.oversample)
        else:
            obs = simulate_qis(x_true, spec.alpha_sg, spec.oversample, cfg.seed)
        return Problem(qis_model(obs), qis_initial_estimate(obs), x_true, 1.0)

    if x_true.channels != 1:
        raise ConfigError("MRI experiments need a single-channel image", field="image.channels")
    if observed:
        kspace = read_complex(_require_path(f"{observed}.kspace.pnpf", "fidelity.observation_path"))
        mask = read_mask(_require_path(f"{observed}.mask.pnpb", "fidelity.observation_path"))
        problem = MriProblem(mask=mask, y=kspace, noise_sigma=spec.noise_sigma)
    else:
        mask = random_mask(x_true.height, x_true.width, spec.mask_rate, cfg.seed)
        problem = simulate_mri(x_true, mask, spec.noise_sigma, cfg.seed)
    return Problem(mri_model(problem), zero_filled(problem), x_true, 1.0)


def build_denoiser(cfg: ExperimentConfig, shape: Sequence[int], model_path: Optional[str] = None) -> Denoiser:
    spec = cfg.denoiser
    kind = DenoiserKind(spec.kind)
    if model_path is not None:
        kind = DenoiserKind.CNN
    if kind == DenoiserKind.IDENTITY:
        return IdentityDenoiser(spec.sigma)
    if kind == DenoiserKind.ORTHOGONAL:
        return orthogonal_residual_denoiser(spec.eps)
    if kind == DenoiserKind.BLUR_BLEND:
        return blur_blend_denoiser(spec.blend, shape, Settings.DENSE_GUARD)
    path = _require_path(model_path or spec.model_path, "denoiser.model_path")
    return CnnDenoiser(load_model(path), spec.sigma)


def theory_for(f: FidelityModel, d: Denoiser, method: Method, alpha: float) -> Dict[str, Any]:
    """Theoretical bound block; reports why when the theorems do not apply."""
    if d.eps_bound is None:
        return {"applicable": False, "reason": "denoiser has no certified eps"}
    try:
        if Method(method) == Method.FBS:
            bounds = theory_fbs(f.mu, f.lip_grad, d.eps_bound, alpha)
        else:
            bounds = theory_drs(f.mu, d.eps_bound, alpha)
    except PnPError as e:
        logger.warning(f"Theory bounds not applicable: {e}")
        return {"applicable": False, "reason": str(e)}
    block = {"applicable": True, **bounds.to_dict()}
    if isinstance(d, CnnDenoiser) and not d.covers(f.shape[-2], f.shape[-1]):
        block["certified_grid"] = d.model.certified_grid
        block["grid_covered"] = False
    return block


def _contraction_block(trace: IterTrace) -> Dict[str, Any]:
    try:
        return contraction_stats(trace).to_dict()
    except PnPError as e:
        return {"geometric_mean": None, "error": str(e)}


def _trace_sections(trace: IterTrace, f: FidelityModel, d: Denoiser) -> Dict[str, Any]:
    return {
        "trace": trace.summary(),
        "iterations_to_tol": trace.iterations if trace.converged else None,
        "theory": theory_for(f, d, trace.method, trace.alpha),
        "contraction": _contraction_block(trace),
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@track_stage(metrics_collector, "train")
def cmd_train(cfg: ExperimentConfig, raw: Dict[str, Any], repo: ArtifactRepository) -> Dict[str, Any]:
    """Train a residual CNN denoiser; persist the model, loss curve and certification block."""
    started = time.perf_counter()
    train_cfg = cfg.train.model_copy(update={"seed": cfg.seed})
    model = model_from_config(train_cfg)
    data = make_patches(train_cfg.num_patches, train_cfg.patch_size, cfg.seed, train_cfg.image_channels)
    result = train(model, train_cfg, data)
    trained = result.model

    save_model(repo.path("model.pnpm"), trained)
    repo.save_csv("loss.csv", pd.DataFrame(result.loss_curve, columns=["epoch", "mean_loss"]))

    grid = train_cfg.patch_size
    layers = []
    violations = []
    for index, (layer, target) in enumerate(zip(trained.layers, trained.c_targets)):
        try:
            estimate = dense_sigma(layer.kernel, grid, grid, Settings.DENSE_GUARD)
        except GuardExceededError:
            estimate = power_sigma(layer.kernel, grid, grid, steps=5000, seed=cfg.seed, tol=1e-12)
        layers.append({"layer": index, "sigma": estimate.sigma, "method": estimate.method.value, "target": target})
        if NormMode(trained.norm_mode) == NormMode.REAL_SN and estimate.sigma > target * (1.0 + CERTIFICATE_SLACK):
            violations.append(index)

    eps_bound = CnnDenoiser(trained).eps_bound
    summary = {
        "certification": {"grid": grid, "layers": layers, "certified": trained.certified, "eps_bound": eps_bound},
        "final_loss": result.loss_curve[-1][1] if result.loss_curve else None,
    }
    repo.save_summary("summary.json", raw, cfg.seed, time.perf_counter() - started, **summary)
    if violations:
        raise CertificateError(f"Layers {violations} exceed their spectral-norm targets")
    return summary


def save_inputs(repo: ArtifactRepository, problem: Problem) -> Dict[str, Any]:
    """Write the measurement where `fidelity.observation_path` can read it back.

    MRI data goes to `observation.kspace.pnpf` and `observation.mask.pnpb` (the
    path to pass is the `observation` stem), with the zero-filled start as a
    preview image. QIS writes its K1 counts.
    """
    repo.save_image("ground_truth", problem.ground_truth, problem.peak)
    f = problem.fidelity
    if isinstance(f, MriFidelity):
        repo.save_complex("observation.kspace.pnpf", f.problem.y)
        repo.save_mask("observation.mask.pnpb", f.problem.mask)
        repo.save_image("zero_filled", problem.init, problem.peak)
        return {"observation_path": str(repo.path("observation")), "sampling_rate": f.problem.sampling_rate}
    if isinstance(f, QisFidelity):
        repo.save_image("observation", ImageTensor(f.obs.ones_count), float(f.obs.oversample))
    else:
        measurement = f.b if isinstance(f, QuadraticFidelity) else f.y
        repo.save_image("observation", measurement, problem.peak)
    return {"observation_path": str(repo.path("observation.pnpf"))}


@track_stage(metrics_collector, "run")
def cmd_run(cfg: ExperimentConfig, raw: Dict[str, Any], repo: ArtifactRepository) -> Dict[str, Any]:
    """One PnP reconstruction: trace CSV, summary JSON, input/output images."""
    started = time.perf_counter()
    problem = build_problem(cfg)
    d = build_denoiser(cfg, problem.init.shape)
    inputs = save_inputs(repo, problem)

    try:
        trace = run(problem.fidelity, d, cfg.pnp, problem.init, problem.ground_truth, problem.peak)
    except NumericalFailure as e:
        partial = e.partial
        if partial is not None:
            repo.save_csv("trace.csv", partial.to_frame())
            repo.save_summary("summary.json", raw, cfg.seed, time.perf_counter() - started,
                              failed=True, error=str(e), inputs=inputs, trace=partial.summary())
        raise

    repo.save_csv("trace.csv", trace.to_frame())
    repo.save_image("reconstruction", trace.final, problem.peak)
    summary = _trace_sections(trace, problem.fidelity, d)
    summary["failed"] = False
    summary["inputs"] = inputs
    if trace.initial_psnr is not None and trace.final_psnr is not None:
        summary["psnr_gain_db"] = trace.final_psnr - trace.initial_psnr
    repo.save_summary("summary.json", raw, cfg.seed, time.perf_counter() - started, **summary)
    return summary


def _sweep_point(problem: Problem, d: Denoiser, cfg: ExperimentConfig, alpha: float) -> Dict[str, Any]:
    row: Dict[str, Any] = {"alpha": alpha}
    pnp_cfg = cfg.pnp.model_copy(update={"alpha": alpha, "store_iterates": False})
    try:
        trace = run(problem.fidelity, d, pnp_cfg, problem.init, problem.ground_truth, problem.peak)
        stats = contraction_stats(trace)
        row.update(iterations=trace.iterations, converged=trace.converged,
                   geometric_mean=stats.geometric_mean,
                   max_ratio=max(stats.ratios) if stats.ratios else None,
                   final_psnr=trace.final_psnr, error=None)
    except PnPError as e:
        logger.warning(f"Sweep point alpha={alpha} failed: {e}")
        row.update(iterations=None, converged=False, geometric_mean=None, max_ratio=None,
                   final_psnr=None, error=str(e))
    theory = theory_for(problem.fidelity, d, pnp_cfg.method, alpha)
    row["theory_delta"] = theory.get("delta")
    row["theory_feasible"] = theory.get("feasible", False)
    return row


@track_stage(metrics_collector, "sweep")
def cmd_sweep(cfg: ExperimentConfig, raw: Dict[str, Any], repo: ArtifactRepository) -> Dict[str, Any]:
    """Contraction factor against step size, one row per alpha."""
    started = time.perf_counter()
    problem = build_problem(cfg)
    d = build_denoiser(cfg, problem.init.shape)
    workers = min(cfg.sweep.workers or Settings.MAX_WORKERS, len(cfg.sweep.alphas))
    rows = Parallel(n_jobs=workers, prefer="threads")(
        delayed(_sweep_point)(problem, d, cfg, alpha) for alpha in cfg.sweep.alphas
    )
    frame = pd.DataFrame(rows, columns=["alpha", "iterations", "converged", "geometric_mean", "max_ratio",
                                        "theory_delta", "theory_feasible", "final_psnr", "error"])
    repo.save_csv("sweep.csv", frame)

    violations = [row["alpha"] for row in rows
                  if row["theory_feasible"] and row["geometric_mean"] is not None
                  and row["geometric_mean"] > row["theory_delta"] + BOUND_SLACK]
    summary = {
        "method": Method(cfg.pnp.method).value,
        "points": len(rows),
        "failed_points": sum(1 for row in rows if row["error"]),
        "bound_violations": violations,
    }
    repo.save_summary("summary.json", raw, cfg.seed, time.perf_counter() - started, **summary)
    if violations:
        raise CertificateError(f"Empirical contraction exceeds the theoretical bound at alpha={violations}")
    return summary


@track_stage(metrics_collector, "hist")
def cmd_hist(cfg: ExperimentConfig, raw: Dict[str, Any], repo: ArtifactRepository) -> Dict[str, Any]:
    """Histogram of residual ratios ||(H-I)x - (H-I)y|| / ||x - y||."""
    started = time.perf_counter()
    spec = cfg.hist or HistSpec()
    problem = build_problem(cfg)
    d = build_denoiser(cfg, problem.init.shape)
    scheme = PairScheme(spec.pair_scheme)

    trace_block = None
    if scheme == PairScheme.ITERATES_VS_LIMIT:
        pnp_cfg = cfg.pnp.model_copy(update={"store_iterates": True})
        trace = run(problem.fidelity, d, pnp_cfg, problem.init, problem.ground_truth, problem.peak)
        trace_block = trace.summary()
        pairs = iterate_pairs_from_trace(trace)[: spec.num_pairs]
    else:
        pairs = random_pairs(problem.init.shape, spec.num_pairs, cfg.seed, spec.pair_scale)
    if not pairs:
        raise NumericalFailure("No non-degenerate pairs available for the histogram")

    estimate = estimate_eps(d, pairs, scheme)
    counts, edges = estimate.histogram(spec.bins)
    repo.save_csv("hist.csv", pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts}))
    summary: Dict[str, Any] = {
        "pair_scheme": scheme.value,
        "pairs": estimate.count,
        "skipped": estimate.skipped,
        "max_ratio": estimate.max_ratio,
        "eps_bound": d.eps_bound,
        "trace": trace_block,
    }
    if spec.compare_model_path:
        twin = build_denoiser(cfg, problem.init.shape, spec.compare_model_path)
        summary["compare_max_ratio"] = estimate_eps(twin, pairs, scheme).max_ratio
        summary["compare_eps_bound"] = twin.eps_bound
    repo.save_summary("summary.json", raw, cfg.seed, time.perf_counter() - started, **summary)
    if d.eps_bound is not None and estimate.max_ratio > d.eps_bound + RATIO_SLACK:
        raise CertificateError(f"Sampled ratio {estimate.max_ratio:.6f} exceeds eps bound {d.eps_bound:.6f}")
    return summary


@track_stage(metrics_collector, "sncheck")
def cmd_sncheck(cfg: ExperimentConfig, raw: Dict[str, Any], repo: ArtifactRepository) -> Dict[str, Any]:
    """Per-layer power-iteration, reshaped-matrix and dense spectral norms."""
    started = time.perf_counter()
    spec = cfg.sncheck
    model = load_model(_require_path(spec.model_path, "sncheck.model_path"))
    grid = spec.grid
    rows = []
    violations = []
    for index, (layer, target) in enumerate(zip(model.layers, model.c_targets)):
        kernel = layer.kernel
        power = power_sigma(kernel, grid, grid, steps=spec.power_steps, seed=cfg.seed).sigma
        reshape = reshape_sn_sigma(kernel).sigma
        try:
            dense: Optional[float] = dense_sigma(kernel, grid, grid, Settings.DENSE_GUARD).sigma
            note = None
        except GuardExceededError as e:
            dense, note = None, str(e)
            logger.warning(f"Layer {index}: {note}")
        rows.append({
            "layer": index,
            "c_out": kernel.c_out,
            "c_in": kernel.c_in,
            "power_sigma": power,
            "reshape_sigma": reshape,
            "dense_sigma": dense,
            "dense_over_reshape": dense / reshape if dense is not None and reshape > 0 else None,
            "target": target,
            "note": note,
        })
        if (model.certified and NormMode(model.norm_mode) == NormMode.REAL_SN
                and dense is not None and dense > target + CERTIFICATE_SLACK):
            violations.append(index)

    repo.save_csv("sncheck.csv", pd.DataFrame(rows))
    summary = {"grid": grid, "layers": len(rows), "norm_mode": NormMode(model.norm_mode).value,
               "certified": model.certified, "violations": violations}
    repo.save_summary("summary.json", raw, cfg.seed, time.perf_counter() - started, **summary)
    if violations:
        raise CertificateError(f"Layers {violations} exceed their certified spectral norms")
    return summary


def _oracle_rows(cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    cases, size = cfg.oracle.cases, cfg.oracle.size
    rng = make_rng(cfg.seed, 0x0AC1)
    rows = []

    def record(check: str, errors: List[float], tolerance: float) -> None:
        worst = float(max(errors)) if errors else 0.0
        rows.append({"check": check, "cases": len(errors), "max_error": worst,
                     "tolerance": tolerance, "passed": worst <= tolerance})

    errors = []
    for _ in range(cases):
        alpha, z, y = rng.uniform(0.1, 10.0), rng.uniform(-2.0, 3.0), float(rng.integers(0, 6))
        closed = poisson_model(ImageTensor(np.full((1, 1, 1), y))).prox(alpha, ImageTensor(np.full((1, 1, 1), z)))
        errors.append(abs(closed.data.item() - poisson_prox_oracle(alpha, z, y)))
    record("poisson_prox", errors, 1e-8)

    errors = []
    for _ in range(cases):
        oversample = int(rng.integers(1, 17))
        gain = rng.uniform(1.0, 16.0)
        ones = float(rng.integers(0, oversample + 1))
        alpha, z = rng.uniform(0.1, 10.0), rng.uniform(-1.0, 3.0)
        obs = QisObservation(np.full((1, 1, 1), oversample - ones), np.full((1, 1, 1), ones), gain, oversample)
        closed = qis_model(obs).prox(alpha, ImageTensor(np.full((1, 1, 1), z)))
        errors.append(abs(closed.data.item() - qis_prox_oracle(alpha, z, oversample - ones, ones, gain / oversample)))
    record("qis_prox", errors, 1e-8)

    errors = []
    for index in range(min(cases, 10)):
        x_true = ImageTensor(rng.random((1, size, size)))
        problem = simulate_mri(x_true, random_mask(size, size, 0.3, cfg.seed + index), 0.05, cfg.seed + index)
        f = mri_model(problem)
        z = ImageTensor(rng.random((1, size, size)))
        errors.append(relative_error(f.prox(1.0, z).data, gradient_descent_prox(f, 1.0, z).data))
    record("mri_prox", errors, 1e-6)

    errors = []
    x_true = ImageTensor(rng.uniform(0.2, 1.0, (1, size, size)))
    obs = simulate_qis(x_true, 8.0, 8, cfg.seed)
    interior = ImageTensor(rng.uniform(0.5, 1.5, (1, size, size)))
    counts = ImageTensor(rng.integers(0, 5, (1, size, size)).astype(np.float64))
    mask = random_mask(size, size, 0.3, cfg.seed)
    models = [quadratic_model(x_true), poisson_model(counts), qis_model(obs),
              mri_model(simulate_mri(x_true, mask, 0.05, cfg.seed))]
    for f in models:
        errors.append(relative_error(f.grad(interior).data, finite_difference_grad(f.eval, interior).data))
    record("fidelity_gradients", errors, 1e-5)

    power_errors, adjoint_errors, reshape_gaps = [], [], []
    for index in range(min(cases, 50)):
        kernel = ConvKernel(0.3 * rng.standard_normal((2, 2, 3, 3)))
        dense = dense_sigma(kernel, size, size, Settings.DENSE_GUARD).sigma
        power_errors.append(abs(power_sigma(kernel, size, size, steps=500, seed=cfg.seed + index).sigma - dense))
        reshape_gaps.append(max(0.0, reshape_sn_sigma(kernel).sigma - dense))
        x = ImageTensor(rng.standard_normal((2, size, size)))
        u = ImageTensor(rng.standard_normal((2, size, size)))
        adjoint_errors.append(abs(inner(conv_forward(kernel, x), u) - inner(x, conv_adjoint(kernel, u))))
    record("power_vs_dense_sigma", power_errors, 1e-3)
    record("adjoint_identity", adjoint_errors, 1e-10)
    record("reshape_below_dense", reshape_gaps, 1e-9)
    return rows


@track_stage(metrics_collector, "oracle")
def cmd_oracle(cfg: ExperimentConfig, raw: Dict[str, Any], repo: ArtifactRepository) -> Dict[str, Any]:
    """Closed forms against independent numerical oracles."""
    started = time.perf_counter()
    rows = _oracle_rows(cfg)
    repo.save_csv("oracle.csv", pd.DataFrame(rows))
    failed = [row["check"] for row in rows if not row["passed"]]
    summary = {"checks": len(rows), "failed": failed}
    repo.save_summary("summary.json", raw, cfg.seed, time.perf_counter() - started, **summary)
    if failed:
        raise CertificateError(f"Oracle checks failed: {failed}")
    return summary


COMMANDS: Dict[TaskType, Callable[..., Dict[str, Any]]] = {
    TaskType.TRAIN: cmd_train,
    TaskType.RUN: cmd_run,
    TaskType.SWEEP: cmd_sweep,
    TaskType.HIST: cmd_hist,
    TaskType.SNCHECK: cmd_sncheck,
    TaskType.ORACLE: cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pnp", description="Provable plug-and-play reconstruction experiments")
    parser.add_argument("command", choices=[task.value for task in TaskType])
    parser.add_argument("--config", required=True, help="JSON experiment file")
    parser.add_argument("--seed", type=int, default=None, help="Override the config seed")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.add_argument("--log-level", default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        cfg, raw = load_experiment_config(args.config, args.seed)
        command = TaskType(args.command)
        if cfg.task != command:
            raise ConfigError(f"Config task '{cfg.task.value}' does not match command '{command.value}'",
                              field="task")
        out_dir = args.out or cfg.output_dir or str(Path(Settings.OUTPUT_DIR) / command.value)
        repo = ArtifactRepository(out_dir)
        logger.info(f"Running '{command.value}' with seed {cfg.seed}, output in {out_dir}")
        COMMANDS[command](cfg, raw, repo)
    except PnPError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    logger.info("Done")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
