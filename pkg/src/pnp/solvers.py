"""PnP-FBS, PnP-ADMM and PnP-DRS fixed-point engines and the run loop.

ADMM and DRS are the same method under the substitution z = y + u: once
y = Prox(y + u) holds (true after every ADMM step), one ADMM step on
(x, y, u) produces exactly the DRS step on z = y + u.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import pandas as pd

from pnp.config import Method, PnPConfig, Settings
from pnp.core import ImageTensor, check_same_shape, norm2, psnr
from pnp.denoisers import Denoiser
from pnp.exceptions import DomainError, NonFiniteError, NumericalFailure, ShapeMismatchError
from pnp.fidelity import FidelityModel
from pnp.monitoring import RunMetric, metrics_collector, now_iso

logger = logging.getLogger(__name__)

RATIO_FLOOR = 1e-14
PSNR_CHECKPOINTS = (50, 100)
OPERATOR_FORM_TOL = 1e-12


@dataclass(frozen=True)
class AdmmState:
    x: ImageTensor
    y: ImageTensor
    u: ImageTensor

    def __post_init__(self):
        check_same_shape(self.x, self.y)
        check_same_shape(self.y, self.u)


State = Union[ImageTensor, AdmmState]


def fbs_step(f: FidelityModel, d: Denoiser, alpha: float, x: ImageTensor) -> ImageTensor:
    """x' = H(x - alpha * grad f(x))."""
    return d.apply(x - f.grad(x) * alpha)


def admm_step(f: FidelityModel, d: Denoiser, alpha: float, s: AdmmState) -> AdmmState:
    """x' = H(y - u); y' = Prox(x' + u); u' = u + x' - y'."""
    x = d.apply(s.y - s.u)
    y = f.prox(alpha, x + s.u)
    u = s.u + x - y
    return AdmmState(x=x, y=y, u=u)


def drs_step(f: FidelityModel, d: Denoiser, alpha: float, z: ImageTensor,
             check: Optional[bool] = None) -> ImageTensor:
    """z' = z + H(2 Prox(z) - z) - Prox(z)."""
    return drs_step_full(f, d, alpha, z, check)[0]


def drs_step_full(f: FidelityModel, d: Denoiser, alpha: float, z: ImageTensor,
                  check: Optional[bool] = None):
    """(z', x, x_half) with x_half = Prox(z), x = H(2 x_half - z), z' = z + x - x_half.

    With `check` (default: PNP_DEBUG_CHECKS) the result is compared with the
    operator form 0.5 z + 0.5 (2H - I)(2Prox - I) z.
    """
    x_half = f.prox(alpha, z)
    reflected = x_half * 2.0 - z
    x = d.apply(reflected)
    z_next = z + x - x_half
    if Settings.DEBUG_CHECKS if check is None else check:
        operator_form = z * 0.5 + (x * 2.0 - reflected) * 0.5
        gap = norm2(operator_form - z_next)
        if gap > OPERATOR_FORM_TOL * (1.0 + norm2(z)):
            raise NumericalFailure(f"DRS three-line and operator forms disagree by {gap:.3e}")
    return z_next, x, x_half


def admm_to_drs(s: AdmmState) -> ImageTensor:
    """z = y + u.

    Labels: after ADMM step k the pair (y^k, u^k) satisfies y^k = Prox(y^k + u^k),
    which is the DRS half step x^{k+1/2} = Prox(z^k); the ADMM x^k plays the
    role of the previous DRS x, so z^k = y^k + u^k starts the same trajectory.
    """
    return s.y + s.u


def drs_to_admm(f: FidelityModel, alpha: float, z: ImageTensor, x: Optional[ImageTensor] = None) -> AdmmState:
    """Inverse map: y = Prox(z), u = z - y; x is carried along (the next step ignores it)."""
    y = f.prox(alpha, z)
    return AdmmState(x=y if x is None else x, y=y, u=z - y)


@dataclass
class IterRecord:
    iteration: int
    displacement: float
    ratio: Optional[float]
    residual: float
    psnr: Optional[float] = None


@dataclass
class IterTrace:
    """Per-iteration diagnostics of one run.

    `residuals[k-1]` is ||w^k - w^{k-1}|| on the method's own variable (x for
    FBS, z for DRS, z = y + u for ADMM) for every iteration regardless of
    `record_every`; `records` holds the recorded subset with image-estimate
    displacement, Cauchy ratio and PSNR.
    """

    method: Method
    alpha: float
    tol: float
    records: List[IterRecord] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    failed: bool = False
    final: Optional[ImageTensor] = None
    final_state: Optional[State] = None
    iterates: List[ImageTensor] = field(default_factory=list)
    initial_psnr: Optional[float] = None
    psnr_checkpoints: Dict[int, float] = field(default_factory=dict)
    best_psnr: Optional[float] = None
    runtime_s: float = 0.0

    @property
    def final_residual(self) -> Optional[float]:
        return self.residuals[-1] if self.residuals else None

    @property
    def final_psnr(self) -> Optional[float]:
        for record in reversed(self.records):
            if record.psnr is not None:
                return record.psnr
        return None

    def ratios(self) -> List[Optional[float]]:
        """Cauchy ratios residual_k / residual_{k-1}; None where the denominator vanishes.

        For ADMM the ratio against the warm-up step is None as well.
        """
        out: List[Optional[float]] = []
        for k, (previous, current) in enumerate(zip(self.residuals, self.residuals[1:])):
            warm_up = k == 0 and Method(self.method) == Method.ADMM
            out.append(current / previous if previous >= RATIO_FLOOR and not warm_up else None)
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.iteration, r.displacement, r.ratio, r.residual, r.psnr) for r in self.records],
            columns=["iteration", "displacement", "ratio", "residual", "psnr"],
        )

    def summary(self) -> Dict:
        return {
            "method": Method(self.method).value,
            "alpha": self.alpha,
            "tol": self.tol,
            "iterations": self.iterations,
            "converged": self.converged,
            "failed": self.failed,
            "final_residual": self.final_residual,
            "initial_psnr": self.initial_psnr,
            "final_psnr": self.final_psnr,
            "psnr_at": {str(k): v for k, v in sorted(self.psnr_checkpoints.items())},
            "best_psnr": self.best_psnr,
        }


def _initial_state(method: Method, init: ImageTensor) -> State:
    if method == Method.ADMM:
        return AdmmState(x=init, y=init, u=ImageTensor.zeros_like(init))
    return init


def _method_variable(state: State) -> ImageTensor:
    return admm_to_drs(state) if isinstance(state, AdmmState) else state


def _advance(f: FidelityModel, d: Denoiser, method: Method, alpha: float, state: State):
    """(next state, image estimate)."""
    if method == Method.FBS:
        x = fbs_step(f, d, alpha, state)
        return x, x
    if method == Method.DRS:
        z, x, _ = drs_step_full(f, d, alpha, state)
        return z, x
    s = admm_step(f, d, alpha, state)
    return s, s.x


def run(f: FidelityModel, d: Denoiser, cfg: PnPConfig, init: ImageTensor,
        ground_truth: Optional[ImageTensor] = None, peak: float = 1.0) -> IterTrace:
    """Iterate the configured PnP method until the residual drops to tol or max_iter.

    Args:
        f: Data fidelity
        d: Denoiser
        cfg: Method, step size, stopping rule and recording cadence
        init: Starting image (x for FBS, z for DRS, x = y for ADMM with u = 0)
        ground_truth: Optional reference for PSNR columns
        peak: PSNR peak value

    Returns:
        IterTrace

    Raises:
        NumericalFailure: An iterate became non-finite or left the fidelity domain;
            `partial` holds the trace so far
    """
    method = Method(cfg.method)
    if init.shape != f.shape:
        raise ShapeMismatchError(f"Initial image shape {init.shape} does not match fidelity shape {f.shape}")
    trace = IterTrace(method=method, alpha=cfg.alpha, tol=cfg.tol)
    if ground_truth is not None:
        trace.initial_psnr = psnr(init, ground_truth, peak)
    if cfg.store_iterates:
        trace.iterates.append(init)

    started = time.perf_counter()
    state = _initial_state(method, init)
    w_prev = _method_variable(state)
    x_prev = init
    logger.info(f"PnP-{method.value} run: alpha={cfg.alpha}, tol={cfg.tol}, max_iter={cfg.max_iter}")

    for k in range(1, cfg.max_iter + 1):
        try:
            state, x = _advance(f, d, method, cfg.alpha, state)
        except (NonFiniteError, DomainError) as e:
            logger.error(f"Iteration {k} failed: {e}")
            trace.failed = True
            trace.final_state = state
            trace.final = x_prev
            trace.runtime_s = time.perf_counter() - started
            raise NumericalFailure(f"PnP-{method.value} failed at iteration {k}: {e}",
                                   partial=trace) from e

        w = _method_variable(state)
        residual = norm2(w - w_prev)
        displacement = norm2(x - x_prev)
        # the first ADMM step starts from u = 0, off the DRS trajectory
        warm_up = method == Method.ADMM and k == 1
        after_warm_up = method == Method.ADMM and k == 2
        previous = trace.residuals[-1] if trace.residuals and not after_warm_up else None
        ratio = residual / previous if previous is not None and previous >= RATIO_FLOOR else None
        trace.residuals.append(residual)
        trace.iterations = k
        if not math.isfinite(residual):
            logger.error(f"Residual overflowed at iteration {k}")
            trace.failed = True
            trace.final_state = state
            trace.final = x_prev
            trace.runtime_s = time.perf_counter() - started
            raise NumericalFailure(f"Residual overflowed at iteration {k}", partial=trace)

        quality = psnr(x, ground_truth, peak) if ground_truth is not None else None
        if quality is not None:
            if k in PSNR_CHECKPOINTS:
                trace.psnr_checkpoints[k] = quality
            trace.best_psnr = quality if trace.best_psnr is None else max(trace.best_psnr, quality)
        if cfg.store_iterates:
            trace.iterates.append(x)

        done = residual <= cfg.tol and not warm_up
        if k == 1 or k % cfg.record_every == 0 or done or k == cfg.max_iter:
            trace.records.append(IterRecord(k, displacement, ratio, residual, quality))
            logger.debug(f"iter {k}: residual={residual:.3e} displacement={displacement:.3e}")

        w_prev, x_prev = w, x
        if done:
            trace.converged = True
            break

    trace.final = x_prev
    trace.final_state = state
    trace.runtime_s = time.perf_counter() - started
    if trace.converged:
        logger.info(f"PnP-{method.value} converged in {trace.iterations} iterations "
                    f"(residual {trace.final_residual:.3e})")
    else:
        logger.info(f"PnP-{method.value} stopped at max_iter={cfg.max_iter} (residual {trace.final_residual:.3e})")
    metrics_collector.record_run(RunMetric(
        method=method.value, alpha=cfg.alpha, iterations=trace.iterations, converged=trace.converged,
        latency_ms=trace.runtime_s * 1000.0, timestamp=now_iso()))
    return trace


def fixed_point_gap(f: FidelityModel, d: Denoiser, method: Method, alpha: float, state: State) -> float:
    """||w - T(w)|| for the method's own variable at `state`."""
    next_state, _ = _advance(f, d, Method(method), alpha, state)
    return norm2(_method_variable(next_state) - _method_variable(state))

