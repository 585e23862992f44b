"""Independent numerical oracles for proximal maps, gradients and operator norms.

Used by the `oracle` command and the test suite. Scalar proximal oracles
minimise a differenced objective phi(x) - phi(c), evaluated with log1p/expm1,
so that golden-section search resolves the minimiser to about 1e-12.
"""
import logging
import math
from typing import Callable, Optional

import numpy as np

from pnp.core import ImageTensor
from pnp.exceptions import ConvergenceError
from pnp.fidelity import FidelityModel

logger = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(func: Callable[[float], float], lo: float, hi: float, tol: float = 1e-13,
                   max_iter: int = 400) -> float:
    """Minimiser of a unimodal function on [lo, hi]."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = func(d)
    return 0.5 * (a + b)


def _two_stage(objective: Callable[[float], float], shifted: Callable[[float, float], float],
               lo: float, hi: float) -> float:
    coarse = golden_section(objective, lo, hi, tol=1e-9 * (1.0 + hi))
    width = 1e-5 * (1.0 + abs(coarse))
    a, b = max(lo, coarse - width), min(hi, coarse + width)
    return golden_section(lambda x: shifted(x, coarse), a, b, tol=1e-15 * (1.0 + abs(coarse)))


def poisson_prox_oracle(alpha: float, z: float, y: float) -> float:
    """argmin_x alpha*(x - y log x) + 0.5 (x - z)^2 over x >= 0."""

    def objective(x):
        if x < 0 or (x == 0 and y > 0):
            return math.inf
        log_term = y * math.log(x) if y > 0 else 0.0
        return alpha * (x - log_term) + 0.5 * (x - z) ** 2

    def shifted(x, c):
        if x < 0 or (x == 0 and y > 0):
            return math.inf
        log_term = y * math.log1p((x - c) / c) if y > 0 else 0.0
        return alpha * ((x - c) - log_term) + 0.5 * (x - c) * (x + c - 2.0 * z)

    return _two_stage(objective, shifted, 0.0, abs(z) + alpha * y + 1.0)


def qis_prox_oracle(alpha: float, z: float, k0: float, k1: float, rate: float) -> float:
    """argmin_x alpha*(k0 a x - k1 log(1 - e^{-a x})) + 0.5 (x - z)^2 over x >= 0, a = rate."""
    a = rate

    def objective(x):
        if x < 0 or (x == 0 and k1 > 0):
            return math.inf
        log_term = k1 * math.log(-math.expm1(-a * x)) if k1 > 0 else 0.0
        return alpha * (k0 * a * x - log_term) + 0.5 * (x - z) ** 2

    def shifted(x, c):
        if x < 0 or (x == 0 and k1 > 0):
            return math.inf
        log_term = 0.0
        if k1 > 0:
            # log((1 - e^{-ax}) / (1 - e^{-ac})) without cancellation
            ratio_minus_one = -math.exp(-a * c) * math.expm1(-a * (x - c)) / -math.expm1(-a * c)
            log_term = k1 * math.log1p(ratio_minus_one)
        return alpha * (k0 * a * (x - c) - log_term) + 0.5 * (x - c) * (x + c - 2.0 * z)

    return _two_stage(objective, shifted, 0.0, max(z, 0.0) + alpha * k1 + 1.0)


def gradient_descent_prox(f: FidelityModel, alpha: float, z: ImageTensor, step: Optional[float] = None,
                          max_iter: int = 5000, tol: float = 1e-14) -> ImageTensor:
    """Minimise alpha f(x) + 0.5||x - z||^2 by fixed-step gradient descent (smooth f only)."""
    lip = 1.0 + alpha * (f.lip_grad if f.lip_grad is not None else 1.0)
    step = step or 1.0 / lip
    x = z.data.copy()
    for iteration in range(max_iter):
        g = alpha * f.grad(ImageTensor(x)).data + x - z.data
        x_next = x - step * g
        moved = float(np.linalg.norm(x_next - x))
        x = x_next
        if moved <= tol * (1.0 + float(np.linalg.norm(x))):
            logger.debug(f"Gradient-descent prox oracle converged in {iteration + 1} steps")
            return ImageTensor(x)
    raise ConvergenceError(f"Gradient-descent prox oracle did not converge in {max_iter} steps")


def finite_difference_grad(func: Callable[[ImageTensor], float], x: ImageTensor, step: float = 1e-6) -> ImageTensor:
    """Central differences of a scalar function, one coordinate at a time."""
    base = x.flat().copy()
    grad = np.empty_like(base)
    for index in range(base.size):
        up, down = base.copy(), base.copy()
        up[index] += step
        down[index] -= step
        grad[index] = (func(ImageTensor(up.reshape(x.shape))) - func(ImageTensor(down.reshape(x.shape)))) / (2 * step)
    return ImageTensor(grad.reshape(x.shape))


def relative_error(estimate: np.ndarray, reference: np.ndarray) -> float:
    """||estimate - reference|| / max(||reference||, 1e-12)."""
    reference = np.asarray(reference, dtype=np.float64)
    return float(np.linalg.norm(np.asarray(estimate) - reference) / max(np.linalg.norm(reference), 1e-12))
