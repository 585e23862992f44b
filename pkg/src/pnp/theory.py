"""Contraction bounds for PnP-FBS and PnP-DRS/ADMM, and empirical checks against them."""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from pnp.config import Method
from pnp.core import ImageTensor, inner, norm2
from pnp.exceptions import DomainError, InvalidConstantsError, TheoryNotApplicable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TheoryBounds:
    """Contraction coefficient at a step size plus the admissible step-size interval.

    `alpha_range` is the open interval on which delta < 1 (None when empty);
    `feasible` says whether such a step size exists at all.
    """

    delta: float
    alpha_range: Optional[Tuple[float, float]]
    feasible: bool

    @property
    def contracts(self) -> bool:
        return self.delta < 1.0

    def to_dict(self) -> dict:
        return {"delta": self.delta, "alpha_range": list(self.alpha_range) if self.alpha_range else None,
                "feasible": self.feasible}


def _require_strong_convexity(mu: Optional[float]) -> float:
    if mu is None:
        raise TheoryNotApplicable("Strong convexity constant is unknown for this fidelity")
    if mu <= 0:
        raise TheoryNotApplicable(f"Fidelity is not strongly convex (mu={mu})")
    return float(mu)


def theory_fbs(mu: Optional[float], L: Optional[float], eps: float, alpha: float) -> TheoryBounds:
    """delta = max(|1 - alpha mu|, |1 - alpha L|) (1 + eps).

    The admissible interval is eps/(mu(1+eps)) < alpha < (2+eps)/(L(1+eps)),
    non-empty iff eps < 2 mu / (L - mu) (always when L = mu).
    """
    mu = _require_strong_convexity(mu)
    if L is None:
        raise TheoryNotApplicable("Gradient Lipschitz constant is unknown for this fidelity")
    if L < mu:
        raise InvalidConstantsError(f"Need mu <= L, got mu={mu}, L={L}")
    if eps < 0 or not math.isfinite(eps):
        raise InvalidConstantsError(f"eps must be finite and nonnegative, got {eps}")
    if alpha <= 0:
        raise InvalidConstantsError(f"Step size must be positive, got {alpha}")

    delta = max(abs(1.0 - alpha * mu), abs(1.0 - alpha * L)) * (1.0 + eps)
    feasible = L == mu or eps < 2.0 * mu / (L - mu)
    alpha_range = None
    if feasible:
        alpha_range = (eps / (mu * (1.0 + eps)), (2.0 + eps) / (L * (1.0 + eps)))
    return TheoryBounds(delta=delta, alpha_range=alpha_range, feasible=feasible)


def drs_alpha_threshold(mu: float, eps: float) -> Optional[float]:
    """eps / ((1 + eps - 2 eps^2) mu); None when eps >= 1."""
    if eps >= 1.0:
        return None
    return eps / ((1.0 + eps - 2.0 * eps * eps) * mu)


def theory_drs(mu: Optional[float], eps: float, alpha: float) -> TheoryBounds:
    """delta = (1 + eps + eps a + 2 eps^2 a) / (1 + a + 2 eps a) with a = alpha*mu.

    Contraction for every alpha above the threshold when eps < 1; the same
    bound covers PnP-ADMM through the z = y + u substitution.
    """
    mu = _require_strong_convexity(mu)
    if eps < 0 or not math.isfinite(eps):
        raise InvalidConstantsError(f"eps must be finite and nonnegative, got {eps}")
    if alpha <= 0:
        raise InvalidConstantsError(f"Step size must be positive, got {alpha}")

    a = alpha * mu
    delta = (1.0 + eps + eps * a + 2.0 * eps * eps * a) / (1.0 + a + 2.0 * eps * a)
    threshold = drs_alpha_threshold(mu, eps)
    feasible = threshold is not None and alpha > threshold
    alpha_range = (threshold, math.inf) if threshold is not None else None
    return TheoryBounds(delta=delta, alpha_range=alpha_range, feasible=feasible)


@dataclass
class ContractionStats:
    ratios: List[float]
    geometric_mean: Optional[float]
    excluded: int = 0
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"geometric_mean": self.geometric_mean, "steps": len(self.ratios),
                "excluded": self.excluded, "degenerate": self.degenerate,
                "max_ratio": max(self.ratios) if self.ratios else None}


def contraction_stats(trace, floor: float = 1e-14) -> ContractionStats:
    """Per-step Cauchy ratios of the trace residuals and their geometric mean.

    ADMM traces already record residuals on z = y + u; their first step starts
    from u = 0, which is not yet on the DRS trajectory, so it is skipped. A
    trace whose first step did not move is degenerate (empty ratios).

    Raises:
        DomainError: Fewer than three iterates and not converged at start
    """
    residuals = list(trace.residuals)
    if Method(trace.method) == Method.ADMM:
        residuals = residuals[1:]
    if residuals and residuals[0] < floor:
        logger.warning("Trace converged at its starting point; contraction ratios are undefined")
        return ContractionStats(ratios=[], geometric_mean=None, degenerate=True)
    if len(residuals) < 2:
        raise DomainError(f"Contraction statistics need at least 3 iterates, trace has {len(residuals) + 1}")

    ratios, excluded = [], 0
    for previous, current in zip(residuals, residuals[1:]):
        if previous < floor:
            excluded += 1
            continue
        ratios.append(current / previous)
    if not ratios:
        return ContractionStats(ratios=[], geometric_mean=None, excluded=excluded, degenerate=True)
    values = np.asarray(ratios)
    geometric_mean = 0.0 if np.any(values == 0) else float(np.exp(np.mean(np.log(values))))
    return ContractionStats(ratios=ratios, geometric_mean=geometric_mean, excluded=excluded)


Operator = Callable[[ImageTensor], ImageTensor]


def averagedness_margin(tx: ImageTensor, ty: ImageTensor, x: ImageTensor, y: ImageTensor, theta: float) -> float:
    """||Tx-Ty||^2 + (1-2 theta)||x-y||^2 - 2(1-theta)<Tx-Ty, x-y>; <= 0 iff the pair is theta-averaged."""
    dt = tx - ty
    dx = x - y
    return norm2(dt) ** 2 + (1.0 - 2.0 * theta) * norm2(dx) ** 2 - 2.0 * (1.0 - theta) * inner(dt, dx)


def averagedness_check(operator: Operator, theta: float, pairs: Sequence[Tuple[ImageTensor, ImageTensor]]) -> float:
    """Worst averagedness margin of `operator` over `pairs`.

    A result <= tolerance certifies theta-averagedness on the sample.
    """
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    if not pairs:
        raise DomainError("averagedness_check needs at least one pair")
    return max(averagedness_margin(operator(x), operator(y), x, y, theta) for x, y in pairs)


def lipschitz_ratio(operator: Operator, pairs: Sequence[Tuple[ImageTensor, ImageTensor]]) -> float:
    """max ||Tx - Ty|| / ||x - y|| over non-degenerate pairs."""
    worst = 0.0
    for x, y in pairs:
        gap = norm2(x - y)
        if gap > 0:
            worst = max(worst, norm2(operator(x) - operator(y)) / gap)
    return worst
