"""Denoisers H and empirical estimates of the Lipschitz constant of H - I."""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from pnp.cnn_train import SimpleCNNModel, forward
from pnp.config import NormMode, PairScheme
from pnp.conv_spectral import DENSE_GUARD, ConvKernel, averaging_kernel, conv_forward, delta_kernel, dense_sigma
from pnp.core import ImageTensor, make_rng, norm2
from pnp.exceptions import ConvergenceError, DomainError, ShapeMismatchError

logger = logging.getLogger(__name__)

DEGENERATE_PAIR_NORM = 1e-14

Pair = Tuple[ImageTensor, ImageTensor]


class Denoiser(ABC):
    """A map H_sigma with optional certified bound eps on Lip(H - I).

    `eps_bound` is metadata; nothing enforces it at apply time.
    """

    name: str = "denoiser"

    def __init__(self, sigma: float = 0.0, eps_bound: Optional[float] = None):
        self.sigma = sigma
        self.eps_bound = eps_bound

    @abstractmethod
    def apply(self, x: ImageTensor) -> ImageTensor:
        """Denoise x; output has the same shape."""

    def residual(self, x: ImageTensor) -> ImageTensor:
        """(H - I)(x)."""
        return self.apply(x) - x

    def __call__(self, x: ImageTensor) -> ImageTensor:
        return self.apply(x)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(sigma={self.sigma}, eps_bound={self.eps_bound})"


class IdentityDenoiser(Denoiser):
    name = "identity"

    def __init__(self, sigma: float = 0.0):
        super().__init__(sigma=sigma, eps_bound=0.0)

    def apply(self, x: ImageTensor) -> ImageTensor:
        return x


class OrthogonalResidualDenoiser(Denoiser):
    """H(x) = x + eps * Q(x), Q reversing the flattened (c,h,w) coordinates.

    Q is an isometry, so Lip(H - I) = eps with equality on every pair.
    """

    name = "orthogonal"

    def __init__(self, eps: float, sigma: float = 0.0):
        if eps < 0:
            raise DomainError(f"eps must be nonnegative, got {eps}")
        super().__init__(sigma=sigma, eps_bound=float(eps))
        self.eps = float(eps)

    def apply(self, x: ImageTensor) -> ImageTensor:
        reversed_flat = x.flat()[::-1].reshape(x.shape)
        return ImageTensor(x.data + self.eps * reversed_flat)


class BlurBlendDenoiser(Denoiser):
    """H = (1 - lambda) I + lambda B, B the 3x3 per-channel box filter (zero padding)."""

    name = "blur_blend"

    def __init__(self, blend: float, shape: Sequence[int], sigma: float = 0.0, guard: int = DENSE_GUARD):
        if not 0.0 <= blend <= 1.0:
            raise DomainError(f"Blend weight must lie in [0, 1], got {blend}")
        channels, height, width = shape
        self.blend = float(blend)
        self.shape = tuple(shape)
        self.kernel = averaging_kernel(channels, 3)
        eps = 0.0
        if self.blend > 0:
            residual_kernel = ConvKernel(self.kernel.weights - delta_kernel(channels, 3).weights)
            eps = self.blend * dense_sigma(residual_kernel, height, width, guard).sigma
        super().__init__(sigma=sigma, eps_bound=eps)
        logger.debug(f"Blur-blend denoiser lambda={self.blend} on {self.shape}: eps_bound={eps:.6f}")

    def apply(self, x: ImageTensor) -> ImageTensor:
        if x.shape != self.shape:
            raise ShapeMismatchError(f"Blur-blend denoiser was built for {self.shape}, got {x.shape}")
        if self.blend == 0.0:
            return x
        blurred = conv_forward(self.kernel, x)
        return ImageTensor((1.0 - self.blend) * x.data + self.blend * blurred.data)


class CnnDenoiser(Denoiser):
    """H(y) = y - R(y) with R the residual network."""

    name = "cnn"

    def __init__(self, model: SimpleCNNModel, sigma: float = 0.0):
        eps = None
        if NormMode(model.norm_mode) == NormMode.REAL_SN and model.certified:
            eps = float(np.prod(model.c_targets))
        super().__init__(sigma=sigma, eps_bound=eps)
        self.model = model
        self._grid_warned = False

    def covers(self, height: int, width: int) -> bool:
        """Whether the certified bound covers an image of this size."""
        grid = self.model.certified_grid
        return self.eps_bound is None or grid <= 0 or (height <= grid and width <= grid)

    def apply(self, x: ImageTensor) -> ImageTensor:
        if x.channels != self.model.image_channels:
            raise ShapeMismatchError(
                f"Model expects {self.model.image_channels} channels, input has {x.channels}")
        if not self._grid_warned and not self.covers(x.height, x.width):
            logger.warning(f"eps bound {self.eps_bound:.4g} was certified on a {self.model.certified_grid}x"
                           f"{self.model.certified_grid} grid; layer norms on {x.height}x{x.width} may exceed it")
            self._grid_warned = True
        return x - forward(self.model, x)


def orthogonal_residual_denoiser(eps: float) -> OrthogonalResidualDenoiser:
    return OrthogonalResidualDenoiser(eps)


def blur_blend_denoiser(blend: float, shape: Sequence[int], guard: int = DENSE_GUARD) -> BlurBlendDenoiser:
    return BlurBlendDenoiser(blend, shape, guard=guard)


def cnn_denoiser(model: SimpleCNNModel, sigma: float = 0.0) -> CnnDenoiser:
    return CnnDenoiser(model, sigma)


@dataclass
class EpsEstimate:
    """Sampled ratios ||(H-I)x - (H-I)y|| / ||x - y||; max_ratio lower-bounds eps."""

    ratios: List[float]
    max_ratio: float
    pair_scheme: PairScheme
    skipped: int = 0

    @property
    def count(self) -> int:
        return len(self.ratios)

    def histogram(self, bins: int = 50) -> Tuple[np.ndarray, np.ndarray]:
        """(counts, edges) over [0, max_ratio]; a single bin at 0 when all ratios vanish."""
        values = np.asarray(self.ratios)
        upper = self.max_ratio if self.max_ratio > 0 else 1.0
        return np.histogram(values, bins=bins, range=(0.0, upper))


def estimate_eps(d: Denoiser, pairs: Sequence[Pair],
                 pair_scheme: PairScheme = PairScheme.RANDOM_PAIRS) -> EpsEstimate:
    """One residual ratio per non-degenerate pair.

    Args:
        d: Denoiser under test
        pairs: (x, y) image pairs
        pair_scheme: How the pairs were produced (recorded only)

    Returns:
        EpsEstimate; pairs with x = y are skipped and counted
    """
    if not pairs:
        raise DomainError("estimate_eps needs at least one pair")
    ratios = []
    skipped = 0
    for x, y in pairs:
        gap = norm2(x - y)
        if gap < DEGENERATE_PAIR_NORM:
            skipped += 1
            continue
        ratios.append(norm2(d.residual(x) - d.residual(y)) / gap)
    if skipped:
        logger.warning(f"Skipped {skipped} degenerate pair(s) with x = y")
    max_ratio = max(ratios) if ratios else 0.0
    return EpsEstimate(ratios=ratios, max_ratio=max_ratio, pair_scheme=PairScheme(pair_scheme), skipped=skipped)


def iterate_pairs_from_trace(trace) -> List[Pair]:
    """(x^k, x_final) for every stored iterate before the final one.

    Pairs identical to the limit are dropped. The trace must have converged
    and carry stored iterates.
    """
    if not trace.converged:
        raise ConvergenceError("Iterate-vs-limit pairs need a converged trace; use random pairs instead")
    if not trace.iterates:
        raise DomainError("Trace has no stored iterates; run with store_iterates enabled")
    limit = trace.iterates[-1]
    return [(x, limit) for x in trace.iterates[:-1] if norm2(x - limit) >= DEGENERATE_PAIR_NORM]


def random_pairs(shape: Sequence[int], count: int, seed: int, scale: float = 0.1,
                 center: Optional[ImageTensor] = None) -> List[Pair]:
    """Pairs (x, x + scale*n) with x uniform on [0, 1) (or center + scale*n) and n standard normal."""
    rng = make_rng(seed, 0x9A15)
    pairs = []
    for _ in range(count):
        if center is None:
            x = rng.random(tuple(shape))
        else:
            x = center.data + scale * rng.standard_normal(center.shape)
        y = x + scale * rng.standard_normal(x.shape)
        pairs.append((ImageTensor(x), ImageTensor(y)))
    return pairs
