"""Convolution operators and their spectral norms.

Convolutions are stride-1 cross-correlations with zero padding of width
(k-1)/2, so output spatial shape equals input spatial shape. Because the
padding is not circular, the exact operator norm is obtained by dense
materialisation rather than Fourier diagonalisation.
"""
import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pnp.core import ImageTensor, make_rng
from pnp.exceptions import GuardExceededError, NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

DENSE_GUARD = 4096
GRAM_TOL = 1e-10
UNIT_TOL = 1e-12
_ZERO_NORM = 1e-300
RITZ_WINDOW = 16


class SigmaMethod(str, Enum):
    """How a spectral norm estimate was obtained."""
    POWER_CONV = "power_conv"
    DENSE_SVD = "dense_svd"
    RESHAPE_SN = "reshape_sn"


@dataclass(frozen=True, eq=False)
class ConvKernel:
    """4-D kernel (c_out, c_in, kh, kw) with odd spatial extent."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 4:
            raise ShapeMismatchError(f"Kernel must be 4-D (c_out,c_in,kh,kw), got shape {w.shape}")
        if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
            raise ShapeMismatchError(f"Kernel spatial size must be odd, got {w.shape[2]}x{w.shape[3]}")
        if not np.all(np.isfinite(w)):
            raise NonFiniteError("Kernel weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def kh(self) -> int:
        return self.weights.shape[2]

    @property
    def kw(self) -> int:
        return self.weights.shape[3]

    def scaled(self, factor: float) -> "ConvKernel":
        return ConvKernel(self.weights * factor)

    def adjoint_weights(self) -> np.ndarray:
        """Channels permuted and spatial axes rotated by 180 degrees."""
        return np.ascontiguousarray(self.weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


@dataclass(frozen=True, eq=False)
class PowerIterState:
    """Leading singular vector estimates: U (c_out,h,w), V (c_in,h,w), both unit norm."""

    U: np.ndarray
    V: np.ndarray
    steps: int = 0
    reinitialized: bool = False


@dataclass(frozen=True)
class SigmaEstimate:
    sigma: float
    iterations: int
    method: SigmaMethod


# ---------------------------------------------------------------------------
# batched convolution primitives, arrays shaped (n, c, h, w)
# ---------------------------------------------------------------------------

def pad_windows(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Zero-pad (n,c,h,w) and return (n,c,h,w,kh,kw) sliding windows."""
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(padded, (kh, kw), axis=(2, 3))


def correlate(weights: np.ndarray, x: np.ndarray, windows: Optional[np.ndarray] = None) -> np.ndarray:
    """Zero-padded stride-1 cross-correlation of a batch (n,c_in,h,w)."""
    if x.shape[1] != weights.shape[1]:
        raise ShapeMismatchError(f"Kernel expects {weights.shape[1]} input channels, got {x.shape[1]}")
    if windows is None:
        windows = pad_windows(x, weights.shape[2], weights.shape[3])
    return np.einsum("oiab,nihwab->nohw", weights, windows, optimize=True)


def correlate_adjoint(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Adjoint of `correlate` applied to a batch (n,c_out,h,w)."""
    if u.shape[1] != weights.shape[0]:
        raise ShapeMismatchError(f"Adjoint expects {weights.shape[0]} channels, got {u.shape[1]}")
    flipped = np.ascontiguousarray(weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return correlate(flipped, u)


def kernel_gradient(windows: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """d(sum grad_out * correlate(W, x)) / dW given the input windows."""
    return np.einsum("nohw,nihwab->oiab", grad_out, windows, optimize=True)


# ---------------------------------------------------------------------------
# single-image operators
# ---------------------------------------------------------------------------

def conv_forward(k: ConvKernel, x: ImageTensor) -> ImageTensor:
    """Apply the convolution operator K to an image."""
    if x.channels != k.c_in:
        raise ShapeMismatchError(f"Kernel expects {k.c_in} channels, image has {x.channels}")
    return ImageTensor(correlate(k.weights, x.data[np.newaxis])[0])


def conv_adjoint(k: ConvKernel, u: ImageTensor) -> ImageTensor:
    """Apply K* (permuted, rotated kernel, same padding)."""
    if u.channels != k.c_out:
        raise ShapeMismatchError(f"Adjoint expects {k.c_out} channels, image has {u.channels}")
    return ImageTensor(correlate_adjoint(k.weights, u.data[np.newaxis])[0])


def init_power_state(k: ConvKernel, height: int, width: int, seed: int = 0, layer_index: int = 0) -> PowerIterState:
    """Seeded standard-normal U, V normalised to unit length."""
    rng = make_rng(seed, 0x5EC7, layer_index)
    U = rng.standard_normal((k.c_out, height, width))
    V = rng.standard_normal((k.c_in, height, width))
    return PowerIterState(U=U / np.linalg.norm(U), V=V / np.linalg.norm(V))


def power_step(k: ConvKernel, s: PowerIterState, seed: int = 0) -> PowerIterState:
    """One power-method step: V <- K*U/|K*U|, U <- KV/|KV|.

    If the operator annihilates the state, the vectors are redrawn from seeded
    noise and the returned state is flagged.
    """
    if s.U.shape[0] != k.c_out or s.V.shape[0] != k.c_in:
        raise ShapeMismatchError("Power iteration state does not match kernel channels")
    reinitialized = False
    U = s.U
    for attempt in range(3):
        V = correlate_adjoint(k.weights, U[np.newaxis])[0]
        v_norm = np.linalg.norm(V)
        if v_norm > _ZERO_NORM:
            V = V / v_norm
            U_next = correlate(k.weights, V[np.newaxis])[0]
            u_norm = np.linalg.norm(U_next)
            if u_norm > _ZERO_NORM:
                return PowerIterState(U=U_next / u_norm, V=V, steps=s.steps + 1,
                                      reinitialized=reinitialized or s.reinitialized)
        logger.warning(f"Power iteration hit a zero vector (attempt {attempt + 1}); reinitializing")
        rng = make_rng(seed, 0x5EC7, s.steps, attempt)
        U = rng.standard_normal(s.U.shape)
        U = U / np.linalg.norm(U)
        reinitialized = True
    # operator is zero: keep a valid unit state, sigma reads as 0
    V = make_rng(seed, 0x5EC8).standard_normal(s.V.shape)
    return PowerIterState(U=U, V=V / np.linalg.norm(V), steps=s.steps + 1, reinitialized=True)


def sigma_from_state(k: ConvKernel, s: PowerIterState) -> SigmaEstimate:
    """Rayleigh estimate <U, K V>."""
    KV = correlate(k.weights, s.V[np.newaxis])[0]
    sigma = float(np.vdot(s.U, KV))
    return SigmaEstimate(sigma=sigma, iterations=s.steps, method=SigmaMethod.POWER_CONV)


def ritz_sigma(k: ConvKernel, vectors: Sequence[np.ndarray]) -> float:
    """Largest singular value of K restricted to span(vectors), a lower bound on sigma.

    Over the last few power iterates the span is a Krylov space of K*K, so the
    value is at least the Rayleigh estimate of the newest iterate.
    """
    basis, _ = np.linalg.qr(np.stack([v.reshape(-1) for v in vectors], axis=1))
    images = basis.T.reshape(-1, *vectors[0].shape)
    restricted = correlate(k.weights, images).reshape(basis.shape[1], -1).T
    sigma, _ = matrix_spectral_norm(restricted)
    return sigma


def power_sigma(k: ConvKernel, height: int, width: int, steps: int = 500, seed: int = 0,
                tol: Optional[float] = None, state: Optional[PowerIterState] = None) -> SigmaEstimate:
    """Run power steps from a fresh (or given) state and return the final estimate.

    With `tol`, stops early once successive estimates agree to tol relative.
    The returned sigma is refined by `ritz_sigma` over the last RITZ_WINDOW
    right vectors.
    """
    s = state or init_power_state(k, height, width, seed)
    window: Deque[np.ndarray] = deque(maxlen=RITZ_WINDOW)
    previous = None
    estimate = SigmaEstimate(0.0, 0, SigmaMethod.POWER_CONV)
    for _ in range(steps):
        s = power_step(k, s, seed)
        window.append(s.V)
        estimate = sigma_from_state(k, s)
        if tol is not None and previous is not None and abs(estimate.sigma - previous) <= tol * max(estimate.sigma, _ZERO_NORM):
            break
        previous = estimate.sigma
    if window:
        refined = ritz_sigma(k, list(window))
        if refined > estimate.sigma:
            estimate = SigmaEstimate(sigma=refined, iterations=s.steps, method=SigmaMethod.POWER_CONV)
    return estimate


def normalize_kernel(k: ConvKernel, sigma: SigmaEstimate, c: float = 1.0, project: bool = False) -> ConvKernel:
    """Rescale weights to spectral norm c: weights * c / sigma.

    Args:
        k: Kernel to normalise
        sigma: Estimated spectral norm of k
        c: Target norm
        project: Only shrink (weights * min(1, c/sigma)) instead of dividing unconditionally
    """
    if sigma.sigma <= 0:
        raise ValueError(f"Cannot normalize by non-positive sigma {sigma.sigma}")
    if c <= 0:
        raise ValueError(f"Target norm must be positive, got {c}")
    factor = c / sigma.sigma
    if project:
        factor = min(1.0, factor)
    return k.scaled(factor)


def _gram_top_eigenvalue(gram: np.ndarray, tol: float = GRAM_TOL, max_squarings: int = 64) -> tuple:
    """Largest eigenvalue of a PSD matrix by trace-normalised repeated squaring.

    Each squaring doubles the effective power; the Rayleigh quotient of the
    dominant column converges from below. Returns (eigenvalue, squarings).
    """
    gram = 0.5 * (gram + gram.T)
    if not np.any(gram):
        return 0.0, 0
    B = gram / np.trace(gram)
    previous = -np.inf
    estimate = 0.0
    for squarings in range(1, max_squarings + 1):
        column = B[:, int(np.argmax(np.diag(B)))]
        norm_sq = float(column @ column)
        if norm_sq > 0:
            estimate = float(column @ gram @ column) / norm_sq
        if abs(estimate - previous) <= tol * max(estimate, _ZERO_NORM):
            return estimate, squarings
        previous = estimate
        B = B @ B
        B = 0.5 * (B + B.T)
        trace = np.trace(B)
        if trace <= 0:
            break
        B /= trace
    return estimate, max_squarings


def matrix_spectral_norm(matrix: np.ndarray, tol: float = GRAM_TOL) -> tuple:
    """(sigma_max, squarings) of a dense matrix via its smaller Gram matrix."""
    m = np.asarray(matrix, dtype=np.float64)
    gram = m.T @ m if m.shape[1] <= m.shape[0] else m @ m.T
    eigenvalue, squarings = _gram_top_eigenvalue(gram, tol)
    return float(np.sqrt(max(eigenvalue, 0.0))), squarings


def dense_matrix(k: ConvKernel, height: int, width: int, guard: int = DENSE_GUARD, chunk: int = 256) -> np.ndarray:
    """Materialise K as a (c_out*h*w, c_in*h*w) matrix, column by column."""
    n_in = k.c_in * height * width
    if n_in > guard:
        raise GuardExceededError(f"Dense materialisation of {n_in} columns exceeds guard {guard}")
    columns = []
    for start in range(0, n_in, chunk):
        stop = min(start + chunk, n_in)
        basis = np.zeros((stop - start, n_in))
        basis[np.arange(stop - start), np.arange(start, stop)] = 1.0
        images = correlate(k.weights, basis.reshape(-1, k.c_in, height, width))
        columns.append(images.reshape(stop - start, -1).T)
    return np.concatenate(columns, axis=1)


def dense_sigma(k: ConvKernel, height: int, width: int, guard: int = DENSE_GUARD) -> SigmaEstimate:
    """Exact operator norm of K on an h x w zero-padded grid."""
    sigma, squarings = matrix_spectral_norm(dense_matrix(k, height, width, guard))
    return SigmaEstimate(sigma=sigma, iterations=squarings, method=SigmaMethod.DENSE_SVD)


def reshape_sn_sigma(k: ConvKernel) -> SigmaEstimate:
    """Norm of the kernel reshaped to (c_out, c_in*kh*kw), the classic SN estimate."""
    sigma, squarings = matrix_spectral_norm(k.weights.reshape(k.c_out, -1))
    return SigmaEstimate(sigma=sigma, iterations=squarings, method=SigmaMethod.RESHAPE_SN)


def averaging_kernel(channels: int = 1, size: int = 3) -> ConvKernel:
    """Per-channel uniform averaging kernel (block diagonal across channels)."""
    w = np.zeros((channels, channels, size, size))
    for c in range(channels):
        w[c, c] = 1.0 / (size * size)
    return ConvKernel(w)


def delta_kernel(channels: int = 1, size: int = 3) -> ConvKernel:
    """Identity operator as a convolution kernel."""
    w = np.zeros((channels, channels, size, size))
    for c in range(channels):
        w[c, c, size // 2, size // 2] = 1.0
    return ConvKernel(w)
