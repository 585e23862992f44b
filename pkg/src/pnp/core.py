"""Tensor containers, norms, PSNR and seeded random streams.

All arithmetic is 64-bit floating point. Images are stored row-major in
(channels, height, width) order project-wide.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from pnp.exceptions import NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 200.0

Scalar = Union[int, float, np.floating]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """Real (channels, height, width) image; immutable once constructed."""

    data: np.ndarray

    def __post_init__(self):
        array = np.array(self.data, dtype=np.float64, copy=True)
        if array.ndim == 2:
            array = array[np.newaxis]
        if array.ndim != 3:
            raise ShapeMismatchError(f"ImageTensor needs 3 dimensions (c,h,w), got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NonFiniteError("ImageTensor entries must be finite")
        object.__setattr__(self, "data", _frozen(array))

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "ImageTensor":
        return cls(np.zeros((channels, height, width)))

    @classmethod
    def full(cls, value: float, channels: int, height: int, width: int) -> "ImageTensor":
        return cls(np.full((channels, height, width), float(value)))

    @classmethod
    def zeros_like(cls, other: "ImageTensor") -> "ImageTensor":
        return cls(np.zeros(other.shape))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def flat(self) -> np.ndarray:
        """Row-major view of all entries."""
        return self.data.reshape(-1)

    def map(self, fn) -> "ImageTensor":
        """Apply an array function and wrap the result."""
        return ImageTensor(fn(self.data))

    def _operand(self, other):
        if isinstance(other, ImageTensor):
            check_same_shape(self, other)
            return other.data
        return other

    def __add__(self, other):
        return ImageTensor(self.data + self._operand(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ImageTensor(self.data - self._operand(other))

    def __rsub__(self, other):
        return ImageTensor(self._operand(other) - self.data)

    def __mul__(self, other):
        return ImageTensor(self.data * self._operand(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ImageTensor(self.data / self._operand(other))

    def __neg__(self):
        return ImageTensor(-self.data)

    def __repr__(self) -> str:
        return f"ImageTensor(shape={self.shape}, norm={norm2(self):.6g})"


@dataclass(frozen=True, eq=False)
class ComplexImage:
    """Complex (height, width) array, k-space or image domain."""

    data: np.ndarray

    def __post_init__(self):
        array = np.array(self.data, dtype=np.complex128, copy=True)
        if array.ndim != 2:
            raise ShapeMismatchError(f"ComplexImage needs 2 dimensions (h,w), got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NonFiniteError("ComplexImage entries must be finite")
        object.__setattr__(self, "data", _frozen(array))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape


def check_same_shape(a: ImageTensor, b: ImageTensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Shape mismatch: {a.shape} vs {b.shape}")


def norm2(a: ImageTensor) -> float:
    """Euclidean norm over all entries."""
    return float(np.linalg.norm(a.flat()))


def inner(a: ImageTensor, b: ImageTensor) -> float:
    """Sum of elementwise products."""
    check_same_shape(a, b)
    return float(np.dot(a.flat(), b.flat()))


def psnr(x: ImageTensor, ref: ImageTensor, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 200 dB for exact matches.

    Args:
        x: Reconstruction
        ref: Reference image
        peak: Peak intensity of the reference scale

    Returns:
        10*log10(peak^2 / MSE)
    """
    check_same_shape(x, ref)
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((x.data - ref.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic generator for a 64-bit seed and an optional stream path.

    Identical (seed, stream) pairs always produce identical sequences; distinct
    stream paths give statistically independent generators.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))


def random_image(rng: np.random.Generator, shape: Sequence[int], scale: float = 1.0) -> ImageTensor:
    """Standard-normal image scaled by `scale`."""
    return ImageTensor(scale * rng.standard_normal(tuple(shape)))
