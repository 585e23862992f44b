"""Binary file formats.

PNPF  "PNPF <channels> <height> <width>\\n" + little-endian float64, (c,h,w) order
PNPB  "PNPB <channels> <height> <width>\\n" + one 0/1 byte per cell (masks)
PNPK  "PNPK <c_out> <c_in> <kh> <kw>\\n" + little-endian float64 kernel weights
k-space data is stored as a two-channel PNPF tensor (real, imaginary).
PGM   8-bit binary greyscale (P5), single channel, for visual inspection
"""
import io
import logging
from pathlib import Path
from typing import BinaryIO, Tuple, Union

import numpy as np

from pnp.core import ComplexImage, ImageTensor
from pnp.exceptions import FormatError, ShapeMismatchError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_DTYPE = np.dtype("<f8")
FORMAT_VERSIONS = {"PNPF": 1, "PNPB": 1, "PNPK": 1, "PNPM": 2}


def _read_header(stream: BinaryIO, magic: str, fields: int) -> Tuple[int, ...]:
    line = stream.readline()
    if not line.endswith(b"\n"):
        raise FormatError(f"Truncated {magic} header")
    parts = line.decode("ascii", errors="replace").split()
    if not parts or parts[0] != magic:
        raise FormatError(f"Expected {magic} header, got {line[:32]!r}")
    if len(parts) != fields + 1:
        raise FormatError(f"{magic} header needs {fields} fields, got {len(parts) - 1}")
    try:
        values = tuple(int(p) for p in parts[1:])
    except ValueError as e:
        raise FormatError(f"Non-integer field in {magic} header: {e}") from e
    if any(v <= 0 for v in values):
        raise FormatError(f"{magic} header fields must be positive: {values}")
    return values


def _read_floats(stream: BinaryIO, count: int, magic: str) -> np.ndarray:
    raw = stream.read(count * FLOAT_DTYPE.itemsize)
    if len(raw) != count * FLOAT_DTYPE.itemsize:
        raise FormatError(f"{magic} payload truncated: expected {count} floats")
    return np.frombuffer(raw, dtype=FLOAT_DTYPE).astype(np.float64)


def encode_tensor(tensor: ImageTensor) -> bytes:
    header = f"PNPF {tensor.channels} {tensor.height} {tensor.width}\n".encode("ascii")
    return header + tensor.data.astype(FLOAT_DTYPE).tobytes(order="C")


def decode_tensor(stream: BinaryIO) -> ImageTensor:
    c, h, w = _read_header(stream, "PNPF", 3)
    return ImageTensor(_read_floats(stream, c * h * w, "PNPF").reshape(c, h, w))


def write_tensor(path: PathLike, tensor: ImageTensor) -> None:
    """Write a tensor in the portable float format."""
    Path(path).write_bytes(encode_tensor(tensor))
    logger.debug(f"Wrote PNPF {tensor.shape} to {path}")


def read_tensor(path: PathLike) -> ImageTensor:
    """Read a tensor written by `write_tensor`; bits round-trip exactly."""
    with open(path, "rb") as stream:
        tensor = decode_tensor(stream)
        if stream.read(1):
            raise FormatError(f"Trailing bytes after PNPF payload in {path}")
    return tensor


def write_complex(path: PathLike, image: ComplexImage) -> None:
    """Write complex data as a (2, h, w) PNPF tensor of real and imaginary parts."""
    write_tensor(path, ImageTensor(np.stack([image.data.real, image.data.imag])))


def read_complex(path: PathLike) -> ComplexImage:
    tensor = read_tensor(path)
    if tensor.channels != 2:
        raise FormatError(f"Complex PNPF payload needs 2 channels, got {tensor.channels}")
    return ComplexImage(tensor.data[0] + 1j * tensor.data[1])

def write_mask(path: PathLike, mask: np.ndarray) -> None:
    """Write a boolean grid (h, w) or (c, h, w) as 0/1 bytes."""
    grid = np.asarray(mask, dtype=bool)
    if grid.ndim == 2:
        grid = grid[np.newaxis]
    if grid.ndim != 3:
        raise ShapeMismatchError(f"Mask must be 2-D or 3-D, got shape {grid.shape}")
    header = "PNPB {} {} {}\n".format(*grid.shape).encode("ascii")
    Path(path).write_bytes(header + grid.astype(np.uint8).tobytes(order="C"))


def read_mask(path: PathLike) -> np.ndarray:
    with open(path, "rb") as stream:
        c, h, w = _read_header(stream, "PNPB", 3)
        raw = stream.read(c * h * w)
    if len(raw) != c * h * w:
        raise FormatError("PNPB payload truncated")
    values = np.frombuffer(raw, dtype=np.uint8)
    if np.any(values > 1):
        raise FormatError("PNPB payload must contain only 0/1 bytes")
    grid = values.reshape(c, h, w).astype(bool)
    return grid[0] if c == 1 else grid


def encode_kernel(weights: np.ndarray) -> bytes:
    if weights.ndim != 4:
        raise ShapeMismatchError(f"Kernel must be 4-D, got shape {weights.shape}")
    header = "PNPK {} {} {} {}\n".format(*weights.shape).encode("ascii")
    return header + np.ascontiguousarray(weights, dtype=FLOAT_DTYPE).tobytes(order="C")


def decode_kernel(stream: BinaryIO) -> np.ndarray:
    shape = _read_header(stream, "PNPK", 4)
    return _read_floats(stream, int(np.prod(shape)), "PNPK").reshape(shape)


def write_kernel(path: PathLike, weights: np.ndarray) -> None:
    Path(path).write_bytes(encode_kernel(weights))


def read_kernel(path: PathLike) -> np.ndarray:
    with open(path, "rb") as stream:
        return decode_kernel(stream)


def encode_floats(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype=FLOAT_DTYPE).tobytes(order="C")


def decode_floats(stream: BinaryIO, count: int, magic: str = "PNPM") -> np.ndarray:
    return _read_floats(stream, count, magic)


def write_pgm(path: PathLike, tensor: ImageTensor, peak: float = 1.0) -> None:
    """Export channel 0 as 8-bit PGM, clamped to [0, peak] then scaled to 0-255."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    scaled = np.clip(tensor.data[0], 0.0, peak) / peak * 255.0
    pixels = np.rint(scaled).astype(np.uint8)
    header = f"P5\n{tensor.width} {tensor.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes(order="C"))


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary PGM written by `write_pgm` into a uint8 array."""
    stream = io.BytesIO(Path(path).read_bytes())
    tokens = []
    while len(tokens) < 4:
        line = stream.readline()
        if not line:
            raise FormatError("Truncated PGM header")
        tokens.extend(line.split(b"#")[0].split())
    if tokens[0] != b"P5":
        raise FormatError("Only binary P5 PGM files are supported")
    width, height = int(tokens[1]), int(tokens[2])
    raw = stream.read(width * height)
    if len(raw) != width * height:
        raise FormatError("PGM payload truncated")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
