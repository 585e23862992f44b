"""SimpleCNN residual denoiser: forward pass, backprop, Adam and spectral normalisation.

The network predicts the noise R(y); the denoiser is H(y) = y - R(y).
Layers are zero-padded stride-1 convolutions with ReLU between them and no
activation after the last one. No pooling, no batch normalisation.
"""
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from pnp.config import NormMode, TrainConfig
from pnp.conv_spectral import (
    DENSE_GUARD,
    ConvKernel,
    PowerIterState,
    SigmaEstimate,
    correlate,
    correlate_adjoint,
    dense_sigma,
    init_power_state,
    kernel_gradient,
    normalize_kernel,
    pad_windows,
    power_sigma,
    power_step,
    reshape_sn_sigma,
    sigma_from_state,
)
from pnp.core import ImageTensor, make_rng
from pnp.exceptions import FormatError, NumericalFailure, ShapeMismatchError
from pnp.monitoring import TrainStepMetric, metrics_collector
from pnp.storage.formats import FORMAT_VERSIONS, decode_floats, decode_kernel, encode_floats, encode_kernel

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PNPM_VERSION = FORMAT_VERSIONS["PNPM"]


@dataclass(frozen=True, eq=False)
class ConvLayer:
    kernel: ConvKernel
    bias: np.ndarray

    def __post_init__(self):
        bias = np.array(self.bias, dtype=np.float64, copy=True).reshape(-1)
        if bias.shape[0] != self.kernel.c_out:
            raise ShapeMismatchError(f"Bias length {bias.shape[0]} != c_out {self.kernel.c_out}")
        bias.setflags(write=False)
        object.__setattr__(self, "bias", bias)


@dataclass(frozen=True, eq=False)
class SimpleCNNModel:
    """Residual CNN; `certified` marks weights normalised by the final realSN pass.

    `certified_grid` is the square grid side the norms were certified on (0 if
    unknown). Zero-padded operator norms grow with the grid, so the bound only
    covers images no larger than that.
    """

    layers: Tuple[ConvLayer, ...]
    norm_mode: NormMode = NormMode.NONE
    c_targets: Tuple[float, ...] = ()
    certified: bool = False
    certified_grid: int = 0

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeMismatchError("A model needs at least one layer")
        for index in range(1, len(layers)):
            if layers[index].kernel.c_in != layers[index - 1].kernel.c_out:
                raise ShapeMismatchError(
                    f"Layer {index} expects {layers[index].kernel.c_in} channels, "
                    f"layer {index - 1} produces {layers[index - 1].kernel.c_out}")
        if layers[0].kernel.c_in != layers[-1].kernel.c_out:
            raise ShapeMismatchError("First layer input channels must equal last layer output channels")
        targets = tuple(float(c) for c in self.c_targets) or tuple([1.0] * len(layers))
        if len(targets) != len(layers):
            raise ShapeMismatchError(f"{len(targets)} c_targets for {len(layers)} layers")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "c_targets", targets)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def image_channels(self) -> int:
        return self.layers[0].kernel.c_in

    @property
    def hidden_channels(self) -> int:
        return self.layers[0].kernel.c_out if self.depth > 1 else self.image_channels

    @property
    def lipschitz_target(self) -> float:
        return float(np.prod(self.c_targets))

    def kernels(self) -> List[np.ndarray]:
        return [layer.kernel.weights for layer in self.layers]

    def biases(self) -> List[np.ndarray]:
        return [layer.bias for layer in self.layers]

    def with_parameters(self, kernels: Sequence[np.ndarray], biases: Sequence[np.ndarray], **changes) -> "SimpleCNNModel":
        layers = tuple(ConvLayer(ConvKernel(w), b) for w, b in zip(kernels, biases))
        return replace(self, layers=layers, **changes)


@dataclass
class Gradients:
    kernels: List[np.ndarray]
    biases: List[np.ndarray]
    loss: float


@dataclass
class AdamState:
    """First/second moments per parameter, mirroring parameter shapes."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_parameters(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


@dataclass(frozen=True, eq=False)
class PatchSet:
    """Clean training patches (n, channels, size, size) with values in [0, 1]."""

    patches: np.ndarray
    size: int
    seed: int

    def __len__(self) -> int:
        return self.patches.shape[0]

    def tensors(self) -> List[ImageTensor]:
        return [ImageTensor(p) for p in self.patches]


@dataclass
class TrainResult:
    model: SimpleCNNModel
    loss_curve: List[Tuple[int, float]]
    step_losses: List[float] = field(default_factory=list)
    layer_sigmas: List[SigmaEstimate] = field(default_factory=list)


def build_model(depth: int = 4, hidden_channels: int = 8, image_channels: int = 1, kernel_size: int = 3,
                norm_mode: NormMode = NormMode.NONE, c_targets: Optional[Sequence[float]] = None,
                seed: int = 0) -> SimpleCNNModel:
    """He-normal initialised model with zero biases."""
    rng = make_rng(seed, 0xC0DE)
    layers = []
    for index in range(depth):
        c_in = image_channels if index == 0 else hidden_channels
        c_out = image_channels if index == depth - 1 else hidden_channels
        std = math.sqrt(2.0 / (c_in * kernel_size * kernel_size))
        weights = std * rng.standard_normal((c_out, c_in, kernel_size, kernel_size))
        layers.append(ConvLayer(ConvKernel(weights), np.zeros(c_out)))
    return SimpleCNNModel(tuple(layers), norm_mode=norm_mode, c_targets=tuple(c_targets or [1.0] * depth))


def _forward_arrays(kernels: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray):
    """Batched forward pass; returns (output, per-layer windows, pre-activations)."""
    windows, pre = [], []
    a = x
    last = len(kernels) - 1
    for index, (w, b) in enumerate(zip(kernels, biases)):
        win = pad_windows(a, w.shape[2], w.shape[3])
        z = correlate(w, a, win) + b[np.newaxis, :, np.newaxis, np.newaxis]
        windows.append(win)
        pre.append(z)
        a = z if index == last else np.maximum(z, 0.0)
    return a, windows, pre


def forward_batch(m: SimpleCNNModel, ys: np.ndarray) -> np.ndarray:
    if ys.ndim != 4 or ys.shape[1] != m.image_channels:
        raise ShapeMismatchError(f"Expected batch (n,{m.image_channels},h,w), got {ys.shape}")
    out, _, _ = _forward_arrays(m.kernels(), m.biases(), ys)
    return out


def forward(m: SimpleCNNModel, y: ImageTensor) -> ImageTensor:
    """Residual R(y); the denoised image is y - R(y)."""
    if y.channels != m.image_channels:
        raise ShapeMismatchError(f"Model expects {m.image_channels} channels, image has {y.channels}")
    return ImageTensor(forward_batch(m, y.data[np.newaxis])[0])


def _backward_arrays(kernels, biases, ys: np.ndarray, targets: np.ndarray) -> Gradients:
    out, windows, pre = _forward_arrays(kernels, biases, ys)
    if targets.shape != out.shape:
        raise ShapeMismatchError(f"Target shape {targets.shape} != output shape {out.shape}")
    g = out - targets
    loss = 0.5 * float(np.sum(g * g))
    kernel_grads: List[np.ndarray] = [None] * len(kernels)
    bias_grads: List[np.ndarray] = [None] * len(kernels)
    for index in range(len(kernels) - 1, -1, -1):
        kernel_grads[index] = kernel_gradient(windows[index], g)
        bias_grads[index] = g.sum(axis=(0, 2, 3))
        if index > 0:
            g = correlate_adjoint(kernels[index], g) * (pre[index - 1] > 0.0)
    return Gradients(kernels=kernel_grads, biases=bias_grads, loss=loss)


def backward_batch(m: SimpleCNNModel, ys: np.ndarray, target_residuals: np.ndarray) -> Gradients:
    """Gradients of 0.5 * sum ||R(y_n) - e_n||^2 over the batch (ReLU'(0) = 0)."""
    return _backward_arrays(m.kernels(), m.biases(), ys, target_residuals)


def backward(m: SimpleCNNModel, y: ImageTensor, target_residual: ImageTensor) -> Gradients:
    """Single-sample gradients of 0.5 * ||R(y) - e||^2."""
    return backward_batch(m, y.data[np.newaxis], target_residual.data[np.newaxis])


def adam_update(params: List[np.ndarray], grads: List[np.ndarray], state: AdamState, lr: float) -> List[np.ndarray]:
    """One bias-corrected Adam step; moments are updated in place."""
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    updated = []
    for index, (p, g) in enumerate(zip(params, grads)):
        state.m[index] = state.beta1 * state.m[index] + (1.0 - state.beta1) * g
        state.v[index] = state.beta2 * state.v[index] + (1.0 - state.beta2) * g * g
        m_hat = state.m[index] / correction1
        v_hat = state.v[index] / correction2
        updated.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return updated


def _draw_piecewise_constant(rng: np.random.Generator, channels: int, height: int, width: int) -> np.ndarray:
    """Random background plus 2-5 axis-aligned rectangles of random intensity."""
    image = np.full((channels, height, width), rng.uniform(0.0, 1.0))
    for _ in range(int(rng.integers(2, 6))):
        top, bottom = sorted(rng.integers(0, height + 1, size=2))
        left, right = sorted(rng.integers(0, width + 1, size=2))
        if bottom == top:
            bottom = min(height, top + 1)
        if right == left:
            right = min(width, left + 1)
        image[:, top:bottom, left:right] = rng.uniform(0.0, 1.0)
    return image


def make_patches(n: int, size: int = 16, seed: int = 0, channels: int = 1) -> PatchSet:
    """Synthetic piecewise-constant training patches, deterministic in seed."""
    if n <= 0 or size <= 0:
        raise ValueError(f"n and size must be positive, got n={n}, size={size}")
    rng = make_rng(seed, 0xDA7A)
    patches = np.stack([_draw_piecewise_constant(rng, channels, size, size) for _ in range(n)])
    return PatchSet(patches=patches, size=size, seed=seed)


def make_phantom(size: int = 32, seed: int = 0, channels: int = 1, peak: float = 1.0) -> ImageTensor:
    """Piecewise-constant test image scaled so its maximum equals `peak`."""
    image = _draw_piecewise_constant(make_rng(seed, 0x1A6E), channels, size, size)
    top = image.max()
    return ImageTensor(image * (peak / top) if top > 0 else image)


def _layer_sigma(kernel: ConvKernel, state: Optional[PowerIterState], size: int, seed: int, index: int,
                 guard: int) -> SigmaEstimate:
    if kernel.c_in * size * size <= guard:
        return dense_sigma(kernel, size, size, guard)
    return power_sigma(kernel, size, size, steps=5000, seed=seed, tol=1e-12,
                       state=state or init_power_state(kernel, size, size, seed, index))


def certify_layers(m: SimpleCNNModel, size: int, seed: int = 0, project: bool = False,
                   states: Optional[Sequence[PowerIterState]] = None,
                   guard: int = DENSE_GUARD) -> Tuple[SimpleCNNModel, List[SigmaEstimate]]:
    """Normalise every kernel by its converged norm on a size x size grid.

    Uses the dense oracle within the guard and converged power iteration
    otherwise. Returns the certified model and the post-normalisation sigmas.
    """
    kernels, sigmas = [], []
    for index, (layer, c) in enumerate(zip(m.layers, m.c_targets)):
        state = states[index] if states else None
        sigma = _layer_sigma(layer.kernel, state, size, seed, index, guard)
        factor = 1.0
        if sigma.sigma > 0:
            factor = c / sigma.sigma
            if project:
                factor = min(1.0, factor)
        kernels.append(layer.kernel.scaled(factor).weights)
        # operator norm is homogeneous in the kernel scale
        after = SigmaEstimate(sigma.sigma * factor, sigma.iterations, sigma.method)
        sigmas.append(after)
        logger.info(f"Layer {index}: sigma {sigma.sigma:.6f} -> {after.sigma:.6f} (target {c})")
    return m.with_parameters(kernels, m.biases(), certified=True, certified_grid=size), sigmas


def train(m: SimpleCNNModel, cfg: TrainConfig, data: PatchSet) -> TrainResult:
    """Train on Gaussian denoising of `data` with optional spectral normalisation.

    Each minibatch: (realSN) one power step + Rayleigh sigma + normalisation per
    layer, (reshapeSN) normalisation by the reshaped-matrix norm, then
    forward/backward on the normalised weights and an Adam update.

    Args:
        m: Initial model
        cfg: Training protocol
        data: Clean patches

    Returns:
        TrainResult with the trained model and the (epoch, mean_loss) curve
    """
    if data.patches.shape[1] != m.image_channels:
        raise ShapeMismatchError(f"Patches have {data.patches.shape[1]} channels, model expects {m.image_channels}")
    norm_mode = NormMode(cfg.norm_mode)
    if cfg.epochs == 0:
        logger.info("Zero epochs requested; model unchanged")
        return TrainResult(model=m, loss_curve=[])

    rng = make_rng(cfg.seed, 0x7EA1)
    size = data.size
    kernels = [w.copy() for w in m.kernels()]
    biases = [b.copy() for b in m.biases()]
    targets = m.c_targets
    states = [init_power_state(layer.kernel, size, size, cfg.seed, index) for index, layer in enumerate(m.layers)]
    adam = AdamState.for_parameters(kernels + biases)
    n_kernels = len(kernels)
    pixels = int(np.prod(data.patches.shape[1:]))

    loss_curve: List[Tuple[int, float]] = []
    step_losses: List[float] = []
    logger.info(f"Training depth-{m.depth} model ({norm_mode.value}) on {len(data)} patches for {cfg.epochs} epochs")

    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate if epoch < cfg.epochs / 2 else cfg.decayed_learning_rate
        order = rng.permutation(len(data))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = data.patches[order[start:start + cfg.batch_size]]

            if norm_mode == NormMode.REAL_SN:
                for index in range(n_kernels):
                    kernel = ConvKernel(kernels[index])
                    states[index] = power_step(kernel, states[index], cfg.seed)
                    sigma = sigma_from_state(kernel, states[index])
                    if sigma.sigma > 0:
                        kernels[index] = normalize_kernel(kernel, sigma, targets[index], cfg.project).weights
            elif norm_mode == NormMode.RESHAPE_SN:
                for index in range(n_kernels):
                    kernel = ConvKernel(kernels[index])
                    sigma = reshape_sn_sigma(kernel)
                    if sigma.sigma > 0:
                        kernels[index] = normalize_kernel(kernel, sigma, targets[index], cfg.project).weights

            noise = cfg.noise_sigma * rng.standard_normal(batch.shape)
            grads = _backward_arrays(kernels, biases, batch + noise, noise)
            scale = 1.0 / (batch.shape[0] * pixels)
            mse = 2.0 * grads.loss * scale
            if not math.isfinite(mse):
                logger.error(f"Loss diverged at epoch {epoch}, step {len(step_losses)}")
                raise NumericalFailure(f"Training loss is not finite at epoch {epoch}",
                                       partial=TrainResult(model=m, loss_curve=loss_curve, step_losses=step_losses))
            params = adam_update(kernels + biases,
                                 [g * scale for g in grads.kernels + grads.biases], adam, lr)
            kernels, biases = params[:n_kernels], params[n_kernels:]
            epoch_losses.append(mse)
            step_losses.append(mse)
            metrics_collector.record_train_step(TrainStepMetric(epoch=epoch, step=len(step_losses), loss=mse))

        mean_loss = float(np.mean(epoch_losses))
        loss_curve.append((epoch, mean_loss))
        logger.info(f"Epoch {epoch}: mean loss {mean_loss:.6e} (lr {lr:g})")

    trained = m.with_parameters(kernels, biases)
    layer_sigmas: List[SigmaEstimate] = []
    if norm_mode == NormMode.REAL_SN:
        trained, layer_sigmas = certify_layers(trained, size, cfg.seed, cfg.project, states)
    elif norm_mode == NormMode.RESHAPE_SN:
        final = []
        for index, layer in enumerate(trained.layers):
            sigma = reshape_sn_sigma(layer.kernel)
            final.append(normalize_kernel(layer.kernel, sigma, targets[index], cfg.project).weights
                         if sigma.sigma > 0 else layer.kernel.weights)
        trained = trained.with_parameters(final, trained.biases())
    return TrainResult(model=trained, loss_curve=loss_curve, step_losses=step_losses, layer_sigmas=layer_sigmas)


def model_from_config(cfg: TrainConfig) -> SimpleCNNModel:
    return build_model(cfg.depth, cfg.hidden_channels, cfg.image_channels, cfg.kernel_size,
                       NormMode(cfg.norm_mode), cfg.layer_targets(), cfg.seed)


# ---------------------------------------------------------------------------
# PNPM model files
# ---------------------------------------------------------------------------

def encode_model(m: SimpleCNNModel) -> bytes:
    """PNPM header, per-layer c_l floats, then PNPK kernel + bias blocks."""
    header = (f"PNPM {PNPM_VERSION} {m.depth} {m.image_channels} {m.hidden_channels} "
              f"{NormMode(m.norm_mode).value} {int(m.certified)} {m.certified_grid}\n").encode("ascii")
    parts = [header, encode_floats(np.asarray(m.c_targets))]
    for layer in m.layers:
        parts.append(encode_kernel(layer.kernel.weights))
        parts.append(encode_floats(layer.bias))
    return b"".join(parts)


def decode_model(payload: bytes) -> SimpleCNNModel:
    stream = io.BytesIO(payload)
    fields = stream.readline().decode("ascii", errors="replace").split()
    # version 1 headers predate the certified grid field
    if len(fields) not in (7, 8) or fields[0] != "PNPM":
        raise FormatError("Expected 'PNPM <version> <depth> <channels> <hidden> <norm_mode> <certified> "
                          "<certified_grid>' header")
    try:
        version, depth = int(fields[1]), int(fields[2])
        norm_mode = NormMode(fields[5])
        certified = bool(int(fields[6]))
        certified_grid = int(fields[7]) if len(fields) == 8 else 0
    except ValueError as e:
        raise FormatError(f"Malformed PNPM header: {e}") from e
    if version not in (1, PNPM_VERSION) or len(fields) != (7 if version == 1 else 8):
        raise FormatError(f"Unsupported PNPM version {version} with {len(fields)} header fields")
    c_targets = tuple(decode_floats(stream, depth))
    layers = []
    for _ in range(depth):
        weights = decode_kernel(stream)
        bias = decode_floats(stream, weights.shape[0])
        layers.append(ConvLayer(ConvKernel(weights), bias))
    if stream.read(1):
        raise FormatError("Trailing bytes after PNPM payload")
    return SimpleCNNModel(tuple(layers), norm_mode=norm_mode, c_targets=c_targets, certified=certified,
                          certified_grid=certified_grid)


def save_model(path: Union[str, Path], m: SimpleCNNModel) -> None:
    Path(path).write_bytes(encode_model(m))
    logger.info(f"Model saved to {path}")


def load_model(path: Union[str, Path]) -> SimpleCNNModel:
    m = decode_model(Path(path).read_bytes())
    logger.info(f"Model loaded from {path} (depth {m.depth}, {NormMode(m.norm_mode).value})")
    return m
