"""Data-fidelity terms f: value, gradient, proximal map and convexity constants.

`mu` (strong convexity) and `lip_grad` (Lipschitz constant of the gradient)
are None when unknown; theory bounds refuse to guess them.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pnp.core import ComplexImage, ImageTensor, check_same_shape, make_rng
from pnp.exceptions import ConvergenceError, DomainError, ShapeMismatchError

logger = logging.getLogger(__name__)

QIS_NEWTON_MAX_ITER = 100
QIS_NEWTON_TOL = 1e-10
QIS_NEWTON_POLISH = 2


class FidelityModel(ABC):
    """Interface of a data-fidelity term f."""

    name: str = "fidelity"
    mu: Optional[float] = None
    lip_grad: Optional[float] = None

    @abstractmethod
    def eval(self, x: ImageTensor) -> float:
        """f(x); +inf outside the domain."""

    @abstractmethod
    def grad(self, x: ImageTensor) -> ImageTensor:
        """Gradient of f at x."""

    @abstractmethod
    def prox(self, alpha: float, z: ImageTensor) -> ImageTensor:
        """argmin_x alpha*f(x) + 0.5*||x - z||^2."""

    @property
    @abstractmethod
    def shape(self) -> tuple:
        """Shape of the images f acts on."""

    def prox_objective(self, alpha: float, z: ImageTensor, x: ImageTensor) -> float:
        value = self.eval(x)
        if not np.isfinite(value):
            return float("inf")
        return alpha * value + 0.5 * float(np.sum((x.data - z.data) ** 2))

    def _check(self, x: ImageTensor) -> None:
        if x.shape != self.shape:
            raise ShapeMismatchError(f"{self.name} expects shape {self.shape}, got {x.shape}")


class QuadraticFidelity(FidelityModel):
    """f(x) = 0.5*||x - b||^2, with mu = L = 1."""

    name = "quadratic"
    mu = 1.0
    lip_grad = 1.0

    def __init__(self, b: ImageTensor):
        self.b = b

    @property
    def shape(self) -> tuple:
        return self.b.shape

    def eval(self, x: ImageTensor) -> float:
        self._check(x)
        return 0.5 * float(np.sum((x.data - self.b.data) ** 2))

    def grad(self, x: ImageTensor) -> ImageTensor:
        self._check(x)
        return x - self.b

    def prox(self, alpha: float, z: ImageTensor) -> ImageTensor:
        self._check(z)
        if alpha < 0:
            raise DomainError(f"Step size must be nonnegative, got {alpha}")
        return ImageTensor((z.data + alpha * self.b.data) / (1.0 + alpha))


def quadratic_model(b: ImageTensor) -> QuadraticFidelity:
    return QuadraticFidelity(b)


def _validate_counts(values: np.ndarray, label: str) -> np.ndarray:
    if np.any(values < 0) or np.any(values != np.round(values)):
        raise DomainError(f"{label} must contain nonnegative integers")
    return values


class PoissonFidelity(FidelityModel):
    """Negative Poisson log-likelihood, elementwise l(x; y) = -y log x + x.

    l = +inf when x < 0 or (x = 0 and y > 0); l(0; 0) = 0. The gradient at
    x = 0 is set to 0, even where it is undefined (y > 0).
    """

    name = "poisson"

    def __init__(self, y: ImageTensor):
        _validate_counts(y.data, "Poisson observations")
        self.y = y

    @property
    def shape(self) -> tuple:
        return self.y.shape

    def eval(self, x: ImageTensor) -> float:
        self._check(x)
        xs, ys = x.data, self.y.data
        if np.any(xs < 0) or np.any((xs == 0) & (ys > 0)):
            return float("inf")
        positive = xs > 0
        logs = np.zeros_like(xs)
        logs[positive] = np.log(xs[positive])
        return float(np.sum(-ys * logs + xs))

    def grad(self, x: ImageTensor) -> ImageTensor:
        self._check(x)
        xs, ys = x.data, self.y.data
        if np.any(xs < 0):
            raise DomainError("Poisson gradient undefined at negative intensities")
        g = np.zeros_like(xs)
        positive = xs > 0
        g[positive] = 1.0 - ys[positive] / xs[positive]
        return ImageTensor(g)

    def prox(self, alpha: float, z: ImageTensor) -> ImageTensor:
        """0.5*(z - alpha + sqrt((z - alpha)^2 + 4*alpha*y)), evaluated without cancellation."""
        self._check(z)
        if alpha <= 0:
            raise DomainError(f"Poisson prox needs a positive step size, got {alpha}")
        d = z.data - alpha
        root = np.sqrt(d * d + 4.0 * alpha * self.y.data)
        out = np.empty_like(d)
        upper = d >= 0
        out[upper] = 0.5 * (d[upper] + root[upper])
        lower = ~upper
        denom = root[lower] - d[lower]
        out[lower] = 2.0 * alpha * self.y.data[lower] / denom
        return ImageTensor(out)


def poisson_model(y: ImageTensor) -> PoissonFidelity:
    return PoissonFidelity(y)


@dataclass(frozen=True, eq=False)
class QisObservation:
    """Per-unit-pixel photon counts from a binary single-photon sensor."""

    zeros_count: np.ndarray
    ones_count: np.ndarray
    sensor_gain: float
    oversample: int

    def __post_init__(self):
        zeros = _validate_counts(np.array(self.zeros_count, dtype=np.float64), "K0 counts")
        ones = _validate_counts(np.array(self.ones_count, dtype=np.float64), "K1 counts")
        if zeros.ndim == 2:
            zeros, ones = zeros[np.newaxis], ones[np.newaxis]
        if zeros.shape != ones.shape or zeros.ndim != 3:
            raise ShapeMismatchError(f"K0/K1 shapes differ or are not (c,h,w): {zeros.shape} vs {ones.shape}")
        if self.sensor_gain <= 0:
            raise DomainError(f"Sensor gain must be positive, got {self.sensor_gain}")
        if self.oversample < 1:
            raise DomainError(f"Oversampling factor must be a positive integer, got {self.oversample}")
        if np.any(zeros + ones != self.oversample):
            raise DomainError("K0 + K1 must equal the oversampling factor K for every pixel")
        for array in (zeros, ones):
            array.setflags(write=False)
        object.__setattr__(self, "zeros_count", zeros)
        object.__setattr__(self, "ones_count", ones)

    @property
    def shape(self) -> tuple:
        return self.ones_count.shape

    @property
    def rate(self) -> float:
        """alpha_sg / K, the per-subpixel photon rate per unit intensity."""
        return self.sensor_gain / self.oversample


class QisFidelity(FidelityModel):
    """f(x) = sum_j K0_j*a*x_j - K1_j*log(1 - exp(-a*x_j)), a = alpha_sg/K."""

    name = "qis"

    def __init__(self, obs: QisObservation):
        self.obs = obs
        self._a = obs.rate

    @property
    def shape(self) -> tuple:
        return self.obs.shape

    def eval(self, x: ImageTensor) -> float:
        self._check(x)
        xs, k0, k1 = x.data, self.obs.zeros_count, self.obs.ones_count
        if np.any(xs < 0) or np.any((xs == 0) & (k1 > 0)):
            return float("inf")
        a = self._a
        terms = k0 * a * xs
        hits = k1 > 0
        terms[hits] -= k1[hits] * np.log(-np.expm1(-a * xs[hits]))
        return float(np.sum(terms))

    def _check_domain(self, xs: np.ndarray) -> None:
        if np.any(xs < 0):
            raise DomainError("QIS fidelity undefined at negative intensities")
        if np.any((xs == 0) & (self.obs.ones_count > 0)):
            raise DomainError("QIS fidelity needs x > 0 wherever photons were detected")

    def grad(self, x: ImageTensor) -> ImageTensor:
        """(a)*(K0 - K1/(exp(a*x) - 1))."""
        self._check(x)
        xs = x.data
        self._check_domain(xs)
        a, k0, k1 = self._a, self.obs.zeros_count, self.obs.ones_count
        g = a * k0
        hits = k1 > 0
        g = g.copy()
        g[hits] -= a * k1[hits] / np.expm1(a * xs[hits])
        return ImageTensor(g)

    def prox(self, alpha: float, z: ImageTensor) -> ImageTensor:
        """Per-pixel safeguarded Newton on alpha*f'(x) + x - z = 0 with bisection fallback."""
        self._check(z)
        if alpha <= 0:
            raise DomainError(f"QIS prox needs a positive step size, got {alpha}")
        a = self._a
        zs = z.data.reshape(-1)
        k0 = self.obs.zeros_count.reshape(-1)
        k1 = self.obs.ones_count.reshape(-1)
        out = np.empty_like(zs)

        # no detections: f is linear, minimiser is the shifted z clipped at 0
        linear = k1 == 0
        out[linear] = np.maximum(zs[linear] - alpha * a * k0[linear], 0.0)

        hits = ~linear
        if np.any(hits):
            out[hits] = self._newton(alpha, zs[hits], k0[hits], k1[hits])
        return ImageTensor(out.reshape(z.shape))

    def _newton(self, alpha: float, z: np.ndarray, k0: np.ndarray, k1: np.ndarray) -> np.ndarray:
        a = self._a

        def residual(x):
            return alpha * a * (k0 - k1 / np.expm1(a * x)) + x - z

        def slope(x):
            # f'' = a^2 K1 e^{ax}/(e^{ax}-1)^2, written to avoid overflow
            return 1.0 + alpha * a * a * k1 / (np.expm1(a * x) * -np.expm1(-a * x))

        lo = np.zeros_like(z)
        hi = np.maximum(z, 0.0) + 1.0
        for _ in range(200):
            short = residual(hi) <= 0
            if not np.any(short):
                break
            hi[short] *= 2.0
        else:
            raise ConvergenceError("Could not bracket the QIS prox root")

        x = 0.5 * (lo + hi)
        active = np.ones_like(z, dtype=bool)
        for iteration in range(QIS_NEWTON_MAX_ITER):
            r = residual(x)
            lo = np.where(r < 0, x, lo)
            hi = np.where(r > 0, x, hi)
            step = r / slope(x)
            candidate = x - step
            outside = (candidate <= lo) | (candidate >= hi) | ~np.isfinite(candidate)
            candidate = np.where(outside, 0.5 * (lo + hi), candidate)
            change = np.abs(candidate - x)
            x = np.where(active, candidate, x)
            active = active & (change > QIS_NEWTON_TOL * np.maximum(1.0, np.abs(x))) & (r != 0)
            if not np.any(active):
                logger.debug(f"QIS prox converged in {iteration + 1} Newton iterations")
                return self._polish(residual, slope, x, lo, hi)
        raise ConvergenceError(f"QIS prox Newton did not converge in {QIS_NEWTON_MAX_ITER} iterations")

    @staticmethod
    def _polish(residual, slope, x, lo, hi):
        """Extra Newton steps inside the bracket; quadratic convergence takes x to rounding level."""
        for _ in range(QIS_NEWTON_POLISH):
            candidate = x - residual(x) / slope(x)
            inside = np.isfinite(candidate) & (candidate >= lo) & (candidate <= hi)
            x = np.where(inside, candidate, x)
        return x


def qis_model(obs: QisObservation) -> QisFidelity:
    return QisFidelity(obs)


def fft2c(image: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT."""
    return np.fft.fft2(image, norm="ortho")


def ifft2c(kspace: np.ndarray) -> np.ndarray:
    """Inverse unitary 2-D DFT."""
    return np.fft.ifft2(kspace, norm="ortho")


def conjugate_mirror(grid: np.ndarray) -> np.ndarray:
    """grid[-k mod n] for a 2-D k-space grid."""
    return np.roll(np.flip(grid, axis=(0, 1)), shift=1, axis=(0, 1))


@dataclass(frozen=True, eq=False)
class MriProblem:
    """Single-coil Cartesian-grid k-space data sampled on a boolean mask."""

    mask: np.ndarray
    y: ComplexImage
    noise_sigma: float = 0.0

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != self.y.shape:
            raise ShapeMismatchError(f"Mask shape {mask.shape} != k-space shape {self.y.shape}")
        if np.any(self.y.data[~mask] != 0):
            raise DomainError("k-space data must be zero off the sampling mask")
        if self.noise_sigma < 0:
            raise DomainError(f"Noise level must be nonnegative, got {self.noise_sigma}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def sampling_rate(self) -> float:
        return float(self.mask.mean())


class MriFidelity(FidelityModel):
    """f(x) = 0.5*||y - M F x||^2 for real images x (single channel).

    Restricted to real x, the normal operator is F* M_s F with the symmetrised
    mask M_s = (M + mirror(M))/2, so mu = min(M_s) (0 once a conjugate pair is
    unsampled) and L = max(M_s).
    """

    name = "mri"

    def __init__(self, problem: MriProblem):
        self.problem = problem
        mask = problem.mask.astype(np.float64)
        self._mask = mask
        self._mask_sym = 0.5 * (mask + conjugate_mirror(mask))
        self._back = np.real(ifft2c(problem.y.data))  # Re(F* M* y)
        self.mu = float(self._mask_sym.min())
        self.lip_grad = float(self._mask_sym.max())

    @property
    def shape(self) -> tuple:
        return (1,) + self.problem.y.shape

    def eval(self, x: ImageTensor) -> float:
        self._check(x)
        r = self._mask * fft2c(x.data[0]) - self.problem.y.data
        return 0.5 * float(np.sum(np.abs(r) ** 2))

    def grad(self, x: ImageTensor) -> ImageTensor:
        self._check(x)
        normal = np.real(ifft2c(self._mask * fft2c(x.data[0])))
        return ImageTensor((normal - self._back)[np.newaxis])

    def prox(self, alpha: float, z: ImageTensor) -> ImageTensor:
        """F*((F z + alpha F b) / (1 + alpha M_s)), b = Re(F* y)."""
        self._check(z)
        if alpha < 0:
            raise DomainError(f"Step size must be nonnegative, got {alpha}")
        rhs = fft2c(z.data[0] + alpha * self._back)
        return ImageTensor(np.real(ifft2c(rhs / (1.0 + alpha * self._mask_sym)))[np.newaxis])


def mri_model(p: MriProblem) -> MriFidelity:
    return MriFidelity(p)


def random_mask(height: int, width: int, rate: float, seed: int) -> np.ndarray:
    """round(rate*h*w) sampled positions, uniform without replacement; DC always sampled."""
    if not 0.0 < rate <= 1.0:
        raise DomainError(f"Sampling rate must lie in (0, 1], got {rate}")
    total = height * width
    count = max(1, int(np.floor(rate * total + 0.5)))
    flat = np.zeros(total, dtype=bool)
    flat[0] = True
    others = make_rng(seed, 0x3A5C).choice(total - 1, size=count - 1, replace=False) + 1
    flat[others] = True
    return flat.reshape(height, width)


# ---------------------------------------------------------------------------
# observation simulators
# ---------------------------------------------------------------------------

def simulate_poisson(x_true: ImageTensor, peak: float, seed: int) -> ImageTensor:
    """y_i ~ Poisson(peak * x_i) for an image normalised to peak 1."""
    if peak <= 0:
        raise DomainError(f"Photon peak must be positive, got {peak}")
    rng = make_rng(seed, 0x9015)
    return ImageTensor(rng.poisson(np.maximum(x_true.data * peak, 0.0)).astype(np.float64))


def simulate_qis(x_true: ImageTensor, sensor_gain: float, oversample: int, seed: int) -> QisObservation:
    """K1_j ~ Binomial(K, 1 - exp(-alpha_sg*x_j/K)): thresholded Poisson sub-pixel counts."""
    rng = make_rng(seed, 0x0715)
    p_one = -np.expm1(-sensor_gain * np.maximum(x_true.data, 0.0) / oversample)
    ones = rng.binomial(oversample, p_one).astype(np.float64)
    return QisObservation(zeros_count=oversample - ones, ones_count=ones,
                          sensor_gain=sensor_gain, oversample=oversample)


def simulate_mri(x_true: ImageTensor, mask: np.ndarray, noise_sigma: float, seed: int) -> MriProblem:
    """y = M (F x + sigma_e * complex white noise), unit-variance noise split over re/im."""
    if x_true.channels != 1:
        raise ShapeMismatchError("MRI simulation needs a single-channel image")
    rng = make_rng(seed, 0x3121)
    noise = (rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)) / np.sqrt(2.0)
    kspace = (fft2c(x_true.data[0]) + noise_sigma * noise) * mask
    return MriProblem(mask=mask, y=ComplexImage(kspace), noise_sigma=noise_sigma)


def qis_initial_estimate(obs: QisObservation) -> ImageTensor:
    """Intensity-scale start point: K1 / (alpha_sg) per unit pixel, the photon-rate estimate."""
    return ImageTensor(obs.ones_count / obs.sensor_gain)


def zero_filled(problem: MriProblem) -> ImageTensor:
    """Re(F* y), the zero-filled reconstruction."""
    return ImageTensor(np.real(ifft2c(problem.y.data))[np.newaxis])
