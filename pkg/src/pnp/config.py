"""Settings and experiment configuration.

Process settings come from the environment (optionally a .env file);
experiment settings come from one JSON document per run.
"""
import json
import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from pnp.exceptions import ConfigError

logger = logging.getLogger(__name__)

load_dotenv()


class Settings:
    """Process-wide settings read from the environment."""

    LOG_LEVEL = os.getenv("PNP_LOG_LEVEL", "INFO")
    LOG_FORMAT = os.getenv("PNP_LOG_FORMAT", "json")  # json or text
    OUTPUT_DIR = os.getenv("PNP_OUTPUT_DIR", "./runs")
    MAX_WORKERS = int(os.getenv("PNP_MAX_WORKERS", "4"))
    DENSE_GUARD = int(os.getenv("PNP_DENSE_GUARD", "4096"))
    DEBUG_CHECKS = os.getenv("PNP_DEBUG_CHECKS", "false").lower() == "true"


class TaskType(str, Enum):
    TRAIN = "train"
    RUN = "run"
    SWEEP = "sweep"
    HIST = "hist"
    SNCHECK = "sncheck"
    ORACLE = "oracle"


class Method(str, Enum):
    FBS = "FBS"
    ADMM = "ADMM"
    DRS = "DRS"


class NormMode(str, Enum):
    NONE = "none"
    REAL_SN = "realSN"
    RESHAPE_SN = "reshapeSN"


class FidelityKind(str, Enum):
    QUADRATIC = "quadratic"
    POISSON = "poisson"
    QIS = "qis"
    MRI = "mri"


class DenoiserKind(str, Enum):
    IDENTITY = "identity"
    ORTHOGONAL = "orthogonal"
    BLUR_BLEND = "blur_blend"
    CNN = "cnn"


class PairScheme(str, Enum):
    ITERATES_VS_LIMIT = "iterates_vs_limit"
    RANDOM_PAIRS = "random_pairs"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


class PnPConfig(_Strict):
    """Engine parameters for one PnP run."""
    method: Method = Method.ADMM
    alpha: float = Field(0.1, gt=0.0)
    max_iter: int = Field(500, ge=1)
    tol: float = Field(1e-6, gt=0.0)
    record_every: int = Field(1, ge=1)
    store_iterates: bool = False


class TrainConfig(_Strict):
    """Desk-scale Gaussian-denoising training protocol."""
    epochs: int = Field(5, ge=0)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    decayed_learning_rate: float = Field(1e-4, gt=0.0)
    noise_sigma: float = Field(40.0 / 255.0, gt=0.0)
    num_patches: int = Field(2000, ge=1)
    patch_size: int = Field(16, ge=3)
    depth: int = Field(4, ge=1)
    hidden_channels: int = Field(8, ge=1)
    image_channels: int = Field(1, ge=1)
    kernel_size: int = Field(3, ge=1)
    norm_mode: NormMode = NormMode.REAL_SN
    lipschitz_target: float = Field(1.0, gt=0.0)
    c_targets: Optional[List[float]] = None
    project: bool = False
    seed: int = Field(0, ge=0)

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return v

    @model_validator(mode="after")
    def _targets_match_depth(self) -> "TrainConfig":
        if self.c_targets is not None:
            if len(self.c_targets) != self.depth:
                raise ValueError(f"c_targets needs {self.depth} entries, got {len(self.c_targets)}")
            if any(c <= 0 for c in self.c_targets):
                raise ValueError("c_targets must be positive")
        return self

    def layer_targets(self) -> Tuple[float, ...]:
        """Per-layer c_l; a global target C is split evenly as C**(1/depth)."""
        if self.c_targets is not None:
            return tuple(float(c) for c in self.c_targets)
        return tuple([self.lipschitz_target ** (1.0 / self.depth)] * self.depth)


class ImageSpec(_Strict):
    """Ground-truth image: a PNPF file or a synthetic piecewise-constant phantom."""
    path: Optional[str] = None
    size: int = Field(32, ge=4)
    channels: int = Field(1, ge=1)
    peak: float = Field(1.0, gt=0.0)


class FidelitySpec(_Strict):
    kind: FidelityKind = FidelityKind.POISSON
    alpha_sg: float = Field(8.0, gt=0.0)
    oversample: int = Field(8, ge=1)
    mask_rate: float = Field(0.3, gt=0.0, le=1.0)
    noise_sigma: float = Field(15.0 / 255.0, ge=0.0)
    observation_path: Optional[str] = None


class DenoiserSpec(_Strict):
    kind: DenoiserKind = DenoiserKind.CNN
    eps: float = Field(0.5, ge=0.0)
    blend: float = Field(1.0, ge=0.0, le=1.0)
    model_path: Optional[str] = None
    sigma: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _cnn_needs_model(self) -> "DenoiserSpec":
        if self.kind == DenoiserKind.CNN and not self.model_path:
            raise ValueError("denoiser.model_path is required for kind 'cnn'")
        return self


class SweepSpec(_Strict):
    alphas: List[float] = Field(..., min_length=1)
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("alphas")
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        if any(a <= 0 for a in v):
            raise ValueError("every alpha must be positive")
        return v


class HistSpec(_Strict):
    pair_scheme: PairScheme = PairScheme.ITERATES_VS_LIMIT
    num_pairs: int = Field(1000, ge=1)
    bins: int = Field(50, ge=1)
    pair_scale: float = Field(0.1, gt=0.0)
    compare_model_path: Optional[str] = None


class SnCheckSpec(_Strict):
    model_path: str
    grid: int = Field(16, ge=1)
    power_steps: int = Field(500, ge=1)


class OracleSpec(_Strict):
    cases: int = Field(100, ge=1)
    size: int = Field(8, ge=2)


class ExperimentConfig(_Strict):
    """One archivable experiment: task selector plus the blocks it needs."""
    task: TaskType
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: Optional[str] = None
    image: ImageSpec = Field(default_factory=ImageSpec)
    fidelity: FidelitySpec = Field(default_factory=FidelitySpec)
    denoiser: Optional[DenoiserSpec] = None
    pnp: PnPConfig = Field(default_factory=PnPConfig)
    train: Optional[TrainConfig] = None
    sweep: Optional[SweepSpec] = None
    hist: Optional[HistSpec] = None
    sncheck: Optional[SnCheckSpec] = None
    oracle: OracleSpec = Field(default_factory=OracleSpec)

    @model_validator(mode="after")
    def _task_blocks_present(self) -> "ExperimentConfig":
        required = {
            TaskType.TRAIN: ("train",),
            TaskType.RUN: ("denoiser",),
            TaskType.SWEEP: ("denoiser", "sweep"),
            TaskType.HIST: ("denoiser",),
            TaskType.SNCHECK: ("sncheck",),
        }
        for block in required.get(self.task, ()):
            if getattr(self, block) is None:
                raise ValueError(f"task '{self.task.value}' requires a '{block}' block")
        return self


def _line_of(text: str, key: Optional[str]) -> Optional[int]:
    if not key:
        return None
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def parse_experiment_config(text: str, seed_override: Optional[int] = None) -> Tuple[ExperimentConfig, Dict[str, Any]]:
    """Parse and validate a JSON experiment document.

    Args:
        text: JSON document
        seed_override: Replaces the document's seed when given

    Returns:
        Tuple of (validated config, raw document as parsed)
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON: {e.msg}", line=e.lineno) from e
    if not isinstance(raw, dict):
        raise ConfigError("Config document must be a JSON object", line=1)
    document = dict(raw)
    if seed_override is not None:
        document["seed"] = seed_override
    try:
        config = ExperimentConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        location = [str(part) for part in first.get("loc", ())]
        last_key = next((part for part in reversed(location) if not part.isdigit()), None)
        raise ConfigError(first.get("msg", "invalid value"), line=_line_of(text, last_key),
                          field=".".join(location) or None) from e
    return config, raw


def load_experiment_config(path: Union[str, Path], seed_override: Optional[int] = None) -> Tuple[ExperimentConfig, Dict[str, Any]]:
    """Read a config file; see `parse_experiment_config`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    config, raw = parse_experiment_config(text, seed_override)
    logger.info(f"Loaded {config.task.value} config from {path}")
    return config, raw
