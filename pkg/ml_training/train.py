#!/usr/bin/env python3
"""Desk-scale training of the residual CNN denoiser twins (realSN and unconstrained)"""
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pnp.cnn_train import make_patches, model_from_config, save_model, train  # noqa: E402
from pnp.config import NormMode, TrainConfig  # noqa: E402
from pnp.denoisers import cnn_denoiser, estimate_eps, random_pairs  # noqa: E402
from pnp.logging_config import configure_logging  # noqa: E402

logger = logging.getLogger(__name__)

NOISE_LEVELS = (5, 15, 40)


def train_twin(norm_mode: NormMode, noise_level: int, seed: int = 0):
    """Train one model at a fixed noise level (in 8-bit units)"""
    cfg = TrainConfig(norm_mode=norm_mode, noise_sigma=noise_level / 255.0, seed=seed)
    data = make_patches(cfg.num_patches, cfg.patch_size, seed, cfg.image_channels)
    result = train(model_from_config(cfg), cfg, data)
    logger.info(f"{norm_mode.value} sigma={noise_level}: final loss {result.loss_curve[-1][1]:.4e}")
    return result


def main(out_dir: str = "models", seed: int = 0):
    """Train realSN and unconstrained twins per noise level and compare sampled eps"""
    configure_logging(fmt="text")
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)

    rows = []
    for noise_level in NOISE_LEVELS:
        pairs = random_pairs((1, 16, 16), 1000, seed)
        for norm_mode in (NormMode.REAL_SN, NormMode.NONE):
            result = train_twin(norm_mode, noise_level, seed)
            path = target / f"simplecnn_{norm_mode.value}_{noise_level}.pnpm"
            save_model(path, result.model)
            estimate = estimate_eps(cnn_denoiser(result.model, noise_level / 255.0), pairs)
            rows.append({
                "norm_mode": norm_mode.value,
                "noise_level": noise_level,
                "final_loss": result.loss_curve[-1][1],
                "max_ratio": estimate.max_ratio,
                "mean_ratio": float(np.mean(estimate.ratios)),
                "model": str(path),
            })

    report = pd.DataFrame(rows)
    report.to_csv(target / "twins.csv", index=False)
    logger.info(f"Training completed:\n{report.to_string(index=False)}")
    return report


if __name__ == '__main__':
    main(*sys.argv[1:2])
