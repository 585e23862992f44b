"""Run-artifact repository: every file a command emits goes through here."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from pnp.core import ComplexImage, ImageTensor
from pnp.storage.formats import FORMAT_VERSIONS, read_tensor, write_complex, write_mask, write_pgm, write_tensor

logger = logging.getLogger(__name__)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, float) and not np.isfinite(value):
        return None if np.isnan(value) else ("inf" if value > 0 else "-inf")
    if hasattr(value, "value") and not isinstance(value, (int, float, str)):
        return value.value
    return value


class ArtifactRepository:
    """Writes CSV, JSON and image artifacts under one output directory."""

    def __init__(self, out_dir: Union[str, Path]):
        """Initialize repository.

        Args:
            out_dir: Output directory, created on demand
        """
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def save_csv(self, name: str, frame: pd.DataFrame) -> Path:
        """Write a DataFrame with header row and no index."""
        target = self.path(name)
        frame.to_csv(target, index=False)
        logger.info(f"Wrote {len(frame)} rows to {target}")
        return target

    def save_json(self, name: str, payload: Dict[str, Any]) -> Path:
        target = self.path(name)
        target.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
        logger.info(f"Wrote {target}")
        return target

    def save_summary(self, name: str, config_echo: Dict[str, Any], seed: int, runtime_s: float,
                     **sections: Any) -> Path:
        """Summary JSON with the config echo, format versions, seed and runtime always present."""
        payload = {
            "config": config_echo,
            "format_versions": dict(FORMAT_VERSIONS),
            "seed": seed,
            "runtime_s": runtime_s,
        }
        payload.update(sections)
        return self.save_json(name, payload)

    def save_image(self, stem: str, image: ImageTensor, peak: float = 1.0) -> Path:
        """Write `<stem>.pnpf` and a PGM preview `<stem>.pgm`."""
        target = self.path(f"{stem}.pnpf")
        write_tensor(target, image)
        write_pgm(self.path(f"{stem}.pgm"), image, peak)
        return target

    def save_complex(self, name: str, image: ComplexImage) -> Path:
        target = self.path(name)
        write_complex(target, image)
        logger.info(f"Wrote complex {image.shape} data to {target}")
        return target

    def save_mask(self, name: str, mask: np.ndarray) -> Path:
        target = self.path(name)
        write_mask(target, mask)
        logger.info(f"Wrote mask ({float(np.mean(mask)):.3f} sampled) to {target}")
        return target

    def load_image(self, stem: str) -> ImageTensor:
        return read_tensor(self.path(f"{stem}.pnpf"))

    def load_json(self, name: str) -> Optional[Dict[str, Any]]:
        target = self.path(name)
        if not target.exists():
            logger.warning(f"{target} not found")
            return None
        return json.loads(target.read_text())

    def load_csv(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.path(name))
