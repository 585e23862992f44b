"""File formats and the run-artifact repository."""
from pnp.storage.formats import (
    FORMAT_VERSIONS,
    read_complex,
    read_mask,
    read_pgm,
    read_tensor,
    write_complex,
    write_mask,
    write_pgm,
    write_tensor,
)
from pnp.storage.repository import ArtifactRepository

__all__ = [
    "FORMAT_VERSIONS",
    "ArtifactRepository",
    "read_complex",
    "read_mask",
    "read_pgm",
    "read_tensor",
    "write_complex",
    "write_mask",
    "write_pgm",
    "write_tensor",
]
