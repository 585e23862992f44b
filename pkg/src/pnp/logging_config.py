"""Logging setup: structured JSON records by default."""
import logging
import sys
from typing import Optional

from pythonjsonlogger import jsonlogger

from pnp.config import Settings

JSON_FIELDS = "%(asctime)s %(levelname)s %(name)s %(message)s"
TEXT_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """Install a single stderr handler on the root logger.

    Args:
        level: Log level name; defaults to PNP_LOG_LEVEL
        fmt: 'json' or 'text'; defaults to PNP_LOG_FORMAT
    """
    level = (level or Settings.LOG_LEVEL).upper()
    fmt = (fmt or Settings.LOG_FORMAT).lower()

    handler = logging.StreamHandler(sys.stderr)
    if fmt == "json":
        handler.setFormatter(jsonlogger.JsonFormatter(JSON_FIELDS))
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level)
