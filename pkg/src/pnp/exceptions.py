"""Exception hierarchy for the pnp toolkit.

Every error carries the process exit code the CLI reports for it.
"""
from typing import Any, Optional


class PnPError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


class ConfigError(PnPError):
    """Invalid or unreadable experiment configuration."""

    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        """Initialize config error.

        Args:
            message: Human readable description
            line: 1-based line number in the config file, when known
            field: Dotted path of the offending field, when known
        """
        self.line = line
        self.field = field
        context = []
        if line is not None:
            context.append(f"line {line}")
        if field:
            context.append(f"field '{field}'")
        suffix = f" ({', '.join(context)})" if context else ""
        super().__init__(f"{message}{suffix}")


class FormatError(PnPError):
    """Malformed PNPF/PNPK/PNPM/PNPB file."""

    exit_code = 2


class ShapeMismatchError(PnPError, ValueError):
    """Operands with incompatible shapes or channel counts."""

    exit_code = 3


class DomainError(PnPError, ValueError):
    """Point outside the domain of a fidelity term or invalid step size."""

    exit_code = 3


class NonFiniteError(PnPError, ValueError):
    """A tensor would contain NaN or Inf entries."""

    exit_code = 3


class ConvergenceError(PnPError):
    """An inner solver failed to converge."""

    exit_code = 3


class NumericalFailure(PnPError):
    """A PnP run or training run diverged; carries whatever was recorded."""

    exit_code = 3

    def __init__(self, message: str, partial: Any = None):
        self.partial = partial
        super().__init__(message)


class GuardExceededError(PnPError):
    """Dense materialisation requested beyond the configured size guard."""

    exit_code = 3


class InvalidConstantsError(PnPError, ValueError):
    """Theory bound requested with inconsistent constants."""

    exit_code = 2


class TheoryNotApplicable(PnPError):
    """Convexity constants are unknown, so no bound is computed."""

    exit_code = 3


class CertificateError(PnPError):
    """A certified bound or asserted property did not hold."""

    exit_code = 4
