# lattice/errors.py
# Thiqa - Error Types

from typing import Optional


class ThiqaError(Exception):
    """Root of every error the toolkit raises on bad input or failed computation."""


class LatticeSyntaxError(ThiqaError):
    """Malformed lattice/HWCN text."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LatticeValidationError(ThiqaError):
    """A structurally valid file that violates a lattice invariant."""

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)


class CycleError(LatticeValidationError):
    def __init__(self, detail: str = ""):
        super().__init__("cycle", detail)


class NonFiniteScoreError(ThiqaError):
    pass


class ConstructionError(ThiqaError):
    """HWCN construction could not restore acyclicity."""


class EnumerationError(ThiqaError):
    """Path/segmentation enumeration exceeded its cap."""


class ContractError(ThiqaError):
    """Caller violated an operation's precondition."""


class NumericError(ThiqaError):
    pass


class TrainingError(ThiqaError):
    def __init__(self, message: str, epoch: Optional[int] = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)


class FitError(ThiqaError):
    pass


class MetricInputError(ThiqaError):
    pass


class ConfigError(ThiqaError):
    pass


class FormatError(ThiqaError):
    """Unreadable model/calibrator/score container."""
