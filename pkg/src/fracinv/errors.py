"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so each class carries the code it
should surface with.
"""

from __future__ import annotations


class FracInvError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParameterError(FracInvError, ValueError):
    """A scalar parameter is outside its admissible range."""

    exit_code = 2


class DataError(FracInvError, ValueError):
    """Input arrays are non-finite or otherwise unusable."""

    exit_code = 2


class ShapeError(FracInvError, ValueError):
    """Arrays or grids do not match each other."""

    exit_code = 2


class ConfigError(FracInvError, ValueError):
    """A run configuration failed validation.

    ``field`` holds the dotted path of the offending entry, e.g.
    ``"problem.beta"``.
    """

    exit_code = 2

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class HypothesisViolation(FracInvError):
    """A structural hypothesis (ellipticity, kernel monotonicity, ...) fails.

    ``where`` identifies the offending node when one is available.
    """

    exit_code = 2

    def __init__(self, message: str, where: object = None) -> None:
        super().__init__(message if where is None else f"{message} (at {where})")
        self.where = where


class SolverError(FracInvError, RuntimeError):
    """Nonlinear or fixed-point iteration failed to converge."""

    exit_code = 3

    def __init__(self, message: str, step: int | None = None) -> None:
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class IllPosedError(FracInvError):
    """The reconstruction denominator vanishes on too many nodes."""

    exit_code = 4

    def __init__(self, message: str, fraction: float | None = None) -> None:
        super().__init__(message)
        self.fraction = fraction


class DriftError(FracInvError):
    """Regression check found outputs differing from the stored run."""

    exit_code = 5
