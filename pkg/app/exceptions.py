import logging
from typing import Optional

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_USAGE = 2
EXIT_BLOWUP = 3


class LabError(Exception):
    """Base class for every failure raised by the laboratory."""

    exit_code = EXIT_INVARIANT


class ContractViolationError(LabError, ValueError):
    exit_code = EXIT_USAGE


class ResolutionError(LabError):
    """The grid cannot resolve a soliton (or its spectral modes)."""

    exit_code = EXIT_USAGE


class DomainError(LabError, ValueError):
    exit_code = EXIT_USAGE


class ConfigError(LabError):
    exit_code = EXIT_USAGE


class NumericalBlowupError(LabError):
    exit_code = EXIT_BLOWUP

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t={time:.6g})")
        self.time = time


class ModulationError(LabError):
    pass


class OutOfBasinError(ModulationError):
    def __init__(self, distance: float, radius: float, time: Optional[float] = None):
        where = "" if time is None else f" at t={time:.6g}"
        super().__init__(f"state is {distance:.3e} from the soliton sum{where}, modulation radius is {radius:.3e}")
        self.distance = distance
        self.radius = radius
        self.time = time


class ModulationConvergenceError(ModulationError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"Newton stagnated after {iterations} iterations, residual {residual:.3e}")
        self.iterations = iterations
        self.residual = residual


class CertificationError(LabError):
    """A spectral or coercivity property the theory asserts failed numerically."""


class InsufficientDataError(LabError):
    pass


class CheckpointFormatError(LabError):
    exit_code = EXIT_USAGE

    def __init__(self, message: str, expected=None, found=None):
        if expected is not None or found is not None:
            message = f"{message} (expected {expected!r}, found {found!r})"
        super().__init__(message)
        self.expected = expected
        self.found = found


class CheckpointCorruptionError(LabError):
    exit_code = EXIT_USAGE


class ConstructionFailedError(LabError):
    def __init__(self, message: str, final_time: float, best_objective: float, parameters=None):
        super().__init__(f"{message} (T={final_time:.6g}, best objective {best_objective:.3e})")
        self.final_time = final_time
        self.best_objective = best_objective
        self.parameters = parameters


_EXIT_CODES: dict[type, int] = {}


def register_exit_codes():
    """Map non-lab exceptions that can escape a subcommand to exit codes."""
    from pydantic import ValidationError

    _EXIT_CODES[ValidationError] = EXIT_USAGE
    _EXIT_CODES[FileNotFoundError] = EXIT_USAGE
    _EXIT_CODES[FloatingPointError] = EXIT_BLOWUP


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, LabError):
        return exc.exit_code
    for exc_type, code in _EXIT_CODES.items():
        if isinstance(exc, exc_type):
            return code
    logger.error(f"Unmapped exception {type(exc).__name__}: {exc}")
    return EXIT_INVARIANT
