"""
Error hierarchy for the GMNSE simulator.

Every error raised on purpose by the package derives from GmnseError and
carries the process exit code the CLI reports for its category.
"""

from typing import Optional


class GmnseError(Exception):
    """Base class for all simulator errors"""

    exit_code = 1
    category = "error"


class ConfigError(GmnseError):
    """Invalid or unparsable experiment configuration"""

    exit_code = 2
    category = "config"

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if field:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class ResolutionMismatchError(GmnseError, ValueError):
    """Array shape does not match the torus resolution"""

    exit_code = 2
    category = "resolution"


class BlowUpError(GmnseError):
    """Non-finite state produced by the time stepper"""

    exit_code = 3
    category = "blow-up"

    def __init__(self, step_index: int, time: float, member: Optional[int] = None):
        self.step_index = step_index
        self.time = time
        self.member = member
        where = f" (ensemble member {member})" if member is not None else ""
        super().__init__(
            f"blow-up: non-finite coefficients at step {step_index}, t={time:.6g}{where}"
        )


class EstimateError(GmnseError):
    """A monitor received data it cannot evaluate"""

    exit_code = 4
    category = "estimate"


class FitError(GmnseError):
    """Not enough usable samples for a fit"""

    exit_code = 4
    category = "fit"


class AttractorError(GmnseError):
    """Attractor approximation preconditions not met"""

    exit_code = 5
    category = "attractor"


class CheckpointError(GmnseError):
    """Checkpoint file is malformed or incompatible"""

    exit_code = 6
    category = "checkpoint"
