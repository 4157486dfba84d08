"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
numeric failures exit 3.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ShapeError(ValueError):
    """Array geometry does not match the expected contract."""


class FormatError(ValueError):
    """A file or payload is not in the expected format."""


class StateError(RuntimeError):
    """An operation was called on an object in the wrong state."""


class NumericError(ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"non-finite loss at training step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class CheckpointError(RuntimeError):
    """Checkpoint could not be read or is unusable."""


class CompatibilityError(CheckpointError):
    """Checkpoint geometry or version does not match the requested config."""
