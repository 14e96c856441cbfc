"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, InputError/FormatError -> 3,
NonFiniteLossError -> 4.
"""


class NasvitError(Exception):
    """Base class for all package errors."""


class ShapeError(NasvitError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class ContractError(NasvitError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class ConfigError(NasvitError, ValueError):
    """A configuration value is invalid or unknown."""


class InputError(NasvitError, ValueError):
    """Input data (image, directory, file) is unusable."""


class FormatError(NasvitError, ValueError):
    """A serialized file does not match the expected byte format."""


class NonFiniteLossError(NasvitError, ArithmeticError):
    """Training produced a NaN/Inf loss."""


class StageError(NasvitError):
    """A MixProcessing stage failed; wraps the original error with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
