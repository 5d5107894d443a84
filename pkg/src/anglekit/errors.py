"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: precondition violations are usage
errors (1), broken files are data errors (2), and NaNs are numeric
failures (3).
"""


class AngleKitError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(AngleKitError, ValueError):
    """A caller violated an operation's precondition."""


class DegenerateLineError(InvalidArgumentError):
    """Segment endpoints coincide, so no orientation is defined."""


class AngleSingularError(AngleKitError, ArithmeticError):
    """Angle too close to 90 degrees for velocity conversion."""


class IngestionError(AngleKitError, IOError):
    """An input file could not be read or has an unsupported layout."""


class FormatError(AngleKitError, IOError):
    """A binary feature file is malformed."""


class CheckpointError(AngleKitError, IOError):
    """A model checkpoint is malformed or from an unsupported version."""


class InvalidStateError(AngleKitError, RuntimeError):
    """An operation was called before its required state existed."""


class NumericError(AngleKitError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""
