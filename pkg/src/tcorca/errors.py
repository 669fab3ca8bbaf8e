"""Exception hierarchy shared by every tcorca module.

All errors raised on purpose derive from :class:`TcorcaError` so callers
(and the CLI) can distinguish expected failure modes from genuine bugs.
"""


class TcorcaError(Exception):
    """Base class for all tcorca errors."""


class MalformedInput(TcorcaError):
    """Input file or stream violates the documented format."""


class EmptyInput(TcorcaError):
    """Input contains no rows or no channels."""


class DegenerateChannel(TcorcaError):
    """A channel cannot support the requested operation (all missing,
    constant where variation is required, and so on)."""


class InvalidWindow(TcorcaError):
    """Window bounds fall outside the panel or leave no usable samples."""


class InvalidSpec(TcorcaError):
    """A scenario or configuration value is out of range or inconsistent."""


class InsufficientData(TcorcaError):
    """Not enough samples to fit or test the requested model."""


class NoInvariantsFound(TcorcaError):
    """Invariant search has no usable channels to pair."""


class UndefinedMetric(TcorcaError):
    """A metric has no defined value for the given inputs (for example
    recall when the ground-truth set is empty)."""


class FormatVersionError(MalformedInput):
    """Persisted artifact was written by an incompatible format version."""
