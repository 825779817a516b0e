"""Exception hierarchy.

The CLI maps these onto exit codes: usage problems exit 1, bad data exits 2,
numerical fit failures exit 3.
"""


class ToolkitError(Exception):
    """Base class for every error raised by the toolkit."""

    kind = "error"


class InvalidArgumentError(ToolkitError, ValueError):
    kind = "invalid-argument"


class ValidationError(ToolkitError, ValueError):
    kind = "validation"


class FormatError(ToolkitError, ValueError):
    kind = "format"


class FitError(ToolkitError, RuntimeError):
    kind = "fit"


class StateError(ToolkitError, RuntimeError):
    kind = "state"
