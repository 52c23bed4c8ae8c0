"""Exception types shared across the toolkit.

ValidationError marks semantic problems with inputs (bad dimensions,
missing keys, degenerate geometry); OSError is left to signal real I/O
failures.  The CLI maps ValidationError to exit code 1 and OSError to 2.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class FormatError(ValidationError):
    """A serialized container is malformed (bad magic, truncated payload)."""


class DegenerateGeometryError(ValidationError):
    """Pose geometry collapses (coincident joints, zero person size)."""


class CapacityError(ValidationError):
    """Problem size exceeds a configured resource cap."""
