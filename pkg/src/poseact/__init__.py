"""Toolkit for pose-track based video action descriptors and classifiers."""

__version__ = "0.1.0"

from poseact.errors import (
    CapacityError,
    DegenerateGeometryError,
    FormatError,
    ValidationError,
)

__all__ = [
    "CapacityError",
    "DegenerateGeometryError",
    "FormatError",
    "ValidationError",
    "__version__",
]
