"""Exception types shared across the package."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Raised when parameters or scenario settings are inconsistent."""


class DimensionExceeded(ValueError):
    """Raised when a labeling operation receives more labels than its dimension allows."""
