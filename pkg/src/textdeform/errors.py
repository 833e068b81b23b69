"""Exception types shared across the package."""


class TextDeformError(Exception):
    """Base class for package errors."""


class DegeneratePolygonError(TextDeformError, ValueError):
    """Polygon has fewer than 3 points or (near-)zero area."""


class ConfigError(TextDeformError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(TextDeformError, ValueError):
    """Unreadable or inconsistent data files."""


class NumericError(TextDeformError, RuntimeError):
    """Non-finite values encountered during training or inference."""


class CheckpointError(TextDeformError, ValueError):
    """Checkpoint file is truncated, malformed, or from another config."""
