"""Shared exception types."""


class SavdetError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(SavdetError):
    """Landmarks or polygons too degenerate to build a usable mask."""


class ShapeError(SavdetError):
    """Array dimensions do not match the operation's contract."""


class ConfigError(SavdetError):
    """Invalid configuration value or range."""


class DataError(SavdetError):
    """Input data violates a precondition (empty, single-class, ...)."""


class NumericalError(SavdetError):
    """Non-finite value encountered where finiteness is required."""


class ManifestError(SavdetError):
    """Dataset manifest fails validation."""
