"""Exception hierarchy. Each class maps to one CLI exit code."""


class BoundsError(Exception):
    exit_code = 1


class ConfigError(BoundsError, ValueError):
    """Invalid configuration, schema violation or malformed input."""

    exit_code = 2


class DegenerateArmError(BoundsError):
    """No unit realized one of the two exposure levels."""

    exit_code = 3


class PositivityError(BoundsError):
    """A realized event has zero (or numerically zero) propensity."""

    exit_code = 3


class ResourceError(BoundsError):
    """Enumeration or solver size cap exceeded."""

    exit_code = 4
