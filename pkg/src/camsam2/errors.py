"""Exception hierarchy shared across the package."""


class CamSamError(Exception):
    """Base class for all package errors."""


class ConfigError(CamSamError, ValueError):
    """Invalid configuration value or incompatible dimensions."""


class InvariantError(CamSamError, ValueError):
    """An input violates a documented shape or ordering invariant."""


class PromptError(CamSamError, ValueError):
    """Malformed prompt or prompt given on the wrong frame."""


class EmptyRegionError(CamSamError, ValueError):
    """Sampling was asked to pick points from an empty region."""


class DataError(CamSamError, OSError):
    """Missing or corrupt dataset / checkpoint files."""
