"""Exception hierarchy shared by every module."""


class BlowupLabError(Exception):
    """Base class for all library errors."""


class CoverageError(BlowupLabError, ValueError):
    """A state value falls outside the range covered by a source term."""


class PositivityError(BlowupLabError, ValueError):
    """A source term is nonpositive where a positive one is required."""


class NoBlowupError(BlowupLabError):
    """Raised when a finite blow-up time is requested but none exists."""


class ConfigError(BlowupLabError, ValueError):
    """Invalid construction or solver parameters."""


class InstabilityError(BlowupLabError):
    """The time stepper exceeded the kinetic growth bound; reduce dt."""
