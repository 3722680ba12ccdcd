"""Exception hierarchy shared by every module."""


class ChoquardError(Exception):
    """Base class for all package errors."""


class ConfigError(ChoquardError, ValueError):
    """Invalid domain, grid or run configuration."""


class ParameterError(ChoquardError, ValueError):
    """A physical or numerical parameter is outside its admissible range."""


class ProjectionError(ChoquardError, ValueError):
    """The Nehari projection does not exist for the given field."""


class QuadratureError(ChoquardError, RuntimeError):
    """A quadrature failed to converge to the requested tolerance."""


class SolverError(ChoquardError, RuntimeError):
    """A solver run produced no usable result."""
