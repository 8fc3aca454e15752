"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class GeometryError(ValueError):
    pass


class FormatError(ValueError):
    """Malformed or inconsistent named-tensor container."""


class ConfigurationError(ValueError):
    pass


class InvalidState(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


class EstimationError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass
