"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`VSpinError`
and carries a short machine-readable ``code`` used by the command line
front-end (``E:<code>:`` prefix on standard error).
"""


class VSpinError(Exception):
    code = "error"


class InvalidDimensionError(VSpinError, ValueError):
    code = "invalid-dimension"


class InvalidParameterError(VSpinError, ValueError):
    code = "invalid-parameter"


class ContractViolationError(VSpinError, ValueError):
    code = "contract"


class ConvergenceError(VSpinError, RuntimeError):
    code = "convergence"


class UnsupportedGeometryError(VSpinError, ValueError):
    code = "unsupported-geometry"


class IntegrationError(VSpinError, RuntimeError):
    code = "integration"


class OutOfRangeError(VSpinError, ValueError):
    code = "out-of-range"


class InterpolationRangeError(OutOfRangeError):
    code = "interpolation-range"


class DomainError(VSpinError, ValueError):
    code = "domain"


class ArityError(VSpinError, ValueError):
    """Too few data points for the requested model."""

    code = "arity"


class RankError(VSpinError, ValueError):
    code = "rank"


class ConfigError(VSpinError, ValueError):
    code = "config"


class TraceFormatError(VSpinError, ValueError):
    code = "trace-format"
