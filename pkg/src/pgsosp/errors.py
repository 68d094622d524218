"""Exception types shared across the package."""


class PgsospError(Exception):
    """Base class for all package errors."""


class ConfigError(PgsospError):
    """Invalid configuration, file schema, or constructor argument.

    Messages name the offending key (and index, for array entries).
    """


class PolicyDomainError(PgsospError):
    """Policy query outside its valid domain.

    Raised for zero-probability actions in score/Hessian queries and for
    parameter values where the piecewise family stops being a distribution.
    """


class PreconditionError(PgsospError):
    """A documented operation precondition does not hold."""


class EnumerationCapError(PgsospError):
    """Trajectory enumeration would exceed the size cap."""


class OracleConsistencyError(PgsospError):
    """Two independent oracle routes disagree beyond tolerance."""

