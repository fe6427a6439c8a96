"""Exception types shared across the toolkit."""


class ContractViolationError(ValueError):
    """An argument violates an operation's preconditions (dimension, kind,
    stamp or structure mismatch, invalid configuration values)."""


class UnsupportedSchemeError(TypeError):
    """A differentiation scheme was requested that the target function
    cannot support (e.g. complex step on a function not marked capable)."""


class SingularInnovationError(ArithmeticError):
    """The innovation covariance is numerically singular; the correction
    step cannot proceed."""


class ConfigurationError(ValueError):
    """An estimator/model combination is invalid, e.g. an invariant
    measurement form paired with the wrong perturbation side."""
