"""Exception hierarchy shared by all gel modules."""


class GelError(Exception):
    """Base class for library errors."""


class ParameterError(GelError, ValueError):
    """A parameter lies outside its admissible domain."""


class ModelDomainError(ParameterError):
    """An error model was applied to a graph of the wrong kind (weighted vs unweighted)."""


class PartitionError(ParameterError):
    """An ErrorPartition violates its mask invariants."""


class KernelDomainError(ParameterError):
    """A graphon kernel returned values outside [0, 1]."""


class ConfigError(ParameterError):
    """An experiment configuration is invalid."""


class NumericalError(GelError, ArithmeticError):
    """A numerical procedure failed (no root, divergence, singular matrix)."""


class DegenerateError(NumericalError):
    """A statistic is undefined because of a zero denominator."""


class InstabilityError(NumericalError):
    """A filter recursion diverged."""


class DesignError(NumericalError):
    """A filter design optimization failed."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
