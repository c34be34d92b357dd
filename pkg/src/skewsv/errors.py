"""Exception hierarchy shared across the package."""


class SkewSVError(Exception):
    """Base class for all package errors."""


class DomainError(SkewSVError, ValueError):
    """A parameter lies outside the admissible domain."""


class NumericError(SkewSVError, ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite intermediate)."""


class DataError(SkewSVError, ValueError):
    """Input data is malformed or degenerate."""


class DegenerateChainError(SkewSVError, ValueError):
    """A chain (or chain segment) has zero variance."""


class ConfigurationError(SkewSVError, ValueError):
    """An inconsistent or invalid configuration was supplied."""


class SamplerError(SkewSVError, RuntimeError):
    """The sampler could not initialise or run."""
