"""Exception hierarchy shared across the package."""


class FigoptError(Exception):
    """Base class for all figopt errors."""


class InputError(FigoptError, ValueError):
    """Malformed or dimensionally inconsistent input."""


class DomainError(FigoptError, ValueError):
    """Parameter values outside a model's valid domain."""


class DegenerateVarianceError(FigoptError, ArithmeticError):
    """Response variance collapsed to exactly zero.

    Cannot happen for finite linear predictors; signals an overflow upstream
    rather than a value to clamp.
    """


class EvaluationError(FigoptError, ArithmeticError):
    """A numerical evaluation produced a non-finite value."""


class CapacityError(FigoptError):
    """A requested grid or tensor-product rule exceeds the configured cap."""


class ConfigError(FigoptError, ValueError):
    """Invalid problem configuration."""


class ReproduceCheckError(FigoptError):
    """A documented reference finding failed to reproduce."""
