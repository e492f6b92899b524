"""Exception hierarchy shared by every module."""


class QWError(Exception):
    """Base class for all library errors."""


class ConfigurationError(QWError, ValueError):
    pass


class ValidationError(QWError, ValueError):
    """A coin or field violates a standing assumption."""

    def __init__(self, message, site=None, assumption=None):
        super().__init__(message)
        self.site = site
        self.assumption = assumption


class IngestionError(ValidationError):
    pass


class WindowError(QWError, ValueError):
    """Fields live on mismatched windows."""


class WindowOverflowError(QWError, ValueError):
    """Support would leave the finite window."""


class DomainError(QWError, ValueError):
    pass


class BranchPointError(DomainError):
    pass


class DegenerateError(QWError, ArithmeticError):
    pass


class ResolutionError(QWError, ValueError):
    pass


class SolverError(QWError, ArithmeticError):
    pass


class PoleError(QWError, ArithmeticError):
    pass


class ConsistencyError(QWError, ArithmeticError):
    """A numerical identity that must hold does not."""


class DependencyError(QWError, RuntimeError):
    pass


class FitError(QWError, ValueError):
    pass


class MemoryGuardError(QWError, MemoryError):
    pass
