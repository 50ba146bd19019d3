"""Exception hierarchy shared by all modules."""


class DaviesLabError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(DaviesLabError):
    """Invalid parameters or configuration."""


class DomainError(DaviesLabError):
    """An argument lies outside the domain of an operation."""


class SingularityError(DaviesLabError):
    """A matrix function needed a strictly positive operator and did not get one."""

    def __init__(self, message: str, min_eigenvalue: float | None = None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ModelError(DaviesLabError):
    """A Hamiltonian violates the locality or commutation requirements."""


class CapabilityError(DaviesLabError):
    """The request exceeds a dimension cap or an unsupported model class."""


class ConvergenceError(DaviesLabError):
    """An iterative routine failed to reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class HorizonError(DaviesLabError):
    """A mixing-time search ran past its time horizon."""

    def __init__(self, message: str, last_distance: float | None = None):
        super().__init__(message)
        self.last_distance = last_distance
