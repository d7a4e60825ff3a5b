"""Exception types shared across the package."""


class GLError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GLError):
    """Cochain degree or array shape does not match the mesh."""


class InvalidResolutionError(GLError):
    """Mesh resolution below the supported minimum."""


class MeshWeightError(GLError):
    """A Hodge weight came out non-positive; the mesh is rejected."""


class ConstructionError(GLError):
    """A gauge field failed its winding/consistency checks during assembly."""


class InconsistencyError(GLError):
    """Total flux is not an integer multiple of 2*pi within tolerance."""


class SolverError(GLError):
    """A linear or nonlinear solve did not reach its target residual."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history


class NonContractionError(SolverError):
    """Fixed-point iteration hit its sweep cap without contracting."""


class EigenLookupError(GLError):
    """Requested eigenvalue does not belong to any computed cluster."""


class KernelZeroNotFoundError(GLError):
    """No multistart reached the kernel-form tolerance."""

    def __init__(self, message, best_value=None):
        super().__init__(message)
        self.best_value = best_value


class DegenerateInputError(GLError):
    """An input that must be nonzero vanished."""


class ConfigError(GLError):
    """Run configuration failed validation; message lists the bad fields."""
