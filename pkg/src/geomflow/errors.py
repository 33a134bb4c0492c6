"""Exception hierarchy."""


class GeomflowError(Exception):
    """Base class for all package errors."""


class InvalidMeshError(GeomflowError):
    """Mesh fails a closed-manifold, orientation, or size requirement."""


class InvalidInputError(GeomflowError):
    """A generator or operation received out-of-range parameters."""


class ConfigError(GeomflowError):
    """Bad run configuration (unknown key, bad value, inconsistent protocol)."""


class CapabilityError(GeomflowError):
    """Request exceeds a documented capability (e.g. quadrature degree)."""


class DegenerateGeometryError(GeomflowError):
    """The metric tensor lost rank somewhere; signals mesh collapse.

    Carries enough context to locate the failure.
    """

    def __init__(self, message, cell=None, slab=None, time_point=None):
        super().__init__(message)
        self.cell = cell
        self.slab = slab
        self.time_point = time_point


class NewtonFailure(GeomflowError):
    """The slab Newton iteration did not converge."""


class SingularMatrixError(GeomflowError):
    """Direct factorization of the slab system failed."""
