"""Exception types shared across the package."""


class AHXrayError(Exception):
    """Base class for all package errors."""


class DomainError(AHXrayError):
    """A point or parameter lies outside the region where a quantity is defined."""


class SingularMetricError(AHXrayError):
    """A metric that must be invertible failed a positivity/invertibility check."""


class EvennessError(AHXrayError):
    """A declared evenness order is inconsistent with the supplied family."""


class SplitRejectedError(AHXrayError):
    """The connection split is outside its validity hypotheses (N < 5)."""


class ExtensionError(AHXrayError):
    """The smooth part of a connection is not finite on the requested extension."""


class StiffnessError(AHXrayError):
    """Adaptive step-size control underflowed while integrating a geodesic."""


class DomainExitError(AHXrayError):
    """A geodesic left the field's domain; carries the exit time."""

    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


class ShootingError(AHXrayError):
    """Newton shooting for the inverse exponential map failed to converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class ExcludedGeodesicError(AHXrayError):
    """Boundary-tangent geodesic (both exit times zero); excluded from transforms."""


class DegenerateDirectionError(AHXrayError):
    """An initial velocity with no tangential part was passed where one is required."""


class ReparametrizationError(AHXrayError):
    """The time change between parametrizations failed to be monotone."""


class ScenarioSchemaError(AHXrayError):
    """A scenario file violates the schema; message carries a JSON-pointer-style path."""
