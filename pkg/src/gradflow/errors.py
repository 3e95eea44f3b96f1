"""Exception types shared across the package."""


class GradflowError(Exception):
    """Base class for all package errors."""


class ShapeError(GradflowError, ValueError):
    """Layer or data dimensions do not conform."""


class DomainError(GradflowError, ValueError):
    """An argument lies outside the range where a formula is defined."""


class PreconditionError(GradflowError, ValueError):
    """A hypothesis required by a construction or certificate fails."""


class SizeError(GradflowError, ValueError):
    """A dense object would exceed the configured size cap."""


class BoundaryError(GradflowError, ValueError):
    """A hidden pre-activation is exactly zero, so the point has no region."""

    def __init__(self, sample, layer, unit):
        self.sample, self.layer, self.unit = sample, layer, unit
        super().__init__(
            f"zero pre-activation at sample {sample}, layer {layer}, unit {unit}"
        )


class ConstructionError(GradflowError, RuntimeError):
    """A constructive procedure could not produce its object."""


class DivergenceError(GradflowError, FloatingPointError):
    """Gradient descent produced a non-finite or exploding iterate."""

    def __init__(self, message, index):
        self.index = index
        super().__init__(f"{message} (iterate {index})")


class IntegrationError(GradflowError, RuntimeError):
    """The ODE integrator failed before reaching the horizon."""

    def __init__(self, message, last_time):
        self.last_time = last_time
        super().__init__(f"{message} (last good time {last_time})")


class ParseError(GradflowError, ValueError):
    """Malformed binary input."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class RankError(GradflowError, ValueError):
    """A covariance matrix is singular."""


class DegenerateDataError(GradflowError, ValueError):
    """Data for which the loss is constant in the weights."""


class ConvergenceWarning(UserWarning):
    """An iterative routine stopped before reaching its tolerance."""
