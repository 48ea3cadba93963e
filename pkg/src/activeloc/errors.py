class ConfigurationError(ValueError):
    """Bad dimensions, ids out of range, or an invalid scenario file."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class InfeasibleObservation(DomainError):
    """The observer sits inside the target's confidence ellipse."""


class MeasurementRejected(RuntimeError):
    """The estimator refused a measurement (singular innovation, too old, ...)."""
