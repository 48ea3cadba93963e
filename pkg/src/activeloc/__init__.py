"""Active mutual-observation localization correction for FoV-limited drone swarms."""

from activeloc.errors import (
    ConfigurationError,
    DomainError,
    InfeasibleObservation,
    MeasurementRejected,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DomainError",
    "InfeasibleObservation",
    "MeasurementRejected",
    "__version__",
]
