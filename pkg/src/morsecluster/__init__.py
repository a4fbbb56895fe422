"""Modal clustering of mixture densities: critical points, basins, and distances between clusterings."""

from .errors import (
    InputError,
    MorseClusterError,
    NumericalError,
    UnsupportedDimensionError,
    UnsupportedGeometryError,
)
from .mixture import GaussianComponent, MixtureModel, SampleSet

__version__ = "0.1.0"

__all__ = [
    "GaussianComponent",
    "InputError",
    "MixtureModel",
    "MorseClusterError",
    "NumericalError",
    "SampleSet",
    "UnsupportedDimensionError",
    "UnsupportedGeometryError",
    "__version__",
]
