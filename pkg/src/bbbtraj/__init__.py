"""Stochastic jump trajectories for discrete quantum labels, with and without a wave function."""
from ._backend import BACKEND
from .lattice import (ComplexAmplitudeField, CurrentField, HermitianGenerator, PolarField,
                      ProbabilityField, current, current_from_polar, polar_compose,
                      polar_decompose, probability)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ComplexAmplitudeField", "CurrentField", "HermitianGenerator", "PolarField",
    "ProbabilityField", "current", "current_from_polar", "polar_compose", "polar_decompose",
    "probability", "__version__",
]
