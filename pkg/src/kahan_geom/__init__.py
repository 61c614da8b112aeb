"""Geometric integrators for quadratic vector fields.

A linearly implicit one-parameter family of symmetric second-order maps,
its conserved modified energies, invariant measures, and the experiment
harness that writes them out as data files.
"""

from .errors import (
    DegenerateFit,
    InsufficientSamples,
    KahanGeomError,
    NoConvergence,
    SingularMatrix,
    SingularSet,
    SingularStep,
    StepSizeUnderflow,
    UnsupportedParameter,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateFit",
    "InsufficientSamples",
    "KahanGeomError",
    "NoConvergence",
    "SingularMatrix",
    "SingularSet",
    "SingularStep",
    "StepSizeUnderflow",
    "UnsupportedParameter",
    "__version__",
]
