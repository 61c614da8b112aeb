"""Exception types shared across the package."""


class KahanGeomError(Exception):
    """Base class for all package-specific errors."""


class SingularMatrix(KahanGeomError):
    """A pivot fell below 1e-14 times its row scale during elimination."""


class DegenerateFit(KahanGeomError):
    """Line fit requested on fewer than two distinct abscissae."""


class InsufficientSamples(KahanGeomError):
    """Too few samples to resolve polynomial degree up to the requested bound."""


class SingularStep(KahanGeomError):
    """The step's linear system is singular: the state lies on the singular set."""


class NoConvergence(KahanGeomError):
    """Newton iteration failed to reach the residual target."""


class StepSizeUnderflow(KahanGeomError):
    """Reference integrator could not proceed (typically near finite-time blow-up)."""


class SingularSet(KahanGeomError):
    """Evaluation point lies on (or numerically at) the zero set of det(I - h/2 f')."""


class UnsupportedParameter(KahanGeomError):
    """No closed-form invariant measure density is available for this parameter."""
