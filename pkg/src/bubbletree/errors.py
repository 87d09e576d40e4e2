"""Exception and warning types shared across the package."""

__all__ = [
    "BubbleTreeError",
    "DomainError",
    "SingularPointError",
    "ConvergenceError",
    "ResolutionError",
    "HierarchyOrderingError",
    "PreconditionError",
    "AccuracyError",
    "IntegratorError",
    "CFLError",
    "GridBlowupError",
    "NoCrossingError",
    "GrowthWarning",
    "ExtrapolationWarning",
]


class BubbleTreeError(Exception):
    """Base class for all package errors."""


class DomainError(BubbleTreeError, ValueError):
    """An argument lies outside the domain of a closed-form map."""


class SingularPointError(DomainError):
    """Evaluation requested exactly at a singular point."""


class ConvergenceError(BubbleTreeError, RuntimeError):
    """A fixed-point or Picard iteration failed to contract."""


class ResolutionError(BubbleTreeError, RuntimeError):
    """A grid is too coarse for the requested quantity."""


class HierarchyOrderingError(BubbleTreeError, ValueError):
    """The alternating sum defining a scale became non-positive."""


class PreconditionError(BubbleTreeError, ValueError):
    """Input violates a stated precondition (size bound, decay, ...)."""


class AccuracyError(BubbleTreeError, RuntimeError):
    """A self-consistency check exceeded its tolerance."""


class IntegratorError(BubbleTreeError, RuntimeError):
    """The ODE integrator reported failure."""


class CFLError(BubbleTreeError, ValueError):
    """Time step exceeds the Courant limit."""


class GridBlowupError(BubbleTreeError, FloatingPointError):
    """Non-finite values appeared in a simulation state."""


class NoCrossingError(BubbleTreeError, ValueError):
    """The profile never reaches pi/2, so no bubble scale can be read off."""


class GrowthWarning(UserWarning):
    """Vanishing condition violated: the corrector grows like R^2."""


class ExtrapolationWarning(UserWarning):
    """A characteristic left the tabulated spectral range."""
