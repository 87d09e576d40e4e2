"""
bubbletree: numerical building blocks for multi-bubble blow-up of the
k = 2 co-rotational wave map.

Modules
-------
profiles     static bubble, zero mode, second solution, trigonometric composites
modulation   the scaling-parameter hierarchy in logarithmic variables
spectral     Weyl solutions, scattering coefficient and spectral density
corrector    elliptic correctors, vanishing condition, orthogonality coefficients
propagators  discrete-mode and continuum solution operators
wavesim      radial finite-difference wave solver and bubble diagnostics
cli          configuration-driven command-line entry point
"""
__version__ = "0.1.0"

from . import corrector, errors, modulation, profiles, propagators, spectral, wavesim  # noqa: E402
from .errors import *  # noqa: E402,F401,F403

__all__ = ["corrector", "errors", "modulation", "profiles", "propagators", "spectral", "wavesim",
           "__version__"] + list(errors.__all__)
