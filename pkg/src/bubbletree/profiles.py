"""
Closed-form static bubble and the linearized fundamental system.

The k = 2 co-rotational wave map has the static solution
``Q(r) = 2 arctan(r^2)``.  Linearizing around it gives the elliptic operator

    L = d^2/dR^2 + (1/R) d/dR - 4 cos(2Q)/R^2

whose kernel is spanned by the zero mode ``Phi = R Q'(R)`` and a second
solution ``Theta`` that is singular at the origin.  Every other module is
built on these functions, so they are kept as pure vectorized maps.

Normalization: with ``W[f, g] = f g' - f' g`` one has
``R W[Theta, Phi/4](R) = -1`` for all R, so ``Phi/4`` and ``Theta`` form a
fundamental system with ``p W = 1`` in the Sturm-Liouville form
``(R h')' - R V h = R f``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularPointError

__all__ = [
    "ProfileEval",
    "bubble_profile",
    "bubble_derivative",
    "zero_mode",
    "zero_mode_derivative",
    "second_solution",
    "trig_composites",
    "one_minus_cos2q",
    "evaluate",
    "wronskian",
    "elliptic_operator",
    "THETA_SMALL",
    "THETA_LARGE",
]

# switch points for the rewritten forms of Theta
THETA_SMALL = 1e-2
THETA_LARGE = 1e2


def _nonnegative(x, name="r"):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError(f"{name} must be >= 0")
    return x


def _scalar_or_array(x, out):
    return float(out) if np.ndim(x) == 0 else out


def bubble_profile(r):
    """Static bubble ``Q(r) = 2 arctan(r^2)``."""
    r_ = _nonnegative(r)
    return _scalar_or_array(r, 2.0 * np.arctan(r_ * r_))


def bubble_derivative(r):
    """``Q'(r) = 4 r / (1 + r^4)``."""
    r_ = _nonnegative(r)
    return _scalar_or_array(r, 4.0 * r_ / (1.0 + r_**4))


def zero_mode(R):
    """Zero mode ``Phi(R) = R Q'(R) = 4 R^2 / (1 + R^4)``."""
    R_ = _nonnegative(R, "R")
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.where(R_ > 1e75, 4.0 / np.maximum(R_, 1.0) ** 2, 4.0 * R_**2 / (1.0 + R_**4))
    return _scalar_or_array(R, out)


def zero_mode_derivative(R):
    """``Phi'(R) = 8 R (1 - R^4) / (1 + R^4)^2``."""
    R_ = _nonnegative(R, "R")
    with np.errstate(over="ignore", invalid="ignore"):
        s = R_**4
        out = np.where(R_ > 1e75, -8.0 / np.maximum(R_, 1.0) ** 3, 8.0 * R_ * (1.0 - s) / (1.0 + s) ** 2)
    return _scalar_or_array(R, out)


def second_solution(R):
    """
    Second solution of ``L Theta = 0``.

    ``Theta(R) = (-1 + 8 R^4 log R + R^8) / (4 R^2 (1 + R^4))``.

    Near the origin and at infinity the fraction is evaluated in a rewritten
    (algebraically identical) form so that ``R^8`` never overflows and the
    leading ``-1/(4R^2)`` is kept separate from the small terms.

    Raises
    ------
    SingularPointError
        If any ``R == 0``.
    """
    R_ = _nonnegative(R, "R")
    if np.any(R_ == 0):
        raise SingularPointError("Theta ~ -1/(4R^2) is singular at R = 0")
    R_ = np.atleast_1d(R_)
    out = np.empty_like(R_)

    small = R_ < THETA_SMALL
    large = R_ > THETA_LARGE
    mid = ~(small | large)

    Rs = R_[small]
    s4 = Rs**4
    out[small] = -1.0 / (4.0 * Rs**2 * (1.0 + s4)) + (2.0 * Rs**2 * np.log(Rs) + 0.25 * Rs**6) / (1.0 + s4)

    Rl = R_[large]
    inv4 = Rl**-4.0
    out[large] = 0.25 * Rl**2 * (1.0 + 8.0 * np.log(Rl) * inv4 - inv4 * inv4) / (1.0 + inv4)

    Rm = R_[mid]
    m4 = Rm**4
    out[mid] = (-1.0 + 8.0 * m4 * np.log(Rm) + m4 * m4) / (4.0 * Rm**2 * (1.0 + m4))

    return float(out[0]) if np.ndim(R) == 0 else out


def trig_composites(R):
    """
    Return ``(sin 2Q, cos 2Q)`` as rational functions of R.

    ``sin 2Q = 4R^2 (1 - R^4)/(1 + R^4)^2`` and
    ``cos 2Q = 1 - 8R^4/(1 + R^4)^2``.
    """
    R_ = _nonnegative(R, "R")
    with np.errstate(over="ignore", invalid="ignore"):
        big = R_ > 1e60
        Rc = np.where(big, 1.0, R_)
        s4 = Rc**4
        sin2q = 4.0 * Rc**2 * (1.0 - s4) / (1.0 + s4) ** 2
        cos2q = 1.0 - 8.0 * s4 / (1.0 + s4) ** 2
        Rb = np.where(big, R_, 1.0)
        sin2q = np.where(big, -4.0 / Rb**2, sin2q)
        cos2q = np.where(big, 1.0, cos2q)
    return _scalar_or_array(R, sin2q), _scalar_or_array(R, cos2q)


def one_minus_cos2q(R):
    """``1 - cos 2Q = 8R^4/(1 + R^4)^2`` without cancellation at small R."""
    R_ = _nonnegative(R, "R")
    with np.errstate(over="ignore", invalid="ignore"):
        big = R_ > 1e60
        Rc = np.where(big, 1.0, R_)
        s4 = Rc**4
        out = np.where(big, 8.0 / np.where(big, R_, 1.0) ** 4, 8.0 * s4 / (1.0 + s4) ** 2)
    return _scalar_or_array(R, out)


@dataclass(frozen=True)
class ProfileEval:
    r: np.ndarray
    q: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    sin2q: np.ndarray
    cos2q: np.ndarray


def evaluate(R):
    """Evaluate every profile quantity on ``R > 0``."""
    R = np.atleast_1d(np.asarray(R, dtype=float))
    s, c = trig_composites(R)
    return ProfileEval(R, bubble_profile(R), zero_mode(R), second_solution(R), s, c)


def _d4(f, x, h):
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def wronskian(f, g, R, rel_step=1e-3):
    """
    ``W[f, g](R) = f g' - f' g`` by fourth-order central differences.

    The step is relative, ``h = rel_step * R``: the profiles vary on the
    scale R itself, so a relative step keeps both truncation and rounding
    near 1e-12 from R = 1e-3 up to R = 1e3.
    """
    R = np.asarray(R, dtype=float)
    h = rel_step * R
    return f(R) * _d4(g, R, h) - _d4(f, R, h) * g(R)


def elliptic_operator(h, R):
    """
    Apply the discretized ``L`` to samples ``h`` on a log-uniform grid ``R``.

    In ``u = log R`` the operator reads ``R^-2 (h_uu - 4 cos(2Q) h)``; the
    second difference in u is second-order accurate.  Returns values at the
    interior nodes ``R[1:-1]``.
    """
    R = np.asarray(R, dtype=float)
    h = np.asarray(h, dtype=float)
    u = np.log(R)
    du = np.diff(u)
    if not np.allclose(du, du[0], rtol=1e-8, atol=0):
        raise DomainError("elliptic_operator expects a log-uniform grid")
    du = du[0]
    huu = (h[2:] - 2 * h[1:-1] + h[:-2]) / du**2
    _, cos2q = trig_composites(R[1:-1])
    return (huu - 4.0 * cos2q * h[1:-1]) / R[1:-1] ** 2
