"""
Elliptic correctors around the innermost bubble.

Everything here works in the rescaled variable ``R = lambda_1 r`` on a
log-uniform grid.  The inner operator is

    L = d_RR + (1/R) d_R - 4 cos(2Q(R))/R^2

with fundamental system ``Phi/4`` and ``Theta`` (``R W[Phi/4, Theta] = 1``),
so ``L h = f`` is solved by

    h0 = 1/4 Theta(R) int_0^R f Phi s ds - 1/4 Phi(R) int_0^R f Theta s ds.

The first term grows like ``R^2`` unless the moment ``int_0^inf f Phi s ds``
vanishes, which is what fixes the modulation law for lambda_1.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate

from .errors import DomainError, GrowthWarning, PreconditionError, ResolutionError
from .profiles import bubble_profile, one_minus_cos2q, second_solution, zero_mode, zero_mode_derivative

__all__ = [
    "log_grid",
    "SourceTerm",
    "CorrectorField",
    "MomentResult",
    "OuterProfile",
    "explicit_integrals",
    "e2_coefficients",
    "assemble_E2_tilde",
    "source_from_coefficients",
    "vanishing_defect",
    "enforce_vanishing",
    "solve_h0",
    "orthogonality_coefficient",
    "orthogonality_residual",
]

R_MIN = 1e-6
R_MAX = 1e4
PER_DECADE = 64
# prefactor of the m-correction exactly as printed; pi/2 is the value that
# keeps the vanishing condition intact for m != 0 (see README)
M_FACTOR = 8.0


def log_grid(R_min=R_MIN, R_max=R_MAX, per_decade=PER_DECADE):
    """Log-uniform grid with ``per_decade`` intervals per decade."""
    if not 0 < R_min < R_max:
        raise DomainError("need 0 < R_min < R_max")
    n = int(round(np.log10(R_max / R_min) * per_decade))
    if n < 16:
        raise ResolutionError("grid needs at least 16 intervals")
    return np.exp(np.linspace(np.log(R_min), np.log(R_max), n + 1))


@dataclass
class SourceTerm:
    """
    Samples of a source ``f(R)`` on a log-uniform grid.

    The physical source is ``exp(log_scale) * values``; keeping the scale
    separate lets sources with tower-exponentially small prefactors be
    handled in ordinary floating point (the corrector is linear in f).
    """
    R: np.ndarray
    values: np.ndarray
    kind: str = "custom"
    log_scale: float = 0.0
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.R.shape != self.values.shape:
            raise DomainError("R and values must have the same shape")
        if self.kind not in ("E2", "E2_tilde", "difference", "custom"):
            raise DomainError(f"unknown source kind {self.kind!r}")

    def __sub__(self, other):
        if not np.array_equal(self.R, other.R) or self.log_scale != other.log_scale:
            raise DomainError("sources must share grid and scale")
        return SourceTerm(self.R, self.values - other.values, "difference", self.log_scale)


@dataclass(frozen=True)
class MomentResult:
    value: float
    tail: float
    head: float
    l1_norm: float
    tail_exponent: float


@dataclass
class CorrectorField:
    R: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    residual: float
    moment: float
    two_branch: bool
    log_scale: float = 0.0

    @property
    def growth(self):
        """``h0(R_max)/R_max^2``; of order one when the moment does not vanish."""
        return self.h0[-1] / self.R[-1] ** 2

    def boundedness_constant(self):
        """``sup |h0| / min(1, R^4)``."""
        return float(np.max(np.abs(self.h0) / np.minimum(1.0, self.R**4)))


# -- explicit integrals -----------------------------------------------------

def _quad_half_line(f):
    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
    head, _ = integrate.quad(f, 0.0, 1.0, **opts)
    tail, _ = integrate.quad(lambda s: f(1.0 / s) / s**2 if s > 0 else 0.0, 0.0, 1.0, **opts)
    return head + tail


def explicit_integrals():
    """
    ``I1 = int Phi^2 R dR`` and ``I2 = int (1 - cos 2Q) Phi R dR``.

    Returns the pair ``(I1, I2)``; the exact values are ``2 pi`` and ``4``.
    """
    def one_minus_cos(R):
        return 8.0 * R**4 / (1.0 + R**4) ** 2

    I1 = _quad_half_line(lambda R: zero_mode(R) ** 2 * R)
    I2 = _quad_half_line(lambda R: one_minus_cos(R) * zero_mode(R) * R)
    return I1, I2


# -- moments ----------------------------------------------------------------

def _local_exponent(u, F):
    # slope of log|F| between the last two usable samples
    with np.errstate(divide="ignore"):
        lf = np.log(np.abs(F))
    if not np.all(np.isfinite(lf)):
        return np.nan
    return (lf[1] - lf[0]) / (u[1] - u[0])


def _end_corrections(R, F):
    """Analytic head (``R < R_min``) and tail (``R > R_max``) of ``int F du``."""
    u = np.log(R)
    head = 0.0
    if F[0] != 0.0:
        p = _local_exponent(u[:2], F[:2])
        if not p > 0:
            raise PreconditionError("integrand does not vanish at R -> 0")
        head = F[0] / p
    tail, q = 0.0, np.inf
    if F[-1] != 0.0:
        q = -_local_exponent(u[-2:], F[-2:])
        if not q > 0:
            raise PreconditionError(
                f"divergent tail: f Phi s decays like s^{-q - 1:.2f}, slower than s^-1")
        tail = F[-1] / q
    return head, tail, q


def vanishing_defect(f):
    """
    Moment ``int_0^inf f Phi s ds`` of a :class:`SourceTerm`.

    In ``u = log s`` the integrand ``f Phi s^2`` decays exponentially at both
    ends, so the trapezoid rule on the uniform u-grid converges spectrally;
    the pieces outside the grid are added from the fitted power-law ends.
    The value is returned in the units of ``f.values`` (multiply by
    ``exp(f.log_scale)`` for the physical moment).

    Raises
    ------
    PreconditionError
        If the integrand does not decay at infinity (divergent tail).
    """
    R = f.R
    F = f.values * zero_mode(R) * R**2
    u = np.log(R)
    body = integrate.trapezoid(F, u)
    head, tail, q = _end_corrections(R, F)
    l1 = integrate.trapezoid(np.abs(F), u) + abs(head) + abs(tail)
    return MomentResult(float(body + head + tail), float(tail), float(head), float(l1), float(q))


def enforce_vanishing(f):
    """Subtract the multiple of Phi that removes the moment (``int Phi^2 s ds = 2 pi``)."""
    M = vanishing_defect(f).value
    return SourceTerm(f.R, f.values - M / (2.0 * np.pi) * zero_mode(f.R), f.kind, f.log_scale, dict(f.context))


# -- E2 tilde ---------------------------------------------------------------

def source_from_coefficients(R, a, b, c, kind="E2_tilde", log_scale=0.0, context=None):
    """``a Phi + b (R Phi' - Phi) + c (cos 2Q - 1)`` on the grid R."""
    R = np.asarray(R, dtype=float)
    Phi = zero_mode(R)
    vals = a * Phi + b * (R * zero_mode_derivative(R) - Phi) - c * one_minus_cos2q(R)
    return SourceTerm(R, vals, kind, log_scale, context or {})


def e2_coefficients(d1, d2, log_lbar, *, lambda_tilde_sq_ratio=np.pi / 16.0, mu=0.0, m_factor=M_FACTOR):
    """
    Coefficients ``(a, b, c)`` of the rescaled source, in units of ``lbar^2/lambda_1^2``.

    Parameters
    ----------
    d1, d2 : float
        ``(log lambda_1)'`` and ``(log lambda_1)''`` in t.
    log_lbar : float
        ``log lbar_2`` at the same time.
    lambda_tilde_sq_ratio : float
        ``lambda_tilde_2^2 / lbar_2^2``; ``pi/16`` when no outer radiation
        coefficient is included.
    mu : float
        ``m / lbar_2``.
    """
    lb2 = np.exp(-2.0 * log_lbar)
    a = (d2 + d1 * d1) * lb2
    b = d1 * d1 * lb2
    c = -8.0 * lambda_tilde_sq_ratio - m_factor * (2.0 * mu + mu * mu)
    return a, b, c


def _log_lambda_derivatives(u, alpha, i):
    # d/dt and d^2/dt^2 of alpha(t) from a spline of alpha in u = log t
    order = np.argsort(u)
    spl = interpolate.CubicSpline(u[order], alpha[order])
    t = np.exp(u[i])
    au = spl(u[i], 1)
    auu = spl(u[i], 2)
    return au / t, (auu - au) / t**2


def assemble_E2_tilde(hierarchy, i, R_grid=None, *, m=None, m_factor=M_FACTOR,
                      derivatives="spline", outer_c=None):
    """
    Rescaled source ``E2_tilde`` (plus the m-correction) at time index ``i``.

    The returned :class:`SourceTerm` carries
    ``log_scale = 2 (log lbar_2 - log lambda_1)``, i.e. ``values`` are in units
    of ``lbar_2^2/lambda_1^2``.

    ``derivatives="spline"`` differentiates a cubic spline of ``log lambda_1``
    in ``log t`` (requires ``log lambda_1`` to fit in a double);
    ``"construction"`` uses ``(log lambda_1)' = -lbar_2/(1 + g - N)`` from the
    modulation solve and splines only the small correction.
    """
    from .modulation import float_or_inf

    if R_grid is None:
        R_grid = log_grid()
    level = hierarchy.levels[0]
    lbar = hierarchy.lbar[0]
    if lbar is None:
        raise DomainError("E2_tilde needs n >= 2")
    if m is not None:
        level = hierarchy.perturbed(m)
    u = np.log(hierarchy.t)
    L = lbar.L[i]
    if derivatives == "spline":
        alpha = np.array([float_or_inf(a) for a in level.alpha])
        if not np.all(np.isfinite(alpha)):
            raise ResolutionError("log lambda_1 overflows a double; use derivatives='construction'")
        d1, d2 = _log_lambda_derivatives(u, alpha, i)
    elif derivatives == "construction":
        den = level.denominator
        order = np.argsort(u)
        spl = interpolate.CubicSpline(u[order], den[order])
        t = hierarchy.t[i]
        dden = spl(u[i], 1) / t
        lbar_v = np.exp(L)
        d1 = -lbar_v / den[i]
        d2 = -lbar_v * (lbar.dL[i] * den[i] - dden) / den[i] ** 2
    else:
        raise DomainError(f"unknown derivative mode {derivatives!r}")
    mu = 0.0 if m is None else float(np.asarray(m)[i]) / np.exp(L)
    ratio = np.pi / 16.0
    if outer_c is not None:
        ratio = ratio + float(outer_c) * np.exp(-2.0 * L) * np.pi / 16.0
    a, b, c = e2_coefficients(d1, d2, L, lambda_tilde_sq_ratio=ratio, mu=mu, m_factor=m_factor)
    log_scale = 2.0 * (L - float(level.alpha[i])) if np.isfinite(float_or_inf(level.alpha[i])) else -np.inf
    ctx = {"t": float(hierarchy.t[i]), "a": a, "b": b, "c": c, "mu": mu}
    return source_from_coefficients(R_grid, a, b, c, "E2_tilde", log_scale, ctx)


# -- variation of constants ---------------------------------------------------

def _cumulative(F, u, head):
    return head + integrate.cumulative_trapezoid(F, u, initial=0.0)


def _reverse_cumulative(F, u, tail):
    rev = integrate.cumulative_trapezoid(F[::-1], -u[::-1], initial=0.0)[::-1]
    return tail + rev


def solve_h0(f, f_tilde=None, *, split=1.0, tol=1e-6):
    """
    Variation-of-constants solution of ``L h0 = f`` split as ``h1 + h2 + h3``.

    ``h1 = -1/4 Phi int_0^R f Theta s ds``,
    ``h2 = 1/4 Theta int_0^R f_tilde Phi s ds`` and
    ``h3 = 1/4 Theta int_0^R (f - f_tilde) Phi s ds``.
    When ``f_tilde`` has vanishing moment, ``h2`` is evaluated in the
    two-branch form (outward integral ``-1/4 Theta int_R^inf`` beyond
    ``split``), which keeps it bounded at large R.

    Warns
    -----
    GrowthWarning
        If the moment of ``f_tilde`` exceeds ``tol`` times its L1 norm; h2
        then falls back to the one-sided formula and grows like ``R^2``.
    """
    if f_tilde is None:
        f_tilde = f
    R = f.R
    u = np.log(R)
    if not np.allclose(np.diff(u), u[1] - u[0], rtol=1e-8, atol=0):
        raise DomainError("solve_h0 expects a log-uniform grid")
    Phi = zero_mode(R)
    Theta = second_solution(R)
    w = R**2  # s ds = s^2 du

    if not np.any(f.values) and not np.any(f_tilde.values):
        z = np.zeros_like(R)
        return CorrectorField(R, z, z.copy(), z.copy(), z.copy(), 0.0, 0.0, True, f.log_scale)

    FT = f.values * Theta * w
    headT, _, _ = _end_corrections_head_only(R, FT)
    h1 = -0.25 * Phi * _cumulative(FT, u, headT)

    Ft = f_tilde.values * Phi * w
    mom = vanishing_defect(f_tilde)
    head_t, _, _ = _end_corrections_head_only(R, Ft)
    two_branch = abs(mom.value) <= tol * max(mom.l1_norm, np.finfo(float).tiny)
    inner = _cumulative(Ft, u, head_t)
    if two_branch:
        outer = _reverse_cumulative(Ft, u, mom.tail)
        h2 = np.where(R <= split, 0.25 * Theta * inner, -0.25 * Theta * outer)
    else:
        h2 = 0.25 * Theta * inner
    diff = f.values - f_tilde.values
    if np.any(diff):
        Fd = diff * Phi * w
        head_d, _, _ = _end_corrections_head_only(R, Fd)
        h3 = 0.25 * Theta * _cumulative(Fd, u, head_d)
    else:
        h3 = np.zeros_like(R)
    h0 = h1 + h2 + h3

    Lh = _apply_L(h0, R)
    ref = np.sqrt(integrate.trapezoid((f.values[1:-1] * R[1:-1]) ** 2, u[1:-1]))
    res = np.sqrt(integrate.trapezoid(((Lh - f.values[1:-1]) * R[1:-1]) ** 2, u[1:-1]))
    out = CorrectorField(R, h0, h1, h2, h3, float(res / ref) if ref > 0 else float(res),
                         mom.value, two_branch, f.log_scale)
    if not two_branch:
        warnings.warn(f"vanishing condition violated (moment {mom.value:.3e}); "
                      f"h0(R_max)/R_max^2 = {out.growth:.3e}", GrowthWarning, stacklevel=2)
    return out


def _end_corrections_head_only(R, F):
    u = np.log(R)
    if F[0] == 0.0:
        return 0.0, 0.0, np.inf
    p = _local_exponent(u[:2], F[:2])
    if not p > 0:
        raise PreconditionError("source too singular at R -> 0")
    return F[0] / p, 0.0, np.inf


def _apply_L(h, R):
    from .profiles import elliptic_operator
    return elliptic_operator(h, R)


# -- orthogonality coefficient -------------------------------------------------

@dataclass(frozen=True)
class OuterProfile:
    """
    Bubble part of the outer profile, ``sum_{j>=2} (-1)^j Q(lambda_j r) + c r^2``.

    ``scales`` lists ``lambda_2, lambda_3, ...`` in that order.
    """
    scales: tuple
    c: float = 0.0

    def angle(self, r):
        r = np.asarray(r, dtype=float)
        out = self.c * r**2
        for j, lam in enumerate(self.scales, start=2):
            out = out + (-1) ** j * bubble_profile(lam * r)
        return out


def _potential_difference(S, lambda1, outer):
    Q1 = bubble_profile(S)
    Qo = outer.angle(S / lambda1)
    return 4.0 / S**2 * (np.cos(2.0 * Q1 - 2.0 * Qo) - np.cos(2.0 * Qo))


@dataclass(frozen=True)
class Orthogonality:
    m: float
    integral: float
    truncation: float


def orthogonality_coefficient(h_out, lambda1, outer, S_grid=None):
    """
    Coefficient m with ``4 m = lambda_1^2 int (4/S^2)(cos(2Q_1 - 2Q_out) - cos 2Q_out) h_out Phi S dS``.

    ``h_out`` is a callable of the physical radius ``r = S/lambda_1``.  The
    sign is the one for which the orthogonality relation

        <(4/r^2)(cos(2Q_1 - 2Q_out) - cos 2Q_out) h_out, Phi(lambda_1 .)>
          + m <cos 2Q_1 - 1, Phi(lambda_1 .)> = 0

    holds (``<cos 2Q_1 - 1, Phi(lambda_1 .)> = -4/lambda_1^2``).  The returned
    ``truncation`` is the size of the integrand mass beyond the grid.
    """
    if S_grid is None:
        S_grid = log_grid(1e-6, 1e6, 64)
    S = np.asarray(S_grid, dtype=float)
    u = np.log(S)
    F = _potential_difference(S, lambda1, outer) * h_out(S / lambda1) * zero_mode(S) * S**2
    if not np.any(F):
        return Orthogonality(0.0, 0.0, 0.0)
    body = integrate.trapezoid(F, u)
    scale = integrate.trapezoid(np.abs(F), u)
    trunc = (abs(F[0]) + abs(F[-1])) / max(scale, np.finfo(float).tiny)
    return Orthogonality(float(lambda1**2 * body / 4.0), float(body), float(trunc))


def orthogonality_residual(h_out, lambda1, outer, m, r_max=None):
    """
    Relative size of the combined orthogonality inner product, re-integrated
    in the physical variable r with adaptive quadrature.
    """
    def first(r):
        S = lambda1 * r
        return float(_potential_difference(np.array([S]), lambda1, outer)[0] * lambda1**2
                     * h_out(r) * zero_mode(S) * r)

    def second(r):
        S = lambda1 * r
        return float(-one_minus_cos2q(S) * zero_mode(S) * r)

    # split at the bubble scale; mass is concentrated near r ~ 1/lambda_1
    pts = np.array([0.0, 0.1, 1.0, 10.0, 100.0, 1e4]) / lambda1
    if r_max is not None:
        pts = np.append(pts[pts < r_max], r_max)
    opts = dict(epsabs=0.0, epsrel=1e-12, limit=400)
    A = sum(integrate.quad(first, a, b, **opts)[0] for a, b in zip(pts[:-1], pts[1:]))
    B = sum(integrate.quad(second, a, b, **opts)[0] for a, b in zip(pts[:-1], pts[1:]))
    total = A + m * B
    return abs(total) / max(abs(A), np.finfo(float).tiny)
