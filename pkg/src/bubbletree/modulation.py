"""
The scaling-parameter hierarchy, solved in logarithmic variables.

The outermost scale is ``lambda_n(t) = |log t|^beta / t``.  Each inner scale
solves

    lambda'' / lambda^3 - 2 (lambda'/lambda^2)^2 = -lbar^2 / lambda^2,

    lbar_k = (16/pi)^{1/2} (sum_{j>k} (-1)^{j-k-1} lambda_j^2)^{1/2},

i.e. ``u = 1/lambda`` satisfies ``u'' = lbar^2 u``.  Writing
``(log lambda)' = 1/zeta`` turns this into the Riccati equation
``zeta' = lbar^2 zeta^2 - 1``, whose slow solution is an explicit series
plus a small remainder found by a contracting fixed point.  With
``zeta = -(1 + g)/lbar`` this gives

    log lambda(t) = log lambda(t0) + int_t^t0 lbar / (1 + g) ds.

lambda_1 is a tower exponential, so ``log lambda`` may itself overflow a
double.  Logs of scales are therefore kept as :mod:`mpmath` numbers, while
every ratio that enters the fixed points (``g``, ``W``, ``N``) is O(1) or
small and is handled in ordinary floating point.

Dimensionless quantities used below, for a scale with ``L = log lbar``:
``p1 = L'/lbar``, ``p2 = (L'' + L'^2)/lbar^2``, ``q3 = L'''/lbar^3``.
"""
import logging
from dataclasses import dataclass, field

import mpmath
import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import interpolate

from .errors import ConvergenceError, DomainError, HierarchyOrderingError, PreconditionError, ResolutionError

__all__ = [
    "outermost_scale",
    "log_time_grid",
    "LogScale",
    "ZetaSeries",
    "zeta_series",
    "WFixedPoint",
    "w_fixed_point",
    "ScaleLevel",
    "solve_level",
    "ScaleHierarchy",
    "solve_hierarchy",
    "PerturbationM",
    "perturbed_scale",
    "TimeVariable",
    "integrate_scale",
    "time_variable",
    "growth_ratios",
    "PicardResult",
    "picard_m",
    "step3_functional",
    "weighted_norm",
    "float_or_inf",
]

log = logging.getLogger(__name__)

LBAR_PREFACTOR = 16.0 / np.pi
DEFAULT_T0 = 1e-2
DEFAULT_PER_DECADE = 512
FP_TOL = 1e-12
FP_ITER = 50
_GL_X, _GL_W = leggauss(16)
_STIFF = 40.0


def float_or_inf(x):
    """Convert an mpf (or float) to a double, saturating to +-inf."""
    try:
        return float(x)
    except OverflowError:
        return float("inf") if x > 0 else float("-inf")


def _mpf_array(values):
    out = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        out[i] = mpmath.mpf(v) if not isinstance(v, mpmath.mpf) else v
    return out


def outermost_scale(t, beta):
    """``log lambda_n(t) = beta log|log t| - log t`` for ``0 < t < 1``."""
    t_ = np.asarray(t, dtype=float)
    if np.any(t_ <= 0) or np.any(t_ >= 1):
        raise DomainError("outermost_scale needs 0 < t < 1")
    out = beta * np.log(-np.log(t_)) - np.log(t_)
    return float(out) if np.ndim(t) == 0 else out


def log_time_grid(t0=DEFAULT_T0, t_min=1e-8, per_decade=DEFAULT_PER_DECADE):
    """Geometric grid decreasing from ``t0`` to ``t_min``."""
    if not 0 < t_min < t0:
        raise DomainError("need 0 < t_min < t0")
    n = int(round(np.log10(t0 / t_min) * per_decade))
    if n < 16:
        raise ResolutionError("time grid needs at least 16 intervals")
    return np.exp(np.linspace(np.log(t0), np.log(t_min), n + 1))


def _du_derivative(t, y):
    # dy/dt from a cubic spline of y in u = log t
    u = np.log(t)
    order = np.argsort(u)
    spl = interpolate.CubicSpline(u[order], y[order])
    return spl(u, 1) / t


@dataclass
class LogScale:
    """
    A positive scale ``lbar(t)`` held as ``L = log lbar`` and t-derivatives of L.

    ``t`` is decreasing, matching the hierarchy grids.
    """
    t: np.ndarray
    L: np.ndarray
    dL: np.ndarray
    d2L: np.ndarray
    d3L: np.ndarray

    @classmethod
    def constant(cls, t, value):
        t = np.asarray(t, dtype=float)
        z = np.zeros_like(t)
        return cls(t, np.full_like(t, np.log(value)), z, z.copy(), z.copy())

    @classmethod
    def power_log(cls, t, beta, prefactor=1.0):
        """``prefactor |log t|^beta / t`` with exact derivatives of its log."""
        t = np.asarray(t, dtype=float)
        ell = -np.log(t)
        L = np.log(prefactor) + beta * np.log(ell) + ell
        dL = -(1.0 + beta / ell) / t
        d2L = (1.0 + beta / ell - beta / ell**2) / t**2
        d3L = (-2.0 * (1.0 + beta / ell - beta / ell**2) + beta / ell**2 - 2.0 * beta / ell**3) / t**3
        return cls(t, L, dL, d2L, d3L)

    @classmethod
    def from_samples(cls, t, L, dL=None):
        """Higher derivatives by spline differentiation in ``log t``."""
        t = np.asarray(t, dtype=float)
        L = np.asarray(L, dtype=float)
        if dL is None:
            dL = _du_derivative(t, L)
        d2L = _du_derivative(t, dL)
        d3L = _du_derivative(t, d2L)
        return cls(t, L, np.asarray(dL, dtype=float), d2L, d3L)

    def scaled(self):
        """``(p1, p2, q3)``; exponentially small factors underflow to 0."""
        with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
            e1 = np.exp(-self.L)
            p1 = _prod_exp(self.dL, -self.L)
            p2 = _prod_exp(self.d2L, -2 * self.L) + p1 * p1
            q3 = _prod_exp(self.d3L, -3 * self.L)
        return e1, p1, p2, q3


def _prod_exp(x, log_factor):
    # x * exp(log_factor) without overflow in either factor
    with np.errstate(divide="ignore"):
        mag = np.log(np.abs(x)) + log_factor
    return np.sign(x) * np.exp(np.minimum(mag, 700.0))


@dataclass
class ZetaSeries:
    """
    Four-term slow solution ``zeta_s = -(1 + o)/lbar`` of ``zeta' = lbar^2 zeta^2 - 1``
    and its residual ``E = lbar^2 zeta_s^2 - 1 - zeta_s'``.
    """
    o: np.ndarray
    E: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    q3: np.ndarray
    L: np.ndarray

    @property
    def zeta(self):
        """``-1/lbar - lbar'/(2 lbar^3) + lbar''/(4 lbar^4) - 5 lbar'^2/(8 lbar^5)``."""
        return -(1.0 + self.o) * np.exp(-self.L)


def zeta_series(lbar):
    """
    Slow series solution for ``zeta = 1/(log lambda)'``.

    The residual E is returned in closed form,

        E = -q3/4 + 5 p1 p2/4 - 2 p1^3 + p2^2/16 - 5 p1^2 p2/16 + 25 p1^4/64,

    in which all first- and second-order terms have cancelled analytically.
    """
    _, p1, p2, q3 = lbar.scaled()
    o = 0.5 * p1 - 0.25 * p2 + 0.625 * p1 * p1
    E = (-0.25 * q3 + 1.25 * p1 * p2 - 2.0 * p1**3 + p2 * p2 / 16.0
         - 5.0 / 16.0 * p1 * p1 * p2 + 25.0 / 64.0 * p1**4)
    return ZetaSeries(o, E, p1, p2, q3, lbar.L)


# -- quadrature of exp(l(u)) over a grid segment ------------------------------

def _segment_log_integral(dl, s_a, s_b, h, log_abs_sa=None):
    """
    ``log int_0^h exp(l(x) - l(0)) dx`` for ``l`` matching the end values
    (``dl = l(h) - l(0)``) and end slopes ``s_a, s_b`` by a cubic.

    Moderate segments use 16-point Gauss-Legendre on the cubic model;
    steep ones use the Laplace end-point expansion.  Returns the log of the
    integral and a flag for an unresolved segment.
    """
    if dl < -_STIFF or (np.isfinite(s_a) and s_a * h < -3 * _STIFF) or not np.isfinite(s_a):
        # concentrated at x = 0
        if log_abs_sa is None:
            log_abs_sa = np.log(-s_a)
        return -log_abs_sa, False
    if dl > _STIFF or s_b * h > 3 * _STIFF:
        return dl - np.log(s_b), False
    c2 = (3.0 * dl / h - 2.0 * s_a - s_b) / h
    c3 = (s_a + s_b - 2.0 * dl / h) / h**2
    x = 0.5 * h * (_GL_X + 1.0)
    ell = s_a * x + c2 * x * x + c3 * x**3
    m = ell.max()
    val = m + np.log(0.5 * h * np.dot(_GL_W, np.exp(ell - m)))
    unresolved = abs(c2) * h * h > 8.0 or abs(c3) * h**3 > 8.0
    return val, unresolved


def _log_cumulative(ell, dell, u, log_abs_dell=None, check=True):
    """
    Integrals ``I_i = int_{u_i}^{u_0} exp(l) du`` for a grid with ``u`` decreasing.

    Returns ``(log_I, log_R)`` with ``R_i = I_i / exp(l_i)`` computed through the
    normalized recursion ``R_i = J_i + exp(l_{i-1} - l_i) R_{i-1}``, which
    avoids cancellation even when ``l`` is a huge mpf.  ``log_I`` entries are
    mpf when ``ell`` holds mpf values.
    """
    n = len(u)
    log_R = np.full(n, -np.inf)
    bad = 0
    for i in range(1, n):
        h = u[i - 1] - u[i]
        dl = float_or_inf(ell[i - 1] - ell[i])
        lsa = None if log_abs_dell is None else log_abs_dell[i]
        lj, unresolved = _segment_log_integral(dl, dell[i], dell[i - 1], h, lsa)
        bad += unresolved
        prev = dl + log_R[i - 1] if np.isfinite(log_R[i - 1]) else -np.inf
        log_R[i] = np.logaddexp(lj, prev)
    if check and bad:
        raise ResolutionError(f"{bad} grid segments do not resolve the integrand; refine the t-grid")
    log_I = np.empty(n, dtype=object)
    for i in range(n):
        log_I[i] = ell[i] + log_R[i] if np.isfinite(log_R[i]) else mpmath.ninf
    return log_I, log_R


# -- exponential-integrator fixed points --------------------------------------

def _phi1(K):
    # (1 - e^-K)/K - e^-K, accurate for small K
    K = np.asarray(K, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        big = (1.0 - np.exp(-K)) / K - np.exp(-K)
        small = K / 2.0 - K * K / 3.0 + K**3 / 8.0
    return np.where(K < 1e-3, small, big)


def _step_integrals(lbar, coeff):
    """``K_i = int_{t_i}^{t_{i-1}} lbar * coeff dt`` per segment (float, may be inf)."""
    t = lbar.t
    u = np.log(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        ell = lbar.L + u + np.log(coeff)
    dell = t * lbar.dL + 1.0 + _du_derivative(t, np.log(coeff)) * t
    K = np.empty(len(t))
    K[0] = 0.0
    for i in range(1, len(t)):
        h = u[i - 1] - u[i]
        lj, _ = _segment_log_integral(ell[i - 1] - ell[i], dell[i], dell[i - 1], h)
        K[i] = np.exp(min(ell[i] + lj, 700.0))
    return K


def _etd_sweep(K, Q, W_start):
    """
    Forward-in-t exponential integrator for ``W' = -k W + k Q``.

    Arrays are indexed on the decreasing-t grid; the sweep runs from the
    last index (smallest t) to index 0.  ``Q`` is taken piecewise linear in t.
    """
    n = len(K)
    W = np.empty(n)
    W[-1] = W_start
    eK = np.exp(-K)
    one_m = -np.expm1(-K)
    ph = _phi1(K)
    for i in range(n - 1, 0, -1):
        # step from t_i to t_{i-1}; K[i] is the integral over that segment
        W[i - 1] = eK[i] * W[i] + one_m[i] * Q[i - 1] - (Q[i - 1] - Q[i]) * ph[i]
    return W


def _fixed_point(K, source, denom, iterations, tol, what):
    """Picard iteration ``W -> ETD[(source + W^2)/denom]`` started from 0."""
    W = np.zeros_like(source)
    defects, factors = [], []
    for k in range(1, iterations + 1):
        Q = (source + W * W) / denom
        W_new = _etd_sweep(K, Q, Q[-1])
        d = float(np.max(np.abs(W_new - W)))
        defects.append(d)
        if len(defects) >= 2 and defects[-2] > 0:
            factors.append(d / defects[-2])
            if factors[-1] >= 1.0 and d > tol:
                raise ConvergenceError(f"{what}: contraction factor {factors[-1]:.3g} >= 1")
        W = W_new
        if d <= tol:
            break
    else:
        if defects[-1] > tol:
            raise ConvergenceError(f"{what}: no convergence in {iterations} iterations")
    return W, defects, factors


@dataclass
class WFixedPoint:
    """
    Remainder ``w = zeta - zeta_s`` with ``W = lbar w`` and ``g = o - W``.
    """
    W: np.ndarray
    g: np.ndarray
    iterations: int
    defect: float
    contraction: list
    L: np.ndarray

    @property
    def w(self):
        return self.W * np.exp(-self.L)

    @property
    def contraction_factor(self):
        return max(self.contraction) if self.contraction else 0.0


def w_fixed_point(lbar, E=None, *, iterations=FP_ITER, tol=FP_TOL, series=None):
    """
    Solve ``w' + lt w = E + (lbar w)^2`` with ``lt = -2 lbar^2 zeta_s`` as the
    fixed point ``w = int_0^t exp(-int_t'^t lt) [E + (lbar w)^2] dt'``.

    The unknown is scaled as ``W = lbar w``, for which the kernel rate is
    ``lbar (2(1 + o) - p1)``.  Each Picard step is one forward sweep of an
    exponential integrator, exact for piecewise-linear sources, so stiffness
    (rates of size lbar) costs nothing.  Integration starts at the smallest
    t on the quasi-static value, standing in for the integral over ``(0, t_min)``.

    Parameters
    ----------
    E : array_like, optional
        Override for the residual of the series (default: its closed form).

    Raises
    ------
    ConvergenceError
        If successive iterate distances fail to contract.
    """
    zs = series if series is not None else zeta_series(lbar)
    Ev = zs.E if E is None else np.broadcast_to(np.asarray(E, dtype=float), zs.E.shape).copy()
    coeff = 2.0 * (1.0 + zs.o) - zs.p1
    if np.any(coeff <= 0):
        raise ConvergenceError("kernel rate is not positive; lbar is too small on this grid")
    K = _step_integrals(lbar, coeff)
    W, defects, factors = _fixed_point(K, Ev, coeff, iterations, tol, "w fixed point")
    return WFixedPoint(W, zs.o - W, len(defects), defects[-1], factors, lbar.L)


def _nu_fixed_point(lbar, g, mu, p1, iterations, tol):
    """
    Perturbation ``nu`` of zeta (``N = lbar nu``) for ``lbar -> lbar + m``.

    ``N' = lbar [(mu^2 + 2mu)(1+g)^2 + N^2 (1+mu)^2 - (2(1+g)(1+mu)^2 - p1) N]``.
    """
    a = (1.0 + g) * (1.0 + mu) ** 2
    coeff = 2.0 * a - p1
    src = (mu * mu + 2.0 * mu) * (1.0 + g) ** 2
    K = _step_integrals(lbar, coeff)
    # quadratic coefficient (1+mu)^2 folded into the scaled unknown
    s = (1.0 + mu) ** 2
    Y, defects, factors = _fixed_point(K, src * s, coeff, iterations, tol, "nu fixed point")
    return Y / s, defects, factors


# -- levels and the hierarchy -------------------------------------------------

@dataclass
class ScaleLevel:
    """
    One scale ``lambda_j`` of the hierarchy.

    ``alpha`` holds ``log lambda_j`` (mpf objects); ``denominator`` is
    ``1 + g - N`` so that ``(log lambda_j)' = -lbar/denominator``.
    """
    j: int
    t: np.ndarray
    alpha: np.ndarray
    log_increment: np.ndarray
    denominator: np.ndarray
    lbar: LogScale = None
    g: np.ndarray = None
    N: np.ndarray = None
    fixed_point: WFixedPoint = None
    nu_defects: list = field(default_factory=list)

    @property
    def dlog(self):
        """``(log lambda_j)'`` as floats (``-inf`` where it overflows)."""
        if self.lbar is None:
            return LogScale.power_log(self.t, self._beta).dL
        with np.errstate(over="ignore"):
            return -np.exp(np.minimum(self.lbar.L, 709.0)) / self.denominator * np.where(self.lbar.L > 709, np.inf, 1.0)

    def log_abs_dlog(self):
        """``log |(log lambda_j)'|`` without overflow."""
        if self.lbar is None:
            return np.log(np.abs(LogScale.power_log(self.t, self._beta).dL))
        return self.lbar.L - np.log(self.denominator)

    def alpha_float(self):
        return np.array([float_or_inf(a) for a in self.alpha])


def _outermost_level(t, beta, j):
    alpha = _mpf_array(outermost_scale(t, beta))
    lvl = ScaleLevel(j, t, alpha, np.full(len(t), -np.inf), np.ones_like(t))
    lvl._beta = beta
    return lvl


def solve_level(lbar, *, log_lambda_top=0.0, m=None, j=1, iterations=FP_ITER, tol=FP_TOL, check=True):
    """
    Solve ``u'' = (lbar + m)^2 u`` for ``lambda = 1/u`` on the grid of ``lbar``.

    Returns a :class:`ScaleLevel` with ``log lambda(t0) = log_lambda_top``.
    """
    t = lbar.t
    u = np.log(t)
    zs = zeta_series(lbar)
    fp = w_fixed_point(lbar, iterations=iterations, tol=tol, series=zs)
    g = fp.g
    N = np.zeros_like(t)
    nu_def = []
    if m is not None:
        mu = np.asarray(m, dtype=float) * np.exp(-lbar.L)
        if np.any(mu != 0):
            N, nu_def, _ = _nu_fixed_point(lbar, g, mu, zs.p1, iterations, tol)
    den = 1.0 + g - N
    if np.any(den <= 0):
        raise ConvergenceError("1 + g - N must stay positive")
    ell = lbar.L + u - np.log(den)
    dell = t * lbar.dL + 1.0 - t * _du_derivative(t, np.log(den))
    log_I, _ = _log_cumulative(ell, dell, u, check=check)
    top = mpmath.mpf(log_lambda_top)
    alpha = np.empty(len(t), dtype=object)
    for i, li in enumerate(log_I):
        alpha[i] = top + mpmath.exp(mpmath.mpf(li)) if li != mpmath.ninf else top
    log_inc = np.array([float_or_inf(x) for x in log_I])
    return ScaleLevel(j, t, alpha, log_inc, den, lbar, g, N, fp, nu_def)


def _lbar_from_levels(levels, k, outer_c=None):
    """
    ``lbar`` built from levels ``k, k+1, ...`` (0-based list of outer scales).

    ``lbar^2 = (16/pi)(lambda_k^2 - lambda_{k+1}^2 + ... [+ c])``.
    """
    base = levels[0]
    t = base.t
    n = len(t)
    S = np.ones(n)
    dS = np.zeros(n)
    d_base = base.dlog
    for i, lvl in enumerate(levels[1:], start=1):
        diff = np.array([float_or_inf(2 * (a - b)) for a, b in zip(lvl.alpha, base.alpha)])
        r = np.exp(diff)
        sgn = (-1) ** i
        S += sgn * r
        with np.errstate(invalid="ignore"):
            term = sgn * r * 2.0 * (lvl.dlog - d_base)
        dS += np.where(r == 0, 0.0, term)
    if outer_c is not None:
        alpha0 = base.alpha_float()
        rc = np.asarray(outer_c) * np.exp(-2.0 * alpha0)
        S += rc
        dS += _du_derivative(t, rc)
    if np.any(S <= 0):
        bad = t[S <= 0]
        raise HierarchyOrderingError(f"alternating sum non-positive for t in [{bad.min():.3e}, {bad.max():.3e}]")
    alpha0 = base.alpha_float()
    if not np.all(np.isfinite(alpha0)):
        raise OverflowError("lbar itself overflows a double; the tower is too tall for this window")
    L = 0.5 * np.log(LBAR_PREFACTOR) + alpha0 + 0.5 * np.log(S)
    dL = d_base + 0.5 * dS / S
    return LogScale.from_samples(t, L, dL)


@dataclass
class ScaleHierarchy:
    """
    Solved hierarchy on a decreasing t-grid.

    ``levels[j-1]`` is lambda_j (so ``levels[0]`` is the innermost, fastest
    scale) and ``lbar[j-1]`` is the scale ``lbar_{j+1}`` used to build it
    (``None`` for the outermost level).
    """
    n: int
    beta: float
    t: np.ndarray
    levels: list
    lbar: list
    tau: list = field(default_factory=list)
    lower_bound_c: list = field(default_factory=list)
    crossover: float = None
    settings: dict = field(default_factory=dict)

    @property
    def log_lambda(self):
        return [lvl.alpha for lvl in self.levels]

    def log_lambda_float(self, j):
        return self.levels[j - 1].alpha_float()

    def perturbed(self, m, check=True):
        return perturbed_scale(self, m, enforce_bound=check, return_level=True)


def solve_hierarchy(n, beta, t0=DEFAULT_T0, grid=None, *, t_min=1e-8, per_decade=DEFAULT_PER_DECADE,
                    anchor_gap=np.log(2.0), lbar_override=None, outer_c=None,
                    iterations=FP_ITER, tol=FP_TOL, compute_tau=True):
    """
    Solve the n-level hierarchy on a decreasing geometric grid.

    Parameters
    ----------
    n : int
        Number of scales.
    beta : float
        Exponent of the outermost scale.
    grid : array_like, optional
        Decreasing t-samples in ``(0, t0]``; built with ``log_time_grid``
        otherwise.
    anchor_gap : float
        Each inner level starts at ``log lambda_k(t0) = log lambda_{k+1}(t0) + anchor_gap``
        so that the alternating sums are positive from the top of the grid.
    lbar_override : LogScale, optional
        Test hook: use this in place of ``lbar_2`` when building lambda_1
        (requires ``n == 2``).
    outer_c : array_like, optional
        Radiation coefficient ``c_{n-1}(t)`` added under the root of ``lbar_2``.

    Raises
    ------
    HierarchyOrderingError
        When an alternating sum is non-positive somewhere on the grid.
    ResolutionError
        When the grid cannot resolve an integrand.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    t = log_time_grid(t0, t_min, per_decade) if grid is None else np.asarray(grid, dtype=float)
    if np.any(np.diff(t) >= 0) or t[0] > t0 * (1 + 1e-12) or t[-1] <= 0:
        raise DomainError("grid must be strictly decreasing inside (0, t0]")
    if lbar_override is not None and n != 2:
        raise DomainError("lbar_override is a two-level test hook")

    outer = _outermost_level(t, beta, n)
    levels = [outer]
    lbars = [None]
    for k in range(n - 1, 0, -1):
        if lbar_override is not None:
            lb = lbar_override
        else:
            lb = _lbar_from_levels(levels, 0, outer_c if k == 1 else None)
        top = float_or_inf(levels[0].alpha[0]) + anchor_gap
        lvl = solve_level(lb, log_lambda_top=top, j=k, iterations=iterations, tol=tol)
        levels.insert(0, lvl)
        lbars.insert(0, lb)
        log.debug("level %d solved: w contraction %.3g", k, lvl.fixed_point.contraction_factor)

    h = ScaleHierarchy(n, beta, t, levels, lbars,
                       settings=dict(t0=float(t[0]), t_min=float(t[-1]), points=len(t),
                                     anchor_gap=float(anchor_gap), iterations=iterations, tol=tol))
    if compute_tau:
        h.tau = [time_variable(h, j) for j in range(1, n + 1)]
        h.lower_bound_c = []
        for j in range(1, n):
            ratio = _log_ratio(h.levels[j - 1].alpha, h.tau[j].log_tau)
            h.lower_bound_c.append(float(np.min(ratio[1:])) if len(ratio) > 1 else float("nan"))
    h.crossover = _crossover(h)
    return h


def _log_ratio(alpha, log_tau):
    # log lambda_j / tau_{j+1}, computed through mpf
    out = np.empty(len(alpha))
    for i, (a, lt) in enumerate(zip(alpha, log_tau)):
        if lt == mpmath.ninf:
            out[i] = np.inf
        else:
            out[i] = float_or_inf(a / mpmath.exp(mpmath.mpf(lt)))
    return out


def _crossover(h):
    """Largest grid time below which ``log lambda_1 > ... > log lambda_n`` holds."""
    ok = np.ones(len(h.t), dtype=bool)
    for j in range(h.n - 1):
        a, b = h.levels[j].alpha, h.levels[j + 1].alpha
        ok &= np.array([x > y for x, y in zip(a, b)])
    bad = np.nonzero(~ok)[0]
    if bad.size == 0:
        return float(h.t[0])
    if bad[-1] == len(h.t) - 1:
        return float("nan")
    return float(h.t[bad[-1] + 1])


# -- perturbation by m ----------------------------------------------------------

@dataclass
class PerturbationM:
    """Samples of ``m(t)`` on the hierarchy grid and cached ``||m||_{p,l}`` values."""
    values: np.ndarray
    norm_cache: dict = field(default_factory=dict)

    def norm(self, hierarchy, p=0.5, l=0):
        key = (p, l)
        if key not in self.norm_cache:
            self.norm_cache[key] = weighted_norm(self.values, hierarchy, p, l)
        return self.norm_cache[key]


def lemma_log_tau(hierarchy, c=1.0):
    """``log tau = c int_t^t0 lbar_2 ds`` (the weight of the m-norms)."""
    lb = hierarchy.lbar[0]
    u = np.log(hierarchy.t)
    log_I, _ = _log_cumulative(lb.L + u, hierarchy.t * lb.dL + 1.0, u, check=False)
    return np.array([c * float_or_inf(mpmath.exp(x)) if x != mpmath.ninf else 0.0 for x in log_I])


def weighted_norm(values, hierarchy, p=0.5, l=0, c=1.0):
    """``||m||_{p,l} = sum_{j<=l} sup |tau^p (t d/dt)^j m|``."""
    values = np.asarray(values, dtype=float)
    log_tau = lemma_log_tau(hierarchy, c)
    total = 0.0
    cur = values
    u = np.log(hierarchy.t)
    for j in range(l + 1):
        with np.errstate(divide="ignore", over="ignore"):
            mag = np.where(cur != 0, np.log(np.abs(cur)) + p * log_tau, -np.inf)
        total += float(np.exp(np.max(mag))) if np.any(np.isfinite(mag)) else 0.0
        if j < l:
            order = np.argsort(u)
            cur = interpolate.CubicSpline(u[order], cur[order])(u, 1)
    return total


@dataclass
class PerturbedScale:
    alpha: np.ndarray
    delta_log_lambda: np.ndarray
    level: ScaleLevel


def perturbed_scale(hierarchy, m, *, enforce_bound=True, return_level=False,
                    iterations=FP_ITER, tol=FP_TOL):
    """
    ``log lambda_1`` for the equation with ``lbar_2`` replaced by ``lbar_2 + m``.

    The correction is the fixed point of the nu-equation; with ``m == 0`` the
    computation goes through exactly the same arithmetic as
    :func:`solve_hierarchy`, so the output is bitwise identical.  The
    difference ``log lambda_1[m] - log lambda_1[0]`` is integrated on its own
    (``int lbar N / (den_0 den_m)``) so that tiny admissible m remain visible.

    Raises
    ------
    PreconditionError
        If ``enforce_bound`` and ``|m| > tau^{-1/2}`` somewhere.
    """
    if hierarchy.n < 2:
        raise DomainError("perturbed_scale needs n >= 2")
    mv = m.values if isinstance(m, PerturbationM) else np.asarray(m, dtype=float)
    mv = np.broadcast_to(mv, hierarchy.t.shape).astype(float)
    if enforce_bound:
        log_tau = lemma_log_tau(hierarchy)
        with np.errstate(divide="ignore"):
            lm = np.log(np.abs(mv))
        if np.any(lm > -0.5 * log_tau + 1e-12):
            raise PreconditionError("|m| exceeds tau^{-1/2} on the grid")
    base = hierarchy.levels[0]
    lbar = hierarchy.lbar[0]
    top = float(base.alpha[0])
    lvl = solve_level(lbar, log_lambda_top=top, m=mv, j=1, iterations=iterations, tol=tol)
    if not np.any(mv):
        lvl.alpha = base.alpha.copy()
    # difference integral: lbar (1/den_m - 1/den_0) = lbar N/(den_0 den_m)
    t = hierarchy.t
    u = np.log(t)
    num = lvl.N / (base.denominator * lvl.denominator)
    delta = np.zeros(len(t))
    if np.any(num):
        with np.errstate(over="ignore"):
            integrand = num * np.exp(np.minimum(lbar.L, 700.0)) * t
        if np.all(lbar.L < 700):
            delta = -_cumtrapz_from_top(integrand, u)
        else:
            raise OverflowError("difference integrand overflows; use a shorter window")
    if return_level:
        return lvl
    return PerturbedScale(lvl.alpha, delta, lvl)


def _cumtrapz_from_top(f, u):
    out = np.zeros(len(u))
    for i in range(1, len(u)):
        out[i] = out[i - 1] + 0.5 * (f[i] + f[i - 1]) * (u[i - 1] - u[i])
    return -out


# -- time variables ---------------------------------------------------------------

@dataclass
class TimeVariable:
    """
    ``tau_j(t) = int_t^t0 lambda_j ds``.

    ``log_tau`` holds mpf logs; ``tau`` is the float view (inf where it
    overflows, flagged by ``overflow``).  ``ratio`` is ``tau_j lbar_{j+1}/lambda_j``.
    """
    j: int
    log_tau: np.ndarray
    tau: np.ndarray
    overflow: bool
    ratio: np.ndarray
    richardson: float


def integrate_scale(t, log_lambda, dlog_lambda, log_abs_dlog=None, check=True):
    """
    ``log int_t^t0 lambda ds`` for ``lambda = exp(log_lambda)`` on a decreasing grid.

    ``dlog_lambda`` is ``d(log lambda)/dt``.  Returns ``(log_tau, log_R)`` with
    ``R = tau/(t lambda)``.
    """
    t = np.asarray(t, dtype=float)
    u = np.log(t)
    ell = np.array([a + ui for a, ui in zip(log_lambda, u)], dtype=object)
    with np.errstate(over="ignore", invalid="ignore"):
        dell = 1.0 + t * np.asarray(dlog_lambda, dtype=float)
    lad = None
    if log_abs_dlog is not None:
        # log |1 + t (log lambda)'| for strongly decreasing lambda
        x = u + np.asarray(log_abs_dlog, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            lad = x + np.log1p(-np.exp(-x))
    return _log_cumulative(ell, dell, u, lad, check=check)


def time_variable(hierarchy, j):
    """Time variable of scale ``j`` (1-based) with a half-grid Richardson check."""
    lvl = hierarchy.levels[j - 1]
    t = hierarchy.t
    u = np.log(t)
    lad = lvl.log_abs_dlog()
    dlog = lvl.dlog
    log_tau, log_R = integrate_scale(t, lvl.alpha, dlog, lad)
    tau = np.array([float_or_inf(mpmath.exp(x)) if x != mpmath.ninf else 0.0 for x in log_tau])
    lb = hierarchy.lbar[j - 1]
    ratio = None
    if lb is not None:
        with np.errstate(over="ignore"):
            ratio = np.exp(log_R + u + lb.L)
    sub = slice(None, None, 2)
    lt2, _ = integrate_scale(t[sub], lvl.alpha[sub], dlog[sub], lad[sub], check=False)
    d = [abs(float_or_inf(a - b)) for a, b in zip(log_tau[sub][1:], lt2[1:])]
    rich = float(max(d)) if d else 0.0
    return TimeVariable(j, log_tau, tau, bool(np.any(~np.isfinite(tau))), ratio, rich)


def _ratio_to_integral(alpha, log_I):
    out = np.full(len(alpha), np.nan)
    for i, (a, li) in enumerate(zip(alpha, log_I)):
        if li != mpmath.ninf:
            out[i] = float_or_inf(a / mpmath.exp(li))
    return out


def growth_ratios(hierarchy):
    """
    Diagnostics of the growth of lambda_1 (n >= 2), as float arrays on the grid.

    ``literal``: ``log lambda_1 / int_t^t0 lambda_2``;
    ``lbar``: ``log lambda_1 / int_t^t0 lbar_2``;
    ``tau``: ``tau_1 lbar_2 / lambda_1``.
    """
    if hierarchy.n < 2:
        raise DomainError("growth_ratios needs n >= 2")
    alpha = hierarchy.levels[0].alpha
    log_int_lbar = lemma_log_tau_mp(hierarchy)
    return {
        "literal": _ratio_to_integral(alpha, hierarchy.tau[1].log_tau),
        "lbar": _ratio_to_integral(alpha, log_int_lbar),
        "tau": hierarchy.tau[0].ratio,
    }


def lemma_log_tau_mp(hierarchy):
    """``log int_t^t0 lbar_2 ds`` as mpf values (``-inf`` at t0)."""
    lb = hierarchy.lbar[0]
    u = np.log(hierarchy.t)
    log_I, _ = _log_cumulative(lb.L + u, hierarchy.t * lb.dL + 1.0, u, check=False)
    return log_I


# -- Picard scheme for m --------------------------------------------------------------

@dataclass
class PicardResult:
    m: np.ndarray
    defect: float
    history: list
    lipschitz: list


def _sup(x, weights=None):
    x = np.abs(np.asarray(x, dtype=float))
    if weights is not None:
        x = x * weights
    return float(np.max(x)) if x.size else 0.0


def picard_m(P, d, steps=8, *, weights=None, noise=1e-14):
    """
    Iterated-difference Picard scheme ``P^(k+1)(d) = P(d + P^(k)(d))``.

    Stops early once the difference reaches the round-off floor.
    Returns ``m = d + P^(K)(d)`` and the defect ``||m - d - P(m)||`` (which
    equals ``||P^(K+1)(d) - P^(K)(d)||``).  The ratio of successive
    differences estimates the Lipschitz constant of P along the iteration.

    Parameters
    ----------
    P : callable
        Functional acting on arrays (or scalars).
    d : array_like
        Drive term.
    weights : array_like, optional
        Weights of the sup norm (e.g. ``tau^p``).

    Raises
    ------
    ConvergenceError
        If an estimated Lipschitz constant is >= 1.
    """
    d = np.asarray(d, dtype=float)
    prev = P(d)
    history, lips = [], []
    last = _sup(prev, weights)
    for _ in range(steps):
        cur = P(d + prev)
        diff = _sup(cur - prev, weights)
        history.append(diff)
        # round-off scales with the iterate, not only with d
        floor = noise * max(1.0, _sup(d, weights), _sup(d + prev, weights))
        if last > floor:
            lips.append(diff / last)
            if lips[-1] >= 1.0:
                raise ConvergenceError(f"Picard scheme diverges: Lipschitz estimate {lips[-1]:.3g}")
        last = diff
        prev, m_prev = cur, d + prev
        if diff <= floor:
            break
    m = m_prev if steps else d + prev
    defect = _sup(m - d - P(m), weights)
    return PicardResult(m, defect, history, lips)


def step3_functional(mk_sum, lbar):
    """
    ``(P, d)`` for the balance law ``M(m) = (1/(16 lbar)) sum m_k - m^2/(2 lbar)``:
    ``P(m) = M(m) - M(0)`` and ``d = M(0)``.
    """
    def M(m):
        return mk_sum(m) / (16.0 * lbar) - np.asarray(m) ** 2 / (2.0 * lbar)

    zero = M(np.zeros_like(np.asarray(lbar, dtype=float)))

    def P(m):
        return M(m) - zero

    return P, zero
