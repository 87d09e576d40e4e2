"""
Decoupled solution operators for the rescaled linearized wave equation.

After passing to the time variable ``tau`` and the distorted Fourier basis,
the diagonal part of the linearized problem splits into

* a discrete mode ``-d_tau (d_tau - omega) h_p = g_p`` with
  ``omega = lambda'/lambda``, whose homogeneous solutions are ``lambda`` and
  ``lambda int ds/lambda`` (Wronskian exactly ``lambda``), and
* a continuum channel, solved by a Duhamel integral against the Green kernel

      U(tau, sigma, xi) = xi^{-1/2} [rho(lambda^2(tau) xi / lambda^2(sigma)) / rho(xi)]^{1/2}
                          (lambda(tau)/lambda(sigma)) sin(xi^{1/2} lambda(tau) int_tau^sigma ds/lambda).

Both solvers integrate backward from ``tau = inf``: sources must decay and
the truncated tail is added from a fitted power law.  The same code serves
the inner and outer scales; only ``lambda`` changes.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate

from .errors import DomainError, ExtrapolationWarning, PreconditionError

__all__ = [
    "ModeSource",
    "fit_decay",
    "inverse_scale_integral",
    "discrete_mode_solve",
    "discrete_mode_operator",
    "homogeneous_pair",
    "mode_wronskian",
    "continuous_green",
    "green_bound",
    "continuous_solve",
    "characteristic_residual",
    "spectral_rho",
]


@dataclass
class ModeSource:
    """
    Sources of the diagonal system on a tau grid.

    ``g_p`` holds discrete-mode samples; ``g_c`` is a callable ``g_c(sigma, xi)``
    for the continuum channel.  ``q`` is the fitted decay exponent of ``g_p``.
    """
    tau: np.ndarray
    g_p: np.ndarray = None
    g_c: object = None
    scale: str = "outer"

    @property
    def q(self):
        return fit_decay(self.tau, self.g_p) if self.g_p is not None else None


def fit_decay(tau, g, fraction=0.25):
    """
    Exponent q of ``|g| ~ tau^{-q}``, fitted on the last ``fraction`` of the grid.
    """
    tau = np.asarray(tau, dtype=float)
    g = np.abs(np.asarray(g, dtype=float))
    k = max(4, int(len(tau) * fraction))
    x, y = np.log(tau[-k:]), g[-k:]
    if np.all(y == 0):
        return np.inf
    if np.any(y == 0):
        return np.nan
    return float(-np.polyfit(x, np.log(y), 1)[0])


def inverse_scale_integral(lambda_fn, tau, sigma):
    """``int_tau^sigma ds / lambda(s)`` by adaptive quadrature (vectorized over pairs)."""
    tau_b, sig_b = np.broadcast_arrays(np.asarray(tau, dtype=float), np.asarray(sigma, dtype=float))
    out = np.empty(tau_b.shape)
    for idx in np.ndindex(tau_b.shape):
        a, b = tau_b[idx], sig_b[idx]
        out[idx] = 0.0 if a == b else integrate.quad(lambda s: 1.0 / lambda_fn(s), a, b,
                                                     epsabs=0.0, epsrel=1e-13, limit=200)[0]
    return out if out.shape else float(out)


def _cumulative_from_right(F, u):
    # int_{u_i}^{u_end} F du with fourth-order accuracy on a uniform grid
    rev = integrate.cumulative_simpson(F[::-1], x=-u[::-1], initial=0.0)
    return rev[::-1]


def _local_power(tau, y):
    # exponent k of y ~ tau^k near the right end of the grid
    return float(np.polyfit(np.log(tau[-4:]), np.log(np.abs(y[-4:])), 1)[0])


def discrete_mode_solve(g_p, lambda_fn, tau_grid, *, q=None, lam=None):
    """
    Solve ``-d_tau(d_tau - omega) h = g`` with decay at infinity.

    ``h(tau) = -lambda(tau) [int_tau^inf Lam g dsigma - Lam(tau) int_tau^inf g dsigma]``
    where ``Lam`` is an antiderivative of ``1/lambda``.  Integrals over the grid
    use cumulative Simpson in ``log tau``; beyond the last node ``g`` and
    ``lambda`` are continued as power laws and integrated exactly.

    Parameters
    ----------
    g_p : array_like
        Source on ``tau_grid`` (geometric, increasing).
    q : float, optional
        Decay exponent of ``g``; fitted when omitted.

    Raises
    ------
    PreconditionError
        If the fitted tail makes either backward integral diverge.
    """
    tau = np.asarray(tau_grid, dtype=float)
    g = np.asarray(g_p, dtype=float)
    if np.any(np.diff(tau) <= 0) or tau[0] <= 0:
        raise DomainError("tau_grid must be positive and increasing")
    if not np.any(g):
        return np.zeros_like(tau)
    u = np.log(tau)
    lam = np.asarray(lambda_fn(tau), dtype=float) if lam is None else np.asarray(lam, dtype=float)
    Lam = integrate.cumulative_simpson(tau / lam, x=u, initial=0.0)
    q = fit_decay(tau, g) if q is None else q
    k = _local_power(tau, lam)
    if not q > 1 or not q + k > 2:
        raise PreconditionError(f"source decays too slowly for the backward integrals (q={q:.3g}, lambda ~ tau^{k:.3g})")
    gm, tm, lm, Lm = g[-1], tau[-1], lam[-1], Lam[-1]
    T0 = gm * tm / (q - 1.0)
    T1 = Lm * T0 + gm * tm**2 / (lm * (q + k - 2.0) * (q - 1.0))
    J0 = _cumulative_from_right(g * tau, u) + T0
    J1 = _cumulative_from_right(Lam * g * tau, u) + T1
    return -lam * (J1 - Lam * J0)


def discrete_mode_operator(h, lambda_fn, tau):
    """``-d_tau (d_tau - omega) h`` with ``omega = lambda'/lambda`` by second-order differences."""
    tau = np.asarray(tau, dtype=float)
    lam = np.asarray(lambda_fn(tau), dtype=float)
    # (h' - omega h) = lambda (h/lambda)'
    inner = lam * np.gradient(np.asarray(h) / lam, tau, edge_order=2)
    return -np.gradient(inner, tau, edge_order=2)


def homogeneous_pair(lambda_fn, tau):
    """``(lambda, lambda Lam)`` with ``Lam = int_{tau_0}^tau ds/lambda`` on the grid."""
    tau = np.asarray(tau, dtype=float)
    lam = np.asarray(lambda_fn(tau), dtype=float)
    Lam = integrate.cumulative_simpson(1.0 / lam, x=tau, initial=0.0)
    return lam, lam * Lam


def mode_wronskian(lambda_fn, tau):
    """``W[lambda, lambda Lam] = lambda`` evaluated by finite differences."""
    y1, y2 = homogeneous_pair(lambda_fn, tau)
    return y1 * np.gradient(y2, tau, edge_order=2) - np.gradient(y1, tau, edge_order=2) * y2


def continuous_green(tau, sigma, xi, lambda_fn, rho_fn=None, *, inv_integral=None):
    """
    Green kernel ``U(tau, sigma, xi)`` of the continuum channel.

    ``sin(x)/sqrt(xi)`` is evaluated through ``np.sinc`` so the kernel passes
    continuously to ``lambda(tau) int_tau^sigma ds/lambda`` as ``xi -> 0``.
    ``rho_fn=None`` means a constant density.
    """
    tau, sigma, xi = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (tau, sigma, xi)))
    if np.any(tau <= 0) or np.any(sigma < tau):
        raise DomainError("need 0 < tau <= sigma")
    if np.any(xi < 0):
        raise DomainError("xi must be >= 0")
    lt, ls = lambda_fn(tau), lambda_fn(sigma)
    Lam = inverse_scale_integral(lambda_fn, tau, sigma) if inv_integral is None else inv_integral(tau, sigma)
    A = lt * Lam
    base = A * np.sinc(np.sqrt(xi) * A / np.pi)
    ratio = lt / ls
    if rho_fn is not None:
        ratio = ratio * np.sqrt(rho_fn(xi * (lt / ls) ** 2) / rho_fn(xi))
    out = ratio * base
    return out if out.shape else float(out)


def green_bound(tau, sigma, xi, lambda_fn, rho_fn=None):
    """Right side ``(rho ratio)(lambda ratio) min{xi^{-1/2}, tau log(sigma/tau)}``."""
    tau, sigma, xi = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (tau, sigma, xi)))
    lt, ls = lambda_fn(tau), lambda_fn(sigma)
    ratio = lt / ls
    if rho_fn is not None:
        ratio = ratio * np.sqrt(rho_fn(xi * (lt / ls) ** 2) / rho_fn(xi))
    with np.errstate(divide="ignore"):
        m = np.minimum(1.0 / np.sqrt(xi), tau * np.log(sigma / tau))
    return ratio * m


def continuous_solve(g_c, lambda_fn, tau_grid, xi, rho_fn=None, *, q=None, sigma_max=None,
                     tol=1e-10, inv_integral=None):
    """
    Duhamel solution ``h_c(tau, xi) = -int_tau^inf U(tau, sigma, xi) g_c(sigma, xi_s) dsigma``,
    ``xi_s = xi lambda^2(tau)/lambda^2(sigma)``, by adaptive quadrature.

    The upper limit is cut where the power-law tail bound falls below
    ``tol`` times the integral scale.  Returns an array of shape
    ``(len(tau_grid), len(xi))``.
    """
    tau_grid = np.atleast_1d(np.asarray(tau_grid, dtype=float))
    xis = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.zeros((len(tau_grid), len(xis)))
    for i, t in enumerate(tau_grid):
        for j, x in enumerate(xis):
            def integrand(s, t=t, x=x):
                lt, ls = lambda_fn(t), lambda_fn(s)
                xs = x * (lt / ls) ** 2
                return continuous_green(t, s, x, lambda_fn, rho_fn, inv_integral=inv_integral) * g_c(s, xs)

            smax = sigma_max
            if smax is None:
                qq = q if q is not None else _probe_decay(g_c, t, x)
                if not qq > 2:
                    raise PreconditionError(f"continuum source must decay faster than sigma^-2 (q={qq:.3g})")
                # |U| <= sigma-growth at most linear for the supported scales
                smax = t * tol ** (-1.0 / (qq - 2.0))
            edges = np.geomspace(t, smax, max(2, int(np.log10(smax / t) * 4) + 1))
            # absolute target from the kernel bound |U| <= min(xi^-1/2, sigma - tau) (flat case)
            ref = abs(g_c(t, x)) * t * min(1.0 / np.sqrt(x) if x > 0 else np.inf, t)
            epsabs = tol * ref / len(edges)
            total = 0.0
            for a, b in zip(edges[:-1], edges[1:]):
                total += _quad_segment(integrand, a, b, epsabs)
            out[i, j] = -total
    return out


def _quad_segment(f, a, b, epsabs, depth=0):
    # on an IntegrationWarning (oscillatory tail) split the segment and retry
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            return integrate.quad(f, a, b, epsabs=epsabs, epsrel=1e-10, limit=1000)[0]
        except integrate.IntegrationWarning:
            if depth >= 3:
                raise
    edges = np.geomspace(a, b, 9)
    return sum(_quad_segment(f, lo, hi, epsabs / 8, depth + 1) for lo, hi in zip(edges[:-1], edges[1:]))


def _probe_decay(g_c, t, x):
    s = t * np.array([1e2, 1e3])
    v = np.abs([g_c(si, x) for si in s])
    if np.all(v == 0):
        return np.inf
    if np.any(v == 0):
        return np.inf
    return float(-np.log(v[1] / v[0]) / np.log(10.0))


def characteristic_residual(h_fn, g_c, lambda_fn, eta, tau, rho_fn=None):
    """
    Residual of the transported equation along ``xi(tau) = eta/lambda^2(tau)``.

    With ``K = rho^{1/2}(xi(tau)) h(tau, xi(tau)) / lambda^2`` and
    ``d_s = lambda d_tau`` the continuum channel reads
    ``-d_s^2 K - eta K = rho^{1/2}(xi(tau)) g_c(tau, xi(tau))``.  Returns the
    residual on interior nodes, relative to the sup of the right side.
    """
    tau = np.asarray(tau, dtype=float)
    lam = np.asarray(lambda_fn(tau), dtype=float)
    xi_t = eta / lam**2
    w = np.ones_like(tau) if rho_fn is None else np.sqrt(rho_fn(xi_t))
    H = np.array([h_fn(t, x) for t, x in zip(tau, xi_t)])
    G = np.array([g_c(t, x) for t, x in zip(tau, xi_t)]) * w
    K = w * H / lam**2
    dK = lam * np.gradient(K, tau, edge_order=2)
    lhs = -lam * np.gradient(dK, tau, edge_order=2) - eta * K
    res = (lhs - G)[2:-2]
    return float(np.max(np.abs(res)) / max(np.max(np.abs(G)), np.finfo(float).tiny))


def spectral_rho(table=None):
    """
    Interpolated ``rho'(xi)`` from a spectral table (log-log cubic spline).

    Outside the tabulated range the spline is extended with its end values
    and an :class:`ExtrapolationWarning` is issued.
    """
    if table is None:
        from .spectral import spectral_table
        table = spectral_table(per_decade=16)
    x = np.log(table["xi"])
    y = np.log(table["rho_prime"])
    spl = interpolate.CubicSpline(x, y)
    lo, hi = x[0], x[-1]

    def rho(xi):
        lx = np.log(np.asarray(xi, dtype=float))
        if np.any(lx < lo - 1e-12) or np.any(lx > hi + 1e-12):
            warnings.warn("characteristic left the tabulated xi range", ExtrapolationWarning, stacklevel=2)
        return np.exp(spl(np.clip(lx, lo, hi)))

    return rho
