"""
Radial finite-difference solver for the k = 2 co-rotational wave map

    -u_tt + u_rr + u_r/r = 2 sin(2u)/r^2,   0 <= r <= R_out,

with multi-bubble initial data and bubble diagnostics.

Space: a three-point, second-order stencil on a uniform grid, written in
a form that annihilates every static bubble (see :func:`acceleration`).
The axis value is held fixed (it must be a multiple of pi); near the axis
``u ~ c r^2``.
Time: velocity Verlet (leapfrog in kick-drift-kick form), second order and
symplectic, CFL 0.5 by default.  The outer node is either frozen
(Dirichlet) or updated from the first-order outgoing condition
``u_t + u_r + u/(2r) = 0``.
"""
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .errors import CFLError, DomainError, GridBlowupError, NoCrossingError, ResolutionError
from .profiles import bubble_derivative, bubble_profile

__all__ = [
    "RadialGrid",
    "SimState",
    "BubbleAnsatz",
    "multi_bubble_data",
    "acceleration",
    "step",
    "evolve",
    "energy",
    "axis_ratio",
    "extract_scale",
    "light_cone_check",
    "self_convergence_order",
    "CollapseReport",
    "collapse_experiment",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_CFL = 0.5
RESOLUTION_LIMIT = 0.2
_MAGIC = b"BTCK"
_VERSION = 1


@dataclass(frozen=True)
class RadialGrid:
    """Uniform nodes ``r_i = i dr`` on ``[0, R_out]``."""
    dr: float
    R_out: float

    @property
    def r(self):
        return self.dr * np.arange(self.size)

    @property
    def size(self):
        return int(round(self.R_out / self.dr)) + 1

    @classmethod
    def uniform(cls, dr, R_out):
        if dr <= 0 or R_out <= 4 * dr:
            raise DomainError("need dr > 0 and at least five nodes")
        return cls(float(dr), float(dr * round(R_out / dr)))


@dataclass
class SimState:
    """Field pair ``(u, u_t)`` at time ``t`` on a :class:`RadialGrid`."""
    grid: RadialGrid
    u: np.ndarray
    ut: np.ndarray
    t: float = 0.0
    step_count: int = 0
    cfl: float = DEFAULT_CFL
    boundary: str = "dirichlet"
    accel: np.ndarray = field(default=None, repr=False)

    def copy(self):
        return replace(self, u=self.u.copy(), ut=self.ut.copy(),
                       accel=None if self.accel is None else self.accel.copy())


@dataclass
class BubbleAnsatz:
    """
    Alternating-sign bubbles ``sum_j signs_j Q(lambda_j r)`` with scale velocities.

    ``velocities`` are ``d lambda_j / d(run time)``.
    """
    scales: tuple
    velocities: tuple = None
    signs: tuple = None

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        n = len(self.scales)
        if self.velocities is None:
            self.velocities = (0.0,) * n
        if self.signs is None:
            self.signs = tuple((-1) ** j for j in range(n))
        if len(self.velocities) != n or len(self.signs) != n:
            raise DomainError("scales, velocities and signs must have equal length")
        if any(s <= 0 for s in self.scales) or any(a <= b for a, b in zip(self.scales, self.scales[1:])):
            raise DomainError("scales must be positive and strictly decreasing")


def multi_bubble_data(ansatz, grid, *, boundary="dirichlet", cfl=DEFAULT_CFL):
    """
    Initial data ``u = sum s_j Q(lambda_j r)``, ``u_t = sum s_j lambda_j' r Q'(lambda_j r)``.

    Raises
    ------
    ResolutionError
        If ``lambda_1 dr > 0.2``.
    """
    if ansatz.scales[0] * grid.dr > RESOLUTION_LIMIT:
        raise ResolutionError("innermost bubble is not resolved (lambda_1 dr > 0.2)")
    r = grid.r
    u = np.zeros_like(r)
    ut = np.zeros_like(r)
    for lam, vel, sgn in zip(ansatz.scales, ansatz.velocities, ansatz.signs):
        u += sgn * bubble_profile(lam * r)
        ut += sgn * vel * r * bubble_derivative(lam * r)
    return SimState(grid, u, ut, cfl=cfl, boundary=boundary)


def _derivatives(u, dr):
    """Fourth-order ``u_r`` and ``u_rr`` at nodes 1..N-1 (second order at N-1); even ghosts at the axis."""
    ue = np.concatenate([u[2:0:-1], u])  # even ghosts u_{-2}, u_{-1}
    c = ue[2:-2]
    p1, p2, m1, m2 = ue[3:-1], ue[4:], ue[1:-3], ue[:-4]
    urr = np.empty(len(u))
    ur = np.empty(len(u))
    urr[:-2] = (-p2 + 16 * p1 - 30 * c + 16 * m1 - m2) / (12 * dr * dr)
    ur[:-2] = (-p2 + 8 * p1 - 8 * m1 + m2) / (12 * dr)
    urr[-2] = (u[-1] - 2 * u[-2] + u[-3]) / dr**2
    ur[-2] = (u[-1] - u[-3]) / (2 * dr)
    urr[-1] = ur[-1] = 0.0
    return ur, urr


def acceleration(u, grid):
    """
    ``u_tt`` on nodes 1..N-1 (zero at the axis and the outer node).

    The right side is written through the Bogomolny defect ``B = r u_r - 2 sin u``,

        u_rr + u_r/r - 2 sin(2u)/r^2 = (1/r) d_r B + (2 cos u / r^2) B,

    an exact identity.  B is sampled at half nodes with a three-point
    stencil; the midpoint value of u is interpolated linearly in ``r^2`` so
    that ``u ~ c r^2`` near the axis is reproduced exactly.  Every bubble
    ``Q(lambda r)`` has ``B = 0``, so static bubbles are preserved to
    second order with a small constant.
    """
    r = grid.r
    dr = grid.dr
    rh = r[:-1] + 0.5 * dr
    wgt = (rh**2 - r[:-1] ** 2) / (r[1:] ** 2 - r[:-1] ** 2)
    ubar = u[:-1] + (u[1:] - u[:-1]) * wgt
    B = rh * (u[1:] - u[:-1]) / dr - 2.0 * np.sin(ubar)
    a = np.zeros_like(u)
    ri = r[1:-1]
    a[1:-1] = (B[1:] - B[:-1]) / (ri * dr) + np.cos(u[1:-1]) * (B[1:] + B[:-1]) / ri**2
    return a


def step(state, dt):
    """
    One velocity-Verlet step; returns a new :class:`SimState`.

    Raises
    ------
    CFLError
        If ``dt > cfl dr``.
    GridBlowupError
        If the update produces non-finite values (grid-scale concentration).
    """
    g = state.grid
    if dt > state.cfl * g.dr * (1 + 1e-12) or dt <= 0:
        raise CFLError(f"dt = {dt:.3g} violates dt <= cfl*dr = {state.cfl * g.dr:.3g}")
    a = state.accel if state.accel is not None else acceleration(state.u, g)
    v = state.ut + 0.5 * dt * a
    u = state.u + dt * v
    u[0] = state.u[0]
    if state.boundary == "absorbing":
        R = g.r[-1]
        uN = state.u[-1]
        u[-1] = uN - dt * ((uN - state.u[-2]) / g.dr + uN / (2.0 * R))
    elif state.boundary == "dirichlet":
        u[-1] = state.u[-1]
    else:
        raise DomainError(f"unknown boundary {state.boundary!r}")
    a_new = acceleration(u, g)
    v = v + 0.5 * dt * a_new
    v[0] = 0.0
    v[-1] = (u[-1] - state.u[-1]) / dt
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise GridBlowupError(f"non-finite field after step {state.step_count + 1}")
    return SimState(g, u, v, state.t + dt, state.step_count + 1, state.cfl, state.boundary, a_new)


def evolve(state, t_span, dt=None, callback=None):
    """Advance by ``t_span`` with fixed steps (default ``cfl * dr``)."""
    dt = state.cfl * state.grid.dr if dt is None else dt
    n = int(np.ceil(t_span / dt - 1e-9))
    dt = t_span / n
    for _ in range(n):
        state = step(state, dt)
        if callback is not None:
            callback(state)
    return state


def _radial_derivative(u, dr):
    ur, _ = _derivatives(u, dr)
    ur[0] = 0.0
    ur[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * dr)
    ur[-2] = (u[-1] - u[-3]) / (2 * dr)
    return ur


def energy(state, r_max=None):
    """
    ``E = int_0^{r_max} [u_t^2/2 + u_r^2/2 + 2 sin^2(u)/r^2] r dr``.

    Simpson's rule on the nodes up to ``r_max`` (linear interpolation for a
    partial last cell).  The potential term vanishes at the axis.
    """
    g = state.grid
    r = g.r
    ur = _radial_derivative(state.u, g.dr)
    dens = np.zeros_like(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens[1:] = (0.5 * state.ut[1:] ** 2 + 0.5 * ur[1:] ** 2 + 2.0 * np.sin(state.u[1:]) ** 2 / r[1:] ** 2) * r[1:]
    if r_max is None or r_max >= r[-1]:
        return float(integrate.simpson(dens, x=r))
    if r_max <= 0:
        return 0.0
    k = int(np.floor(r_max / g.dr))
    head = float(integrate.simpson(dens[:k + 1], x=r[:k + 1])) if k >= 2 else float(integrate.trapezoid(dens[:k + 1], x=r[:k + 1]))
    frac = r_max - r[k]
    d_end = dens[k] + (dens[k + 1] - dens[k]) * frac / g.dr
    return head + 0.5 * (dens[k] + d_end) * frac


def axis_ratio(state, nodes=3):
    """``u/r^2`` at the first ``nodes`` off-axis nodes."""
    r = state.grid.r[1:nodes + 1]
    return (state.u[1:nodes + 1] - state.u[0]) / r**2


def extract_scale(state, level=np.pi / 2):
    """
    ``1/r_1`` where ``r_1`` is the smallest radius with ``u(r_1) = pi/2``.

    Raises
    ------
    NoCrossingError
        If ``u`` never reaches the level.
    """
    u = state.u - level
    idx = np.nonzero(np.sign(u[:-1]) * np.sign(u[1:]) <= 0)[0]
    idx = [i for i in idx if not (u[i] == 0 and i == 0)]
    if not idx:
        raise NoCrossingError("u does not cross pi/2: not in the bubble regime")
    i = idx[0]
    r = state.grid.r
    if u[i] == u[i + 1]:
        r1 = r[i]
    else:
        r1 = r[i] - u[i] * (r[i + 1] - r[i]) / (u[i + 1] - u[i])
    return 1.0 / r1


def light_cone_check(base, perturbed, r0, t_span, dt=None):
    """
    Evolve two states and return ``(exterior, interior)`` maximal deviations,
    exterior meaning ``r >= r0 + t + 2 dr`` and interior its complement.
    """
    if base.grid != perturbed.grid:
        raise DomainError("runs must share a grid")
    g = base.grid
    r = g.r
    dt = base.cfl * g.dr if dt is None else dt
    n = int(np.ceil(t_span / dt - 1e-9))
    dt = t_span / n
    a, b = base, perturbed
    ext = intr = 0.0
    for _ in range(n):
        a, b = step(a, dt), step(b, dt)
        d = np.abs(a.u - b.u)
        out = r >= r0 + a.t + 2 * g.dr
        if np.any(out):
            ext = max(ext, float(d[out].max()))
        if np.any(~out):
            intr = max(intr, float(d[~out].max()))
    return ext, intr


def self_convergence_order(make_state, dr, t_span, levels=3):
    """
    Three-grid self-convergence order at time ``t_span``.

    ``make_state(dr)`` builds the initial state; the solutions are compared
    on the coarse nodes with ``dt = cfl dr`` on every level.
    """
    sols = []
    for k in range(levels):
        h = dr / 2**k
        s = evolve(make_state(h), t_span)
        sols.append(s.u[:: 2**k])
    e1 = np.max(np.abs(sols[0] - sols[1]))
    e2 = np.max(np.abs(sols[1] - sols[2]))
    return float(np.log2(e1 / e2)), float(e1), float(e2)


@dataclass
class CollapseReport:
    """
    Time series of a collapse run in the run time ``s = t0 - t``.

    ``exponent`` is the slope of ``log lambda_hat`` against ``log(1/t)``
    over the recorded window.
    """
    s: np.ndarray
    t: np.ndarray
    lambda_hat: np.ndarray
    energy_total: np.ndarray
    energy_cone: np.ndarray
    axis: np.ndarray
    exponent: float
    monotone_scale: bool
    monotone_energy: bool
    stop_reason: str


def collapse_experiment(config):
    """
    Evolve a bubble seeded with modulation-law velocities toward smaller t.

    ``config`` keys: ``n`` (1 or 2), ``beta``, ``t0``, ``points_per_radius``
    (default 20), ``R_out_factor`` (default 2, in units of t0),
    ``record_every`` (default 10), ``t_stop`` (default ``0.05 t0``),
    ``static`` (drop the velocities), ``boundary``.

    The scales follow ``lambda(t) = t^{-1}|log t|^beta``; for ``n = 2`` the
    outer bubble sits at ``lambda/ratio`` (``ratio`` default 1e3).  The run
    stops when ``lambda_hat dr > 0.2``; that is the expected outcome and is
    reported in ``stop_reason``, not raised.
    """
    beta = float(config.get("beta", 2.0))
    t0 = float(config.get("t0", 1e-3))
    n = int(config.get("n", 1))
    ppr = float(config.get("points_per_radius", 20))
    every = int(config.get("record_every", 10))
    t_stop = float(config.get("t_stop", 0.05 * t0))
    static = bool(config.get("static", False))
    ell = -np.log(t0)
    lam0 = ell**beta / t0
    # d lambda/ds = -d lambda/dt
    vel0 = 0.0 if static else (ell**beta + beta * ell ** (beta - 1)) / t0**2
    scales, vels = [lam0], [vel0]
    if n == 2:
        ratio = float(config.get("ratio", 1e3))
        scales.append(lam0 / ratio)
        vels.append(0.0)
    elif n != 1:
        raise DomainError("collapse_experiment supports n = 1 or 2")
    dr = 1.0 / (lam0 * ppr)
    grid = RadialGrid.uniform(dr, float(config.get("R_out_factor", 2.0)) * t0)
    state = multi_bubble_data(BubbleAnsatz(scales, vels), grid, boundary=config.get("boundary", "dirichlet"))
    dt = state.cfl * dr
    rows = []
    reason = "t_stop reached"

    def record(st):
        t = t0 - st.t
        lam = extract_scale(st)
        rows.append((st.t, t, lam, energy(st), energy(st, r_max=t), float(axis_ratio(st, 1)[0])))
        return lam

    record(state)
    while t0 - state.t > t_stop:
        try:
            state = step(state, dt)
        except GridBlowupError:
            reason = "grid blow-up"
            break
        if state.step_count % every == 0:
            try:
                lam = record(state)
            except NoCrossingError:
                reason = "bubble left the pi/2 level"
                break
            if lam * dr > RESOLUTION_LIMIT:
                reason = "resolution exhausted"
                break
    arr = np.array(rows)
    s, t, lam, Et, Ec, ax = arr.T
    if len(t) > 2 and np.ptp(np.log(lam)) > 0:
        expo = float(np.polyfit(np.log(1.0 / t), np.log(lam), 1)[0])
    else:
        expo = 0.0
    return CollapseReport(s, t, lam, Et, Ec, ax, expo, bool(np.all(np.diff(lam) >= 0)),
                          bool(np.all(np.diff(Ec) <= 0)), reason)


def save_checkpoint(state, path):
    """
    Flat binary checkpoint: magic, version, node count, step, t, dr, R_out, cfl,
    boundary flag, then ``u`` and ``u_t`` as little-endian float64.
    """
    header = struct.pack("<4sIQQddddI", _MAGIC, _VERSION, len(state.u), state.step_count,
                         state.t, state.grid.dr, state.grid.R_out, state.cfl,
                         1 if state.boundary == "absorbing" else 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(state.u, dtype="<f8").tobytes())
        fh.write(np.asarray(state.ut, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; rejects unknown magic or versions."""
    size = struct.calcsize("<4sIQQddddI")
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n, steps, t, dr, R_out, cfl, bflag = struct.unpack("<4sIQQddddI", raw[:size])
    if magic != _MAGIC or version != _VERSION:
        raise DomainError(f"not a version-{_VERSION} checkpoint: {path}")
    body = np.frombuffer(raw[size:], dtype="<f8")
    if body.size != 2 * n:
        raise DomainError("checkpoint is truncated")
    grid = RadialGrid(dr, R_out)
    return SimState(grid, body[:n].copy(), body[n:].copy(), t, steps, cfl,
                    "absorbing" if bflag else "dirichlet")
