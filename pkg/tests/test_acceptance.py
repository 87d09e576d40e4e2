"""
Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
budget.  Criterion 10 is exploratory; its line is reported but only the
run itself gates the test.
"""
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from bubbletree import corrector as C
from bubbletree import modulation as M
from bubbletree import profiles as Pr
from bubbletree import propagators as P
from bubbletree import spectral as S
from bubbletree import wavesim as W


def _emit(capsys, k, title, items, start, budget):
    wall = time.perf_counter() - start
    items = list(items) + [(f"runtime {wall:.2f}s", wall, wall < budget, f"< {budget}s")]
    ok = all(i[2] for i in items)
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {title}")
        for name, value, passed, target in items:
            print(f"    {'ok  ' if passed else 'MISS'} {name}: {value!r} (target {target})")
    return ok


def _bump(r, c, w, A):
    x = (r - c) / w
    out = np.zeros_like(r)
    k = np.abs(x) < 1
    out[k] = A * np.exp(-1 / (1 - x[k] ** 2))
    return out


def _bump_state(dr, R_out, c, w, A):
    g = W.RadialGrid.uniform(dr, R_out)
    return W.SimState(g, _bump(g.r, c, w, A), np.zeros(g.size))


def test_criterion_01_exact_integrals(capsys):
    t0 = time.perf_counter()
    I1, I2 = C.explicit_integrals()
    items = [("int Phi^2 R dR - 2pi", abs(I1 - 2 * np.pi), abs(I1 - 2 * np.pi) < 1e-8, "< 1e-8"),
             ("int (1 - cos 2Q) Phi R dR - 4", abs(I2 - 4), abs(I2 - 4) < 1e-8, "< 1e-8")]
    assert _emit(capsys, 1, "exact integrals", items, t0, 1.0)


def test_criterion_02_spectral_scalars(capsys):
    t0 = time.perf_counter()
    ts = S.transference_scalars()
    e = [abs(ts.norm_sq - 2 * np.pi), abs(ts.rdr_inner + np.pi), abs(ts.k_pp + 0.5)]
    items = [(n, v, v < 1e-8, "< 1e-8") for n, v in
             zip(("||phi0||^2 - 2pi", "<r phi0', phi0> + pi", "K_pp + 1/2"), e)]
    assert _emit(capsys, 2, "spectral scalars", items, t0, 5.0)


def test_criterion_03_wronskians(capsys):
    t0 = time.perf_counter()
    R = np.geomspace(1e-3, 1e3, 97)
    rW = R * Pr.wronskian(Pr.second_solution, Pr.zero_mode, R)
    spread = float(np.ptp(rW))
    items = [("ptp of R W[Theta, Phi]", spread, spread < 1e-9, "< 1e-9")]
    for name, lam in (("1", lambda t: np.ones_like(t)), ("tau^2", lambda t: t**2), ("exp", np.exp)):
        errs = []
        for n in (200, 400):
            t = np.linspace(1, 3, n + 1)
            errs.append(float(np.max(np.abs(P.mode_wronskian(lam, t) - lam(t)) / lam(t))))
        order = np.log2(errs[0] / errs[1]) if errs[1] > 1e-12 else np.inf
        items.append((f"discrete Wronskian order, lambda = {name}", (errs[1], float(order)),
                      errs[1] < 1e-12 or order > 1.8, "exact or order >= 1.8"))
    assert _emit(capsys, 3, "Wronskian suites", items, t0, 5.0)


def test_criterion_04_modulation_exactness(capsys):
    t0 = time.perf_counter()
    items = []
    t = M.log_time_grid(1e-2, 1e-4, 512)
    for L in (10.0, 50.0):
        h = M.solve_hierarchy(2, 2.0, grid=t, lbar_override=M.LogScale.constant(t, L))
        a = h.levels[0].alpha_float()
        # relative to the exponent L (t0 - t) itself
        rel = float(np.max(np.abs((a - a[0]) - L * (t[0] - t))[1:] / (L * (t[0] - t[1:]))))
        items.append((f"constant lbar = {L:g} vs closed form", rel, rel < 1e-6, "< 1e-6"))
    h2 = M.solve_hierarchy(2, 2.0, t0=1e-2, t_min=1e-6, per_decade=256)
    ps = M.perturbed_scale(h2, np.zeros(len(h2.t)))
    same = all(x == y for x, y in zip(ps.alpha, h2.levels[0].alpha))
    items.append(("perturbed_scale with m = 0 bitwise", same, same, True))
    res = M.picard_m(lambda m: 0.1 * m, np.ones(10), steps=8)
    items.append(("Picard defect, alpha = 0.1, 8 steps", res.defect, res.defect < 1e-8, "< 1e-8"))
    assert _emit(capsys, 4, "modulation exactness", items, t0, 10.0)


def test_criterion_05_hierarchy_asymptotics(capsys):
    t0 = time.perf_counter()
    h = M.solve_hierarchy(3, 2.0, t0=1e-2, t_min=1e-8)
    r = M.growth_ratios(h)
    w = h.t <= 1e-4
    dev = {k: float(np.max(np.abs(v[w] - 1))) for k, v in r.items()}
    lit = float(r["literal"][-1])
    items = [
        ("log lambda_1 / int lambda_2 at t = 1e-8", lit, dev["literal"] < 0.05, "1 +- 0.05 on [1e-8, 1e-4]"),
        ("log lambda_1 / int lambda_2 against 4/sqrt(pi) (reported)", lit * np.sqrt(np.pi) / 4, True, "~1"),
        ("max |tau_1 lbar_2 / lambda_1 - 1| on window", dev["tau"], dev["tau"] < 0.05, "< 0.05"),
        ("max |log lambda_1 / int lbar_2 - 1| on window (reported)", dev["lbar"], True, "< 0.05"),
        ("ordering lambda_1 >> lambda_2 >> lambda_3 holds for t <=", h.crossover,
         bool(np.isfinite(h.crossover) and h.crossover >= 1e-4), ">= 1e-4"),
    ]
    assert _emit(capsys, 5, "hierarchy asymptotics", items, t0, 30.0)


def test_criterion_06_corrector(capsys):
    t0 = time.perf_counter()

    def src(R):
        return C.source_from_coefficients(R, 0.0, 0.0, 1.0)

    res = []
    for pd in (32, 64, 128):
        R = C.log_grid(1e-3, 1e3, pd)
        res.append(C.solve_h0(C.enforce_vanishing(src(R))).residual)
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    R = C.log_grid(1e-3, 1e3, 64)
    with pytest.warns(Warning):
        raw = C.solve_h0(src(R))
    fixed = C.solve_h0(C.enforce_vanishing(src(R)))
    gain = abs(raw.growth) / abs(fixed.growth)
    items = [("residual orders", orders.tolist(), bool(np.all(np.abs(orders - 2) < 0.2)), "2 +- 0.2"),
             ("|h0/R^2| at R = 1e3, raw over corrected", gain, gain >= 1e2, ">= 1e2")]
    assert _emit(capsys, 6, "corrector residual and growth", items, t0, 30.0)


def test_criterion_07_propagators(capsys):
    t0 = time.perf_counter()
    one = lambda t: np.ones_like(np.asarray(t, dtype=float))
    tau = np.geomspace(1.0, 1e3, 1201)
    h = P.discrete_mode_solve(tau**-4.0, one, tau)
    e1 = float(np.max(np.abs(h + tau**-2.0 / 6) / (tau**-2.0 / 6)))
    xi = 2.0
    g = lambda s, x: np.exp(-4 * (s - 3) ** 2)
    tg = np.array([1.0, 2.0, 3.0])
    hc = P.continuous_solve(g, one, tg, xi, sigma_max=12.0, inv_integral=lambda a, b: b - a)[:, 0]
    sol = solve_ivp(lambda s, y: [y[1], -xi * y[0] - g(s, xi)], [12, 1], [0, 0],
                    rtol=1e-12, atol=1e-14, dense_output=True)
    e2 = float(np.max(np.abs(hc - sol.sol(tg)[0])))
    rng = np.random.default_rng(0)
    ta = rng.uniform(1, 10, 1000)
    sg = ta * np.exp(rng.uniform(0, 3, 1000))
    xs = 10 ** rng.uniform(-3, 3, 1000)
    sq = lambda t: np.asarray(t, dtype=float) ** 2
    U = P.continuous_green(ta, sg, xs, sq, inv_integral=lambda a, b: 1 / a - 1 / b)
    slack = float(np.min(P.green_bound(ta, sg, xs, sq) - np.abs(U)))
    items = [("discrete mode vs -tau^-2/6", e1, e1 < 1e-8, "< 1e-8"),
             ("flat continuous solve vs ODE", e2, e2 < 1e-6, "< 1e-6"),
             ("Green bound minimal slack (1000 samples)", slack, slack >= 0, ">= 0")]
    assert _emit(capsys, 7, "propagator oracles", items, t0, 60.0)


def test_criterion_08_wave_solver(capsys):
    t0 = time.perf_counter()
    order, _, _ = W.self_convergence_order(lambda dr: _bump_state(dr, 10.0, 4.0, 3.0, 0.3), 0.01, 1.0)
    s = _bump_state(0.01, 20.0, 3.0, 1.0, 0.5)
    E0 = W.energy(s)
    s = W.evolve(s, 0.005 * 1e4)
    drift = abs(W.energy(s) - E0) / E0
    g = W.RadialGrid.uniform(0.01, 50.0)
    q = W.multi_bubble_data(W.BubbleAnsatz([1.0]), g)
    sup = float(np.max(np.abs(W.evolve(q, 5.0).u - q.u)))
    g = W.RadialGrid.uniform(6.25e-4, 5.0)
    base = W.multi_bubble_data(W.BubbleAnsatz([1.0]), g)
    pert = base.copy()
    pert.u = pert.u + _bump(g.r, 0.5, 0.5, 1e-2)
    ext, inner = W.light_cone_check(base, pert, 1.0, 2.0)
    items = [("self-convergence order", order, abs(order - 2) < 0.2, "2 +- 0.2"),
             ("relative energy drift over 1e4 steps", drift, drift < 1e-3, "< 1e-3"),
             ("static Q(r) sup drift over t = 5", sup, sup < 1e-4, "< 1e-4"),
             ("light-cone exterior deviation", ext, ext < 1e-10, "< 1e-10"),
             ("light-cone interior deviation (reported)", inner, True, "> 0")]
    assert _emit(capsys, 8, "wave solver", items, t0, 300.0)


def test_criterion_09_spectral_density(capsys):
    t0 = time.perf_counter()
    xi = np.logspace(-2, 2, 65)
    tab = S.spectral_table(xi, check=False)
    band = tab["a_abs"] * S.bracket(xi)
    ratio = float(band.max() / band.min())
    sens = float(np.max(tab["radius_sensitivity"]))
    items = [("|a| <xi> max/min over [1e-2, 1e2]", ratio, ratio <= 4.0, "<= 4"),
             ("|a| <xi> range (reported)", (float(band.min()), float(band.max())), True, "finite, > 0"),
             ("matching-radius sensitivity", sens, sens < 1e-6, "< 1e-6")]
    assert _emit(capsys, 9, "spectral density sanity", items, t0, 120.0)


def test_criterion_10_collapse_exploratory(capsys):
    t0 = time.perf_counter()
    rep = W.collapse_experiment({"n": 1, "beta": 2.0})
    items = [("lambda_hat monotone increasing", rep.monotone_scale, rep.monotone_scale, True),
             ("fitted exponent", rep.exponent, 0.8 <= rep.exponent <= 1.3, "[0.8, 1.3]"),
             ("cone energy monotone decreasing", rep.monotone_energy, rep.monotone_energy, True),
             ("stop reason (reported)", rep.stop_reason, True, "resolution exhausted")]
    _emit(capsys, 10, "collapse diagnostic (exploratory, non-gating)", items, t0, 600.0)
    # gating is limited to the run completing and producing a series
    assert len(rep.lambda_hat) > 2 and np.all(np.isfinite(rep.lambda_hat))
