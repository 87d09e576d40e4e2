import mpmath
import numpy as np
import pytest
from scipy import integrate, interpolate, optimize

from bubbletree import modulation as M
from bubbletree.errors import (ConvergenceError, DomainError, HierarchyOrderingError, PreconditionError,
                               ResolutionError)


@pytest.fixture(scope="module")
def hier2():
    return M.solve_hierarchy(2, 2.0, t0=1e-2, t_min=1e-6, per_decade=256)


@pytest.fixture(scope="module")
def hier3():
    return M.solve_hierarchy(3, 2.0, t0=1e-2, t_min=1e-8)


@pytest.mark.parametrize("t, beta, expected", [(np.exp(-1), 2.0, 1.0), (np.exp(-np.e), 1.0, 1 + np.e)])
def test_outermost_scale_examples(t, beta, expected):
    assert M.outermost_scale(t, beta) == pytest.approx(expected, rel=1e-14)


def test_outermost_scale_monotone():
    t = np.geomspace(1e-9, 0.099, 500)
    assert np.all(np.diff(M.outermost_scale(t, 2.0)) < 0)


@pytest.mark.parametrize("t", [0.0, 1.0, 2.0, -0.5])
def test_outermost_scale_domain(t):
    with pytest.raises(DomainError):
        M.outermost_scale(t, 2.0)


def test_coarse_time_grid_rejected():
    with pytest.raises(ResolutionError):
        M.log_time_grid(1e-2, 5e-3, per_decade=16)


def test_zeta_constant():
    t = M.log_time_grid(1e-2, 1e-4, 64)
    zs = M.zeta_series(M.LogScale.constant(t, 7.0))
    assert np.allclose(zs.zeta, -1 / 7.0, rtol=1e-15)
    assert np.all(zs.E == 0)


def test_zeta_inverse_t_term_by_term():
    # lbar = 1/t: -t + t/2 + t/2 - 5t/8
    t = M.log_time_grid(1e-3, 1e-6, 128)
    zs = M.zeta_series(M.LogScale.power_log(t, 0.0))
    lb, d1, d2 = 1 / t, -1 / t**2, 2 / t**3
    direct = -1 / lb - d1 / (2 * lb**3) + d2 / (4 * lb**4) - 5 * d1**2 / (8 * lb**5)
    assert np.allclose(zs.zeta, direct, rtol=1e-14, atol=0)
    assert np.allclose(zs.zeta, -5 * t / 8, rtol=1e-14)


def test_zeta_residual_closed_form_and_order():
    t = M.log_time_grid(1e-3, 1e-6, 512)
    lb = M.LogScale.power_log(t, 2.0)
    zs = M.zeta_series(lb)
    z = zs.zeta
    u = np.log(t)
    o = np.argsort(u)
    dz = interpolate.CubicSpline(u[o], z[o])(u, 1) / t
    E_num = np.exp(2 * lb.L) * z * z - 1 - dz
    assert np.max(np.abs(E_num - zs.E)[5:-5]) < 1e-10
    # E = O((t lbar)^{-3}) = O(|log t|^{-6})
    scaled = np.abs(zs.E) * (t * np.exp(lb.L)) ** 3
    assert np.max(scaled) < 1.0


def test_w_zero_source():
    t = M.log_time_grid(1e-2, 1e-4, 64)
    fp = M.w_fixed_point(M.LogScale.constant(t, 50.0), E=0.0)
    assert np.all(fp.W == 0)


@pytest.mark.parametrize("L", [20.0, 200.0])
def test_w_constant_source_matches_ode(L):
    eps = 1e-3
    t = M.log_time_grid(1e-2, 1e-4, 512)
    fp = M.w_fixed_point(M.LogScale.constant(t, L), E=eps)
    # quasi-static start at t_min, forward in t: w' = eps - 2 L w + (L w)^2
    w0 = (1 - np.sqrt(1 - eps)) / L
    sol = integrate.solve_ivp(lambda s, w: eps - 2 * L * w + (L * w) ** 2, (t[-1], t[0]), [w0],
                              method="Radau", t_eval=t[::-1], rtol=1e-12, atol=1e-16)
    ref = sol.y[0][::-1]
    assert np.max(np.abs(fp.w - ref)) < 1e-6 * abs(eps / (2 * L))
    assert fp.w[0] == pytest.approx(eps / (2 * L), rel=2 * eps)


def test_w_contraction_two_levels():
    h = M.solve_hierarchy(2, 2.0, t0=1e-4, t_min=1e-8, per_decade=256, compute_tau=False)
    assert h.levels[0].fixed_point.contraction_factor < 0.5


def test_hierarchy_single_level():
    t = M.log_time_grid(1e-2, 1e-5, 64)
    h = M.solve_hierarchy(1, 2.0, grid=t)
    assert len(h.levels) == 1 and h.lbar == [None]
    assert np.allclose(h.levels[0].alpha_float(), M.outermost_scale(t, 2.0), rtol=1e-15)


@pytest.mark.parametrize("L", [10.0, 300.0])
def test_constant_lbar_exact_exponential(L):
    t = M.log_time_grid(1e-2, 1e-4, 512)
    h = M.solve_hierarchy(2, 2.0, grid=t, lbar_override=M.LogScale.constant(t, L))
    a = h.levels[0].alpha_float()
    assert np.max(np.abs((a - a[0]) - L * (t[0] - t))) < 1e-6


def test_hierarchy_bad_grid():
    with pytest.raises(DomainError):
        M.solve_hierarchy(2, 2.0, grid=np.array([1e-3, 2e-3, 1e-4]))


def test_hierarchy_ordering_error():
    with pytest.raises(HierarchyOrderingError):
        M.solve_hierarchy(3, 2.0, anchor_gap=-1.0, t_min=1e-4, per_decade=64)


def test_three_level_ordering(hier3):
    window = hier3.t <= 1e-4
    a = [np.array(lvl.alpha)[window] for lvl in hier3.levels]
    assert all(x > y for x, y in zip(a[0], a[1]))
    assert all(x > y for x, y in zip(a[1], a[2]))
    assert min(hier3.lower_bound_c) >= 0.9


def test_three_level_tau_ratio(hier3):
    r = M.growth_ratios(hier3)
    w = hier3.t <= 1e-6
    assert np.max(np.abs(r["tau"][w] - 1)) < 0.05
    assert np.max(np.abs(r["lbar"][w] - 1)) < 0.05


def test_tau_ratio_two_levels(hier2):
    r = hier2.tau[0].ratio
    w = hier2.t <= 1e-4
    assert np.max(np.abs(r[w] - 1)) < 0.05


def test_derivative_growth(hier3):
    # |t (log lambda_j)'| <= C t lambda_{j+1}
    for j in (0, 1):
        lvl, nxt = hier3.levels[j], hier3.levels[j + 1]
        lhs = lvl.log_abs_dlog()
        rhs = nxt.alpha_float()
        assert np.all(np.isfinite(rhs))
        C = np.exp(np.max(lhs - rhs))
        assert C < 3.0


def test_wkb_envelope():
    t = M.log_time_grid(1e-2, 1e-6, 512)
    lb = M.LogScale.power_log(t, 2.0)
    h = M.solve_hierarchy(2, 2.0, grid=t, lbar_override=lb)
    # log [lbar^{1/2} exp(int_t^1 lbar)] with int_t^1 |log s|^2/s ds = |log t|^3/3
    env = 0.5 * lb.L + (-np.log(t)) ** 3 / 3
    w = t <= 1e-4
    lr = (h.levels[0].alpha_float() - env)[w]
    ratio = np.exp(lr - lr[0])
    assert ratio.min() >= 0.5 and ratio.max() <= 2.0


def test_perturbed_zero_bitwise(hier2):
    ps = M.perturbed_scale(hier2, np.zeros(len(hier2.t)))
    assert all(x == y for x, y in zip(ps.alpha, hier2.levels[0].alpha))
    assert np.all(ps.delta_log_lambda == 0)


def test_perturbed_eps_l_exact():
    L, eps = 50.0, 1e-3
    t = M.log_time_grid(1e-2, 1e-4, 512)
    h = M.solve_hierarchy(2, 2.0, grid=t, lbar_override=M.LogScale.constant(t, L))
    ps = M.perturbed_scale(h, np.full(len(t), eps * L), enforce_bound=False)
    a = np.array([float(x) for x in ps.alpha])
    assert np.max(np.abs((a - a[0]) - (1 + eps) * L * (t[0] - t))) < 1e-6
    assert np.max(np.abs(ps.delta_log_lambda - eps * L * (t[0] - t))) < 1e-8


def test_perturbed_precondition(hier2):
    with pytest.raises(PreconditionError):
        M.perturbed_scale(hier2, np.full(len(hier2.t), 1e-3))


def test_difference_bound_linear(hier2):
    log_tau = M.lemma_log_tau(hier2)
    shape = np.exp(-0.6 * log_tau)
    consts = []
    for delta in (1e-3, 2e-3):
        m = delta * shape
        ps = M.perturbed_scale(hier2, m)
        nrm = M.weighted_norm(m, hier2, p=0.5)
        consts.append(np.max(np.abs(ps.delta_log_lambda)) / nrm)
    assert consts[1] == pytest.approx(consts[0], rel=1e-3)
    assert 0 < consts[0] < 1.0


def test_weighted_norm_constant(hier2):
    assert M.weighted_norm(np.ones(len(hier2.t)), hier2, p=0.0) == pytest.approx(1.0)
    log_tau = M.lemma_log_tau(hier2)
    # stay clear of subnormal doubles
    v = np.where(log_tau < 1000, np.exp(-0.5 * log_tau), 0.0)
    assert M.weighted_norm(v, hier2, p=0.5) == pytest.approx(1.0, rel=1e-12)


def test_time_variable_constant():
    t = M.log_time_grid(1e-2, 1e-4, 256)
    L = 30.0
    lt, _ = M.integrate_scale(t, np.full(len(t), np.log(L)), np.zeros(len(t)))
    tau = np.array([float(mpmath.exp(x)) for x in lt[1:]])
    assert np.allclose(tau, L * (t[0] - t[1:]), rtol=1e-10)


def test_time_variable_inverse_t():
    t = M.log_time_grid(1e-2, 1e-6, 256)
    lt, _ = M.integrate_scale(t, -np.log(t), -1 / t)
    tau = np.array([float(mpmath.exp(x)) for x in lt[1:]])
    assert np.allclose(tau, np.log(t[0] / t[1:]), rtol=1e-10)


def test_time_variable_richardson(hier2):
    tv = M.time_variable(hier2, 2)
    assert not tv.overflow
    assert tv.richardson < 1e-6


def test_growth_ratios_need_two_levels():
    h = M.solve_hierarchy(1, 2.0, t_min=1e-4, per_decade=64)
    with pytest.raises(DomainError):
        M.growth_ratios(h)


def test_picard_zero_functional():
    d = np.linspace(0, 1, 5)
    res = M.picard_m(lambda m: np.zeros_like(m), d)
    assert np.array_equal(res.m, d) and res.defect == 0


@pytest.mark.parametrize("alpha", [0.1, -0.1])
def test_picard_linear(alpha):
    d = np.ones(10)
    res = M.picard_m(lambda m: alpha * m, d, steps=8)
    assert res.defect < 1e-8
    assert np.allclose(res.m, 1 / (1 - alpha), atol=1e-8)
    assert max(res.lipschitz) == pytest.approx(abs(alpha), rel=1e-6)


def test_picard_quadratic_root():
    lbar, d = 1e3, 0.05
    res = M.picard_m(lambda m: -m**2 / (2 * lbar), np.array([d]))
    root = optimize.brentq(lambda m: m + m**2 / (2 * lbar) - d, 0, 1, xtol=1e-16)
    assert res.m[0] == pytest.approx(root, rel=1e-13)
    assert res.m[0] == pytest.approx(d - d**2 / (2 * lbar), abs=d**3 / lbar**2)


def test_picard_divergence():
    with pytest.raises(ConvergenceError):
        M.picard_m(lambda m: 1.5 * m, np.ones(3))


def test_step3_functional_balance():
    lbar = np.full(4, 100.0)
    P, d = M.step3_functional(lambda m: 16 * np.ones_like(m), lbar)
    assert np.allclose(d, 0.01)
    res = M.picard_m(P, d)
    root = (-1 + np.sqrt(1 + 2 * 0.01 / 100)) * 100
    assert np.allclose(res.m, root, rtol=1e-12)
