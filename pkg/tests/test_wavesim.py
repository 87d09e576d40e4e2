import numpy as np
import pytest

from bubbletree import wavesim as W
from bubbletree.errors import CFLError, DomainError, GridBlowupError, NoCrossingError, ResolutionError
from bubbletree.profiles import bubble_profile


def bump(r, c, w, A):
    x = (r - c) / w
    out = np.zeros_like(r)
    k = np.abs(x) < 1
    out[k] = A * np.exp(-1 / (1 - x[k] ** 2))
    return out


def bump_state(dr, R_out, c=4.0, w=3.0, A=0.3, boundary="dirichlet"):
    g = W.RadialGrid.uniform(dr, R_out)
    return W.SimState(g, bump(g.r, c, w, A), np.zeros(g.size), boundary=boundary)


def test_grid_nodes():
    g = W.RadialGrid.uniform(0.1, 1.0)
    assert g.size == 11 and g.r[0] == 0.0 and np.all(np.diff(g.r) > 0)
    with pytest.raises(DomainError):
        W.RadialGrid.uniform(0.5, 1.0)


def test_single_bubble_data():
    g = W.RadialGrid.uniform(0.01, 5)
    s = W.multi_bubble_data(W.BubbleAnsatz([1.0]), g)
    assert np.array_equal(s.u, bubble_profile(g.r)) and np.all(s.ut == 0)


def test_two_bubble_data_pointwise():
    g = W.RadialGrid.uniform(1e-3, 1.0)
    s = W.multi_bubble_data(W.BubbleAnsatz([100.0, 1.0]), g)
    assert s.u[300] == pytest.approx(bubble_profile(30.0) - bubble_profile(0.3), rel=1e-13)
    assert s.u[0] == 0.0


def test_ansatz_checks():
    with pytest.raises(DomainError):
        W.BubbleAnsatz([1.0, 2.0])
    with pytest.raises(ResolutionError):
        W.multi_bubble_data(W.BubbleAnsatz([50.0]), W.RadialGrid.uniform(0.01, 1.0))


@pytest.mark.parametrize("value", [0.0, np.pi])
def test_constant_states_static(value):
    g = W.RadialGrid.uniform(0.05, 5)
    s = W.SimState(g, np.full(g.size, value), np.zeros(g.size))
    s = W.evolve(s, 2.0)
    assert np.max(np.abs(s.u - value)) < 1e-14


def test_cfl_violation():
    s = bump_state(0.1, 10)
    with pytest.raises(CFLError):
        W.step(s, 0.1)


def test_nan_flagged():
    s = bump_state(0.1, 10)
    s.u[5] = np.nan
    with pytest.raises(GridBlowupError):
        W.step(s, 0.05)


def test_unknown_boundary():
    s = bump_state(0.1, 10, boundary="periodic")
    with pytest.raises(DomainError):
        W.step(s, 0.05)


def test_static_bubble_preserved():
    g = W.RadialGrid.uniform(0.01, 50)
    s = W.multi_bubble_data(W.BubbleAnsatz([1.0]), g)
    u0 = s.u.copy()
    drift, axis = [0.0], []

    def cb(st):
        drift[0] = max(drift[0], np.max(np.abs(st.u - u0)))
        if st.step_count % 100 == 0:
            axis.append(W.axis_ratio(st))

    W.evolve(s, 5.0, callback=cb)
    assert drift[0] < 1e-4
    # Q ~ 2 r^2 near the axis
    assert np.all(np.abs(np.array(axis) - 2.0) < 1e-2)


def test_energy_zero():
    g = W.RadialGrid.uniform(0.1, 5)
    assert W.energy(W.SimState(g, np.zeros(g.size), np.zeros(g.size))) == 0.0


def test_energy_scale_invariance():
    e1 = W.energy(W.multi_bubble_data(W.BubbleAnsatz([1.0]), W.RadialGrid.uniform(0.01, 50)))
    e10 = W.energy(W.multi_bubble_data(W.BubbleAnsatz([10.0]), W.RadialGrid.uniform(0.001, 5)))
    assert abs(e1 - e10) < 1e-6
    assert e1 == pytest.approx(4.0, abs=1e-5)


def test_partial_energy_monotone_in_radius():
    s = W.multi_bubble_data(W.BubbleAnsatz([1.0]), W.RadialGrid.uniform(0.01, 20))
    vals = [W.energy(s, r_max=x) for x in (0.0, 0.5, 1.0, 1.005, 2.0, 20.0)]
    assert vals[0] == 0.0 and np.all(np.diff(vals) > 0)
    assert vals[-1] == W.energy(s)


def test_energy_conservation():
    s = bump_state(0.01, 20, c=3.0, w=1.0, A=0.5)
    E0 = W.energy(s)
    Es = []
    W.evolve(s, 0.005 * 1e4, callback=lambda st: Es.append(W.energy(st)) if st.step_count % 500 == 0 else None)
    assert len(Es) == 20
    assert np.max(np.abs(np.array(Es) - E0)) / E0 < 1e-3


def test_absorbing_boundary_lets_energy_out():
    # the inward half reflects off the axis first, so wait for both halves
    out = {}
    for b in ("absorbing", "dirichlet"):
        s = bump_state(0.02, 8, c=4.0, w=1.0, A=0.3, boundary=b)
        out[b] = W.energy(W.evolve(s, 24.0)) / W.energy(s)
    assert out["absorbing"] < 1e-3
    assert out["dirichlet"] > 0.99


def test_self_convergence_order():
    order, e1, e2 = W.self_convergence_order(lambda h: bump_state(h, 10), 0.01, 1.0)
    assert order == pytest.approx(2.0, abs=0.2)
    assert e2 < e1


@pytest.mark.parametrize("lam", [4.0, 0.7])
def test_extract_scale_single(lam):
    dr = 0.005
    s = W.multi_bubble_data(W.BubbleAnsatz([lam]), W.RadialGrid.uniform(dr, 10))
    r1 = 1 / lam
    # linear interpolation error is bounded by the curvature over one cell
    assert abs(1 / W.extract_scale(s) - r1) < lam * dr**2


def test_extract_scale_two_bubbles():
    s = W.multi_bubble_data(W.BubbleAnsatz([100.0, 0.1]), W.RadialGrid.uniform(1e-3, 2.0))
    assert 0.99 * 100 <= W.extract_scale(s) <= 1.01 * 100


def test_extract_scale_no_crossing():
    g = W.RadialGrid.uniform(0.1, 5)
    with pytest.raises(NoCrossingError):
        W.extract_scale(W.SimState(g, np.full(g.size, 0.1), np.zeros(g.size)))


def test_light_cone_identical_runs():
    s = bump_state(0.02, 5)
    assert W.light_cone_check(s, s.copy(), 1.0, 1.0) == (0.0, 0.0)


def test_light_cone_leak_converges():
    # the discrete front leaks ahead of the cone by an amount that vanishes with dr
    ext = []
    for dr in (0.01, 0.005):
        g = W.RadialGrid.uniform(dr, 5)
        base = W.multi_bubble_data(W.BubbleAnsatz([1.0]), g)
        pert = base.copy()
        pert.u = pert.u + bump(g.r, 0.5, 0.5, 1e-2)
        e, i = W.light_cone_check(base, pert, 1.0, 2.0)
        ext.append(e)
        assert i > 1e-4
    assert ext[1] < ext[0] / 4


def test_checkpoint_round_trip(tmp_path):
    s = W.evolve(bump_state(0.05, 5, boundary="absorbing"), 0.5)
    p = tmp_path / "run.ck"
    W.save_checkpoint(s, p)
    back = W.load_checkpoint(p)
    assert np.array_equal(back.u, s.u) and np.array_equal(back.ut, s.ut)
    assert back.t == s.t and back.step_count == s.step_count and back.boundary == "absorbing"
    nxt_a, nxt_b = W.step(s, 0.01), W.step(back, 0.01)
    assert np.array_equal(nxt_a.u, nxt_b.u)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.ck"
    p.write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(DomainError):
        W.load_checkpoint(p)


def test_collapse_static_run():
    rep = W.collapse_experiment({"n": 1, "beta": 2.0, "t0": 1e-3, "static": True, "t_stop": 5e-4})
    assert np.ptp(rep.lambda_hat) / rep.lambda_hat[0] < 0.01
    assert abs(rep.exponent) < 0.05
    assert rep.stop_reason == "t_stop reached"


def test_collapse_rejects_n3():
    with pytest.raises(DomainError):
        W.collapse_experiment({"n": 3})
