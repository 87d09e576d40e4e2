"""
Command-line entry point.

Every subcommand reads an optional strict-JSON config (unknown keys are
rejected), writes plot-ready CSV plus ``manifest.json`` into ``--out`` and
prints one PASS/FAIL line per check.  Exit codes: 0 when every enabled
check passes, 1 when one fails, 2 for usage or configuration errors.
"""
import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corrector, io, modulation, profiles, propagators, spectral, wavesim
from .errors import BubbleTreeError

__all__ = ["main", "run", "Check", "ConfigError", "DEFAULTS"]

log = logging.getLogger("bubbletree")


class ConfigError(ValueError):
    """Malformed or out-of-range configuration (exit code 2)."""


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    target: object = None


DEFAULTS = {
    "identities": {"tol": 1e-8},
    "profiles": {"R_min": 1e-3, "R_max": 1e3, "per_decade": 16},
    "modulation": {"n": 3, "beta": 2.0, "t0": 1e-2, "t_min": 1e-8, "per_decade": 512,
                   "anchor_gap": float(np.log(2.0)), "window_top": 1e-4, "ratio_tol": 0.05,
                   "tol": 1e-12, "iterations": 50},
    "spectral": {"xi_min": 1e-2, "xi_max": 1e2, "per_decade": 16, "match_tol": 1e-6, "band_factor": 4.0},
    "corrector": {"source": "cos2q", "R_min": 1e-6, "R_max": 1e4, "per_decade": 64,
                  "enforce_vanishing": True, "tol": 1e-6},
    "propagators": {"q": 4.0, "tau_min": 1.0, "tau_max": 1e3, "per_decade": 400, "tol": 1e-8,
                    "xi": [0.5, 2.0], "tau_slice": [1.0, 2.0, 3.0]},
    "simulate": {"dr": 0.01, "R_out": 20.0, "t_span": 5.0, "cfl": 0.5, "boundary": "dirichlet",
                 "scales": [1.0], "velocities": [0.0], "signs": None, "record_every": 50,
                 "checkpoint_every": 0, "energy_tol": 1e-3, "cone_t0": None},
    "sweep": {"runs": []},
    "verify-all": {},
}

_SIZE_KEYS = {"per_decade"}


def _reject_constant(name):
    raise ConfigError(f"non-standard JSON constant {name}")


def _load_config(command, path):
    cfg = dict(DEFAULTS[command])
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        user = json.loads(text, parse_constant=_reject_constant)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(user) - set(cfg))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg.update(user)
    for k, v in cfg.items():
        if "tol" in k and (not isinstance(v, (int, float)) or v <= 0):
            raise ConfigError(f"{k} must be a positive number")
        if k in _SIZE_KEYS and (not isinstance(v, int) or v < 16):
            raise ConfigError(f"{k} must be an integer >= 16")
    return cfg


def _check(name, value, ok, target):
    return Check(name, bool(ok), value, target)


def _report(checks, stream=None):
    stream = sys.stdout if stream is None else stream
    for c in checks:
        mark = "PASS" if c.passed else "FAIL"
        print(f"{mark}  {c.name}: value={c.value!r} target={c.target}", file=stream)


# -- subcommands ----------------------------------------------------------------

def cmd_identities(cfg, out):
    tol = cfg["tol"]
    I1, I2 = corrector.explicit_integrals()
    ts = spectral.transference_scalars()
    checks = [
        _check("I1 = int Phi^2 R dR", I1, abs(I1 - 2 * np.pi) < tol, "2*pi"),
        _check("I2 = int (1 - cos 2Q) Phi R dR", I2, abs(I2 - 4.0) < tol, 4.0),
        _check("||phi0||^2", ts.norm_sq, abs(ts.norm_sq - 2 * np.pi) < tol, "2*pi"),
        _check("<r phi0', phi0>", ts.rdr_inner, abs(ts.rdr_inner + np.pi) < tol, "-pi"),
        _check("K_pp", ts.k_pp, abs(ts.k_pp + 0.5) < tol, -0.5),
    ]
    files = []
    if out is not None:
        files.append(io.write_json(out / "identities.json",
                                   {"I1": I1, "I2": I2, "norm_sq": ts.norm_sq,
                                    "rdr_inner": ts.rdr_inner, "k_pp": ts.k_pp}))
    return checks, files


def cmd_profiles(cfg, out):
    R = np.logspace(np.log10(cfg["R_min"]), np.log10(cfg["R_max"]),
                    int(round(np.log10(cfg["R_max"] / cfg["R_min"]) * cfg["per_decade"])) + 1)
    ev = profiles.evaluate(R)
    W = R * profiles.wronskian(profiles.second_solution, profiles.zero_mode, R)
    checks = [_check("R W[Theta, Phi] constant", float(np.ptp(W)), np.ptp(W) < 1e-9, "< 1e-9")]
    files = []
    if out is not None:
        files.append(io.write_csv(out / "profiles.csv", {"R": R, "Q": ev.q, "Phi": ev.phi, "Theta": ev.theta,
                                                         "sin2Q": ev.sin2q, "cos2Q": ev.cos2q}))
    return checks, files


def cmd_modulation(cfg, out):
    h = modulation.solve_hierarchy(cfg["n"], cfg["beta"], cfg["t0"], t_min=cfg["t_min"],
                                   per_decade=cfg["per_decade"], anchor_gap=cfg["anchor_gap"],
                                   iterations=cfg["iterations"], tol=cfg["tol"])
    n = h.n
    rtol = cfg["ratio_tol"]
    window = h.t <= cfg["window_top"]
    checks = []
    for j in range(1, n):
        fp = h.levels[j - 1].fixed_point
        checks.append(_check(f"w contraction (level {j})", fp.contraction_factor, fp.contraction_factor < 1, "< 1"))
    checks.append(_check("ordering crossover time", h.crossover,
                         np.isfinite(h.crossover) and h.crossover >= cfg["window_top"], f">= {cfg['window_top']}"))
    cols = {"t": h.t}
    for j in range(1, n + 1):
        cols[f"log_lambda_{j}"] = h.levels[j - 1].alpha
    for j in range(1, n + 1):
        cols[f"log_tau_{j}"] = h.tau[j - 1].log_tau
    if n >= 2:
        tv = h.tau[0]
        r_end = float(tv.ratio[-1])
        checks.append(_check("tau_1 lbar_2 / lambda_1 at t_min", r_end, abs(r_end - 1) < rtol, f"1 +- {rtol}"))
        ratios = modulation.growth_ratios(h)
        lit = ratios["literal"]
        checks.append(_check("log lambda_1 / int lambda_2 at t_min", float(lit[-1]),
                             abs(lit[-1] - 1) < rtol, f"1 +- {rtol}"))
        lb = ratios["lbar"]
        checks.append(_check("log lambda_1 / int lbar_2 at t_min", float(lb[-1]), abs(lb[-1] - 1) < rtol,
                             f"1 +- {rtol}"))
        cols["ratio_tau1_lbar2_over_lambda1"] = tv.ratio
        cols["ratio_loglambda1_over_tau2"] = lit
        cols["ratio_loglambda1_over_int_lbar2"] = lb
        if np.any(window):
            checks.append(_check("lower-bound constant c (log lambda_1 >= c tau_2)", h.lower_bound_c[0],
                                 h.lower_bound_c[0] >= 0.9, ">= 0.9"))
    files = []
    if out is not None:
        files.append(io.write_csv(out / "modulation.csv", cols))
        files.append(io.write_json(out / "solver.json", {"settings": h.settings, "crossover": h.crossover,
                                                          "lower_bound_c": h.lower_bound_c,
                                                          "richardson": [tv.richardson for tv in h.tau]}))
    return checks, files


def cmd_spectral(cfg, out):
    per = cfg["per_decade"]
    lo, hi = np.log10(cfg["xi_min"]), np.log10(cfg["xi_max"])
    xi = np.logspace(lo, hi, int(round((hi - lo) * per)) + 1)
    table = spectral.spectral_table(xi, check=False)
    sens = float(np.max(table["radius_sensitivity"]))
    band = table["a_abs"] * spectral.bracket(xi)
    ratio = float(band.max() / band.min())
    checks = [
        _check("matching-radius sensitivity", sens, sens <= cfg["match_tol"], f"<= {cfg['match_tol']}"),
        _check("|a| <xi> band ratio C2/C1", ratio, ratio <= cfg["band_factor"], f"<= {cfg['band_factor']}"),
        _check("|a| nonzero", float(table["a_abs"].min()), table["a_abs"].min() > 0, "> 0"),
    ]
    files = []
    if out is not None:
        files.append(io.write_csv(out / "spectral.csv", {"xi": xi, "a_abs": table["a_abs"],
                                                         "a_phase": table["a_phase"],
                                                         "rho_prime": table["rho_prime"]}))
    return checks, files


def _corrector_source(name, R):
    if name == "cos2q":
        return corrector.SourceTerm(R, -profiles.one_minus_cos2q(R))
    if name == "decaying":
        return corrector.SourceTerm(R, profiles.zero_mode(R) / (1 + R**4))
    raise ConfigError(f"unknown corrector source {name!r} (use 'cos2q' or 'decaying')")


def cmd_corrector(cfg, out):
    R = corrector.log_grid(cfg["R_min"], cfg["R_max"], cfg["per_decade"])
    f = _corrector_source(cfg["source"], R)
    mom = corrector.vanishing_defect(f)
    if cfg["enforce_vanishing"]:
        f = corrector.enforce_vanishing(f)
    fld = corrector.solve_h0(f)
    after = corrector.vanishing_defect(f)
    checks = [_check("relative residual of L h0 = f", fld.residual, fld.residual < 1e-3, "< 1e-3")]
    if cfg["enforce_vanishing"]:
        rel = abs(after.value) / after.l1_norm
        checks.append(_check("corrected moment / L1", rel, rel < cfg["tol"], f"< {cfg['tol']}"))
    files = []
    if out is not None:
        res = np.full(len(R), np.nan)
        res[1:-1] = profiles.elliptic_operator(fld.h0, R) - f.values[1:-1]
        files.append(io.write_csv(out / "corrector.csv", {"R": R, "f": f.values, "h0": fld.h0, "h1": fld.h1,
                                                          "h2": fld.h2, "h3": fld.h3, "residual": res}))
        files.append(io.write_json(out / "moments.json", {"moment_before": mom.value, "moment_after": after.value,
                                                          "two_branch": fld.two_branch,
                                                          "growth": fld.growth}))
    return checks, files


def cmd_propagators(cfg, out):
    q = cfg["q"]
    n = int(round(np.log10(cfg["tau_max"] / cfg["tau_min"]) * cfg["per_decade"])) + 1
    tau = np.geomspace(cfg["tau_min"], cfg["tau_max"], n)
    g = tau ** -q
    hp = propagators.discrete_mode_solve(g, lambda t: np.ones_like(t), tau, q=q)
    exact = -tau ** (2 - q) / ((q - 1) * (q - 2))
    err = float(np.max(np.abs(hp - exact) / np.abs(exact)))
    checks = [_check("discrete mode vs closed form (lambda = 1)", err, err < cfg["tol"], f"< {cfg['tol']}")]
    xi = np.asarray(cfg["xi"], dtype=float)
    ts = np.asarray(cfg["tau_slice"], dtype=float)

    def g_c(s, x):
        return np.exp(-4.0 * (s - 3.0) ** 2)

    hc = propagators.continuous_solve(g_c, lambda t: np.ones_like(np.asarray(t, dtype=float)), ts, xi,
                                      sigma_max=12.0, inv_integral=lambda a, b: b - a)
    files = []
    if out is not None:
        files.append(io.write_csv(out / "discrete_mode.csv", {"tau": tau, "g_p": g, "h_p": hp, "closed_form": exact}))
        T, X = np.meshgrid(ts, xi, indexing="ij")
        files.append(io.write_csv(out / "continuum_slice.csv", {"tau": T.ravel(), "xi": X.ravel(), "h_c": hc.ravel()}))
    return checks, files


def cmd_simulate(cfg, out, resume=None):
    grid = wavesim.RadialGrid.uniform(cfg["dr"], cfg["R_out"])
    if resume is not None:
        state = wavesim.load_checkpoint(resume)
        grid = state.grid
    else:
        ans = wavesim.BubbleAnsatz(cfg["scales"], cfg["velocities"], cfg["signs"])
        state = wavesim.multi_bubble_data(ans, grid, boundary=cfg["boundary"], cfl=cfg["cfl"])
    cone_t0 = cfg["cone_t0"] if cfg["cone_t0"] is not None else cfg["t_span"]
    dt = state.cfl * grid.dr
    rows = []

    def record(st):
        try:
            lam = wavesim.extract_scale(st)
        except BubbleTreeError:
            lam = np.nan
        rows.append((st.t, lam, wavesim.energy(st), wavesim.energy(st, r_max=max(cone_t0 - st.t, 0.0)),
                     float(wavesim.axis_ratio(st, 1)[0])))

    E0 = wavesim.energy(state)
    record(state)
    files = []
    while state.t < cfg["t_span"] - 1e-12:
        state = wavesim.step(state, min(dt, cfg["t_span"] - state.t))
        if state.step_count % cfg["record_every"] == 0:
            record(state)
        if out is not None and cfg["checkpoint_every"] and state.step_count % cfg["checkpoint_every"] == 0:
            wavesim.save_checkpoint(state, out / "checkpoint.bin")
    record(state)
    drift = abs(rows[-1][2] - E0) / max(abs(E0), np.finfo(float).tiny)
    checks = [_check("fields finite", True, True, "finite")]
    if state.boundary == "dirichlet":
        checks.append(_check("relative energy drift", drift, drift < cfg["energy_tol"], f"< {cfg['energy_tol']}"))
    if out is not None:
        arr = np.array(rows)
        files.append(io.write_csv(out / "timeseries.csv", {"t": arr[:, 0], "lambda_hat": arr[:, 1],
                                                           "E_total": arr[:, 2], "E_cone": arr[:, 3],
                                                           "axis_u_over_r2": arr[:, 4]}))
        wavesim.save_checkpoint(state, out / "checkpoint.bin")
        files.append(out / "checkpoint.bin")
    return checks, files


def _sweep_worker(args):
    command, cfg, out = args
    return run([command, "--config-json", json.dumps(cfg)] + (["--out", out] if out else []))


def cmd_sweep(cfg, out):
    runs = cfg["runs"]
    if not isinstance(runs, list) or not runs:
        raise ConfigError("sweep needs a non-empty 'runs' list")
    jobs = []
    for k, item in enumerate(runs):
        if not isinstance(item, dict) or set(item) - {"command", "config"} or item.get("command") not in DEFAULTS \
                or item["command"] in ("sweep", "verify-all"):
            raise ConfigError(f"run {k}: expected {{'command': <subcommand>, 'config': {{...}}}}")
        sub = item.get("config", {})
        unknown = set(sub) - set(DEFAULTS[item["command"]])
        if unknown:
            raise ConfigError(f"run {k}: unknown keys {sorted(unknown)}")
        dest = str(out / f"run_{k:03d}_{item['command']}") if out is not None else None
        jobs.append((item["command"], sub, dest))
    workers = int(os.environ.get("BUBBLETREE_THREADS", os.cpu_count() or 1))
    workers = max(1, min(workers, len(jobs)))
    if workers == 1:
        codes = [_sweep_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_sweep_worker, jobs))
    checks = [_check(f"run {k} ({j[0]}) exit code", c, c == 0, 0) for k, (j, c) in enumerate(zip(jobs, codes))]
    return checks, []


def cmd_verify_all(cfg, out, fast=False):
    checks = []
    # trivial tier
    checks.append(_check("Q(0) = 0", profiles.bubble_profile(0.0), profiles.bubble_profile(0.0) == 0.0, 0.0))
    checks.append(_check("Q(1) = pi/2", profiles.bubble_profile(1.0), abs(profiles.bubble_profile(1.0) - np.pi / 2) < 1e-15, "pi/2"))
    checks.append(_check("Phi(1) = 2", profiles.zero_mode(1.0), abs(profiles.zero_mode(1.0) - 2.0) < 1e-15, 2.0))
    checks.append(_check("Theta(1) = 0", profiles.second_solution(1.0), abs(profiles.second_solution(1.0)) < 1e-15, 0.0))
    v = modulation.outermost_scale(np.exp(-1.0), 2.0)
    checks.append(_check("log lambda_n(1/e) = 1", v, abs(v - 1.0) < 1e-14, 1.0))
    pr = modulation.picard_m(lambda m: 0.0 * m, np.ones(4))
    checks.append(_check("Picard with P = 0 returns d", float(np.max(np.abs(pr.m - 1))), np.all(pr.m == 1.0), 0.0))
    g = wavesim.RadialGrid.uniform(0.05, 5.0)
    st = wavesim.evolve(wavesim.SimState(g, np.zeros(g.size), np.zeros(g.size)), 1.0)
    checks.append(_check("u = 0 stays 0", float(np.max(np.abs(st.u))), not np.any(st.u), 0.0))
    U = propagators.continuous_green(1.0, 1.0, 2.0, lambda t: np.ones_like(t), inv_integral=lambda a, b: b - a)
    checks.append(_check("U(tau, tau, xi) = 0", U, U == 0.0, 0.0))
    if not fast:
        for cmd in (cmd_identities, cmd_profiles):
            c, _ = cmd(DEFAULTS[cmd.__name__[4:]], None)
            checks.extend(c)
    return checks, []


COMMANDS = {
    "identities": cmd_identities,
    "profiles": cmd_profiles,
    "modulation": cmd_modulation,
    "spectral": cmd_spectral,
    "corrector": cmd_corrector,
    "propagators": cmd_propagators,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "verify-all": cmd_verify_all,
}


def build_parser():
    p = argparse.ArgumentParser(prog="bubbletree", description=__doc__.strip().splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--config", metavar="PATH", help="strict JSON config file")
        g.add_argument("--config-json", metavar="TEXT", help=argparse.SUPPRESS)
        sp.add_argument("--out", metavar="DIR", help="output directory for CSV/JSON and manifest.json")
        if name == "simulate":
            sp.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint file")
        if name == "verify-all":
            sp.add_argument("--fast", action="store_true", help="run only the quick trivial-tier checks")
    return p


def run(argv=None):
    """Parse ``argv``, execute, and return the exit code (0, 1 or 2)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    try:
        if args.config_json is not None:
            tmp = json.loads(args.config_json, parse_constant=_reject_constant)
            cfg = dict(DEFAULTS[command])
            unknown = set(tmp) - set(cfg)
            if unknown:
                raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
            cfg.update(tmp)
        else:
            cfg = _load_config(command, args.config)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        if command == "simulate":
            checks, files = cmd_simulate(cfg, out, resume=args.resume)
        elif command == "verify-all":
            checks, files = cmd_verify_all(cfg, out, fast=args.fast)
        else:
            checks, files = COMMANDS[command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BubbleTreeError as exc:
        checks, files = [Check(f"{command} raised {type(exc).__name__}", False, str(exc), "no error")], []
    wall = time.perf_counter() - start
    _report(checks)
    if out is not None:
        io.write_manifest(out, command, cfg, checks, files, wall)
    return 0 if all(c.passed for c in checks) else 1


def main():
    sys.exit(run())
