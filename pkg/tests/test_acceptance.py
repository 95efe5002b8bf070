"""The ten acceptance criteria, each at its stated tolerance.

Every test appends one ``CRITERION n: PASS|FAIL ...`` line that is printed
in the pytest summary (and directly with ``-s``).
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import jn_zeros

from conftest import CRITERIA_LINES
from nbodyhj import cli
from nbodyhj.action import action_eval
from nbodyhj.central_config import find_minimal_central
from nbodyhj.core import MassSystem, project_com
from nbodyhj.hj import (
    TOL_HJ, SliceGrid, grad_check, horizon_sequence, scan_grid, semiconcavity_probe, uv_identity, value_at,
)
from nbodyhj.mesh import PathField, TimeMesh, hardy_ratio
from nbodyhj.minimize import MinimizeOptions, minimize_action
from nbodyhj.reference import make_scenario
from nbodyhj.scenario_io import load_scenario, load_slice, resolve_scenario_path, resolve_slice_path
from nbodyhj.spectral import (
    PathHessian, ScaledMassHessian, SpectralOptions, conjugate_scan, lambda_profile, smallest_eigs,
)
from nbodyhj.trajectory import hyperbolic_asymptotics, oracle_deviation, reference_newton_residual, solve_trajectory


def report(n, ok, detail):
    line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    assert ok, line


def _class_specs():
    out = {}
    for key, name in (("H", "hyperbolic_two_body"), ("P", "parabolic_homothetic"),
                      ("HP", "hyperbolic_parabolic_three_body")):
        sc = load_scenario(resolve_scenario_path(name))
        out[key] = (sc.spec, replace(sc.minimize, restarts=2, threads=None))
    return out


def _grid(spec, seed, n=5, step=0.05):
    ms = spec.ms
    rng = np.random.default_rng(seed)
    e1 = project_com(ms, rng.standard_normal((ms.n, ms.d)))
    e1 /= np.linalg.norm(e1)
    e2 = project_com(ms, rng.standard_normal((ms.n, ms.d)))
    e2 -= (e2 * e1).sum() * e1
    e2 /= np.linalg.norm(e2)
    s = step * (np.arange(n) - (n - 1) / 2)
    return SliceGrid(np.array(spec.x0), e1, e2, s, s)


# ---------------------------------------------------------------- 1

def test_criterion_1_parabolic_homothetic():
    t0 = time.perf_counter()
    ms = MassSystem([1.0, 1.0], 2)
    cc = find_minimal_central(ms)
    beta_exact = (9.0 / (2.0 * np.sqrt(2.0))) ** (1.0 / 3.0)
    spec = make_scenario("parabolic", ms, b=cc.b_m)
    spec = spec.with_x(spec.beta * spec.b)
    opts = MinimizeOptions()
    act = action_eval(spec, PathField.zeros(opts.mesh(), ms)).value
    newton = float(np.max(reference_newton_residual(spec, np.geomspace(1.0, 1e4, 200))))
    val = value_at(spec, opts, finite_horizon=False)
    elapsed = time.perf_counter() - t0
    errs = {
        "u_min": abs(cc.u_min - 1.0 / np.sqrt(2.0)),
        "beta": abs(spec.beta - beta_exact),
        "action": abs(act),
        "newton": newton,
        "hj": abs(val.hj_residual),
    }
    ok = (errs["u_min"] <= 1e-9 and errs["beta"] <= 1e-9 and errs["action"] <= 1e-8 and errs["newton"] <= 1e-8
          and errs["hj"] <= 1e-6 and elapsed < 5.0)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report(1, ok, f"{detail}, {elapsed:.2f}s")


# ---------------------------------------------------------------- 2

def test_criterion_2_hardy():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = {0.0: 0.0, 0.5: 0.0, 1.0: 0.0}
    ok = True
    for _ in range(200):
        n = int(rng.integers(2, 4))
        ms = MassSystem(rng.uniform(0.5, 2.0, n), 2)
        T = float(10 ** rng.uniform(1, 4))
        K = max(int(rng.integers(16, 128)), int(np.ceil(np.log(T) / np.log(1.4))))
        mesh = TimeMesh.geometric(T, K)
        vals = rng.standard_normal((mesh.nodes.size, n, 2)).cumsum(axis=0)
        vals[0] = 0.0
        phi = PathField(mesh, vals)
        for eps in worst:
            r = hardy_ratio(ms, phi, eps) / (4.0 / (1.0 + eps) ** 2)
            worst[eps] = max(worst[eps], r)
            ok &= r <= 1.0 + 1e-3
    ms = MassSystem([1.0, 1.0], 2)
    mesh = TimeMesh.octaves(1e8, 256)
    phi = PathField.from_function(mesh, lambda t: np.array([[1.0, 0.0], [-1.0, 0.0]]) * (1.0 - 1.0 / t))
    r_exact = hardy_ratio(ms, phi, 0.0)
    elapsed = time.perf_counter() - t0
    ok &= abs(r_exact - 1.0) <= 1e-3 and elapsed < 10.0
    worst_s = ", ".join(f"eps={k:g}: {v:.4f}" for k, v in worst.items())
    report(2, ok, f"max ratio/bound {worst_s}; ratio(1-1/t) {r_exact:.6f}, {elapsed:.2f}s")


# ---------------------------------------------------------------- 3

def test_criterion_3_two_body_oracle(hyperbolic_spec):
    t0 = time.perf_counter()
    spec = hyperbolic_spec
    traj, res = solve_trajectory(spec, MinimizeOptions(T0=1e4, K=512))
    dev = oracle_deviation(traj, t_max=1e3)
    e_err = float(np.max(np.abs(traj.energy_samples - 1.0)))
    fit = hyperbolic_asymptotics(traj, spec)
    elapsed = time.perf_counter() - t0
    ok = dev <= 1e-4 and e_err <= 1e-6 and fit.rel_error <= 0.05 and fit.cosine < 0 and elapsed < 60.0
    report(3, ok, f"oracle rel dev {dev:.1e}, energy err {e_err:.1e}, fit rel err {fit.rel_error:.1e} "
                  f"(cos {fit.cosine:.4f}), {elapsed:.1f}s")


# ---------------------------------------------------------------- 4 and 5

T0_CONVERGENCE = {"H": 1e5, "P": 1e13, "HP": 1e13}


@pytest.fixture(scope="module")
def class_grids():
    specs = _class_specs()
    return {k: (spec, opts, _grid(spec, seed)) for seed, (k, (spec, opts)) in enumerate(specs.items())}


def test_criterion_4_hj_on_grids(class_grids):
    t0 = time.perf_counter()
    worst_hj = worst_fd = 0.0
    n_regular = n_other = 0
    ok = True
    for key, (spec, opts, grid) in class_grids.items():
        recs = scan_grid(spec, grid, opts, finite_horizon=False)
        for rec in recs:
            res = rec.result
            if res is None or res.k != 1 or res.status != "ok":
                n_other += 1
                continue
            n_regular += 1
            gc = grad_check(spec.with_x(rec.x.reshape(spec.ms.n, spec.ms.d)), opts=replace(opts, restarts=1),
                            base=res)
            worst_hj = max(worst_hj, abs(res.hj_residual))
            worst_fd = max(worst_fd, gc.max_rel_dev)
    elapsed = time.perf_counter() - t0
    ok = n_regular > 0 and worst_hj <= TOL_HJ and worst_fd <= 1e-3 and elapsed < 600
    report(4, ok, f"{n_regular} regular points ({n_other} skipped), max |HJ| {worst_hj:.1e}, "
                  f"max grad-vs-FD {worst_fd:.1e}, {elapsed:.0f}s")


def test_criterion_5_horizon_convergence(class_grids):
    t0 = time.perf_counter()
    ok = True
    worst_final = 0.0
    n_points = 0
    bad = []
    for key, (spec, opts, grid) in class_grids.items():
        o = replace(opts, T0=T0_CONVERGENCE[key], restarts=1, threads=1)
        for i, j, x in grid.points(spec.ms):
            seq = horizon_sequence(spec.with_x(x), o, n_doublings=5)
            final = seq.gaps[-1] / (1.0 + abs(seq.v[-1]))
            worst_final = max(worst_final, final)
            n_points += 1
            if not (seq.decreasing() and final <= 1e-5):
                bad.append((key, i, j))
    elapsed = time.perf_counter() - t0
    ok = not bad
    report(5, ok, f"{n_points} points, gaps decreasing in k=0..4 at all but {len(bad)}, "
                  f"max final gap/(1+|v|) {worst_final:.1e}, T0 H/P/HP = 1e5/1e13/1e13, {elapsed:.0f}s")


# ---------------------------------------------------------------- 6

def test_criterion_6_uv_identity(hyperbolic_spec, parabolic_spec):
    t0 = time.perf_counter()
    worst = 0.0
    for spec in (hyperbolic_spec, parabolic_spec):
        for T in (10.0, 50.0):
            worst = max(worst, uv_identity(spec, T).residual)
    elapsed = time.perf_counter() - t0
    report(6, worst <= 1e-6 and elapsed < 60, f"max relative residual {worst:.1e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 7

def test_criterion_7_semiconcavity():
    t0 = time.perf_counter()
    specs = _class_specs()
    rng = np.random.default_rng(7)
    scales = (1e-1, 1e-2, 1e-3)
    quot = {s: [] for s in scales}
    for key, n_pts in (("H", 7), ("P", 7), ("HP", 6)):
        spec, opts = specs[key]
        ms = spec.ms
        o = replace(opts, restarts=1)
        for _ in range(n_pts):
            x = spec.x0 + 0.2 * project_com(ms, rng.standard_normal((ms.n, ms.d)))
            sp = spec.with_x(x)
            dirs = [project_com(ms, rng.standard_normal((ms.n, ms.d))) for _ in range(2)]
            dirs = [d / np.linalg.norm(d) for d in dirs]
            for s in scales:
                quot[s].append(semiconcavity_probe(sp, [s * d for d in dirs], o))
    C = np.array([np.nanmax(quot[s]) for s in scales])
    C_fit = float(np.mean(C))
    elapsed = time.perf_counter() - t0
    stable = bool(np.all(np.abs(C - C_fit) <= 0.5 * abs(C_fit)))
    n_pts = len(quot[scales[0]])
    report(7, stable and np.all(np.isfinite(C)) and elapsed < 300,
           f"{n_pts} points, upper constants {', '.join(f'{c:.4f}' for c in C)} (fit {C_fit:.4f}), {elapsed:.0f}s")


# ---------------------------------------------------------------- 8

def test_criterion_8_spectral():
    t0 = time.perf_counter()
    specs = _class_specs()
    sopts = SpectralOptions()
    orth = 0.0
    violations = 0
    rng = np.random.default_rng(8)
    keys = list(specs)
    for case in range(10):
        spec, opts = specs[keys[case % 3]]
        ms = spec.ms
        sp = spec.with_x(spec.x0 + 0.1 * project_com(ms, rng.standard_normal((ms.n, ms.d))))
        res = minimize_action(sp, replace(opts, restarts=1))
        src = PathHessian(sp, res.phi_star)
        t_grid = np.sort(rng.uniform(1.0 - sp.eps_back + 1e-6, 8.0, 6))
        prof = lambda_profile(sp, src, t_grid, sopts)
        violations += len(prof.violations)
        for t in t_grid[:2]:
            orth = max(orth, smallest_eigs(sp, src, t, sopts).orth_residual)
    # separable oracle: root of lambda1 at t* = 4 kappa / j^2
    j = float(jn_zeros(1, 1)[0])
    t_star = 2.0
    kappa = t_star * j * j / 4.0
    ms = MassSystem([1.0, 1.0], 2)
    rep = conjugate_scan(ms, ScaledMassHessian(ms, kappa), replace(sopts, per_doubling=96), t_lo=1.0, t_hi=4.0)
    root_err = abs(rep.t_star - t_star) if rep.t_star is not None else np.inf
    # coercivity for each class
    lam = {}
    for key, (spec, opts) in specs.items():
        res = minimize_action(spec, opts)
        lam[key] = smallest_eigs(spec, PathHessian(spec, res.phi_star), 1.0, sopts).lambda1
    elapsed = time.perf_counter() - t0
    ok = orth <= 1e-8 and violations == 0 and root_err <= 1e-4 and all(v > 0 for v in lam.values()) and elapsed < 120
    lam_s = ", ".join(f"{k} {v:.3f}" for k, v in lam.items())
    report(8, ok, f"orth {orth:.1e}, monotonicity violations {violations}, oracle root err {root_err:.1e}, "
                  f"lambda1 on [1, T_max]: {lam_s}, {elapsed:.0f}s")


# ---------------------------------------------------------------- 9

def test_criterion_9_singular_slice():
    t0 = time.perf_counter()
    sc = load_scenario(resolve_scenario_path("singular_slice"))
    grid = load_slice(resolve_slice_path("singular_slice"), sc.spec)
    recs = scan_grid(sc.spec, grid, sc.minimize, finite_horizon=False)
    band = [r for r in recs if grid.s2[r.j] == 0.0]
    off = [r for r in recs if grid.s2[r.j] != 0.0]
    band_ok = all(r.result is not None and r.result.k == 2 for r in band)
    tie = max(abs(r.result.cluster_actions[1] - r.result.cluster_actions[0]) for r in band) if band_ok else np.inf
    vel_gap = min(np.linalg.norm(np.asarray(r.result.initial_velocities[0]) - r.result.initial_velocities[1])
                  for r in band) if band_ok else 0.0
    off_ok = all(r.result is not None and r.result.k == 1 for r in off)
    elapsed = time.perf_counter() - t0
    ok = band_ok and off_ok and len(band) > 0 and tie <= 1e-7 and vel_gap > 1e-3 and elapsed < 600
    report(9, ok, f"band {len(band)} points k=2: {band_ok}, action tie {tie:.1e}, min |dv(1)| {vel_gap:.2f}, "
                  f"off band {len(off)} points k=1: {off_ok}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 10

def test_criterion_10_determinism(tmp_path):
    outs = []
    for run, threads in enumerate((1, 4, 1)):
        out = tmp_path / f"verify_{run}.json"
        code = cli.run(["verify", "--scenario", "hyperbolic_parabolic_three_body", "--seed", "3",
                        "--threads", str(threads), "--restarts", "4", "--quiet", "--out", str(out)])
        assert code == 0
        outs.append(out.read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    report(10, ok, f"3 verify runs (threads 1, 4, 1) byte-identical: {ok} ({len(outs[0])} bytes)")
