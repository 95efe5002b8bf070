"""Command-line front end: ``nbodyhj <command> ...``.

Machine-readable output goes to stdout (or ``--out``); progress goes to
stderr. Exit codes: 0 success, 1 computation error or failed check,
2 usage or input error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .central_config import CentralConfigOptions, find_minimal_central, kkt_residual
from .core import ClusterPartition, MassSystem
from .errors import NBodyHJError, ParseError, RangeError, ShapeError, ValidationError
from .hj import TOL_HJ, grad_check, scan_grid, scan_header, scan_rows, value_at
from .minimize import MinimizeOptions
from .parallel import default_threads
from .potential import u_value
from .reference import HYPERBOLIC, asymptotic_energy
from .scenario_io import (
    Scenario, dumps, load_scenario, load_slice, resolve_scenario_path, resolve_slice_path, save_result, to_plain,
    write_csv,
)
from .spectral import PathHessian, conjugate_scan, lambda_profile, smallest_eigs
from .trajectory import hyperbolic_asymptotics, oracle_deviation, reference_newton_residual, solve_trajectory

USAGE_ERRORS = (ParseError, ValidationError, ShapeError)


class _Progress:
    """Stderr progress lines; ``tick`` is safe to call from pool workers."""

    def __init__(self, quiet: bool):
        self.quiet = quiet
        self.t0 = time.perf_counter()
        self._count = itertools.count(1)

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(f"[{time.perf_counter() - self.t0:7.1f}s] {msg}", file=sys.stderr, flush=True)

    def tick(self, total: int, what: str) -> None:
        self.say(f"{what} {next(self._count)}/{total}")


# ---------------------------------------------------------------- options

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $NBODYHJ_THREADS or 1)")
    p.add_argument("--seed", type=int, default=None, help="random seed for restarts")
    p.add_argument("--quiet", action="store_true", help="no progress on stderr")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver (defaults come from the scenario file)")
    g.add_argument("--T0", type=float, default=None, help="working horizon")
    g.add_argument("--per-doubling", type=int, default=None, help="mesh elements per time octave")
    g.add_argument("--K", type=int, default=None, help="fixed element count (overrides --per-doubling)")
    g.add_argument("--restarts", type=int, default=None)
    g.add_argument("--sigma", type=float, default=None, help="amplitude of random starting fields")
    g.add_argument("--tol-grad", type=float, default=None, help="gradient tolerance of the minimizer")
    g.add_argument("--tol-horizon", type=float, default=None, help="action change accepted between horizons")
    g.add_argument("--max-doublings", type=int, default=None)
    g.add_argument("--max-iter", type=int, default=None)


def _scenario_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON file or name of a bundled scenario")


_FLAG_TO_FIELD = {
    "T0": "T0", "per_doubling": "per_doubling", "K": "K", "restarts": "restarts", "sigma": "sigma",
    "tol_grad": "tol_grad", "tol_horizon": "tol_horizon", "max_doublings": "max_doublings", "max_iter": "max_iter",
}


def solver_options(args, base: MinimizeOptions) -> MinimizeOptions:
    upd = {f: getattr(args, flag) for flag, f in _FLAG_TO_FIELD.items() if getattr(args, flag, None) is not None}
    if args.seed is not None:
        upd["seed"] = args.seed
    upd["threads"] = args.threads if args.threads is not None else default_threads()
    return replace(base, **upd)


def _load(args) -> tuple[Scenario, MinimizeOptions]:
    sc = load_scenario(resolve_scenario_path(args.scenario))
    opts = solver_options(args, sc.minimize)
    # results record the options actually used
    sc.minimize = opts
    return sc, opts


def _emit(doc: dict, out: str | None) -> None:
    if out:
        save_result(out, doc)
    else:
        sys.stdout.write(dumps(to_plain(doc)) + "\n")


# ---------------------------------------------------------------- central-config

def _parse_clusters(raw: list | None, n: int) -> ClusterPartition:
    if not raw:
        return ClusterPartition.single(n)
    blocks = []
    for item in raw:
        try:
            blocks.append(tuple(sorted(int(v) for v in item.split(","))))
        except ValueError as exc:
            raise ParseError(f"--cluster expects comma-separated body indices, got {item!r}", "cluster") from exc
    seen = sorted(i for b in blocks for i in b)
    missing = [i for i in range(n) if i not in seen]
    blocks += [(i,) for i in missing]
    try:
        return ClusterPartition(tuple(sorted(blocks)))
    except (ValueError, TypeError) as exc:
        raise ParseError(str(exc), "--cluster") from exc


def cmd_central_config(args, prog: _Progress) -> int:
    ms = MassSystem(args.masses, args.dim)
    part = _parse_clusters(args.cluster, ms.n)
    opts = CentralConfigOptions(tol=args.tol, restarts=args.cc_restarts, seed=args.seed or 0,
                                threads=args.threads if args.threads is not None else default_threads())
    clusters = []
    for block in part.nontrivial():
        prog.say(f"central configuration of bodies {list(block)}")
        res = find_minimal_central(ms.sub(block), None, opts)
        clusters.append({
            "bodies": list(block), "b_m": res.b_m, "u_min": res.u_min, "beta": res.beta,
            "kkt_residual": res.kkt_residual, "values_found": list(res.values_found),
            "n_converged": res.n_converged,
        })
    _emit({"masses": ms.masses, "dim": ms.d, "clusters": clusters}, args.out)
    return 0


# ---------------------------------------------------------------- solve / value

def _minimizer_rows(phi):
    vals = phi.values.reshape(phi.values.shape[0], -1)
    return [[float(t), *map(float, row)] for t, row in zip(phi.mesh.nodes, vals)]


def cmd_solve(args, prog: _Progress) -> int:
    sc, opts = _load(args)
    spec = sc.spec
    prog.say(f"minimizing ({spec.kind}, N={spec.ms.n}, restarts={opts.restarts})")
    traj, res = solve_trajectory(spec, opts, richardson=not args.no_richardson)
    prog.say(f"action {res.action_value:.12g}, |grad| {res.grad_norm:.2e}, k={res.k}")
    out = Path(args.out)
    ms = spec.ms
    bundle = {
        "command": "solve",
        "minimize": {
            "action_value": res.action_value, "grad_norm": res.grad_norm, "iterations": res.iterations,
            "horizon_history": res.horizon_history, "k": res.k, "tail_bound": res.tail_bound,
            "restart_values": res.restart_values,
            "distinct_minimizers": [
                {"action_value": c.action_value, "members": c.members, "initial_velocity": c.initial_velocity,
                 "grad_norm": c.grad_norm} for c in res.distinct_minimizers],
            "distance_matrix": [] if res.distance_matrix is None else res.distance_matrix,
        },
        "trajectory": {
            "T": traj.T, "initial_velocity": traj.initial_velocity,
            "energy_spread": traj.energy_spread(), "asymptotic_energy": asymptotic_energy(spec),
        },
    }
    phi_header = ["t"] + [f"phi{i}_{k}" for i in range(ms.n) for k in range(ms.d)]
    sidecars = {
        "trajectory.csv": (traj.header(), _traj_rows(traj)),
        "minimizer.csv": (phi_header, _minimizer_rows(res.phi_star)),
    }
    save_result(out / "result.json", bundle, sc, sidecars)
    prog.say(f"wrote {out / 'result.json'}")
    return 0


def _traj_rows(traj):
    n_t = traj.times.size
    pos = traj.positions.reshape(n_t, -1)
    vel = traj.velocities.reshape(n_t, -1)
    return [[float(traj.times[k]), *map(float, pos[k]), *map(float, vel[k]), float(traj.energy_samples[k])]
            for k in range(n_t)]


def _value_doc(res) -> dict:
    return {
        "v": res.v, "v_T": res.v_T, "grad_v": [] if res.grad_v is None else res.grad_v,
        "hj_residual": res.hj_residual, "k": res.k, "lambda1": res.lambda1, "T": res.T,
        "tail_bound": res.tail_bound, "colldist": res.colldist, "status": res.status,
        "cluster_actions": res.cluster_actions, "initial_velocities": res.initial_velocities,
        "horizon_history": res.horizon_history,
    }


def cmd_value(args, prog: _Progress) -> int:
    sc, opts = _load(args)
    prog.say("evaluating the value function")
    res = value_at(sc.spec, opts, finite_horizon=not args.no_finite_horizon, r_min=args.r_min,
                   with_lambda=args.with_lambda, spectral_opts=sc.spectral)
    doc = {"command": "value", "value": _value_doc(res)}
    if args.out:
        save_result(args.out, doc, sc)
    else:
        _emit(doc, None)
    return 0


# ---------------------------------------------------------------- scan

def cmd_scan(args, prog: _Progress) -> int:
    sc, opts = _load(args)
    grid = load_slice(resolve_slice_path(args.slice), sc.spec)
    total = len(grid.s1) * len(grid.s2)
    prog.say(f"scanning {total} grid points")
    t0 = time.perf_counter()
    records = scan_grid(sc.spec, grid, opts, threads=opts.threads, with_lambda=args.with_lambda,
                        finite_horizon=not args.no_finite_horizon, progress=lambda rec: prog.tick(total, "point"))
    prog.say(f"scan finished in {time.perf_counter() - t0:.1f}s")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, scan_header(sc.spec.ms), scan_rows(records))
    ks = [r.result.k if r.result is not None else 0 for r in records]
    summary = {"points": total, "singular": sum(k > 1 for k in ks), "errors": sum(r.result is None for r in records),
               "csv": str(out)}
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------- spectrum

def parse_t_grid(raw: str) -> np.ndarray:
    parts = raw.split(":")
    try:
        if len(parts) != 3:
            raise ValueError
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ParseError(f"--t-grid expects start:stop:count, got {raw!r}", "t-grid") from exc
    if n < 1 or not (0 < a <= b):
        raise ParseError(f"--t-grid needs 0 < start <= stop and count >= 1, got {raw!r}", "t-grid")
    return np.linspace(a, b, n)


def cmd_spectrum(args, prog: _Progress) -> int:
    sc, opts = _load(args)
    spec = sc.spec
    sopts = sc.spectral
    if args.T_max is not None:
        sopts = replace(sopts, T_max=args.T_max)
    if args.modes is not None:
        sopts = replace(sopts, m=args.modes)
    sc.spectral = sopts
    t_grid = parse_t_grid(args.t_grid)
    if t_grid[0] < 1.0 - spec.eps_back:
        raise ParseError(f"--t-grid must start at t >= {1.0 - spec.eps_back:g} (backward extension limit)", "t-grid")
    prog.say("minimizing")
    from .minimize import minimize_action

    res = minimize_action(spec, opts)
    src = PathHessian(spec, res.phi_star)
    prog.say(f"eigenvalue profile on {t_grid.size} start times")
    prof = lambda_profile(spec, src, t_grid, sopts)
    prog.say("conjugate-time scan")
    conj = conjugate_scan(spec, src, sopts, t_lo=float(t_grid[0]))
    doc = {
        "command": "spectrum",
        "profile": {"t": prof.t, "eigenvalues": prof.eigenvalues, "monotonicity_violations": prof.violations},
        "conjugate": {"conjugate": conj.conjugate, "t_star": conj.t_star, "lambda1_at_1": conj.lambda1_at_1,
                      "kernel_dim": conj.kernel_dim, "message": conj.message},
    }
    header = ["t"] + [f"lambda{i + 1}" for i in range(prof.eigenvalues.shape[1])]
    rows = [[float(t), *map(float, row)] for t, row in zip(prof.t, prof.eigenvalues)]
    if args.out:
        save_result(Path(args.out) / "spectrum.json", doc, sc, {"lambda_profile.csv": (header, rows)})
    else:
        _emit(doc, None)
    return 0


# ---------------------------------------------------------------- verify

@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    note: str = ""


def _le(name, value, tol, note=""):
    value = float(value)
    return Check(name, value, tol, bool(np.isfinite(value) and value <= tol), note)


@dataclass(frozen=True)
class VerifyTolerances:
    tol_kkt: float = 1e-8
    tol_newton: float = 1e-8
    tol_action0: float = 1e-8
    tol_hj: float = TOL_HJ
    tol_fd: float = 1e-3
    tol_energy: float = 1e-6
    tol_oracle: float = 1e-4
    tol_fit: float = 0.05
    tol_orth: float = 1e-8


def verify_checks(sc: Scenario, opts: MinimizeOptions, tols: VerifyTolerances = VerifyTolerances(),
                  prog: _Progress | None = None) -> list:
    """Invariant suite for one scenario; every entry is a :class:`Check`."""
    prog = prog or _Progress(True)
    spec, ms = sc.spec, sc.spec.ms
    checks = []
    if spec.kind != HYPERBOLIC:
        prog.say("central configurations")
        for block in spec.partition.nontrivial():
            sub = ms.sub(block)
            b = spec.b[list(block)]
            beta = spec.betas[block]
            checks.append(_le(f"central configuration KKT residual {list(block)}", kkt_residual(sub, b), tols.tol_kkt))
            checks.append(_le(f"beta^3 - 9/2 U(b) {list(block)}", abs(beta ** 3 - 4.5 * u_value(sub, b)),
                              tols.tol_kkt))
        t = np.geomspace(1.0, opts.T0, 50)
        checks.append(_le("reference path Newton residual", np.max(reference_newton_residual(spec, t)),
                          tols.tol_newton))
        if np.allclose(spec.x0, spec.a + spec.c, rtol=0, atol=1e-14):
            from .action import action_eval
            from .mesh import PathField

            zero = PathField.zeros(opts.mesh(), ms)
            checks.append(_le("action of the zero field at x = r0(1)", abs(action_eval(spec, zero).value),
                              tols.tol_action0))

    prog.say("minimizer and trajectory")
    traj, res = solve_trajectory(spec, opts)
    checks.append(_le("minimizer gradient norm", res.grad_norm, opts.tol_grad))
    e_inf = asymptotic_energy(spec)
    e_err = float(np.max(np.abs(traj.energy_samples[1:-1] - e_inf)))
    checks.append(_le("energy deviation from |a|^2/2", e_err, tols.tol_energy))
    prog.say("shooting oracle")
    checks.append(_le("oracle deviation up to T/10", oracle_deviation(traj, t_max=traj.T / 10), tols.tol_oracle))
    if spec.kind == HYPERBOLIC:
        fit = hyperbolic_asymptotics(traj, spec)
        checks.append(_le("log-correction fit relative error", fit.rel_error, tols.tol_fit,
                          f"cosine with grad U(a) {fit.cosine:.6f}"))

    prog.say("value function")
    val = value_at(spec, opts, finite_horizon=False)
    checks.append(Check("unique minimizer (k = 1)", float(val.k), 1.0, val.k == 1 and val.status == "ok",
                        val.status))
    if val.grad_v is not None:
        checks.append(_le("Hamilton-Jacobi residual", abs(val.hj_residual), tols.tol_hj))
        prog.say("central differences of v")
        gc = grad_check(spec, opts=opts, base=val)
        checks.append(_le("grad v vs central differences", gc.max_rel_dev, tols.tol_fd))

    prog.say("spectral layer")
    try:
        sres = smallest_eigs(spec, PathHessian(spec, res.phi_star), 1.0, sc.spectral)
        checks.append(_le("eigenfield orthonormality residual", sres.orth_residual, tols.tol_orth))
        checks.append(_le("Rayleigh quotient residual", sres.rayleigh_residual, tols.tol_orth))
        checks.append(Check("lambda1 on [1, T_max] positive", sres.lambda1, 0.0, sres.lambda1 > 0.0))
    except RangeError as exc:
        checks.append(Check("spectral layer", float("nan"), 0.0, False, str(exc)))
    return checks


def _table(checks) -> str:
    w = max(len(c.name) for c in checks)
    lines = [f"{'check':<{w}}  {'value':>12}  {'tol':>9}  result"]
    for c in checks:
        flag = "PASS" if c.passed else "FAIL"
        note = f"  ({c.note})" if c.note else ""
        lines.append(f"{c.name:<{w}}  {c.value:>12.4e}  {c.tol:>9.1e}  {flag}{note}")
    n_ok = sum(c.passed for c in checks)
    lines.append(f"{n_ok}/{len(checks)} checks passed")
    return "\n".join(lines)


def cmd_verify(args, prog: _Progress) -> int:
    sc, opts = _load(args)
    tols = VerifyTolerances(**{k: getattr(args, k) for k in asdict(VerifyTolerances()) if getattr(args, k) is not None})
    checks = verify_checks(sc, opts, tols, prog)
    sys.stdout.write(_table(checks) + "\n")
    ok = all(c.passed for c in checks)
    if args.out:
        save_result(args.out, {"command": "verify", "passed": ok, "checks": [asdict(c) for c in checks],
                               "tolerances": asdict(tols)}, sc)
    return 0 if ok else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nbodyhj", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    c = sub.add_parser("central-config", help="minimal central configuration of each cluster")
    c.add_argument("--masses", type=float, nargs="+", required=True)
    c.add_argument("--dim", type=int, default=2)
    c.add_argument("--cluster", action="append", help="comma-separated body indices of one cluster (repeatable)")
    c.add_argument("--tol", type=float, default=CentralConfigOptions.tol, help="KKT tolerance")
    c.add_argument("--cc-restarts", type=int, default=CentralConfigOptions.restarts)
    c.add_argument("--out", default=None, help="write JSON here instead of stdout")
    _common(c)
    c.set_defaults(func=cmd_central_config)

    s = sub.add_parser("solve", help="minimize the action and export the trajectory")
    _scenario_arg(s)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--no-richardson", action="store_true", help="skip the bisected-mesh extrapolation")
    _solver_flags(s)
    _common(s)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("value", help="value function, gradient and HJ residual at the scenario point")
    _scenario_arg(v)
    v.add_argument("--out", default=None)
    v.add_argument("--r-min", type=float, default=1e-3, help="collision distance flagged as near-collision")
    v.add_argument("--with-lambda", action="store_true", help="also report lambda1 on [1, T_max]")
    v.add_argument("--no-finite-horizon", action="store_true", help="skip the plain finite-horizon value")
    _solver_flags(v)
    _common(v)
    v.set_defaults(func=cmd_value)

    g = sub.add_parser("scan", help="value function over a 2-D affine slice")
    _scenario_arg(g)
    g.add_argument("--slice", required=True, help="slice JSON file or name of a bundled slice")
    g.add_argument("--out", required=True, help="CSV output path")
    g.add_argument("--with-lambda", action="store_true")
    g.add_argument("--no-finite-horizon", action="store_true")
    _solver_flags(g)
    _common(g)
    g.set_defaults(func=cmd_scan)

    e = sub.add_parser("spectrum", help="lambda1 profile over start times and conjugate-time scan")
    _scenario_arg(e)
    e.add_argument("--t-grid", required=True, help="start:stop:count of interval start times")
    e.add_argument("--T-max", type=float, default=None, help="truncation horizon of the eigenproblem")
    e.add_argument("--modes", type=int, default=None, help="number of eigenpairs")
    e.add_argument("--out", default=None, help="output directory")
    _solver_flags(e)
    _common(e)
    e.set_defaults(func=cmd_spectrum)

    f = sub.add_parser("verify", help="run the invariant suite and print a pass/fail table")
    _scenario_arg(f)
    f.add_argument("--out", default=None, help="write the result JSON here")
    for k, val in asdict(VerifyTolerances()).items():
        f.add_argument("--" + k.replace("_", "-"), dest=k, type=float, default=None, help=f"default {val:g}")
    _solver_flags(f)
    _common(f)
    f.set_defaults(func=cmd_verify)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    prog = _Progress(args.quiet)
    try:
        return args.func(args, prog)
    except USAGE_ERRORS as exc:
        print(f"nbodyhj {args.command}: input error: {exc}", file=sys.stderr)
        return 2
    except NBodyHJError as exc:
        print(f"nbodyhj {args.command}: computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"nbodyhj {args.command}: I/O error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
