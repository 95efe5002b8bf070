"""Value functions, Hamilton-Jacobi residuals and grid scans."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad

from . import _kernels
from .action import ActionProblem
from .core import collision_distance, mass_inner, project_com
from .errors import CollisionError, NBodyHJError
from .mesh import PathField, TimeMesh
from .minimize import MinimizeOptions, minimize_action, refine_on_mesh, solve_local
from .parallel import pmap
from .potential import u_value
from .reference import ScenarioSpec, asymptotic_energy, ref_arrays
from .trajectory import nodal_fluxes

R_MIN = 1e-3
TOL_HJ = 1e-3

OK = "ok"
SINGULAR = "singular"
NEAR_COLLISION = "near-collision"


@dataclass
class ValueResult:
    v: float
    v_T: float | None
    grad_v: np.ndarray | None
    hj_residual: float | None
    k: int
    lambda1: float | None = None
    T: float = 0.0
    tail_bound: float = 0.0
    colldist: float = 0.0
    status: str = OK
    cluster_actions: list = field(default_factory=list)
    initial_velocities: list = field(default_factory=list)
    horizon_history: list = field(default_factory=list)

    @property
    def gradnorm(self) -> float | None:
        return None if self.grad_v is None else float(np.linalg.norm(self.grad_v))


def hamiltonian_residual(spec: ScenarioSpec, grad_v) -> float:
    """``|p|^2_{M^-1}/2 - U(x) - |a|^2_M/2`` at the scenario's point."""
    ms = spec.ms
    p = np.asarray(grad_v, dtype=float).reshape(-1)
    return 0.5 * float(np.sum(p * p / ms.mvec)) - u_value(ms, spec.x0) - asymptotic_energy(spec)


def finite_horizon_value(spec: ScenarioSpec, phi: PathField, opts: MinimizeOptions | None = None) -> tuple[float, PathField]:
    """``v(T, x) = min A_[1,T] - <r0'(T), x>_M`` on ``phi.mesh``, warm-started from ``phi``."""
    opts = replace(opts or MinimizeOptions(), closure=False)
    psi, val, _ = refine_on_mesh(spec, phi, phi.mesh, opts)
    _, r0d, _ = ref_arrays(spec, [phi.mesh.T])
    return val - mass_inner(spec.ms, r0d[0], spec.x0), psi


@dataclass
class HorizonSequence:
    T: np.ndarray
    v: np.ndarray  # finite-horizon values v(T_k, x)

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(np.diff(self.v))

    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.gaps) < 0))


def horizon_sequence(spec: ScenarioSpec, opts: MinimizeOptions | None = None, n_doublings: int = 5,
                     start: PathField | None = None) -> HorizonSequence:
    """``v(2^k T0, x)`` for ``k = 0..n_doublings``, each solve warm-started from the previous one.

    The octave meshes nest, so consecutive values share the discretization
    of ``[1, 2^k T0]``.
    """
    opts = opts or MinimizeOptions()
    if start is None:
        start = minimize_action(spec, replace(opts, closure=True, max_doublings=0)).phi_star
    phi = start.transfer(opts.mesh()) if start.mesh.T != opts.T0 else start
    Ts, vs = [], []
    for k in range(n_doublings + 1):
        if k:
            phi = phi.transfer(phi.mesh.doubled())
        v, phi = finite_horizon_value(spec, phi, opts)
        Ts.append(phi.mesh.T)
        vs.append(v)
    return HorizonSequence(np.array(Ts), np.array(vs))


def value_at(spec: ScenarioSpec, opts: MinimizeOptions | None = None, finite_horizon: bool = True,
             r_min: float = R_MIN, with_lambda: bool = False, spectral_opts=None) -> ValueResult:
    """Renormalized value ``v(x)``, its gradient and the HJ residual at ``spec.x0``.

    ``v`` comes from the closed (infinite-horizon) problem; ``v_T`` is the
    plain finite-horizon value at the final working horizon.
    """
    opts = opts or MinimizeOptions()
    ms = spec.ms
    cd = collision_distance(ms, spec.x0)
    res = minimize_action(spec, replace(opts, closure=True))
    v = res.action_value - mass_inner(ms, spec.a, spec.x0)
    v_T = None
    if finite_horizon:
        v_T, _ = finite_horizon_value(spec, res.phi_star, opts)
    k = res.k
    grad = hj = None
    status = OK
    if cd < r_min:
        status = NEAR_COLLISION
    elif k > 1:
        status = SINGULAR
    else:
        pb = ActionProblem(spec, res.phi_star.mesh, True)
        vel = pb.initial_velocity(res.phi_star.values)
        grad = -(ms.masses[:, None] * vel).reshape(-1)
        hj = hamiltonian_residual(spec, grad)
    lam = None
    if with_lambda and status == OK:
        from .spectral import lambda_at_start

        lam = lambda_at_start(spec, res.phi_star, spectral_opts)
    return ValueResult(
        v=v, v_T=v_T, grad_v=grad, hj_residual=hj, k=k, lambda1=lam, T=res.phi_star.mesh.T,
        tail_bound=res.tail_bound, colldist=cd, status=status,
        cluster_actions=[c.action_value for c in res.distinct_minimizers],
        initial_velocities=[c.initial_velocity for c in res.distinct_minimizers],
        horizon_history=res.horizon_history,
    )


def _v_only(spec, opts, restarts=1):
    res = minimize_action(spec, replace(opts, closure=True, restarts=restarts))
    return res.action_value - mass_inner(spec.ms, spec.a, spec.x0)


@dataclass
class GradCheck:
    max_rel_dev: float
    fd: np.ndarray
    analytic: np.ndarray
    differentiable: bool


def grad_check(spec: ScenarioSpec, h_fd: float = 1e-4, opts: MinimizeOptions | None = None,
               n_dirs: int | None = None, seed: int = 0, base: ValueResult | None = None) -> GradCheck:
    """Central differences of ``v`` along random zero-barycenter directions vs ``grad_v``.

    The deviation is normalized by ``|grad_v|``.
    """
    opts = opts or MinimizeOptions()
    ms = spec.ms
    base = base or value_at(spec, opts, finite_horizon=False)
    if base.grad_v is None:
        return GradCheck(np.inf, np.array([]), np.array([]), False)
    n_dirs = n_dirs or 2 * ms.dim
    rng = np.random.default_rng(seed)
    fd, an = [], []
    for _ in range(n_dirs):
        e = project_com(ms, rng.standard_normal((ms.n, ms.d)))
        e /= np.linalg.norm(e)
        vp = _v_only(spec.with_x(spec.x0 + h_fd * e), opts)
        vm = _v_only(spec.with_x(spec.x0 - h_fd * e), opts)
        fd.append((vp - vm) / (2 * h_fd))
        an.append(float(base.grad_v @ e.reshape(-1)))
    fd, an = np.array(fd), np.array(an)
    dev = float(np.max(np.abs(fd - an)) / max(np.linalg.norm(base.grad_v), 1e-300))
    return GradCheck(dev, fd, an, True)


# ---------------------------------------------------------------- Bolza value

class BolzaProblem(ActionProblem):
    """``int_1^T L(eta, eta') dt - <r0'(T), eta(T)>_M`` over ``eta = x + psi``, ``psi(1) = 0``.

    Same elements and quadrature as the renormalized problem, but written in
    the full trajectory and without any reference path.
    """

    def __init__(self, spec: ScenarioSpec, mesh: TimeMesh):
        super().__init__(spec, mesh, closure=False)
        _, r0d, _ = ref_arrays(spec, [mesh.T])
        self.p_end = spec.ms.masses[:, None] * r0d[0]

    def gamma_q(self, Phi):
        return self.interp(Phi) + self.spec.x0

    def potential_terms(self, Phi):
        X = np.ascontiguousarray(self.gamma_q(Phi))
        U, G, dmin = _kernels.impl.pot_grad(X, self.m)
        if not (np.all(dmin > 0) and np.all(np.isfinite(U))):
            raise self._collision(np.zeros_like(X), X, dmin, self.s)
        return U, G * self.w[:, None, None]

    def closure_terms(self, phiT):
        return -float(np.sum(self.p_end * (phiT + self.spec.x0))), -self.p_end


def bolza_solution(spec: ScenarioSpec, mesh: TimeMesh, opts: MinimizeOptions | None = None,
                   start: np.ndarray | None = None) -> tuple[float, np.ndarray, BolzaProblem]:
    opts = opts or MinimizeOptions()
    pb = BolzaProblem(spec, mesh)
    if start is None:
        t = mesh.nodes
        r0, _, _ = ref_arrays(spec, t)
        start = r0 - r0[0]
    loc = solve_local(pb, pb.to_y(start), opts)
    return loc.value, pb.from_y(loc.y), pb


def _richardson(f, mesh, *args):
    coarse = f(mesh, *args)
    fine = f(mesh.bisected(), *args)
    return (4.0 * fine - coarse) / 3.0


def bolza_u(spec: ScenarioSpec, T: float, K: int = 1024, opts: MinimizeOptions | None = None,
            extrapolate: bool = True) -> float:
    """``u(T, x)`` by direct minimization over whole trajectories."""
    opts = opts or MinimizeOptions()

    def solve(mesh):
        return bolza_solution(spec, mesh, opts)[0]

    mesh = TimeMesh.geometric(T, K)
    return _richardson(solve, mesh) if extrapolate else solve(mesh)


def terminal_velocity_defect(spec: ScenarioSpec, T: float, K: int = 1024, opts=None) -> float:
    """``|eta'(T) - r0'(T)|`` read off the Bolza minimizer (natural end condition)."""
    _, Psi, pb = bolza_solution(spec, TimeMesh.geometric(T, K), opts)
    fl = nodal_fluxes(pb, Psi)[-1] / spec.ms.masses[:, None]
    return float(np.linalg.norm(fl - pb.p_end / spec.ms.masses[:, None]))


def finite_v(spec: ScenarioSpec, T: float, K: int = 1024, opts: MinimizeOptions | None = None,
             extrapolate: bool = True) -> float:
    """``v(T, x)`` from the renormalized problem on ``[1, T]`` (no closure)."""
    opts = replace(opts or MinimizeOptions(), closure=False)
    _, r0d, _ = ref_arrays(spec, [T])
    shift = mass_inner(spec.ms, r0d[0], spec.x0)

    def solve(mesh):
        pb = ActionProblem(spec, mesh, False)
        return solve_local(pb, np.zeros(pb.n_y), opts).value - shift

    mesh = TimeMesh.geometric(T, K)
    return _richardson(solve, mesh) if extrapolate else solve(mesh)


def reference_lagrangian_integral(spec: ScenarioSpec, T: float) -> float:
    """``int_1^T |r0'|^2_M/2 + U(r0) dt`` by adaptive quadrature."""
    ms = spec.ms

    def f(t):
        r0, r0d, _ = ref_arrays(spec, [t])
        return 0.5 * mass_inner(ms, r0d[0], r0d[0]) + u_value(ms, r0[0])

    edges = np.geomspace(1.0, T, max(2, int(np.log2(T)) + 2))
    return float(sum(quad(f, a, b, epsabs=0, epsrel=1e-13, limit=200)[0] for a, b in zip(edges[:-1], edges[1:])))


@dataclass
class IdentityCheck:
    u: float
    v: float
    integral: float
    boundary: float
    residual: float  # relative


def uv_identity(spec: ScenarioSpec, T: float, K: int = 1024, opts=None) -> IdentityCheck:
    """Check ``v(T,x) = u(T,x) - int (|r0'|^2/2 + U(r0)) + <r0'(T), r0(T) - r0(1)>_M``."""
    u = bolza_u(spec, T, K, opts)
    v = finite_v(spec, T, K, opts)
    integral = reference_lagrangian_integral(spec, T)
    r0, r0d, _ = ref_arrays(spec, [1.0, T])
    boundary = mass_inner(spec.ms, r0d[1], r0[1] - r0[0])
    res = abs(v - (u - integral + boundary)) / max(1.0, abs(u), abs(v))
    return IdentityCheck(u, v, integral, boundary, res)


# ---------------------------------------------------------------- semiconcavity

def second_difference_quotients(vfun, x, directions, ms) -> np.ndarray:
    """``(v(x+z) + v(x-z) - 2 v(x)) / |z|_M^2`` for every ``z`` in ``directions``."""
    v0 = vfun(x)
    out = []
    for z in directions:
        z = np.asarray(z, dtype=float).reshape(x.shape)
        out.append((vfun(x + z) + vfun(x - z) - 2.0 * v0) / mass_inner(ms, z, z))
    return np.array(out)


def semiconcavity_probe(spec: ScenarioSpec, z_set, opts: MinimizeOptions | None = None) -> float:
    """Max second-difference quotient of ``v`` over ``z_set``; probes reaching near ``Delta`` are skipped."""
    opts = opts or MinimizeOptions()
    ms = spec.ms
    ok = []
    for z in z_set:
        z = project_com(ms, z)
        if min(collision_distance(ms, spec.x0 + z), collision_distance(ms, spec.x0 - z)) < R_MIN:
            continue
        ok.append(z)
    if not ok:
        return float("nan")

    # all restarts: at a kink one start alone can miss the lower branch
    def vfun(x):
        return _v_only(spec.with_x(x), opts, opts.restarts)

    return float(np.max(second_difference_quotients(vfun, spec.x0, ok, ms)))


# ---------------------------------------------------------------- scans

@dataclass(frozen=True)
class SliceGrid:
    """Affine 2-D slice ``x(s1, s2) = center + s1 e1 + s2 e2``."""

    center: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def points(self, ms):
        for i, a in enumerate(self.s1):
            for j, b in enumerate(self.s2):
                yield i, j, project_com(ms, self.center + a * self.e1 + b * self.e2)


@dataclass
class ScanRecord:
    i: int
    j: int
    x: np.ndarray
    result: ValueResult | None
    status: str
    wall_time: float


def _scan_one(spec, item, opts, with_lambda, finite_horizon):
    i, j, x = item
    t0 = time.perf_counter()
    try:
        res = value_at(spec.with_x(x), opts, finite_horizon=finite_horizon, with_lambda=with_lambda)
        status = res.status
    except (NBodyHJError, CollisionError) as exc:
        res, status = None, f"error:{type(exc).__name__}"
    return ScanRecord(i, j, x.reshape(-1), res, status, time.perf_counter() - t0)


def scan_grid(spec: ScenarioSpec, grid: SliceGrid, opts: MinimizeOptions | None = None,
              threads: int | None = None, with_lambda: bool = False, finite_horizon: bool = True,
              progress=None) -> list:
    """Evaluate ``value_at`` on every grid point; records come back in grid order.

    ``progress(record)`` is called from the worker after each point.
    """
    opts = opts or MinimizeOptions()
    items = list(grid.points(spec.ms))
    # the per-point solves already use the pool for restarts; keep them serial inside
    inner = replace(opts, threads=1)

    def one(it):
        rec = _scan_one(spec, it, inner, with_lambda, finite_horizon)
        if progress is not None:
            progress(rec)
        return rec

    return pmap(one, items, threads)


def _fmt(v) -> str:
    if v is None:
        return "nan"
    return f"{float(v):.17g}"


def scan_header(ms) -> list:
    return ["i", "j"] + [f"x{k}" for k in range(ms.dim)] + [
        "v", "vT", "k", "lambda1", "hjres", "gradnorm", "colldist", "status"]


def scan_rows(records) -> list:
    rows = []
    for r in records:
        res = r.result
        row = [str(r.i), str(r.j)] + [_fmt(c) for c in r.x]
        if res is None:
            row += ["nan"] * 3 + ["nan"] * 4
        else:
            row += [_fmt(res.v), _fmt(res.v_T), str(res.k), _fmt(res.lambda1), _fmt(res.hj_residual),
                    _fmt(res.gradnorm), _fmt(res.colldist)]
        row.append(r.status)
        rows.append(row)
    return rows


def write_scan_csv(records, ms, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(scan_header(ms))
        w.writerows(scan_rows(records))
