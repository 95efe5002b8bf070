"""Minimization of the discretized renormalized action.

All descent happens in element-velocity coordinates (see ``action``), where
the kinetic part is ``|y|^2/2``: L-BFGS with a strong-Wolfe line search gets
close, a truncated Newton-CG polish finishes. A step that lands on a
collision is treated as too long and shortened.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .action import ActionProblem
from .core import project_com
from .errors import CollisionError, CollisionTrappedError, IterationLimitError, OptimizationError
from .mesh import PathField, TimeMesh, d_norm
from .parallel import pmap
from .reference import ScenarioSpec

log = logging.getLogger(__name__)

LBFGS_MEMORY = 10
WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9
ACTION_TIE_TOL = 1e-6  # relative gap under which two minima count as equally low


@dataclass(frozen=True)
class MinimizeOptions:
    T0: float = 1.0e4
    per_doubling: int = 24
    K: int | None = None  # fixed element count on [1, T0]; overrides per_doubling
    restarts: int = 1
    seed: int = 0
    sigma: float = 0.05
    tol_grad: float = 1e-8
    tol_horizon: float = 1e-6
    max_doublings: int = 0
    max_iter: int = 2000
    newton_iter: int = 40
    threads: int | None = None
    closure: bool = True

    def mesh(self) -> TimeMesh:
        if self.K is not None:
            return TimeMesh.geometric(self.T0, self.K)
        return TimeMesh.octaves(self.T0, self.per_doubling)


@dataclass
class MinimizerCluster:
    """One basin found by the multi-start search."""

    action_value: float
    phi: PathField
    members: list
    initial_velocity: np.ndarray
    grad_norm: float


@dataclass
class MinimizeResult:
    phi_star: PathField
    action_value: float
    grad_norm: float
    iterations: int
    horizon_history: list = field(default_factory=list)
    distinct_minimizers: list = field(default_factory=list)
    distance_matrix: np.ndarray | None = None
    tail_bound: float = 0.0
    restart_values: list = field(default_factory=list)

    @property
    def k(self) -> int:
        """Number of clusters whose action ties with the lowest one."""
        return count_global(self.distinct_minimizers)


@dataclass
class _Local:
    y: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


# ---------------------------------------------------------------- line search

class _Objective:
    def __init__(self, pb: ActionProblem):
        self.pb = pb
        self.calls = 0

    def __call__(self, y):
        self.calls += 1
        try:
            return self.pb.value_grad_y(y)
        except CollisionError:
            return np.inf, None


def _cubic_min(a, fa, ga, b, fb, gb):
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return 0.5 * (a + b)
    d2 = np.sign(b - a) * np.sqrt(disc)
    x = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2)
    lo, hi = min(a, b), max(a, b)
    if not np.isfinite(x) or x <= lo + 0.1 * (hi - lo) or x >= hi - 0.1 * (hi - lo):
        return 0.5 * (a + b)
    return x


def strong_wolfe(obj, y, f0, g0, p, alpha0=1.0, max_eval=40):
    """Line search for the strong Wolfe conditions.

    Returns ``(alpha, f, g)`` or ``None``. An infinite value (collision) is
    handled as an overshoot, so the bracket shrinks towards the origin.
    """
    dg0 = float(g0 @ p)
    if dg0 >= 0:
        return None
    a_prev, f_prev, dg_prev = 0.0, f0, dg0
    alpha = alpha0
    for i in range(max_eval):
        f, g = obj(y + alpha * p)
        if not np.isfinite(f):
            return _zoom(obj, y, f0, dg0, p, a_prev, f_prev, dg_prev, alpha, np.inf, None, max_eval)
        dg = float(g @ p)
        if f > f0 + WOLFE_C1 * alpha * dg0 or (i > 0 and f >= f_prev):
            return _zoom(obj, y, f0, dg0, p, a_prev, f_prev, dg_prev, alpha, f, dg, max_eval)
        if abs(dg) <= -WOLFE_C2 * dg0:
            return alpha, f, g
        if dg >= 0:
            return _zoom(obj, y, f0, dg0, p, alpha, f, dg, a_prev, f_prev, dg_prev, max_eval)
        a_prev, f_prev, dg_prev = alpha, f, dg
        alpha *= 2.0
    return None


def _zoom(obj, y, f0, dg0, p, lo, flo, dglo, hi, fhi, dghi, max_eval):
    for _ in range(max_eval):
        if np.isfinite(fhi) and dghi is not None:
            alpha = _cubic_min(lo, flo, dglo, hi, fhi, dghi)
        else:
            alpha = lo + 0.25 * (hi - lo)
        if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
            break
        f, g = obj(y + alpha * p)
        if not np.isfinite(f):
            hi, fhi, dghi = alpha, np.inf, None
            continue
        dg = float(g @ p)
        if f > f0 + WOLFE_C1 * alpha * dg0 or f >= flo:
            hi, fhi, dghi = alpha, f, dg
            continue
        if abs(dg) <= -WOLFE_C2 * dg0:
            return alpha, f, g
        if dg * (hi - lo) >= 0:
            hi, fhi, dghi = lo, flo, dglo
        lo, flo, dglo = alpha, f, dg
    if lo > 0:
        f, g = obj(y + lo * p)
        if np.isfinite(f) and f < f0:
            return lo, f, g
    return None


# ---------------------------------------------------------------- local solvers

def lbfgs(pb: ActionProblem, y0, tol, max_iter, memory=LBFGS_MEMORY) -> _Local:
    obj = _Objective(pb)
    y = np.array(y0, dtype=float)
    f, g = obj(y)
    if not np.isfinite(f):
        raise CollisionTrappedError("initial field collides", {"stage": "lbfgs"})
    S, Yk = [], []
    it = 0
    failures = 0
    while it < max_iter:
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            break
        q = g.copy()
        coef = []
        for s, yk in zip(reversed(S), reversed(Yk)):
            rho = 1.0 / float(yk @ s)
            al = rho * float(s @ q)
            coef.append((rho, al))
            q -= al * yk
        if S:
            q *= float(S[-1] @ Yk[-1]) / float(Yk[-1] @ Yk[-1])
        for (s, yk), (rho, al) in zip(zip(S, Yk), reversed(coef)):
            q += (al - rho * float(yk @ q)) * s
        p = -q
        if float(p @ g) >= 0:
            p = -g
            S.clear()
            Yk.clear()
        res = strong_wolfe(obj, y, f, g, p)
        if res is None:
            failures += 1
            S.clear()
            Yk.clear()
            if failures > 3:
                break
            p = -g
            res = strong_wolfe(obj, y, f, g, p, alpha0=min(1.0, 1.0 / max(gn, 1e-300)))
            if res is None:
                break
        else:
            failures = 0
        alpha, fn, gnew = res
        s = alpha * p
        yk = gnew - g
        if float(s @ yk) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(yk)):
            S.append(s)
            Yk.append(yk)
            if len(S) > memory:
                S.pop(0)
                Yk.pop(0)
        y, f, g = y + s, fn, gnew
        it += 1
    return _Local(y, f, g, it)


def _cg(apply, b, tol, max_iter):
    """Truncated CG; stops on negative curvature, returning that direction as well."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    for _ in range(max_iter):
        Ap = apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            return (x if np.any(x) else b), p
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= tol:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, None


def newton_polish(pb: ActionProblem, loc: _Local, tol, max_iter) -> _Local:
    """Hessian-based polish; accepts a step when it lowers the gradient norm."""
    y, f, g = loc.y, loc.value, loc.grad
    it = loc.iterations
    gn = float(np.linalg.norm(g))
    for _ in range(max_iter):
        if gn <= tol:
            break
        Phi = pb.from_y(y)
        Gq = pb.gamma_q(Phi)
        step, neg = _cg(lambda v: pb.hess_apply_y(Phi, v, Gq), -g, 1e-3 * min(gn, 1.0) * gn, 4 * 200)
        if neg is not None:
            # not yet in a convex basin: let L-BFGS walk down the negative direction
            d = neg if float(neg @ g) < 0 else -neg
            res = strong_wolfe(_Objective(pb), y, f, g, d / max(np.linalg.norm(d), 1e-300))
            if res is None:
                break
            alpha, f, g = res
            y = y + alpha * d / max(np.linalg.norm(d), 1e-300)
            gn = float(np.linalg.norm(g))
            it += 1
            continue
        lam = 1.0
        accepted = False
        for _ in range(30):
            try:
                fn, gnew = pb.value_grad_y(y + lam * step)
            except CollisionError:
                lam *= 0.5
                continue
            gnn = float(np.linalg.norm(gnew))
            if gnn < gn or fn < f - 1e-4 * lam * abs(float(g @ step)):
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        y, f, g, gn = y + lam * step, fn, gnew, gnn
        it += 1
    return _Local(y, f, g, it)


def solve_local(pb: ActionProblem, y0, opts: MinimizeOptions) -> _Local:
    loc = lbfgs(pb, y0, tol=max(opts.tol_grad, 1e-6), max_iter=opts.max_iter)
    loc = newton_polish(pb, loc, opts.tol_grad, opts.newton_iter)
    if loc.grad_norm > opts.tol_grad:
        loc = lbfgs(pb, loc.y, tol=opts.tol_grad, max_iter=opts.max_iter)
        loc = newton_polish(pb, loc, opts.tol_grad, opts.newton_iter)
    return loc


# ---------------------------------------------------------------- initial fields

def initial_field(spec: ScenarioSpec, mesh: TimeMesh, sigma: float, seed: int, restart: int) -> np.ndarray:
    """Zero field plus Gaussian noise of scale ``sigma sqrt(t - 1)``.

    Restarts come in antithetic pairs ``+z, -z`` so that a mirror-symmetric
    problem is probed from both sides.
    """
    ms = spec.ms
    rng = np.random.default_rng([seed, restart // 2])
    z = rng.standard_normal((mesh.nodes.size, ms.n, ms.d))
    if restart % 2:
        z = -z
    scale = sigma * np.sqrt(mesh.nodes - mesh.t0)
    vals = z * scale[:, None, None]
    for k in range(vals.shape[0]):
        vals[k] = project_com(ms, vals[k])
    vals[0] = 0.0
    return vals


def _start(pb: ActionProblem, spec, mesh, opts, restart):
    sigma = opts.sigma
    for _ in range(20):
        Phi = initial_field(spec, mesh, sigma, opts.seed, restart)
        try:
            pb.value_grad(Phi)
            return pb.to_y(Phi)
        except CollisionError:
            sigma *= 0.5
    return pb.to_y(np.zeros(pb.shape))


# ---------------------------------------------------------------- clustering

def cluster_fields(ms, fields, values, delta_rel=1e-3):
    """Greedy clustering by D-distance, scanning in order of increasing action."""
    order = sorted(range(len(fields)), key=lambda i: (values[i], i))
    reps, members = [], []
    for i in order:
        for c, r in enumerate(reps):
            delta = delta_rel * max(1.0, d_norm(ms, fields[r]))
            if d_norm(ms, PathField(fields[i].mesh, fields[i].values - fields[r].values)) <= delta:
                members[c].append(i)
                break
        else:
            reps.append(i)
            members.append([i])
    return reps, members


def count_global(clusters, tol=ACTION_TIE_TOL) -> int:
    if not clusters:
        return 0
    vmin = min(c.action_value for c in clusters)
    return sum(1 for c in clusters if c.action_value - vmin <= tol * (1.0 + abs(vmin)))


def _distance_matrix(ms, phis):
    k = len(phis)
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = d_norm(ms, PathField(phis[i].mesh, phis[i].values - phis[j].values))
    return D


# ---------------------------------------------------------------- driver

def _continue(spec, loc: _Local, pb: ActionProblem, opts: MinimizeOptions):
    """Horizon doubling with extension by a constant; returns final state and history."""
    history = [(pb.mesh.T, loc.value)]
    gaps = []
    for _ in range(opts.max_doublings):
        Phi = pb.from_y(loc.y)
        mesh = pb.mesh.doubled()
        phi = PathField(pb.mesh, Phi).transfer(mesh)
        pb = ActionProblem(spec, mesh, opts.closure)
        loc = solve_local(pb, pb.to_y(phi.values), opts)
        history.append((mesh.T, loc.value))
        gap = abs(history[-1][1] - history[-2][1])
        gaps.append(gap)
        log.debug("T=%g value=%.15g gap=%.3g grad=%.3g", mesh.T, loc.value, gap, loc.grad_norm)
        if gap <= opts.tol_horizon * (1.0 + abs(loc.value)):
            break
    return loc, pb, history


def minimize_action(spec: ScenarioSpec, opts: MinimizeOptions | None = None) -> MinimizeResult:
    """Minimize the renormalized action from ``opts.restarts`` starts.

    Multi-start clustering is a heuristic detector of several minimizers:
    it can only report basins that some start happened to fall into.
    """
    opts = opts or MinimizeOptions()
    mesh = opts.mesh()
    pb0 = ActionProblem(spec, mesh, opts.closure)

    def run(r):
        try:
            return solve_local(pb0, _start(pb0, spec, mesh, opts, r), opts)
        except OptimizationError as exc:
            return exc

    locs = pmap(run, range(max(1, opts.restarts)), opts.threads)
    ok = [l for l in locs if isinstance(l, _Local)]
    if not ok:
        raise locs[0]
    ms = spec.ms
    fields = [PathField(mesh, pb0.from_y(l.y)) for l in ok]
    values = [l.value for l in ok]
    reps, members = cluster_fields(ms, fields, values)

    def follow(i):
        return _continue(spec, ok[i], pb0, opts)

    finals = pmap(follow, reps, opts.threads)
    clusters = []
    for (loc, pb, hist), mem in zip(finals, members):
        Phi = pb.from_y(loc.y)
        clusters.append(MinimizerCluster(loc.value, PathField(pb.mesh, Phi), mem,
                                         pb.initial_velocity(Phi), loc.grad_norm))
    best = min(range(len(clusters)), key=lambda c: (clusters[c].action_value, c))
    loc, pb, hist = finals[best]
    if loc.grad_norm > opts.tol_grad:
        raise IterationLimitError(
            f"gradient norm {loc.grad_norm:.3e} above tolerance {opts.tol_grad:.1e}",
            {"grad_norm": loc.grad_norm, "iterations": loc.iterations, "T": pb.mesh.T},
        )
    Phi = pb.from_y(loc.y)
    same_mesh = all(c.phi.mesh.nodes.size == clusters[best].phi.mesh.nodes.size for c in clusters)
    dist = _distance_matrix(ms, [c.phi for c in clusters]) if same_mesh else None
    return MinimizeResult(
        phi_star=PathField(pb.mesh, Phi),
        action_value=loc.value,
        grad_norm=loc.grad_norm,
        iterations=sum(l.iterations for l in ok),
        horizon_history=hist,
        distinct_minimizers=clusters,
        distance_matrix=dist,
        tail_bound=pb.tail_bound(Phi),
        restart_values=values,
    )


def refine_on_mesh(spec: ScenarioSpec, start: PathField, mesh: TimeMesh,
                   opts: MinimizeOptions | None = None) -> tuple[PathField, float, float]:
    """Re-solve on ``mesh`` warm-started from ``start``; returns ``(phi, value, grad_norm)``."""
    opts = opts or MinimizeOptions()
    pb = ActionProblem(spec, mesh, opts.closure)
    loc = solve_local(pb, pb.to_y(start.transfer(mesh).values), opts)
    if loc.grad_norm > opts.tol_grad:
        raise IterationLimitError(f"refinement stalled at gradient norm {loc.grad_norm:.3e}",
                                  {"grad_norm": loc.grad_norm, "T": mesh.T})
    return PathField(mesh, pb.from_y(loc.y)), loc.value, loc.grad_norm


@dataclass
class MultiplicityReport:
    k: int
    cluster_sizes: list
    action_values: list
    initial_velocities: list
    distance_matrix: np.ndarray | None
    heuristic: str = "multi-start clustering"


def multiplicity_of(res: MinimizeResult) -> MultiplicityReport:
    cl = res.distinct_minimizers
    return MultiplicityReport(
        k=res.k,
        cluster_sizes=[len(c.members) for c in cl],
        action_values=[c.action_value for c in cl],
        initial_velocities=[c.initial_velocity for c in cl],
        distance_matrix=res.distance_matrix,
    )


def detect_multiplicity(spec: ScenarioSpec, opts: MinimizeOptions | None = None) -> MultiplicityReport:
    opts = opts or MinimizeOptions()
    if opts.restarts < 2:
        opts = replace(opts, restarts=2)
    return multiplicity_of(minimize_action(spec, opts))
