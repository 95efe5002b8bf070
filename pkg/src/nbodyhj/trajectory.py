"""Trajectories: reconstruction from a perturbation field, checks, ODE oracle."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .action import ActionProblem
from .core import MassSystem, as_config, min_separation, pairs
from .errors import NearCollisionError, RangeError, ValidationError
from .mesh import GAUSS2_XI, PathField
from .potential import u_gradient
from .reference import HYPERBOLIC, ScenarioSpec, ref_arrays

GUARD_FACTOR = 1e-6
MAX_STEPS = 5_000_000
GROWTH_BIN_TOL = 0.05


@dataclass
class Trajectory:
    ms: MassSystem
    times: np.ndarray
    positions: np.ndarray  # (n_t, N, d)
    velocities: np.ndarray  # (n_t, N, d)
    energy_samples: np.ndarray

    @property
    def initial_velocity(self) -> np.ndarray:
        return self.velocities[0].reshape(-1)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def energy_spread(self) -> float:
        """Standard deviation of the energy over interior samples."""
        return float(np.std(self.energy_samples[1:-1]))

    def header(self) -> list:
        n, d = self.ms.n, self.ms.d
        cols = ["t"]
        cols += [f"r{i}_{k}" for i in range(n) for k in range(d)]
        cols += [f"v{i}_{k}" for i in range(n) for k in range(d)]
        return cols + ["energy"]

    def to_csv(self, path) -> None:
        n_t = self.times.size
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            pos = self.positions.reshape(n_t, -1)
            vel = self.velocities.reshape(n_t, -1)
            for k in range(n_t):
                row = [self.times[k], *pos[k], *vel[k], self.energy_samples[k]]
                w.writerow([f"{v:.17g}" for v in row])


def energy(ms: MassSystem, x, v) -> float:
    """``|v|_M^2 / 2 - U(x)`` for one state."""
    x = as_config(ms, x)
    v = as_config(ms, v)
    U, _, _ = _kernels.impl.pot_grad(x[None], np.ascontiguousarray(ms.masses))
    return 0.5 * float(np.sum(ms.masses[:, None] * v * v)) - float(U[0])


def _energies(ms, X, V):
    U, _, _ = _kernels.impl.pot_grad(np.ascontiguousarray(X), np.ascontiguousarray(ms.masses))
    return 0.5 * np.einsum("i,kij->k", ms.masses, V * V) - U


def nodal_fluxes(pb: ActionProblem, Phi: np.ndarray) -> np.ndarray:
    """``M phi'`` at every node from the local equilibrium of each element.

    On ``[t_e, t_e+1]`` the motion satisfies ``M phi'' = f``, so
    ``M phi'(t_e+1) = M slope_e + int xi f`` and
    ``M phi'(t_e) = M slope_e - int (1 - xi) f`` with the same Gauss rule
    as the action. Interior nodes average the two one-sided values (they
    agree at a discrete critical point).
    """
    _, gq = pb.potential_terms(Phi)
    g = gq.reshape((-1, 2) + gq.shape[1:])
    x0, x1 = GAUSS2_XI
    MD = pb.m[None, :, None] * np.diff(Phi, axis=0) / pb.h[:, None, None]
    right = MD + x0 * g[:, 0] + x1 * g[:, 1]
    left = MD - (1 - x0) * g[:, 0] - (1 - x1) * g[:, 1]
    out = np.empty_like(Phi)
    out[0] = left[0]
    out[-1] = right[-1]
    out[1:-1] = 0.5 * (right[:-1] + left[1:])
    return out


def _raw(spec: ScenarioSpec, phi: PathField, closure: bool):
    pb = ActionProblem(spec, phi.mesh, closure)
    t = phi.mesh.nodes
    r0, r0d, _ = ref_arrays(spec, t)
    X = r0 + phi.values + spec.x_tilde
    X[0] = spec.x0
    V = r0d + nodal_fluxes(pb, phi.values) / spec.ms.masses[None, :, None]
    return X, V


def reconstruct(spec: ScenarioSpec, phi: PathField, fine: PathField | None = None,
                closure: bool = True) -> Trajectory:
    """Assemble ``gamma = r0 + phi + x - r0(1)`` and its velocity at the nodes.

    ``fine`` is an optional solution on ``phi.mesh.bisected()``; when given,
    positions and velocities are Richardson-extrapolated (the nodal error of
    the linear elements is quadratic in the element size).
    """
    X, V = _raw(spec, phi, closure)
    if fine is not None:
        if fine.mesh.nodes.size != 2 * phi.mesh.nodes.size - 1 or np.any(fine.mesh.nodes[::2] != phi.mesh.nodes):
            raise ValidationError("fine solution must live on the bisected mesh")
        Xf, Vf = _raw(spec, fine, closure)
        X = (4.0 * Xf[::2] - X) / 3.0
        V = (4.0 * Vf[::2] - V) / 3.0
        X[0] = spec.x0
    return Trajectory(spec.ms, phi.mesh.nodes.copy(), X, V, _energies(spec.ms, X, V))


def solve_trajectory(spec: ScenarioSpec, opts=None, richardson: bool = True):
    """Minimize, optionally re-solve on the bisected mesh, and reconstruct.

    Returns ``(trajectory, minimize_result)``.
    """
    from .minimize import MinimizeOptions, minimize_action, refine_on_mesh

    opts = opts or MinimizeOptions()
    res = minimize_action(spec, opts)
    fine = None
    if richardson:
        fine, _, _ = refine_on_mesh(spec, res.phi_star, res.phi_star.mesh.bisected(), opts)
    return reconstruct(spec, res.phi_star, fine, opts.closure), res


def newton_residual(traj: Trajectory) -> np.ndarray:
    """``|M x'' - grad U(x)|`` at interior nodes, with a three-point second difference."""
    t, X = traj.times, traj.positions
    h = np.diff(t)[:, None, None]
    D = np.diff(X, axis=0) / h
    acc = 2.0 * (D[1:] - D[:-1]) / (h[1:] + h[:-1])
    m = np.ascontiguousarray(traj.ms.masses)
    _, G, _ = _kernels.impl.pot_grad(np.ascontiguousarray(X[1:-1]), m)
    res = m[None, :, None] * acc - G
    return np.sqrt(np.sum(res * res, axis=(1, 2)))


def reference_newton_residual(spec: ScenarioSpec, t) -> np.ndarray:
    """``|M r0'' - grad U_K(r0)|`` with the analytic second derivative, cluster by cluster.

    Only meaningful for the parabolic reference (a homothetic solution) and
    for the parabolic clusters of a hyperbolic-parabolic one.
    """
    r0, _, r0dd = ref_arrays(spec, t)
    ms = spec.ms
    out = np.zeros(r0.shape[0])
    for block in spec.partition.nontrivial():
        idx = list(block)
        sub = ms.sub(block)
        sm = np.ascontiguousarray(sub.masses)
        R = np.ascontiguousarray(r0[:, idx, :] - spec.a[None, idx, :] * np.asarray(t, float).reshape(-1, 1, 1))
        _, G, _ = _kernels.impl.pot_grad(R, sm)
        res = sm[None, :, None] * r0dd[:, idx, :] - G
        out = np.maximum(out, np.sqrt(np.sum(res * res, axis=(1, 2))))
    return out


# ---------------------------------------------------------------- ODE oracle

def shoot_newton(ms: MassSystem, x_init, v_init, t_span, rtol: float = 1e-10, atol: float | None = None,
                 t_eval=None) -> Trajectory:
    """Integrate ``M x'' = grad U(x)`` with an embedded 5(4) Runge-Kutta pair.

    ``t_span = (t0, t1)``; backward integration (``t1 < t0``) is allowed.
    Output is at ``t_eval`` (default: both ends).
    """
    x = as_config(ms, x_init)
    v = as_config(ms, v_init)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t_eval is None:
        t_eval = np.array([t0, t1])
    t_eval = np.asarray(t_eval, dtype=float)
    sep0 = min_separation(x)
    if sep0 <= 0:
        raise NearCollisionError(_closest(x), t0, "initial configuration is a collision")
    guard = GUARD_FACTOR * sep0
    atol = rtol if atol is None else atol
    y0 = np.concatenate([x.reshape(-1), v.reshape(-1)])
    m = np.ascontiguousarray(ms.masses)
    status, Y, steps, t_reached = _kernels.impl.dopri(
        y0, t0, t_eval, m, ms.n, ms.d, rtol, atol, guard, MAX_STEPS
    )
    if status != 0:
        half = y0.size // 2
        filled = np.count_nonzero(np.any(Y != 0, axis=1))
        last = Y[filled - 1][:half].reshape(ms.n, ms.d) if filled else x
        why = {1: "near collision", 2: "step size underflow", 3: "step limit reached"}[int(status)]
        raise NearCollisionError(_closest(last), float(t_reached), f"{why} at t={t_reached:.6g}")
    n_t = t_eval.size
    half = y0.size // 2
    X = Y[:, :half].reshape(n_t, ms.n, ms.d)
    V = Y[:, half:].reshape(n_t, ms.n, ms.d)
    return Trajectory(ms, t_eval.copy(), X, V, _energies(ms, X, V))


def _closest(x):
    best, pair = np.inf, (0, 1)
    for i, j in pairs(x.shape[0]):
        dist = np.linalg.norm(x[i] - x[j])
        if dist < best:
            best, pair = dist, (i, j)
    return pair


def oracle_deviation(traj: Trajectory, rtol: float = 1e-12, t_max: float | None = None) -> float:
    """Max relative distance between ``traj`` and the ODE solution from its initial state."""
    t_max = traj.T / 10.0 if t_max is None else t_max
    sel = traj.times <= t_max * (1 + 1e-12)
    times = traj.times[sel]
    shot = shoot_newton(traj.ms, traj.positions[0], traj.velocities[0], (times[0], times[-1]), rtol=rtol,
                        t_eval=times)
    diff = np.linalg.norm((traj.positions[sel] - shot.positions).reshape(times.size, -1), axis=1)
    scale = np.linalg.norm(shot.positions.reshape(times.size, -1), axis=1)
    return float(np.max(diff / scale))


# ---------------------------------------------------------------- asymptotics

@dataclass
class AsymptoticFit:
    w_hat: np.ndarray  # (N, d) fitted coefficient of log t
    offset: np.ndarray
    target: np.ndarray  # -M^{-1} grad U(a)
    rel_error: float
    cosine: float  # cosine between w_hat and grad U(a); -1 means anti-parallel
    residual: float


def hyperbolic_asymptotics(traj: Trajectory, spec: ScenarioSpec, min_horizon: float = 1e3) -> AsymptoticFit:
    """Least-squares fit of ``gamma(t) - a t = w log t + c`` over the last decade."""
    if spec.kind != HYPERBOLIC:
        raise ValidationError("the logarithmic fit applies to hyperbolic motions")
    if traj.T < min_horizon:
        raise RangeError(f"horizon {traj.T:g} too short for the asymptotic fit (need {min_horizon:g})")
    sel = traj.times >= traj.T / 10.0
    t = traj.times[sel]
    Y = (traj.positions[sel] - spec.a[None] * t[:, None, None]).reshape(t.size, -1)
    A = np.column_stack([np.log(t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = float(np.max(np.abs(A @ coef - Y)))
    ms = spec.ms
    gU = u_gradient(ms, spec.a)
    target = -(gU / ms.mvec).reshape(ms.n, ms.d)
    w = coef[0].reshape(ms.n, ms.d)
    rel = float(np.linalg.norm(w - target) / np.linalg.norm(target))
    cos = float(np.dot(w.reshape(-1), gU) / (np.linalg.norm(w) * np.linalg.norm(gU)))
    return AsymptoticFit(w, coef[1].reshape(ms.n, ms.d), target, rel, cos, resid)


@dataclass
class GrowthReport:
    exponents: dict  # (i, j) -> fitted log-log slope
    bins: dict  # (i, j) -> "1", "2/3" or "other"


def _bin(e, tol=GROWTH_BIN_TOL):
    if abs(e - 1.0) <= tol:
        return "1"
    if abs(e - 2.0 / 3.0) <= tol:
        return "2/3"
    return "other"


def growth_diagnostics(traj: Trajectory) -> GrowthReport:
    sel = traj.times >= traj.T / 10.0
    lt = np.log(traj.times[sel])
    exps, bins = {}, {}
    for i, j in pairs(traj.ms.n):
        r = np.linalg.norm(traj.positions[sel, i] - traj.positions[sel, j], axis=1)
        slope = float(np.polyfit(lt, np.log(r), 1)[0])
        exps[(i, j)] = slope
        bins[(i, j)] = _bin(slope)
    return GrowthReport(exps, bins)


def parabolic_remainder_exponent(traj: Trajectory, spec: ScenarioSpec) -> float:
    """Fitted growth exponent of ``|gamma(t) - r0(t)|`` over the last decade (reported, not asserted)."""
    sel = traj.times >= traj.T / 10.0
    r0, _, _ = ref_arrays(spec, traj.times[sel])
    dev = np.linalg.norm((traj.positions[sel] - r0).reshape(int(sel.sum()), -1), axis=1)
    return float(np.polyfit(np.log(traj.times[sel]), np.log(np.maximum(dev, 1e-300)), 1)[0])
