"""Discretized renormalized action on a graded mesh.

The perturbation ``phi`` is piecewise linear with ``phi(1) = 0`` and a free
right end. The kinetic term is integrated exactly, the potential terms with
two Gauss points per element. The reconstructed motion is
``gamma = r0 + phi + x - r0(1)``.

The optimizer works in *element velocity* coordinates
``y_e = sqrt(m) (phi_{e+1} - phi_e) / sqrt(h_e)``, in which the kinetic
energy is ``|y|^2 / 2`` and the D-norm is the Euclidean norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import MassSystem, pairs
from .errors import CollisionError
from .mesh import GAUSS2_XI, PathField, TimeMesh, d_norm_sq
from .reference import HYPERBOLIC, ScenarioSpec, ref_arrays

TAIL_EXPONENT = {HYPERBOLIC: 1.5}
TAIL_EXPONENT_DEFAULT = 7.0 / 6.0

# closure quadrature: s = T exp(kappa sigma), Gauss-Laguerre in sigma
CLOSURE_NODES = 20
CLOSURE_KAPPA = {HYPERBOLIC: 1.0}
CLOSURE_KAPPA_DEFAULT = 3.0


@dataclass(frozen=True)
class ActionEval:
    value: float
    gradient: np.ndarray  # (nodes, N, d); zero at node 0
    tail_bound: float


class ActionProblem:
    """Precomputed quadrature data for one scenario on one mesh.

    With ``closure=True`` the field is continued by its final value up to
    infinite time and the exact action of that continuation is added, which
    replaces the free end condition ``phi'(T) = 0`` by the flux the
    remaining half-line would impose. ``closure=False`` is the plain
    finite-horizon problem on ``[t0, T]``.
    """

    def __init__(self, spec: ScenarioSpec, mesh: TimeMesh, closure: bool = True):
        self.spec = spec
        self.mesh = mesh
        self.ms: MassSystem = spec.ms
        ms = self.ms
        self.m = np.ascontiguousarray(ms.masses)
        s, w = mesh.gauss()
        self.s = s.reshape(-1)
        self.w = w.reshape(-1)
        r0, _, r0dd = ref_arrays(spec, self.s)
        self.r0q = np.ascontiguousarray(r0)
        self.fq = ms.masses[None, :, None] * r0dd  # M r0''
        self.xt = np.array(spec.x_tilde)
        self.h = mesh.h
        self.sqh = np.sqrt(self.h)[:, None, None]
        self.sqm = np.sqrt(ms.masses)[None, :, None]
        self.shape = (mesh.nodes.size, ms.n, ms.d)
        self.closure = closure
        if closure:
            kappa = CLOSURE_KAPPA.get(spec.kind, CLOSURE_KAPPA_DEFAULT)
            sig, wsig = np.polynomial.laguerre.laggauss(CLOSURE_NODES)
            st = mesh.T * np.exp(kappa * sig)
            self.st = st
            self.wt = wsig * np.exp(sig) * kappa * st
            r0t, _, r0ddt = ref_arrays(spec, st)
            self.r0t = np.ascontiguousarray(r0t)
            self.ft = ms.masses[None, :, None] * r0ddt

    # ------------------------------------------------------------ plumbing

    @property
    def n_y(self) -> int:
        return self.mesh.K * self.ms.n * self.ms.d

    def interp(self, Phi: np.ndarray) -> np.ndarray:
        x0, x1 = GAUSS2_XI
        a, b = Phi[:-1], Phi[1:]
        out = np.empty((Phi.shape[0] - 1, 2) + Phi.shape[1:])
        out[:, 0] = (1 - x0) * a + x0 * b
        out[:, 1] = (1 - x1) * a + x1 * b
        return out.reshape((-1,) + Phi.shape[1:])

    def scatter(self, F: np.ndarray) -> np.ndarray:
        x0, x1 = GAUSS2_XI
        F = F.reshape((-1, 2) + F.shape[1:])
        out = np.zeros((F.shape[0] + 1,) + F.shape[2:])
        out[:-1] += (1 - x0) * F[:, 0] + (1 - x1) * F[:, 1]
        out[1:] += x0 * F[:, 0] + x1 * F[:, 1]
        return out

    def from_y(self, Y: np.ndarray) -> np.ndarray:
        Y = Y.reshape((self.mesh.K,) + self.shape[1:])
        Phi = np.zeros(self.shape)
        np.cumsum(Y * self.sqh / self.sqm, axis=0, out=Phi[1:])
        return Phi

    def to_y(self, Phi: np.ndarray) -> np.ndarray:
        return (np.diff(Phi, axis=0) * self.sqm / self.sqh).reshape(-1)

    def pullback(self, G: np.ndarray) -> np.ndarray:
        """Transpose of ``from_y`` applied to a nodal covector."""
        tail = np.cumsum(G[:0:-1], axis=0)[::-1]
        return (tail * self.sqh / self.sqm).reshape(-1)

    def gamma_q(self, Phi: np.ndarray) -> np.ndarray:
        return self.r0q + self.interp(Phi) + self.xt

    def _collision(self, R, W, dmin, times):
        k = int(np.argmin(np.where(np.isfinite(dmin), dmin, -1.0)))
        P = R[k] + W[k]
        best, pair = np.inf, (0, 1)
        for i, j in pairs(self.ms.n):
            dist = np.linalg.norm(P[i] - P[j])
            if dist < best:
                best, pair = dist, (i, j)
        return CollisionError(pair, float(times[k]))

    # ------------------------------------------------------------ evaluation

    def closure_terms(self, phiT: np.ndarray) -> tuple[float, np.ndarray]:
        """Action of the constant continuation past ``T`` and its gradient in ``phi(T)``."""
        if not self.closure:
            return 0.0, np.zeros_like(phiT)
        nt = self.st.size
        W = np.broadcast_to(phiT + self.xt, (nt,) + phiT.shape).copy()
        dU, G, dmin = _kernels.impl.pot_diff_grad(self.r0t, W, self.m)
        if not (np.all(dmin > 0) and np.all(np.isfinite(dU))):
            raise self._collision(self.r0t, W, dmin, self.st)
        lin = np.einsum("kij,ij->k", self.ft, phiT)
        value = float(np.sum(self.wt * (dU - lin)))
        grad = np.einsum("k,kij->ij", self.wt, G - self.ft)
        return value, grad

    def closure_hess(self, phiT: np.ndarray, psiT: np.ndarray) -> np.ndarray:
        if not self.closure:
            return np.zeros_like(psiT)
        nt = self.st.size
        P = self.r0t + phiT + self.xt
        V = np.broadcast_to(psiT, (nt,) + psiT.shape).copy()
        return np.einsum("k,kij->ij", self.wt, _kernels.impl.hess_apply(P, self.m, V))

    def potential_terms(self, Phi: np.ndarray):
        """Per-quadrature-point integrand (without kinetic part) and its nodal gradient."""
        Pq = self.interp(Phi)
        Wq = Pq + self.xt
        dU, G, dmin = _kernels.impl.pot_diff_grad(self.r0q, Wq, self.m)
        if not (np.all(dmin > 0) and np.all(np.isfinite(dU))):
            raise self._collision(self.r0q, Wq, dmin, self.s)
        lin = np.einsum("kij,kij->k", self.fq, Pq)
        dens = dU - lin
        gq = (G - self.fq) * self.w[:, None, None]
        return dens, gq

    def value_grad(self, Phi: np.ndarray) -> tuple[float, np.ndarray]:
        dens, gq = self.potential_terms(Phi)
        D = np.diff(Phi, axis=0) / self.h[:, None, None]
        kin = 0.5 * float(np.sum(self.m[None, :, None] * D * D * self.h[:, None, None]))
        cv, cg = self.closure_terms(Phi[-1])
        value = kin + float(np.sum(self.w * dens)) + cv
        G = self.scatter(gq)
        G[-1] += cg
        MD = self.m[None, :, None] * D
        G[:-1] -= MD
        G[1:] += MD
        G[0] = 0.0
        return value, G

    def value_grad_y(self, Y: np.ndarray) -> tuple[float, np.ndarray]:
        Y = Y.reshape(-1)
        Phi = self.from_y(Y)
        dens, gq = self.potential_terms(Phi)
        cv, cg = self.closure_terms(Phi[-1])
        value = 0.5 * float(Y @ Y) + float(np.sum(self.w * dens)) + cv
        G = self.scatter(gq)
        G[-1] += cg
        return value, Y + self.pullback(G)

    def value(self, Phi: np.ndarray) -> float:
        dens, _ = self.potential_terms(Phi)
        D = np.diff(Phi, axis=0) / self.h[:, None, None]
        kin = 0.5 * float(np.sum(self.m[None, :, None] * D * D * self.h[:, None, None]))
        return kin + float(np.sum(self.w * dens)) + self.closure_terms(Phi[-1])[0]

    def hess_apply(self, Phi: np.ndarray, Psi: np.ndarray) -> np.ndarray:
        Gq = self.gamma_q(Phi)
        Hq = _kernels.impl.hess_apply(Gq, self.m, self.interp(Psi)) * self.w[:, None, None]
        out = self.scatter(Hq)
        out[-1] += self.closure_hess(Phi[-1], Psi[-1])
        MD = self.m[None, :, None] * np.diff(Psi, axis=0) / self.h[:, None, None]
        out[:-1] -= MD
        out[1:] += MD
        out[0] = 0.0
        return out

    def hess_apply_y(self, Phi: np.ndarray, V: np.ndarray, Gq: np.ndarray | None = None) -> np.ndarray:
        V = V.reshape(-1)
        if Gq is None:
            Gq = self.gamma_q(Phi)
        Psi = self.from_y(V)
        Hq = _kernels.impl.hess_apply(Gq, self.m, self.interp(Psi)) * self.w[:, None, None]
        out = self.scatter(Hq)
        out[-1] += self.closure_hess(Phi[-1], Psi[-1])
        return V + self.pullback(out)

    def boundary_flux(self, Phi: np.ndarray) -> np.ndarray:
        """``M phi'(1)`` recovered from the residual of the first test function.

        Superconvergent at a discrete critical point, unlike the raw slope of
        the first element.
        """
        _, gq = self.potential_terms(Phi)
        x0, x1 = GAUSS2_XI
        g = gq.reshape((-1, 2) + gq.shape[1:])
        first = (1 - x0) * g[0, 0] + (1 - x1) * g[0, 1]
        slope = (Phi[1] - Phi[0]) / self.h[0]
        return self.m[:, None] * slope - first

    def initial_velocity(self, Phi: np.ndarray) -> np.ndarray:
        """``gamma'(1) = r0'(1) + phi'(1)`` as an ``(N, d)`` array."""
        _, r0d, _ = ref_arrays(self.spec, [self.mesh.t0])
        return r0d[0] + self.boundary_flux(Phi) / self.m[:, None]

    def envelope_gradient(self, Phi: np.ndarray) -> np.ndarray:
        """``int grad U(gamma) dt - M r0'(T)``: the x-gradient of ``v_T`` at fixed ``phi``.

        With the closure the integral runs to infinity and ``r0'(T)`` becomes ``a``.
        """
        Gq = self.gamma_q(Phi)
        _, G, _ = _kernels.impl.pot_grad(Gq, self.m)
        out = np.einsum("k,kij->ij", self.w, G)
        if self.closure:
            _, Gt, _ = _kernels.impl.pot_grad(self.r0t + Phi[-1] + self.xt, self.m)
            return out + np.einsum("k,kij->ij", self.wt, Gt) - self.m[:, None] * self.spec.a
        _, r0d, _ = ref_arrays(self.spec, [self.mesh.T])
        return out - self.m[:, None] * r0d[0]

    def element_density(self, Phi: np.ndarray) -> np.ndarray:
        """Integrand averaged over each element (kinetic + potential terms)."""
        dens, _ = self.potential_terms(Phi)
        D = np.diff(Phi, axis=0) / self.h[:, None, None]
        kin = 0.5 * np.sum(self.m[None, :, None] * D * D, axis=(1, 2))
        pot = np.sum((self.w * dens).reshape(-1, 2), axis=1) / self.h
        return kin + pot

    def tail_exponent(self) -> float:
        return TAIL_EXPONENT.get(self.spec.kind, TAIL_EXPONENT_DEFAULT)

    def tail_bound(self, Phi: np.ndarray) -> float:
        """Estimate of ``|int_T^inf integrand|`` from a ``C t^-p`` envelope.

        ``C`` is fitted on the last decade of the mesh (the second half of
        the elements when the mesh is shorter than a decade).
        """
        dens = np.abs(self.element_density(Phi))
        tm = 0.5 * (self.mesh.nodes[:-1] + self.mesh.nodes[1:])
        T = self.mesh.T
        sel = tm >= T / 10.0
        if sel.sum() < max(2, dens.size // 4):
            sel = np.arange(dens.size) >= dens.size // 2
        p = self.tail_exponent()
        C = float(np.max(dens[sel] * tm[sel] ** p))
        return C * T ** (1.0 - p) / (p - 1.0)


def _problem(spec, phi: PathField, closure: bool = True) -> ActionProblem:
    return ActionProblem(spec, phi.mesh, closure)


def action_eval(spec: ScenarioSpec, phi: PathField, problem: ActionProblem | None = None,
                closure: bool = True) -> ActionEval:
    pb = problem or _problem(spec, phi, closure)
    value, G = pb.value_grad(phi.values)
    return ActionEval(value, G, pb.tail_bound(phi.values))


def action_hessian_apply(spec: ScenarioSpec, phi: PathField, psi: PathField, problem: ActionProblem | None = None,
                         closure: bool = True) -> PathField:
    pb = problem or _problem(spec, phi, closure)
    out = pb.hess_apply(phi.values, psi.values)
    return PathField(phi.mesh, out)


def pairing(a: PathField | np.ndarray, b: PathField | np.ndarray) -> float:
    """Discrete pairing of a nodal covector with a nodal field."""
    a = a.values if isinstance(a, PathField) else a
    b = b.values if isinstance(b, PathField) else b
    return float(np.sum(a * b))


def structure_split(spec: ScenarioSpec, phi: PathField, closure: bool = False) -> tuple[float, float]:
    """Split the action into a positive quadratic part and a remainder.

    The quadratic part is ``|phi|_D^2 / 2`` plus, for every parabolic
    cluster, ``1/2 int <hess U_K(r0) phi, phi>``; for hyperbolic scenarios
    all clusters are singletons and only the kinetic term remains.
    """
    pb = _problem(spec, phi, closure)
    value = pb.value(phi.values)
    q = 0.5 * d_norm_sq(spec.ms, phi)
    Pq = pb.interp(phi.values)
    for block in spec.partition.nontrivial():
        idx = list(block)
        sub_m = np.ascontiguousarray(spec.ms.masses[idx])
        R = np.ascontiguousarray(pb.r0q[:, idx, :])
        V = np.ascontiguousarray(Pq[:, idx, :])
        HV = _kernels.impl.hess_apply(R, sub_m, V)
        q += 0.5 * float(np.sum(pb.w * np.einsum("kij,kij->k", HV, V)))
    return q, value - q
