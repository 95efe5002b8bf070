"""Second variation of the action: weighted eigenvalues and conjugate points.

The quadratic form ``int |psi'|_M^2 + <hess U(gamma) psi, psi>`` is compared
with the weighted mass ``int |psi|_M^2 / t^3`` on ``[t_start, T_max]`` with
``psi(t_start) = 0``. By default the right end is free and the field is
continued by a constant past ``T_max`` (the continuation's contributions are
added exactly), which approximates the half-line problem much better than a
Dirichlet cut; ``bc="dirichlet"`` is available for comparison.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import eigsh

from . import _kernels
from .action import ActionProblem
from .central_config import com_basis
from .errors import NearCollisionError, OptimizationError, RangeError, ValidationError
from .mesh import GAUSS2_XI, PathField, TimeMesh
from .reference import ScenarioSpec, ref_arrays
from .trajectory import shoot_newton

WEIGHT_EXPONENT = 3
TAIL_NODES = 20
DENSE_LIMIT = 400
CLOSURE = "closure"
DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class SpectralOptions:
    T_max: float = 1.0e3
    per_doubling: int = 48
    m: int = 4
    bc: str = CLOSURE
    tol_ker: float = 1e-6
    tol_root: float = 1e-7


@dataclass
class SpectralResult:
    eigenvalues: np.ndarray
    eigenfields: list
    T: float
    t_start: float
    weight_exponent: int = WEIGHT_EXPONENT
    orth_residual: float = 0.0
    rayleigh_residual: float = 0.0
    mu0: float = 0.0

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])


# ---------------------------------------------------------------- Hessian sources

class PathHessian:
    """``hess U`` along the motion of a minimizer.

    For ``t >= 1`` the motion is ``r0 + phi + x - r0(1)`` (``phi`` frozen at
    its last value past the horizon); below ``t = 1`` it is continued
    backwards with the ODE oracle from ``(x, gamma'(1))``.
    """

    def __init__(self, spec: ScenarioSpec, phi: PathField, closure: bool = True):
        self.spec = spec
        self.phi = phi
        self.ms = spec.ms
        self.m = np.ascontiguousarray(spec.ms.masses)
        pb = ActionProblem(spec, phi.mesh, closure)
        self.v1 = pb.initial_velocity(phi.values)
        self.t_min = 1.0 - spec.eps_back

    def positions(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float).reshape(-1)
        out = np.empty((t.size, self.ms.n, self.ms.d))
        hi = t >= 1.0
        if np.any(hi):
            r0, _, _ = ref_arrays(self.spec, t[hi])
            out[hi] = r0 + self.phi.at(t[hi]) + self.spec.x_tilde
        if np.any(~hi):
            tl = t[~hi]
            if tl.min() < self.t_min - 1e-12:
                raise RangeError(f"backward extension limited to t >= {self.t_min}")
            order = np.argsort(-tl)
            times = np.concatenate([[1.0], tl[order]])
            try:
                tr = shoot_newton(self.ms, self.spec.x0, self.v1, (1.0, times[-1]), rtol=1e-12, t_eval=times)
            except NearCollisionError as exc:
                raise RangeError(f"backward extension reaches a collision: {exc}") from exc
            back = np.empty((tl.size, self.ms.n, self.ms.d))
            back[order] = tr.positions[1:]
            out[~hi] = back
        return out

    def blocks(self, t) -> np.ndarray:
        return _kernels.impl.hess_blocks(np.ascontiguousarray(self.positions(t)), self.m)


class ScaledMassHessian:
    """Substitute ``-kappa M / t^3``: then the quotient is the free one minus ``kappa``."""

    def __init__(self, ms, kappa: float):
        self.ms = ms
        self.kappa = float(kappa)
        self.t_min = 0.0

    def blocks(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float).reshape(-1)
        return -self.kappa * np.diag(self.ms.mvec)[None] / t[:, None, None] ** 3


class ZeroHessian(ScaledMassHessian):
    def __init__(self, ms):
        super().__init__(ms, 0.0)


# ---------------------------------------------------------------- assembly

def reduction(ms) -> np.ndarray:
    """``P = M^{-1/2} Q``: columns span the zero-barycenter space and ``P^T M P = I``."""
    return com_basis(ms) / np.sqrt(ms.mvec)[:, None]


def _assemble(ms, mesh: TimeMesh, source, bc: str):
    """Stiffness and weighted mass in reduced (barycenter-free, mass-normalized) coordinates."""
    P = reduction(ms)
    r = P.shape[1]
    K = mesh.K
    h = mesh.h
    s, w = mesh.gauss()
    Hq = np.einsum("ia,kij,jb->kab", P, source.blocks(s.reshape(-1)), P).reshape(K, 2, r, r)
    eye = np.eye(r)
    kin = eye[None] / h[:, None, None]
    # element matrices [e, a, b] for local nodes a, b
    Ae = np.zeros((K, 2, 2, r, r))
    Be = np.zeros((K, 2, 2, r, r))
    Ae[:, 0, 0] += kin
    Ae[:, 1, 1] += kin
    Ae[:, 0, 1] -= kin
    Ae[:, 1, 0] -= kin
    for g, xi in enumerate(GAUSS2_XI):
        phi = (1.0 - xi, xi)
        wq = w[:, g][:, None, None]
        wt = (w[:, g] / s[:, g] ** WEIGHT_EXPONENT)[:, None, None]
        for a in range(2):
            for b in range(2):
                Ae[:, a, b] += phi[a] * phi[b] * wq * Hq[:, g]
                Be[:, a, b] += phi[a] * phi[b] * wt * eye[None]
    diag = np.zeros((K + 1, r, r))
    diag[:-1] += Ae[:, 0, 0]
    diag[1:] += Ae[:, 1, 1]
    bdiag = np.zeros((K + 1, r, r))
    bdiag[:-1] += Be[:, 0, 0]
    bdiag[1:] += Be[:, 1, 1]
    if bc == CLOSURE:
        T = mesh.T
        sig, wsig = np.polynomial.laguerre.laggauss(TAIL_NODES)
        st = T * np.exp(sig)
        wt = wsig * np.exp(sig) * st
        diag[-1] += np.einsum("k,ia,kij,jb->ab", wt, P, source.blocks(st), P)
        bdiag[-1] += eye / ((WEIGHT_EXPONENT - 1) * T ** (WEIGHT_EXPONENT - 1))
        last = K + 1
    elif bc == DIRICHLET:
        last = K
    else:
        raise ValidationError(f"unknown boundary condition {bc!r}")
    # unknowns: nodes 1 .. last-1
    A = _block_tridiag(diag[1:last], Ae[1:last - 1, 0, 1])
    B = _block_tridiag(bdiag[1:last], Be[1:last - 1, 0, 1])
    return A, B, Hq, s, P


def _block_tridiag(D, O):
    n, r, _ = D.shape
    ii, jj = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
    base = np.arange(n)[:, None, None] * r
    rows = [(base + ii).ravel()]
    cols = [(base + jj).ravel()]
    vals = [D.ravel()]
    if n > 1:
        b = base[:-1]
        rows += [(b + ii).ravel(), (b + r + jj).ravel()]
        cols += [(b + r + jj).ravel(), (b + ii).ravel()]
        vals += [O.ravel(), O.ravel()]
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n * r, n * r))


def _mu0(Hq, s) -> float:
    """Shift making ``A + mu0 B`` positive: the largest ``t^3`` times negative curvature."""
    r = Hq.shape[-1]
    lo = np.linalg.eigvalsh(Hq.reshape(-1, r, r))[:, 0]
    return float(np.max(np.maximum(-lo, 0.0) * s.reshape(-1) ** WEIGHT_EXPONENT)) + 1.0


def _spectral_mesh(t_start, opts: SpectralOptions) -> TimeMesh:
    K = max(16, int(np.ceil(np.log2(opts.T_max / t_start) * opts.per_doubling)))
    return TimeMesh.geometric(opts.T_max, K, t0=t_start)


def smallest_eigs(spec_or_ms, source, t_start: float, opts: SpectralOptions | None = None) -> SpectralResult:
    """``m`` smallest weighted eigenvalues on ``[t_start, T_max]``."""
    opts = opts or SpectralOptions()
    ms = getattr(spec_or_ms, "ms", spec_or_ms)
    if t_start >= opts.T_max:
        raise RangeError("t_start must lie below T_max")
    if t_start < getattr(source, "t_min", 0.0) - 1e-12:
        raise RangeError(f"t_start={t_start} below the available backward extension")
    mesh = _spectral_mesh(t_start, opts)
    A, B, Hq, s, P = _assemble(ms, mesh, source, opts.bc)
    mu0 = _mu0(Hq, s)
    n = A.shape[0]
    k = min(opts.m, n - 1)
    if n <= DENSE_LIMIT:
        lam, V = scipy.linalg.eigh(A.toarray(), B.toarray(), subset_by_index=[0, k - 1])
    else:
        try:
            # fixed start vector: ARPACK's own draws depend on process history
            v0 = np.random.default_rng(0).standard_normal(n)
            lam, V = eigsh(A, k=k, M=B, sigma=-mu0, which="LM", tol=1e-13, v0=v0)
        except Exception as exc:  # ARPACK failures surface as several types
            raise OptimizationError(f"eigensolver failed: {exc}") from exc
        order = np.argsort(lam)
        lam, V = lam[order], V[:, order]
    BV = B @ V
    G = V.T @ BV
    orth = float(np.max(np.abs(G - np.eye(k))))
    ray = (np.einsum("ij,ij->j", V, A @ V) / np.einsum("ij,ij->j", V, BV))
    ray_res = float(np.max(np.abs(ray - lam) / np.maximum(1.0, np.abs(lam))))
    fields = []
    r = P.shape[1]
    for j in range(k):
        vals = np.zeros((mesh.nodes.size, ms.dim))
        inner = V[:, j].reshape(-1, r) @ P.T
        vals[1:1 + inner.shape[0]] = inner
        if opts.bc == DIRICHLET:
            vals[-1] = 0.0
        fields.append(PathField(mesh, vals.reshape(mesh.nodes.size, ms.n, ms.d)))
    return SpectralResult(np.asarray(lam), fields, opts.T_max, t_start, WEIGHT_EXPONENT, orth, ray_res, mu0)


def rayleigh_quotient(ms, source, psi: PathField, bc: str = CLOSURE) -> float:
    """Quotient of a field on its own mesh, with the same quadrature as the solver."""
    A, B, _, _, P = _assemble(ms, psi.mesh, source, bc)
    r = P.shape[1]
    n = A.shape[0] // r
    # P^T M recovers reduced coordinates because P^T M P = I
    red = psi.values.reshape(psi.values.shape[0], -1) @ (P * ms.mvec[:, None])
    v = red[1:1 + n].reshape(-1)
    return float(v @ (A @ v)) / float(v @ (B @ v))


# ---------------------------------------------------------------- profiles

@dataclass
class LambdaProfile:
    t: np.ndarray
    eigenvalues: np.ndarray  # (n_t, m)
    violations: list = field(default_factory=list)  # indices i with lambda1(t_i) > lambda1(t_{i+1}) + tol

    @property
    def lambda1(self) -> np.ndarray:
        return self.eigenvalues[:, 0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"lambda{i + 1}" for i in range(self.eigenvalues.shape[1])])
            for t, row in zip(self.t, self.eigenvalues):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def monotonicity_violations(t, lam1, tol: float = 1e-8) -> list:
    """Indices where ``lambda1`` drops as the start time grows (shrinking interval)."""
    order = np.argsort(t)
    lam = np.asarray(lam1)[order]
    return [int(order[i]) for i in range(lam.size - 1) if lam[i] > lam[i + 1] + tol * max(1.0, abs(lam[i]))]


def lambda_profile(spec: ScenarioSpec, source, t_grid, opts: SpectralOptions | None = None) -> LambdaProfile:
    opts = opts or SpectralOptions()
    t = np.asarray(sorted(t_grid), dtype=float)
    lam = np.array([smallest_eigs(spec, source, ti, opts).eigenvalues for ti in t])
    return LambdaProfile(t, lam, monotonicity_violations(t, lam[:, 0]))


def lambda_at_start(spec: ScenarioSpec, phi: PathField, opts: SpectralOptions | None = None) -> float:
    return smallest_eigs(spec, PathHessian(spec, phi), 1.0, opts).lambda1


@dataclass
class ConjugateReport:
    conjugate: bool
    t_star: float | None
    lambda1_at_1: float
    kernel_dim: int = 0
    kernel_field: PathField | None = None
    message: str = ""


def conjugate_scan(spec_or_ms, source, opts: SpectralOptions | None = None, t_lo: float | None = None,
                   t_hi: float = 1.0) -> ConjugateReport:
    """Look for the start time where ``lambda1`` of ``[t, T_max]`` crosses zero.

    ``lambda1`` grows with ``t``, so the root (if any) is unique in the window.
    """
    opts = opts or SpectralOptions()
    if t_lo is None:
        spec = spec_or_ms if isinstance(spec_or_ms, ScenarioSpec) else None
        t_lo = (1.0 - spec.eps_back) * (1 + 1e-9) if spec is not None else 0.5
        t_lo = max(t_lo, getattr(source, "t_min", 0.0))

    def lam1(t):
        return smallest_eigs(spec_or_ms, source, t, opts).lambda1

    l1 = lam1(1.0) if t_lo <= 1.0 else float("nan")
    f_lo, f_hi = lam1(t_lo), lam1(t_hi)
    if f_lo > 0:
        return ConjugateReport(False, None, l1, message=f"lambda1 > 0 on the whole window from t={t_lo:g}")
    if f_hi < 0:
        return ConjugateReport(True, None, l1, message=f"lambda1 < 0 already at t={t_hi:g}")
    t_star = brentq(lam1, t_lo, t_hi, xtol=opts.tol_root, rtol=1e-14)
    res = smallest_eigs(spec_or_ms, source, t_star, opts)
    # relative to the largest computed mode: the second one may itself lie in the kernel
    scale = max(float(np.max(np.abs(res.eigenvalues))), 1e-300)
    kdim = int(np.sum(np.abs(res.eigenvalues) <= opts.tol_ker * scale + abs(res.eigenvalues[0])))
    return ConjugateReport(True, float(t_star), l1, kdim, res.eigenfields[0], "root located")
