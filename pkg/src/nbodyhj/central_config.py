"""Minimal central configurations on the inertia ellipsoid ``<Mx, x> = 1``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ClusterPartition, MassSystem, as_config, collision_distance, project_com
from .errors import CollisionError, OptimizationError
from .parallel import pmap
from .potential import u_gradient, u_hessian, u_value


@dataclass(frozen=True)
class CentralConfigOptions:
    tol: float = 1e-10
    restarts: int = 32
    seed: int = 0
    max_iter: int = 4000
    threads: int | None = None


@dataclass(frozen=True)
class CentralConfigResult:
    b_m: np.ndarray
    u_min: float
    beta: float
    kkt_residual: float
    # sorted distinct critical values met by the restarts (seed sensitivity)
    values_found: tuple = field(default=())
    n_converged: int = 0


def beta_from_umin(u_min: float) -> float:
    """Scale of the homothetic parabolic motion: ``beta^3 = 9/2 U_min``."""
    return float(np.cbrt(4.5 * u_min))


def com_basis(ms: MassSystem) -> np.ndarray:
    """Orthonormal basis (columns) of ``M^{1/2}`` times the zero-barycenter subspace."""
    n, d = ms.n, ms.d
    sq = np.sqrt(ms.masses)
    C = np.zeros((n * d, d))
    for a in range(d):
        C[a::d, a] = sq
    # complement of span(C) in R^{nd}
    q, _ = np.linalg.qr(np.hstack([C, np.eye(n * d)]))
    return q[:, d : n * d]


class _Sphere:
    """``U`` restricted to the unit sphere of the reduced coordinates ``w``.

    ``x = M^{-1/2} Q w`` maps the sphere onto the inertia ellipsoid inside
    the zero-barycenter space.
    """

    def __init__(self, ms: MassSystem):
        self.ms = ms
        self.Q = com_basis(ms)
        self.isq = 1.0 / np.sqrt(ms.mvec)

    def to_x(self, w):
        return (self.isq * (self.Q @ w)).reshape(self.ms.n, self.ms.d)

    def to_w(self, x):
        z = np.sqrt(self.ms.mvec) * project_com(self.ms, x).reshape(-1)
        w = self.Q.T @ z
        return w / np.linalg.norm(w)

    def f(self, w):
        return u_value(self.ms, self.to_x(w))

    def grad(self, w):
        return self.Q.T @ (self.isq * u_gradient(self.ms, self.to_x(w)))

    def hess(self, w):
        H = u_hessian(self.ms, self.to_x(w))
        B = self.isq[:, None] * self.Q
        return B.T @ H @ B


def _descend(sph: _Sphere, w0, tol, max_iter):
    w = w0 / np.linalg.norm(w0)
    f = sph.f(w)
    g = sph.grad(w)
    gr = g - (g @ w) * w
    alpha = 1e-2
    w_prev = gr_prev = None
    for _ in range(max_iter):
        if np.linalg.norm(gr) <= max(tol, 1e-6):
            break
        if w_prev is not None:
            s = w - w_prev
            y = gr - gr_prev
            sy = s @ y
            if sy > 0:
                alpha = min(max((s @ s) / sy, 1e-8), 1e3)
        step = alpha
        while True:
            w_new = w - step * gr
            w_new /= np.linalg.norm(w_new)
            try:
                f_new = sph.f(w_new)
            except CollisionError:
                f_new = np.inf
            if f_new <= f - 1e-4 * step * (gr @ gr) or step < 1e-14:
                break
            step *= 0.5
        if not np.isfinite(f_new):
            raise CollisionError((0, 0), message="descent trapped at the collision set")
        w_prev, gr_prev = w, gr
        w, f = w_new, f_new
        g = sph.grad(w)
        gr = g - (g @ w) * w
    # Newton polish on the sphere; rotations leave a null direction, hence lstsq
    for _ in range(20):
        g = sph.grad(w)
        gr = g - (g @ w) * w
        if np.linalg.norm(gr) <= 1e-3 * tol:
            break
        P = np.eye(w.size) - np.outer(w, w)
        Hr = P @ (sph.hess(w) - (g @ w) * np.eye(w.size)) @ P
        evals = np.linalg.eigvalsh(Hr)
        if evals.min() < -1e-8 * max(1.0, abs(evals).max()):
            break  # not near a local minimum; polish would climb
        xi, *_ = np.linalg.lstsq(Hr, -gr, rcond=1e-12)
        xi = P @ xi
        w_new = w + xi
        w_new /= np.linalg.norm(w_new)
        try:
            sph.f(w_new)
        except CollisionError:
            break
        w = w_new
    return w


def kkt_residual(ms: MassSystem, b) -> float:
    """``|grad U(b) - mu M b|`` with ``mu = <grad U(b), b>``."""
    b = as_config(ms, b).reshape(-1)
    g = u_gradient(ms, b)
    mu = g @ b
    return float(np.linalg.norm(g - mu * ms.mvec * b))


def find_minimal_central(ms: MassSystem, seed=None, opts: CentralConfigOptions | None = None) -> CentralConfigResult:
    """Multi-start projected descent for the minimum of ``U`` on the inertia ellipsoid.

    The optional ``seed`` configuration is always the first start; the
    remaining ``opts.restarts - 1`` starts are random (``opts.seed``).
    """
    opts = opts or CentralConfigOptions()
    sph = _Sphere(ms)
    rng = np.random.default_rng(opts.seed)
    dim = sph.Q.shape[1]
    starts = []
    if seed is not None:
        seed = as_config(ms, seed)
        if collision_distance(ms, project_com(ms, seed)) <= 0:
            raise CollisionError((0, 1), message="seed configuration lies on the collision set")
        starts.append(sph.to_w(seed))
    while len(starts) < max(1, opts.restarts):
        starts.append(rng.normal(size=dim))

    def run(w0):
        try:
            w = _descend(sph, w0, opts.tol, opts.max_iter)
        except CollisionError:
            return None
        b = sph.to_x(w)
        return float(u_value(ms, b)), kkt_residual(ms, b), b

    results = pmap(run, starts, opts.threads)
    ok = [r for r in results if r is not None and r[1] <= opts.tol]
    if not ok:
        best = min((r for r in results if r is not None), key=lambda r: r[1], default=None)
        raise OptimizationError(
            "no restart reached the KKT tolerance",
            {"restarts": len(starts), "best_kkt": None if best is None else best[1]},
        )
    u_min, kkt, b = min(ok, key=lambda r: (r[0], r[1]))
    values = []
    for r in sorted(x[0] for x in ok):
        if not values or r - values[-1] > 1e-8 * max(1.0, abs(r)):
            values.append(r)
    return CentralConfigResult(
        b_m=b, u_min=u_min, beta=beta_from_umin(u_min), kkt_residual=kkt, values_found=tuple(values), n_converged=len(ok)
    )


def find_minimal_clustered(
    ms: MassSystem, part: ClusterPartition, seed=None, opts: CentralConfigOptions | None = None
) -> dict:
    """Minimal central configuration of each cluster with two or more bodies.

    Each cluster is normalized with its own restricted mass form. Returns a
    dict ``block -> CentralConfigResult`` (configurations in cluster-local
    indexing); singleton clusters do not appear.
    """
    out = {}
    seed_arr = None if seed is None else as_config(ms, seed)
    for block in part.nontrivial():
        sub = ms.sub(block)
        sub_seed = None if seed_arr is None else seed_arr[list(block)]
        out[block] = find_minimal_central(sub, sub_seed, opts)
    return out


def embed_clusters(ms: MassSystem, results: dict) -> tuple[np.ndarray, np.ndarray, dict]:
    """Embed per-cluster results into the full configuration space.

    Returns ``(b, c, betas)`` where ``b`` holds the normalized ``b^K`` blocks,
    ``c`` the scaled blocks ``beta_K b^K`` and ``betas`` maps block -> beta.
    Bodies in singleton clusters get zeros.
    """
    b = np.zeros((ms.n, ms.d))
    c = np.zeros((ms.n, ms.d))
    betas = {}
    for block, res in results.items():
        b[list(block)] = res.b_m
        c[list(block)] = res.beta * res.b_m
        betas[block] = res.beta
    return b, c, betas
