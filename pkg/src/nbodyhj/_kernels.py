"""Hot numeric kernels: pairwise Newtonian sums and the Dormand-Prince loop.

Every kernel exists twice: a numba ``@njit`` loop version and a vectorized
numpy version. The numba path is used when numba imports and the
environment variable ``NBODYHJ_NUMBA`` is not set to ``0``/``false``/``off``.
Both paths are importable explicitly (``numpy_impl``, ``numba_impl``) so the
test-suite and ``benchmarks/bench_kernels.py`` can compare them.

Array conventions: point batches are ``(n_pts, N, d)`` arrays, masses a
``(N,)`` array. Collisions are reported through the returned minimum pair
distance (``0.0`` on the collision set) instead of raising, so that the
callers decide how to react.
"""

from __future__ import annotations

import os
import types
from types import SimpleNamespace

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def _flag_enabled() -> bool:
    raw = os.environ.get("NBODYHJ_NUMBA", "1").strip().lower()
    return raw not in ("0", "false", "off", "no")


# ---------------------------------------------------------------- numpy path


def _pair_index(n):
    return np.triu_indices(n, 1)


def np_pot_grad(P, m):
    n_pts, n, d = P.shape
    iu, ju = _pair_index(n)
    r = P[:, iu, :] - P[:, ju, :]
    dist = np.sqrt(np.einsum("kpd,kpd->kp", r, r))
    mm = m[iu] * m[ju]
    with np.errstate(divide="ignore", invalid="ignore"):
        U = np.sum(mm / dist, axis=1)
        f = (mm / dist**3)[:, :, None] * r
    G = np.zeros_like(P)
    for p in range(iu.size):
        G[:, iu[p], :] -= f[:, p, :]
        G[:, ju[p], :] += f[:, p, :]
    dmin = dist.min(axis=1) if iu.size else np.full(n_pts, np.inf)
    return U, G, dmin


def np_pot_diff_grad(Q, W, m):
    """``U(Q+W) - U(Q)`` computed pairwise without cancellation, plus ``grad U(Q+W)``."""
    n_pts, n, d = Q.shape
    iu, ju = _pair_index(n)
    q = Q[:, iu, :] - Q[:, ju, :]
    w = W[:, iu, :] - W[:, ju, :]
    p = q + w
    nq = np.sqrt(np.einsum("kpd,kpd->kp", q, q))
    npp = np.sqrt(np.einsum("kpd,kpd->kp", p, p))
    mm = m[iu] * m[ju]
    num = 2.0 * np.einsum("kpd,kpd->kp", q, w) + np.einsum("kpd,kpd->kp", w, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        dU = np.sum(-mm * num / (npp * nq * (npp + nq)), axis=1)
        f = (mm / npp**3)[:, :, None] * p
    G = np.zeros_like(Q)
    for k in range(iu.size):
        G[:, iu[k], :] -= f[:, k, :]
        G[:, ju[k], :] += f[:, k, :]
    dmin = npp.min(axis=1) if iu.size else np.full(n_pts, np.inf)
    return dU, G, dmin


def np_hess_apply(P, m, V):
    n_pts, n, d = P.shape
    iu, ju = _pair_index(n)
    r = P[:, iu, :] - P[:, ju, :]
    u = V[:, iu, :] - V[:, ju, :]
    r2 = np.einsum("kpd,kpd->kp", r, r)
    dist = np.sqrt(r2)
    mm = m[iu] * m[ju]
    ru = np.einsum("kpd,kpd->kp", r, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        c3 = mm / (dist * r2)
        c5 = 3.0 * mm * ru / (r2 * r2 * dist)
    k = c5[:, :, None] * r - c3[:, :, None] * u
    out = np.zeros_like(P)
    for p in range(iu.size):
        out[:, iu[p], :] += k[:, p, :]
        out[:, ju[p], :] -= k[:, p, :]
    return out


def np_hess_blocks(P, m):
    """Dense Hessians ``(n_pts, N*d, N*d)``."""
    n_pts, n, d = P.shape
    iu, ju = _pair_index(n)
    r = P[:, iu, :] - P[:, ju, :]
    r2 = np.einsum("kpd,kpd->kp", r, r)
    dist = np.sqrt(r2)
    mm = m[iu] * m[ju]
    eye = np.eye(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        blk = (3.0 * mm / (r2 * r2 * dist))[:, :, None, None] * np.einsum("kpa,kpb->kpab", r, r) - (
            mm / (dist * r2)
        )[:, :, None, None] * eye
    H = np.zeros((n_pts, n * d, n * d))
    for p in range(iu.size):
        i, j = iu[p], ju[p]
        si, sj = slice(i * d, (i + 1) * d), slice(j * d, (j + 1) * d)
        H[:, si, si] += blk[:, p]
        H[:, sj, sj] += blk[:, p]
        H[:, si, sj] -= blk[:, p]
        H[:, sj, si] -= blk[:, p]
    return H


def np_accel(x, m, n, d):
    """``M^{-1} grad U`` for a flat configuration; returns (accel, dmin)."""
    _, G, dmin = np_pot_grad(x.reshape(1, n, d), m)
    return (G[0] / m[:, None]).reshape(-1), dmin[0]


# ---------------------------------------------------------------- DOPRI5 loop

# Dormand-Prince 5(4) tableau.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


_A1, _A2, _A3, _A4, _A5, _A6 = (np.array(row, dtype=np.float64) for row in _A[1:])
_EV = np.array(_E)


# placeholders; each backend gets its own clone of the loop with these rebound (see _bind)
_ACCEL = None
_RHS = None


def _rhs(y, m, n, d, half):
    out = np.empty_like(y)
    acc, dmin = _ACCEL(y[:half], m, n, d)
    out[:half] = y[half:]
    out[half:] = acc
    return out, dmin


def _dopri_loop(y0, t0, t_out, m, n, d, rtol, atol, guard, max_steps):
    """Integrate y' = f(y) from t0 through the sorted (monotone) times t_out.

    Returns status (0 ok, 1 near collision, 2 step underflow, 3 step
    limit), the filled output rows, the number of steps and the time
    reached.
    """
    a1, a2, a3, a4, a5, a6, E = _A1, _A2, _A3, _A4, _A5, _A6, _EV
    rhs = _RHS
    half = y0.size // 2
    n_out = t_out.size
    Y = np.zeros((n_out, y0.size))
    direction = 1.0 if (n_out == 0 or t_out[n_out - 1] >= t0) else -1.0
    y = y0.copy()
    t = t0
    k1, dmin = rhs(y, m, n, d, half)
    if dmin <= guard:
        return 1, Y, 0, t
    scale0 = np.sqrt(np.mean(y * y)) + 1e-300
    h = direction * min(1e-2 * max(1.0, abs(t0)), 0.01 * scale0 / (np.sqrt(np.mean(k1 * k1)) + 1e-300))
    idx = 0
    while idx < n_out and (t_out[idx] - t) * direction <= 0.0:
        Y[idx] = y
        idx += 1
    steps = 0
    while idx < n_out:
        if steps >= max_steps:
            return 3, Y, steps, t
        target = t_out[idx]
        clipped = False
        if (t + h - target) * direction > 0.0:
            h_try = target - t
            clipped = True
        else:
            h_try = h
        if abs(h_try) < 1e-14 * max(1.0, abs(t)):
            if clipped:
                # output time reached within rounding
                Y[idx] = y
                idx += 1
                continue
            return 2, Y, steps, t
        k2, d2 = rhs(y + h_try * (a1[0] * k1), m, n, d, half)
        k3, d3 = rhs(y + h_try * (a2[0] * k1 + a2[1] * k2), m, n, d, half)
        k4, d4 = rhs(y + h_try * (a3[0] * k1 + a3[1] * k2 + a3[2] * k3), m, n, d, half)
        k5, d5 = rhs(y + h_try * (a4[0] * k1 + a4[1] * k2 + a4[2] * k3 + a4[3] * k4), m, n, d, half)
        k6, d6 = rhs(
            y + h_try * (a5[0] * k1 + a5[1] * k2 + a5[2] * k3 + a5[3] * k4 + a5[4] * k5), m, n, d, half
        )
        y_new = y + h_try * (a6[0] * k1 + a6[2] * k3 + a6[3] * k4 + a6[4] * k5 + a6[5] * k6)
        k7, d7 = rhs(y_new, m, n, d, half)
        dstage = min(d2, d3, d4, d5, d6, d7)
        err_vec = h_try * (E[0] * k1 + E[2] * k3 + E[3] * k4 + E[4] * k5 + E[5] * k6 + E[6] * k7)
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / sc) ** 2))
        steps += 1
        if not np.isfinite(err):
            err = 1e10
        if err <= 1.0 and dstage > guard:
            t = target if clipped else t + h_try
            y = y_new
            k1 = k7
            if clipped:
                Y[idx] = y
                idx += 1
                # keep the unclipped proposal for the next step
            else:
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** (-0.2)))
                h = h_try * fac
        else:
            if dstage <= guard and err <= 1.0:
                # the stages touched the guard ball: only shrinking can tell
                if abs(h_try) < 1e-12 * max(1.0, abs(t)):
                    return 1, Y, steps, t
                h = 0.25 * h_try
            else:
                h = h_try * max(0.1, 0.9 * err ** (-0.2))
    return 0, Y, steps, t


def _bind(fn, **names):
    """Copy of ``fn`` whose free globals ``names`` are rebound (one loop source, two backends)."""
    g = dict(fn.__globals__)
    g.update(names)
    return types.FunctionType(fn.__code__, g, fn.__name__, fn.__defaults__)


numpy_impl = SimpleNamespace(
    name="numpy",
    pot_grad=np_pot_grad,
    pot_diff_grad=np_pot_diff_grad,
    hess_apply=np_hess_apply,
    hess_blocks=np_hess_blocks,
    dopri=_bind(_dopri_loop, _RHS=_bind(_rhs, _ACCEL=np_accel)),
)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def nb_pot_grad(P, m):
        n_pts, n, d = P.shape
        U = np.zeros(n_pts)
        G = np.zeros_like(P)
        dmin = np.full(n_pts, np.inf)
        for k in range(n_pts):
            for i in range(n):
                for j in range(i + 1, n):
                    r2 = 0.0
                    for a in range(d):
                        diff = P[k, i, a] - P[k, j, a]
                        r2 += diff * diff
                    dist = np.sqrt(r2)
                    if dist < dmin[k]:
                        dmin[k] = dist
                    mm = m[i] * m[j]
                    U[k] += mm / dist
                    c = mm / (dist * r2)
                    for a in range(d):
                        f = c * (P[k, i, a] - P[k, j, a])
                        G[k, i, a] -= f
                        G[k, j, a] += f
        return U, G, dmin

    @njit(cache=True)
    def nb_pot_diff_grad(Q, W, m):
        n_pts, n, d = Q.shape
        dU = np.zeros(n_pts)
        G = np.zeros_like(Q)
        dmin = np.full(n_pts, np.inf)
        for k in range(n_pts):
            for i in range(n):
                for j in range(i + 1, n):
                    q2 = 0.0
                    p2 = 0.0
                    qw = 0.0
                    w2 = 0.0
                    for a in range(d):
                        qa = Q[k, i, a] - Q[k, j, a]
                        wa = W[k, i, a] - W[k, j, a]
                        pa = qa + wa
                        q2 += qa * qa
                        p2 += pa * pa
                        qw += qa * wa
                        w2 += wa * wa
                    nq = np.sqrt(q2)
                    npp = np.sqrt(p2)
                    if npp < dmin[k]:
                        dmin[k] = npp
                    mm = m[i] * m[j]
                    dU[k] -= mm * (2.0 * qw + w2) / (npp * nq * (npp + nq))
                    c = mm / (npp * p2)
                    for a in range(d):
                        f = c * (Q[k, i, a] - Q[k, j, a] + W[k, i, a] - W[k, j, a])
                        G[k, i, a] -= f
                        G[k, j, a] += f
        return dU, G, dmin

    @njit(cache=True)
    def nb_hess_apply(P, m, V):
        n_pts, n, d = P.shape
        out = np.zeros_like(P)
        for k in range(n_pts):
            for i in range(n):
                for j in range(i + 1, n):
                    r2 = 0.0
                    ru = 0.0
                    for a in range(d):
                        ra = P[k, i, a] - P[k, j, a]
                        r2 += ra * ra
                        ru += ra * (V[k, i, a] - V[k, j, a])
                    dist = np.sqrt(r2)
                    mm = m[i] * m[j]
                    c3 = mm / (dist * r2)
                    c5 = 3.0 * mm * ru / (r2 * r2 * dist)
                    for a in range(d):
                        ka = c5 * (P[k, i, a] - P[k, j, a]) - c3 * (V[k, i, a] - V[k, j, a])
                        out[k, i, a] += ka
                        out[k, j, a] -= ka
        return out

    @njit(cache=True)
    def nb_hess_blocks(P, m):
        n_pts, n, d = P.shape
        H = np.zeros((n_pts, n * d, n * d))
        r = np.empty(d)
        for k in range(n_pts):
            for i in range(n):
                for j in range(i + 1, n):
                    r2 = 0.0
                    for a in range(d):
                        r[a] = P[k, i, a] - P[k, j, a]
                        r2 += r[a] * r[a]
                    dist = np.sqrt(r2)
                    mm = m[i] * m[j]
                    c3 = mm / (dist * r2)
                    c5 = 3.0 * mm / (r2 * r2 * dist)
                    for a in range(d):
                        for b in range(d):
                            v = c5 * r[a] * r[b]
                            if a == b:
                                v -= c3
                            H[k, i * d + a, i * d + b] += v
                            H[k, j * d + a, j * d + b] += v
                            H[k, i * d + a, j * d + b] -= v
                            H[k, j * d + a, i * d + b] -= v
        return H

    @njit(cache=True)
    def nb_accel(x, m, n, d):
        acc = np.zeros(n * d)
        dmin = np.inf
        for i in range(n):
            for j in range(i + 1, n):
                r2 = 0.0
                for a in range(d):
                    diff = x[i * d + a] - x[j * d + a]
                    r2 += diff * diff
                dist = np.sqrt(r2)
                if dist < dmin:
                    dmin = dist
                c = 1.0 / (dist * r2)
                for a in range(d):
                    f = c * (x[i * d + a] - x[j * d + a])
                    acc[i * d + a] -= m[j] * f
                    acc[j * d + a] += m[i] * f
        return acc, dmin

    numba_impl = SimpleNamespace(
        name="numba",
        pot_grad=nb_pot_grad,
        pot_diff_grad=nb_pot_diff_grad,
        hess_apply=nb_hess_apply,
        hess_blocks=nb_hess_blocks,
        dopri=njit(cache=True)(_bind(_dopri_loop, _RHS=njit(cache=True)(_bind(_rhs, _ACCEL=nb_accel)))),
    )
else:  # pragma: no cover
    numba_impl = None


def active():
    """The kernel namespace selected by ``NBODYHJ_NUMBA``."""
    if HAVE_NUMBA and _flag_enabled():
        return numba_impl
    return numpy_impl


impl = active()
