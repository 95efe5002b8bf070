"""Graded time meshes and piecewise-linear perturbation fields."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MassSystem
from .errors import RangeError, ValidationError

MIN_NODES = 16
Q_MAX = 1.5

# two-point Gauss-Legendre on [0, 1]
GAUSS2_XI = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
GAUSS2_W = np.array([0.5, 0.5])


@dataclass(frozen=True)
class TimeMesh:
    nodes: np.ndarray

    def __post_init__(self):
        t = np.array(self.nodes, dtype=float).reshape(-1)
        if t.size < MIN_NODES:
            raise ValidationError(f"mesh needs at least {MIN_NODES} nodes, got {t.size}")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("mesh nodes must be strictly increasing")
        if t[0] > 0 and np.max(t[1:] / t[:-1]) > Q_MAX + 1e-12:
            raise ValidationError(f"node ratio exceeds {Q_MAX}")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def geometric(cls, T: float, K: int, t0: float = 1.0) -> "TimeMesh":
        """``K`` elements with constant ratio ``q = (T/t0)^(1/K)``."""
        if T <= t0:
            raise RangeError("horizon must exceed the initial time")
        t = t0 * (T / t0) ** (np.arange(K + 1) / K)
        t[0], t[-1] = t0, T
        return cls(t)

    @classmethod
    def octaves(cls, T: float, per_doubling: int, t0: float = 1.0) -> "TimeMesh":
        """Geometric mesh with ratio ``2^(1/per_doubling)``.

        Doubling the horizon of such a mesh appends exactly ``per_doubling``
        nodes and keeps the old nodes, so horizon continuation does not mix
        in a change of discretization.
        """
        if T <= t0:
            raise RangeError("horizon must exceed the initial time")
        q = 2.0 ** (1.0 / per_doubling)
        K = max(1, int(np.ceil(np.log(T / t0) / np.log(q) - 1e-9)))
        t = t0 * q ** np.arange(K + 1)
        t[-1] = T
        return cls(t)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def K(self) -> int:
        """Number of elements."""
        return self.nodes.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def grading(self) -> float:
        return float(np.max(self.nodes[1:] / self.nodes[:-1])) if self.t0 > 0 else np.inf

    def doubled(self) -> "TimeMesh":
        """Append nodes up to ``2T`` with the current final ratio."""
        t = self.nodes
        q = t[-1] / t[-2]
        m = max(1, int(round(np.log(2.0) / np.log(q))))
        extra = t[-1] * 2.0 ** (np.arange(1, m + 1) / m)
        extra[-1] = 2.0 * t[-1]
        return TimeMesh(np.concatenate([t, extra]))

    def bisected(self) -> "TimeMesh":
        """Split every element at its geometric midpoint; old nodes sit at even indices."""
        t = self.nodes
        mid = np.sqrt(t[:-1] * t[1:]) if self.t0 > 0 else 0.5 * (t[:-1] + t[1:])
        out = np.empty(2 * t.size - 1)
        out[0::2] = t
        out[1::2] = mid
        return TimeMesh(out)

    def gauss(self):
        """Quadrature points ``(K, 2)`` and weights ``(K, 2)`` of Gauss-2 per element."""
        t, h = self.nodes[:-1], self.h
        s = t[:, None] + h[:, None] * GAUSS2_XI[None, :]
        w = h[:, None] * GAUSS2_W[None, :]
        return s, w


@dataclass
class PathField:
    """Continuous piecewise-linear field; ``values[k]`` is the ``(N, d)`` value at node ``k``."""

    mesh: TimeMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != self.mesh.nodes.size:
            raise ValidationError("values must have shape (nodes, N, d)")
        if np.any(v[0] != 0):
            raise ValidationError("a perturbation field must vanish at the first node")
        self.values = v

    @classmethod
    def zeros(cls, mesh: TimeMesh, ms: MassSystem) -> "PathField":
        return cls(mesh, np.zeros((mesh.nodes.size, ms.n, ms.d)))

    @classmethod
    def from_function(cls, mesh: TimeMesh, f) -> "PathField":
        vals = np.array([f(t) for t in mesh.nodes], dtype=float)
        vals[0] = 0.0
        return cls(mesh, vals)

    def at(self, t) -> np.ndarray:
        """Linear interpolation; constant extension beyond the last node."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nodes = self.mesh.nodes
        flat = self.values.reshape(nodes.size, -1)
        out = np.empty((t.size, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.interp(t, nodes, flat[:, c])
        return out.reshape((t.size,) + self.values.shape[1:])

    def derivative(self) -> np.ndarray:
        """Element slopes ``(K, N, d)``."""
        return np.diff(self.values, axis=0) / self.mesh.h[:, None, None]

    def transfer(self, mesh: TimeMesh) -> "PathField":
        """Interpolate onto ``mesh`` (extension by constant past the old horizon)."""
        vals = self.at(mesh.nodes)
        vals[0] = 0.0
        return PathField(mesh, vals)

    def copy(self) -> "PathField":
        return PathField(self.mesh, self.values.copy())


def d_norm_sq(ms: MassSystem, phi: PathField) -> float:
    """``sum_e |dphi_e|_M^2 h_e``, exact for piecewise-linear fields."""
    slopes = phi.derivative()
    return float(np.sum(ms.masses[None, :, None] * slopes**2 * phi.mesh.h[:, None, None]))


def d_norm(ms: MassSystem, phi: PathField) -> float:
    return float(np.sqrt(d_norm_sq(ms, phi)))


def d_distance(ms: MassSystem, phi: PathField, psi: PathField) -> float:
    return d_norm(ms, PathField(phi.mesh, phi.values - psi.values))


_G4_X, _G4_W = np.polynomial.legendre.leggauss(4)


def weighted_l2_sq(ms: MassSystem, phi: PathField, power: float) -> float:
    """``int |phi|_M^2 / t^power dt`` with 4-point Gauss per element."""
    t, h = phi.mesh.nodes[:-1], phi.mesh.h
    xi = 0.5 * (_G4_X + 1.0)
    w = 0.5 * _G4_W
    v0, v1 = phi.values[:-1], phi.values[1:]
    total = 0.0
    for x, wx in zip(xi, w):
        s = t + h * x
        val = (1 - x) * v0 + x * v1
        nrm = np.sum(ms.masses[None, :, None] * val**2, axis=(1, 2))
        total += float(np.sum(wx * h * nrm / s**power))
    return total


def hardy_ratio(ms: MassSystem, phi: PathField, eps: float = 0.0) -> float:
    """``int |phi|^2_M / t^(2+eps)`` divided by ``|phi|_D^2``; Hardy bounds it by ``4/(1+eps)^2``."""
    if eps < 0:
        raise RangeError("eps must be non-negative")
    den = d_norm_sq(ms, phi)
    if den <= 0:
        raise RangeError("hardy_ratio of the zero field")
    return weighted_l2_sq(ms, phi, 2.0 + eps) / den


def sup_ratio(ms: MassSystem, phi: PathField) -> float:
    """``max_t |phi(t)|^2_M / (t - t0)`` over the nodes, divided by ``|phi|_D^2``."""
    t = phi.mesh.nodes
    nrm = np.sum(ms.masses[None, :, None] * phi.values**2, axis=(1, 2))
    return float(np.max(nrm[1:] / (t[1:] - t[0]))) / d_norm_sq(ms, phi)
