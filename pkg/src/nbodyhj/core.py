"""Configuration space with fixed barycenter, mass metric and cluster partitions.

Configurations are plain ``numpy`` arrays of shape ``(N, d)``; their flat
``(N*d,)`` view is body-major, which is what the optimizer works with.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ShapeError, ValidationError

TOL_COM = 1e-12


@dataclass(frozen=True)
class MassSystem:
    """``N`` point masses moving in ``R^d``."""

    masses: np.ndarray
    d: int = 2
    mvec: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.masses, dtype=float).reshape(-1)
        if m.size < 2:
            raise ValidationError("need at least two bodies")
        if int(self.d) < 2:
            raise ValidationError("spatial dimension must be >= 2")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValidationError("masses must be positive")
        m.setflags(write=False)
        mvec = np.repeat(m, int(self.d))
        mvec.setflags(write=False)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "mvec", mvec)

    def __eq__(self, other):
        if not isinstance(other, MassSystem):
            return NotImplemented
        return self.d == other.d and np.array_equal(self.masses, other.masses)

    def __hash__(self):
        return hash((self.d, self.masses.tobytes()))

    @property
    def n(self) -> int:
        return int(self.masses.size)

    @property
    def dim(self) -> int:
        """Number of flat coordinates ``N*d``."""
        return self.n * self.d

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def sub(self, block) -> "MassSystem":
        return MassSystem(self.masses[list(block)], self.d)


def as_config(ms: MassSystem, x) -> np.ndarray:
    """Return ``x`` as a float ``(N, d)`` array, checking its size."""
    arr = np.asarray(x, dtype=float)
    if arr.size != ms.dim:
        raise ShapeError(f"expected {ms.n}x{ms.d} coordinates, got shape {arr.shape}")
    if arr.ndim == 2 and arr.shape != (ms.n, ms.d):
        raise ShapeError(f"expected shape {(ms.n, ms.d)}, got {arr.shape}")
    return arr.reshape(ms.n, ms.d)


def mass_inner(ms: MassSystem, x, y) -> float:
    """``sum_i m_i <x_i, y_i>``."""
    x = as_config(ms, x)
    y = as_config(ms, y)
    return float(np.sum(ms.masses[:, None] * x * y))


def mass_norm(ms: MassSystem, x) -> float:
    return float(np.sqrt(max(mass_inner(ms, x, x), 0.0)))


def barycenter(ms: MassSystem, x) -> np.ndarray:
    x = as_config(ms, x)
    return ms.masses @ x / ms.total_mass


def project_com(ms: MassSystem, raw) -> np.ndarray:
    """Subtract the mass-weighted barycenter."""
    x = as_config(ms, raw)
    return x - barycenter(ms, x)[None, :]


def has_zero_com(ms: MassSystem, x, tol: float = TOL_COM) -> bool:
    x = as_config(ms, x)
    scale = max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
    return bool(np.max(np.abs(ms.masses @ x)) <= tol * scale * ms.total_mass)


def pairs(n: int):
    return list(combinations(range(n), 2))


def collision_distance(ms: MassSystem, x) -> float:
    """Mass-metric distance from ``x`` to the collision set.

    The distance to the hyperplane ``{r_i = r_j}`` is
    ``|r_i - r_j| * sqrt(m_i m_j / (m_i + m_j))``; the minimum over pairs is
    returned, and it vanishes exactly on the collision set.
    """
    x = as_config(ms, x)
    m = ms.masses
    best = np.inf
    for i, j in pairs(ms.n):
        dist = np.linalg.norm(x[i] - x[j]) * np.sqrt(m[i] * m[j] / (m[i] + m[j]))
        best = min(best, float(dist))
    return best


def min_separation(x) -> float:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    return min(float(np.linalg.norm(x[i] - x[j])) for i, j in pairs(n))


@dataclass(frozen=True)
class ClusterPartition:
    """Partition of the body indices ``0..N-1`` into disjoint blocks."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        blocks = tuple(sorted((b for b in blocks if b), key=lambda b: b[0]))
        flat = [i for b in blocks for i in b]
        if sorted(flat) != list(range(len(flat))):
            raise ValidationError(f"blocks {blocks} do not partition 0..{len(flat) - 1}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    def block_of(self, i: int) -> tuple:
        for b in self.blocks:
            if i in b:
                return b
        raise KeyError(i)

    def same(self, i: int, j: int) -> bool:
        return j in self.block_of(i)

    def nontrivial(self) -> list:
        return [b for b in self.blocks if len(b) > 1]

    @classmethod
    def singletons(cls, n: int) -> "ClusterPartition":
        return cls(tuple((i,) for i in range(n)))

    @classmethod
    def single(cls, n: int) -> "ClusterPartition":
        return cls((tuple(range(n)),))


def cluster_from_velocity(a, tol: float = 0.0) -> ClusterPartition:
    """Group bodies whose asymptotic velocities agree within ``tol``.

    Uses the transitive closure of ``|a_i - a_j| <= tol``; with ``tol=0`` this
    is the exact equality relation.
    """
    if tol < 0:
        raise ValidationError("tol must be non-negative")
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs(n):
        if np.linalg.norm(a[i] - a[j]) <= tol:
            parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return ClusterPartition(tuple(tuple(g) for g in groups.values()))
