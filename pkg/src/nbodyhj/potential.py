"""Newtonian potential ``U(x) = sum_{i<j} m_i m_j / |r_i - r_j|`` and derivatives.

All derivatives are closed forms; the Hessian is only exposed as a
matrix-free product. Gradients are Euclidean, so Newton's equations read
``M x'' = grad U(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .core import ClusterPartition, MassSystem, as_config, pairs
from .errors import CollisionError


def _check(ms: MassSystem, x: np.ndarray, time=None):
    for i, j in pairs(ms.n):
        if not np.any(x[i] != x[j]):
            raise CollisionError((i, j), time)


def _batch(ms, x):
    x = as_config(ms, x)
    _check(ms, x)
    return x[None, :, :]


def u_value(ms: MassSystem, x) -> float:
    U, _, _ = _kernels.impl.pot_grad(_batch(ms, x), ms.masses)
    return float(U[0])


def u_gradient(ms: MassSystem, x) -> np.ndarray:
    """Flat Euclidean gradient; ``dU/dr_i = -sum_j m_i m_j (r_i - r_j)/|r_i - r_j|^3``."""
    _, G, _ = _kernels.impl.pot_grad(_batch(ms, x), ms.masses)
    return G[0].reshape(-1)


def u_hessian_apply(ms: MassSystem, x, psi) -> np.ndarray:
    P = _batch(ms, x)
    V = as_config(ms, psi)[None, :, :]
    return _kernels.impl.hess_apply(P, ms.masses, V)[0].reshape(-1)


def u_hessian(ms: MassSystem, x) -> np.ndarray:
    """Dense Hessian; only meant for small diagnostics and tests."""
    return _kernels.impl.hess_blocks(_batch(ms, x), ms.masses)[0]


def u_clustered(ms: MassSystem, part: ClusterPartition, x) -> float:
    """Sum of the cluster potentials; cross-cluster pairs are dropped."""
    x = as_config(ms, x)
    total = 0.0
    for block in part.nontrivial():
        sub = MassSystem(ms.masses[list(block)], ms.d)
        xs = x[list(block)]
        for a, b in pairs(len(block)):
            if not np.any(xs[a] != xs[b]):
                raise CollisionError((block[a], block[b]))
        total += u_value(sub, xs)
    return total


def u_clustered_gradient(ms: MassSystem, part: ClusterPartition, x) -> np.ndarray:
    x = as_config(ms, x)
    g = np.zeros_like(x)
    for block in part.nontrivial():
        sub = MassSystem(ms.masses[list(block)], ms.d)
        g[list(block)] = u_gradient(sub, x[list(block)]).reshape(len(block), ms.d)
    return g.reshape(-1)


@dataclass(frozen=True)
class PotentialEval:
    value: float
    gradient: np.ndarray
    hessian_action: Callable[[np.ndarray], np.ndarray]


def evaluate(ms: MassSystem, x) -> PotentialEval:
    x = as_config(ms, x).copy()
    U, G, _ = _kernels.impl.pot_grad(_batch(ms, x), ms.masses)
    return PotentialEval(float(U[0]), G[0].reshape(-1), lambda psi: u_hessian_apply(ms, x, psi))
