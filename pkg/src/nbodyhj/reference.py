"""Reference paths ``r0(t) = a t + c t^{2/3}`` for the three motion classes.

``c`` is ``beta b_m`` (parabolic), zero (hyperbolic) or the embedded
per-cluster blocks ``beta_K b^K`` (hyperbolic-parabolic).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .central_config import (
    CentralConfigResult,
    CentralConfigOptions,
    beta_from_umin,
    embed_clusters,
    find_minimal_central,
    kkt_residual,
)
from .core import (
    ClusterPartition,
    MassSystem,
    as_config,
    cluster_from_velocity,
    collision_distance,
    has_zero_com,
    mass_inner,
    project_com,
)
from .errors import RangeError, ValidationError
from .potential import u_value

HYPERBOLIC = "hyperbolic"
PARABOLIC = "parabolic"
HYPERBOLIC_PARABOLIC = "hyperbolic_parabolic"
KINDS = (HYPERBOLIC, PARABOLIC, HYPERBOLIC_PARABOLIC)

EPS_BACK = 0.5
CLUSTER_CONVENTION = "each cluster normalized with its own restricted mass form; beta_K^3 = 9/2 U_K(b^K)"


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    ms: MassSystem
    a: np.ndarray
    x0: np.ndarray
    b: np.ndarray  # normalized central configuration(s), zeros outside clusters
    c: np.ndarray  # beta * b, blockwise
    partition: ClusterPartition
    betas: dict = field(default_factory=dict)
    eps_back: float = EPS_BACK

    @property
    def beta(self) -> float | None:
        if len(self.betas) == 1:
            return next(iter(self.betas.values()))
        return None

    def with_x(self, x) -> "ScenarioSpec":
        return replace(self, x0=project_com(self.ms, x))

    @property
    def x_tilde(self) -> np.ndarray:
        """``x - r0(1)``: the constant shift between ``r0 + phi`` and ``gamma``."""
        return self.x0 - self.a - self.c

    def metadata(self) -> dict:
        return {"kind": self.kind, "cluster_convention": CLUSTER_CONVENTION}


def _freeze(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def make_scenario(kind: str, ms: MassSystem, a=None, x0=None, b=None, cc_opts: CentralConfigOptions | None = None,
                  cluster_tol: float = 0.0) -> ScenarioSpec:
    """Validate the data of a motion class and build its reference path.

    ``b`` optionally supplies the (normalized, minimal) central
    configuration; it is computed when missing. For the hyperbolic-parabolic
    class ``b`` may hold every cluster's block at once.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown kind {kind!r}; expected one of {KINDS}")
    a = np.zeros((ms.n, ms.d)) if a is None else as_config(ms, a)
    if not has_zero_com(ms, a, 1e-10):
        raise ValidationError("asymptotic velocity a must have zero barycenter")
    x0 = project_com(ms, np.zeros((ms.n, ms.d)) if x0 is None else x0)
    cc_opts = cc_opts or CentralConfigOptions()

    if kind == HYPERBOLIC:
        if collision_distance(ms, a) <= cluster_tol:
            raise ValidationError("a ∈ Δ: hyperbolic motions need a collision-free asymptotic velocity (all rows of a distinct)")
        part = ClusterPartition.singletons(ms.n)
        zero = np.zeros((ms.n, ms.d))
        return ScenarioSpec(kind, ms, _freeze(a), _freeze(x0), _freeze(zero), _freeze(zero), part, {})

    if kind == PARABOLIC:
        if np.any(a != 0):
            raise ValidationError("a ≠ 0: parabolic motions have a = 0")
        part = ClusterPartition.single(ms.n)
    else:
        if not np.any(a != 0):
            raise ValidationError("a = 0: hyperbolic-parabolic motions need a ∈ Δ with a ≠ 0")
        if collision_distance(ms, a) > cluster_tol:
            raise ValidationError("a ∉ Δ: hyperbolic-parabolic motions need a collision configuration a ∈ Δ (some equal rows)")
        part = cluster_from_velocity(a, cluster_tol)

    b_given = None if b is None else as_config(ms, b)
    results = {}
    for block in part.nontrivial():
        sub = ms.sub(block)
        if b_given is not None:
            bk = project_com(sub, b_given[list(block)])
            norm2 = mass_inner(sub, bk, bk)
            if abs(norm2 - 1.0) > 1e-8:
                raise ValidationError(f"central configuration of block {block} is not normalized (<Mb,b>={norm2})")
            if kkt_residual(sub, bk) > 1e-6:
                raise ValidationError(f"b on block {block} is not a central configuration")
            u = u_value(sub, bk)
            results[block] = CentralConfigResult(bk, u, beta_from_umin(u), kkt_residual(sub, bk))
        else:
            results[block] = find_minimal_central(sub, None, cc_opts)
    if kind == PARABOLIC and b_given is None:
        results = {part.blocks[0]: find_minimal_central(ms, None, cc_opts)}
    bfull, cfull, betas = embed_clusters(ms, results)
    return ScenarioSpec(kind, ms, _freeze(a), _freeze(x0), _freeze(bfull), _freeze(cfull), part, betas)


def hyperbolic(ms, a, x0) -> ScenarioSpec:
    return make_scenario(HYPERBOLIC, ms, a=a, x0=x0)


def parabolic(ms, x0=None, b=None, cc_opts=None) -> ScenarioSpec:
    return make_scenario(PARABOLIC, ms, x0=x0, b=b, cc_opts=cc_opts)


def hyperbolic_parabolic(ms, a, x0=None, b=None, cc_opts=None) -> ScenarioSpec:
    return make_scenario(HYPERBOLIC_PARABOLIC, ms, a=a, x0=x0, b=b, cc_opts=cc_opts)


@dataclass(frozen=True)
class RefPathSample:
    r0: np.ndarray
    r0_dot: np.ndarray
    r0_ddot: np.ndarray


def ref_arrays(spec: ScenarioSpec, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized ``(r0, r0', r0'')`` on an array of times, each ``(n_t, N, d)``."""
    t = np.asarray(t, dtype=float).reshape(-1)
    if t.size and t.min() < 1.0 - spec.eps_back - 1e-15:
        raise RangeError(f"t={t.min()} below the backward extension window 1-{spec.eps_back}")
    a, c = spec.a[None], spec.c[None]
    tt = t[:, None, None]
    t23 = np.cbrt(tt) ** 2
    r0 = a * tt + c * t23
    r0d = a + (2.0 / 3.0) * c / np.cbrt(tt)
    r0dd = (-2.0 / 9.0) * c / (tt * np.cbrt(tt))
    return r0, r0d, r0dd


def sample_ref(spec: ScenarioSpec, t: float) -> RefPathSample:
    r0, r0d, r0dd = ref_arrays(spec, [t])
    return RefPathSample(r0[0].reshape(-1), r0d[0].reshape(-1), r0dd[0].reshape(-1))


def asymptotic_energy(spec: ScenarioSpec) -> float:
    """``h = <Ma, a>/2``, the energy level of the motions (zero when parabolic)."""
    return 0.5 * mass_inner(spec.ms, spec.a, spec.a)
