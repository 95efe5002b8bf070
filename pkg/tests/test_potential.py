import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nbodyhj.core import ClusterPartition, MassSystem
from nbodyhj.errors import CollisionError
from nbodyhj.potential import u_clustered, u_gradient, u_hessian, u_hessian_apply, u_value


def _random(seed, n=4, d=2):
    rng = np.random.default_rng(seed)
    return MassSystem(rng.uniform(0.5, 2.0, n), d), rng.standard_normal((n, d)) * 2.0


def test_u_value_examples():
    ms = MassSystem([1.0, 1.0], 2)
    assert u_value(ms, [[1, 0], [-1, 0]]) == 0.5
    s = np.sqrt(2.0) / 2
    assert u_value(ms, [[s, 0], [-s, 0]]) == pytest.approx(1 / np.sqrt(2.0), rel=1e-14)


def test_u_gradient_example():
    ms = MassSystem([1.0, 1.0], 2)
    g = u_gradient(ms, [[1, 0], [-1, 0]])
    np.testing.assert_allclose(g[:2], [-0.25, 0.0], atol=1e-15)


def test_collision_raises():
    ms = MassSystem([1.0, 1.0], 2)
    with pytest.raises(CollisionError):
        u_value(ms, [[1, 0], [1, 0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.2, 5.0))
def test_homogeneity_and_invariance(seed, lam):
    ms, x = _random(seed)
    u, g = u_value(ms, x), u_gradient(ms, x)
    assert u_value(ms, lam * x) == pytest.approx(u / lam, rel=1e-12)
    # Euler identity for degree -1
    assert float(g @ x.reshape(-1)) == pytest.approx(-u, rel=1e-10)
    np.testing.assert_allclose(g.reshape(ms.n, ms.d).sum(axis=0), 0.0, atol=1e-10 * np.abs(g).max())
    np.testing.assert_allclose(u_hessian_apply(ms, x, x), -2.0 * g, rtol=1e-10, atol=1e-12)


def test_hessian_symmetry_and_fd():
    ms, x = _random(3, n=5, d=3)
    rng = np.random.default_rng(4)
    psi, eta = rng.standard_normal((2, ms.n, ms.d))
    a = float(u_hessian_apply(ms, x, psi) @ eta.reshape(-1))
    b = float(u_hessian_apply(ms, x, eta) @ psi.reshape(-1))
    assert abs(a - b) <= 1e-10 * max(abs(a), 1.0)
    H = u_hessian(ms, x)
    np.testing.assert_allclose(H, H.T, atol=1e-12)
    np.testing.assert_allclose(H @ psi.reshape(-1), u_hessian_apply(ms, x, psi), rtol=1e-12, atol=1e-12)
    h = 1e-5
    fd = (u_gradient(ms, x + h * psi) - u_gradient(ms, x - h * psi)) / (2 * h)
    hv = u_hessian_apply(ms, x, psi)
    assert np.linalg.norm(fd - hv) <= 1e-6 * np.linalg.norm(hv)


def test_u_clustered():
    ms, x = _random(5, n=3)
    assert u_clustered(ms, ClusterPartition.singletons(3), x) == 0.0
    assert u_clustered(ms, ClusterPartition.single(3), x) == pytest.approx(u_value(ms, x), rel=1e-14)
    m = ms.masses
    direct = m[0] * m[1] / np.linalg.norm(x[0] - x[1])
    assert u_clustered(ms, ClusterPartition(((0, 1), (2,))), x) == pytest.approx(direct, rel=1e-14)
