import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nbodyhj.core import (
    ClusterPartition, MassSystem, as_config, barycenter, cluster_from_velocity, collision_distance, has_zero_com,
    mass_inner, project_com,
)
from nbodyhj.errors import ShapeError, ValidationError


def test_mass_inner_examples():
    ms = MassSystem([1.0, 1.0], 2)
    x = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert mass_inner(ms, x, x) == 2.0
    assert mass_inner(ms, x, np.zeros_like(x)) == 0.0
    ms2 = MassSystem([2.0, 1.0], 2)
    y = np.array([[1.0, 0.0], [-2.0, 0.0]])
    assert mass_inner(ms2, y, y) == 6.0


def test_project_com_examples():
    ms = MassSystem([1.0, 1.0], 2)
    np.testing.assert_allclose(project_com(ms, [[1, 0], [1, 0]]), 0.0)
    np.testing.assert_allclose(project_com(ms, [[2, 0], [0, 0]]), [[1, 0], [-1, 0]])
    ms31 = MassSystem([3.0, 1.0], 2)
    np.testing.assert_allclose(project_com(ms31, [[0, 0], [4, 0]]), [[-1, 0], [3, 0]])


def test_collision_distance_examples():
    ms = MassSystem([1.0, 1.0], 2)
    assert collision_distance(ms, [[0.3, 0.2], [0.3, 0.2]]) == 0.0
    assert collision_distance(ms, [[1, 0], [-1, 0]]) == pytest.approx(np.sqrt(2.0), rel=1e-14)
    ms3 = MassSystem([1.0, 2.0, 3.0], 2)
    assert collision_distance(ms3, [[1, 0], [1, 0], [-1, 0]]) == 0.0


def test_cluster_from_velocity_examples():
    a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0]])
    assert cluster_from_velocity(a).blocks == ((0,), (1,), (2,))
    assert cluster_from_velocity(np.zeros((3, 2))).blocks == ((0, 1, 2),)
    b = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert cluster_from_velocity(b).blocks == ((0, 1), (2,))


def test_cluster_tolerance_is_transitive():
    a = np.array([[0.0, 0.0], [0.1, 0.0], [0.2, 0.0], [5.0, 0.0]])
    assert cluster_from_velocity(a, tol=0.15).blocks == ((0, 1, 2), (3,))


def test_invalid_inputs():
    with pytest.raises(ValidationError):
        MassSystem([1.0], 2)
    with pytest.raises(ValidationError):
        MassSystem([1.0, -1.0], 2)
    with pytest.raises(ValidationError):
        MassSystem([1.0, 1.0], 1)
    with pytest.raises(ShapeError):
        as_config(MassSystem([1.0, 1.0], 2), np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        ClusterPartition(((0, 1), (1, 2)))


masses = arrays(np.float64, st.integers(2, 5), elements=st.floats(0.1, 10.0))


@settings(max_examples=50, deadline=None)
@given(masses, st.integers(0, 2**31 - 1))
def test_projection_properties(m, seed):
    ms = MassSystem(m, 3)
    raw = np.random.default_rng(seed).standard_normal((ms.n, 3))
    x = project_com(ms, raw)
    assert has_zero_com(ms, x, 1e-10 * (1 + np.abs(raw).max()))
    np.testing.assert_allclose(project_com(ms, x), x, atol=1e-12)
    np.testing.assert_allclose(x + barycenter(ms, raw), raw, atol=1e-12)
    # the distance to the collision set is invariant under translations
    shift = raw + np.array([1.0, -2.0, 0.5])
    assert collision_distance(ms, shift) == pytest.approx(collision_distance(ms, raw), rel=1e-12)
