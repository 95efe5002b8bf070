from dataclasses import replace

import numpy as np

from nbodyhj.mesh import d_distance
from nbodyhj.minimize import MinimizeOptions, detect_multiplicity, minimize_action
from nbodyhj.reference import make_scenario
from nbodyhj.trajectory import shoot_newton, solve_trajectory


def test_parabolic_homothetic(parabolic_spec):
    res = minimize_action(parabolic_spec, MinimizeOptions(restarts=2))
    assert abs(res.action_value) <= 1e-8
    assert np.max(np.abs(res.phi_star.values)) <= 1e-8


def test_hyperbolic_matches_shooting(two_body):
    a = np.array([[1.0, 0.0], [-1.0, 0.0]])
    spec = make_scenario("hyperbolic", two_body, a=a, x0=a)
    traj, _ = solve_trajectory(spec, MinimizeOptions(T0=1e4, K=512))
    ts = np.array([2.0, 5.0, 10.0])
    ref = shoot_newton(two_body, spec.x0, traj.velocities[0], (1.0, 10.0), rtol=1e-12, t_eval=ts)
    for k, t in enumerate(ts):
        i = np.argmin(np.abs(traj.times - t))
        got = traj.positions[i]
        exp = shoot_newton(two_body, spec.x0, traj.velocities[0], (1.0, traj.times[i]), rtol=1e-12).positions[-1]
        assert np.linalg.norm(got - exp) <= 1e-5 * np.linalg.norm(exp)
    assert ref.positions.shape[0] == 3


def test_restart_independence(hyperbolic_spec):
    res = minimize_action(hyperbolic_spec, MinimizeOptions(restarts=8, sigma=0.2))
    assert np.ptp(res.restart_values) <= 1e-9
    assert res.k == 1 and len(res.distinct_minimizers) == 1
    assert len(res.distinct_minimizers[0].members) == 8


def test_mirror_symmetric_point_has_two_minimizers(two_body):
    a = np.array([[1.0, 0.0], [-1.0, 0.0]])
    x = np.array([[-0.75, 0.0], [0.75, 0.0]])
    spec = make_scenario("hyperbolic", two_body, a=a, x0=x)
    rep = detect_multiplicity(spec, MinimizeOptions(restarts=4, sigma=0.5))
    assert rep.k == 2
    assert abs(rep.action_values[0] - rep.action_values[1]) <= 1e-7
    v0, v1 = rep.initial_velocities
    # mirrored across the x axis
    np.testing.assert_allclose(v0.reshape(2, 2) * [1, -1], v1.reshape(2, 2), atol=1e-6)
    assert sum(rep.cluster_sizes) == 4


def test_regular_point_k1(hp_spec):
    rep = detect_multiplicity(hp_spec)
    assert rep.k == 1
    assert sum(rep.cluster_sizes) == 2


def test_horizon_continuation(parabolic_spec):
    spec = parabolic_spec.with_x(parabolic_spec.x0 * 1.1)
    res = minimize_action(spec, MinimizeOptions(T0=1e3, max_doublings=3, tol_horizon=0.0))
    Ts = [h[0] for h in res.horizon_history]
    assert Ts == [1e3, 2e3, 4e3, 8e3]
    assert res.grad_norm <= 1e-8


def test_seed_determinism(hyperbolic_spec):
    o = MinimizeOptions(restarts=3, sigma=0.2, seed=11)
    r1 = minimize_action(hyperbolic_spec, replace(o, threads=1))
    r2 = minimize_action(hyperbolic_spec, replace(o, threads=3))
    assert r1.restart_values == r2.restart_values
    assert d_distance(hyperbolic_spec.ms, r1.phi_star, r2.phi_star) == 0.0
