import numpy as np
import pytest

from nbodyhj.errors import NearCollisionError, ValidationError
from nbodyhj.mesh import PathField
from nbodyhj.minimize import MinimizeOptions
from nbodyhj.reference import make_scenario
from nbodyhj.trajectory import (
    growth_diagnostics, hyperbolic_asymptotics, newton_residual, oracle_deviation, reconstruct, shoot_newton,
    solve_trajectory,
)


def test_parabolic_zero_field(parabolic_spec):
    spec = parabolic_spec
    mesh = MinimizeOptions().mesh()
    traj = reconstruct(spec, PathField.zeros(mesh, spec.ms))
    c = spec.beta * spec.b
    t = traj.times
    np.testing.assert_allclose(traj.positions, c[None] * np.cbrt(t)[:, None, None] ** 2, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(traj.velocities[0], 2 / 3 * c, atol=1e-8)
    assert np.max(np.abs(traj.energy_samples)) <= 1e-8


def test_hyperbolic_energy_and_oracle(hyperbolic_spec):
    traj, res = solve_trajectory(hyperbolic_spec, MinimizeOptions(T0=1e4, K=512))
    assert np.max(np.abs(traj.energy_samples[1:-1] - 1.0)) <= 1e-6
    assert oracle_deviation(traj, t_max=1e3) <= 1e-4
    assert set(growth_diagnostics(traj).bins.values()) == {"1"}


def test_newton_residual_decays_with_refinement(hyperbolic_spec):
    res = []
    for K in (128, 256, 512):
        traj, _ = solve_trajectory(hyperbolic_spec, MinimizeOptions(T0=1e3, K=K), richardson=False)
        sel = traj.times <= 10.0
        res.append(np.max(newton_residual(traj)[sel[1:-1]]))
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(rates > 1.5)


def test_circular_orbit_period(two_body):
    # relative radius 1, total mass 2: period 2 pi sqrt(r^3 / (G M)) = 2 pi / sqrt(2)
    x = np.array([[0.5, 0.0], [-0.5, 0.0]])
    v = np.array([[0.0, np.sqrt(0.5)], [0.0, -np.sqrt(0.5)]])
    period = 2 * np.pi / np.sqrt(2.0)
    tr = shoot_newton(two_body, x, v, (0.0, period), rtol=1e-12)
    np.testing.assert_allclose(tr.positions[-1], x, atol=1e-6)


def test_homothetic_launch(parabolic_spec):
    c = parabolic_spec.beta * parabolic_spec.b
    tr = shoot_newton(parabolic_spec.ms, c, 2 / 3 * c, (1.0, 10.0), rtol=1e-12)
    np.testing.assert_allclose(tr.positions[-1], c * 10 ** (2 / 3), rtol=1e-7)


def test_zero_velocity_drop_collides(two_body):
    x = np.array([[0.5, 0.0], [-0.5, 0.0]])
    with pytest.raises(NearCollisionError):
        shoot_newton(two_body, x, np.zeros_like(x), (0.0, 10.0))


def test_log_correction(two_body):
    a = np.array([[1.0, 0.0], [-1.0, 0.0]])
    x0 = np.array([[0.5, 0.5], [-0.5, -0.5]])
    fits = []
    for scale in (1.0, 2.0):
        spec = make_scenario("hyperbolic", two_body, a=scale * a, x0=x0)
        traj, _ = solve_trajectory(spec, MinimizeOptions(T0=1e4, K=512), richardson=False)
        fit = hyperbolic_asymptotics(traj, spec)
        assert fit.rel_error <= 0.05 and fit.cosine < -0.99
        fits.append(fit.w_hat)
    # grad U is homogeneous of degree -2
    ratio = np.linalg.norm(fits[1]) / np.linalg.norm(fits[0])
    assert ratio == pytest.approx(0.25, rel=0.05)


def test_log_fit_residual_bounded(hyperbolic_spec):
    resid = []
    for T in (1e4, 2e4):
        traj, _ = solve_trajectory(hyperbolic_spec, MinimizeOptions(T0=T, per_doubling=24), richardson=False)
        resid.append(hyperbolic_asymptotics(traj, hyperbolic_spec).residual)
    assert resid[1] <= 2.0 * resid[0] + 1e-6


def test_log_fit_rejects_parabolic(parabolic_spec):
    traj, _ = solve_trajectory(parabolic_spec, MinimizeOptions(), richardson=False)
    with pytest.raises(ValidationError):
        hyperbolic_asymptotics(traj, parabolic_spec)


def test_growth_classes(parabolic_spec, hp_spec):
    traj, _ = solve_trajectory(parabolic_spec, MinimizeOptions(T0=1e5), richardson=False)
    assert set(growth_diagnostics(traj).bins.values()) == {"2/3"}
    traj, _ = solve_trajectory(hp_spec, MinimizeOptions(T0=1e5), richardson=False)
    g = growth_diagnostics(traj).bins
    assert g[(0, 1)] == "2/3"
    assert g[(0, 2)] == "1" and g[(1, 2)] == "1"


def test_csv_export(tmp_path, hyperbolic_spec):
    traj, _ = solve_trajectory(hyperbolic_spec, MinimizeOptions(T0=1e2, per_doubling=8), richardson=False)
    p = tmp_path / "traj.csv"
    traj.to_csv(p)
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    assert data.shape == (traj.times.size, 1 + 2 * 4 + 1)
    np.testing.assert_array_equal(data[:, 0], traj.times)
