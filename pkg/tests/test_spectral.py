import numpy as np
import pytest
from scipy.special import jn_zeros

from nbodyhj.core import MassSystem
from nbodyhj.minimize import minimize_action
from nbodyhj.spectral import (
    PathHessian, ScaledMassHessian, SpectralOptions, ZeroHessian, conjugate_scan, lambda_profile, rayleigh_quotient,
    smallest_eigs,
)

J11 = float(jn_zeros(1, 1)[0])


def test_free_case_positive_and_oracle(two_body):
    res = smallest_eigs(two_body, ZeroHessian(two_body), 1.0)
    assert res.lambda1 > 0
    # free quotient on [1, inf): j11^2 / 4, twice (one per relative coordinate)
    assert res.lambda1 == pytest.approx(J11**2 / 4, rel=1e-3)
    assert res.eigenvalues[1] == pytest.approx(res.eigenvalues[0], rel=1e-8)
    assert res.orth_residual <= 1e-8
    assert res.rayleigh_residual <= 1e-8


def test_mesh_convergence_second_order(two_body):
    errs = []
    for pd in (12, 24, 48):
        lam = smallest_eigs(two_body, ZeroHessian(two_body), 1.0, SpectralOptions(per_doubling=pd)).lambda1
        errs.append(abs(lam - J11**2 / 4))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_rayleigh_consistency(two_body):
    src = ScaledMassHessian(two_body, 1.0)
    res = smallest_eigs(two_body, src, 1.5)
    for lam, psi in zip(res.eigenvalues, res.eigenfields):
        assert abs(rayleigh_quotient(two_body, src, psi) - lam) <= 1e-8 * max(1.0, abs(lam))


def test_parabolic_coercive(parabolic_spec):
    res = minimize_action(parabolic_spec)
    src = PathHessian(parabolic_spec, res.phi_star)
    assert smallest_eigs(parabolic_spec, src, 100.0).lambda1 > 0.1
    rep = conjugate_scan(parabolic_spec, src)
    assert not rep.conjugate and rep.lambda1_at_1 > 0


def test_hyperbolic_profile_monotone(hyperbolic_spec):
    res = minimize_action(hyperbolic_spec)
    src = PathHessian(hyperbolic_spec, res.phi_star)
    prof = lambda_profile(hyperbolic_spec, src, [1.0, 2.0, 4.0, 8.0])
    assert prof.violations == []
    assert np.all(np.diff(prof.lambda1) > 1e-6)
    single = lambda_profile(hyperbolic_spec, src, [2.0])
    assert single.lambda1[0] == pytest.approx(smallest_eigs(hyperbolic_spec, src, 2.0).lambda1, rel=1e-14)


def test_separable_oracle_root(two_body):
    kappa = 2.0 * J11**2 / 4
    rep = conjugate_scan(two_body, ScaledMassHessian(two_body, kappa), SpectralOptions(per_doubling=96),
                         t_lo=1.0, t_hi=4.0)
    assert rep.conjugate
    assert rep.t_star == pytest.approx(4 * kappa / J11**2, abs=1e-4)
    # the free problem is degenerate in the two relative directions
    assert rep.kernel_dim == 2


def test_simple_root_in_one_dimension():
    ms = MassSystem([1.0, 1.0], 2)

    class Anisotropic(ScaledMassHessian):
        # extra stiffness in the y directions only
        def blocks(self, t):
            B = super().blocks(t)
            B[:, 1::2, 1::2] += np.diag(self.ms.mvec[1::2])[None] / np.asarray(t).reshape(-1, 1, 1) ** 3
            return B

    kappa = 2.0 * J11**2 / 4
    rep = conjugate_scan(ms, Anisotropic(ms, kappa), SpectralOptions(per_doubling=48), t_lo=1.0, t_hi=4.0)
    assert rep.conjugate and rep.kernel_dim == 1


def test_profile_csv(tmp_path, hyperbolic_spec):
    res = minimize_action(hyperbolic_spec)
    prof = lambda_profile(hyperbolic_spec, PathHessian(hyperbolic_spec, res.phi_star), [1.0, 3.0])
    prof.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].startswith("t,lambda1") and len(lines) == 3
