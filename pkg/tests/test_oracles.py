import math

import numpy as np
import pytest
from scipy import integrate

from artifact import oracles
from artifact.problems import (
    BRACKET_EXPONENTS,
    bracket_catalogue,
    condenser,
    mazya_instance,
    morrey_instance,
    punctured_ball_hardy,
    superlevel_compacts,
)


def test_closed_forms():
    assert oracles.sphere_area(2) == pytest.approx(2 * math.pi)
    assert oracles.sphere_area(3) == pytest.approx(4 * math.pi)
    assert oracles.dirichlet_eigenvalue_cube(2) == pytest.approx(2 * math.pi**2)
    assert oracles.discrete_dirichlet_eigenvalue_cube(2, 10**6) == pytest.approx(2 * math.pi**2, rel=1e-10)
    assert oracles.classical_hardy_constant(3, 2) == 0.25
    assert oracles.euclidean_modulus_of_convexity(1.0) == pytest.approx(1 - math.sqrt(3) / 2)


def test_condenser_closed_forms():
    assert oracles.condenser_capacity(2, 2.0, 0.25, 1.0) == pytest.approx(2 * math.pi / math.log(4), rel=1e-15)
    assert oracles.condenser_capacity(3, 2.0, 0.5, 1.0) == pytest.approx(4 * math.pi / (1 / 0.5 - 1), rel=1e-14)
    # n = 2, p = 3 against the radial energy of the explicit profile
    r, R, p = 0.25, 1.0, 3.0
    e = (p - 2) / (p - 1)
    prof = lambda t: (R**e - t**e) / (R**e - r**e)
    dprof = lambda t: e * t ** (e - 1) / (R**e - r**e)
    val = 2 * math.pi * integrate.quad(lambda t: abs(dprof(t)) ** p * t, r, R, epsrel=1e-13)[0]
    assert prof(r) == pytest.approx(1.0) and prof(R) == 0.0
    assert oracles.condenser_capacity(2, p, r, R) == pytest.approx(val, rel=1e-10)


def test_radial_shooting():
    # planar annulus against the Bessel cross-product root, computed independently
    from scipy import optimize, special

    a, b = 0.5, 1.0
    f = lambda k: special.jv(0, k * a) * special.yv(0, k * b) - special.jv(0, k * b) * special.yv(0, k * a)
    k = optimize.brentq(f, 1.0, 2 * math.pi / (b - a) * 0.75)
    assert oracles.annulus_eigenvalue(a, b) == pytest.approx(k * k, rel=1e-8)
    # n = 3 with weight r^-2 reduces to the truncated Hardy closed form
    lam = oracles.radial_dirichlet_eigenvalue(3, 0.01, 1.0, weight=lambda r: r**-2)
    assert lam == pytest.approx(oracles.truncated_hardy_eigenvalue(0.01), rel=1e-8)
    with pytest.raises(ValueError):
        oracles.radial_dirichlet_eigenvalue(2, 1.0, 0.5)


def test_truncated_hardy_limit():
    vals = [oracles.truncated_hardy_eigenvalue(10.0**-k) for k in (2, 4, 8)]
    assert vals[0] > vals[1] > vals[2] > 0.25
    assert oracles.truncated_hardy_eigenvalue(1e-300) == pytest.approx(0.25, abs=0.002)


def test_morrey_power_ball():
    n, q = 2, 2.0
    for r in (0.1, 0.5):
        mass = oracles.power_shell_mass(n, 1.0, n / q, 1e-300, r)  # int_{B_r} |x|^(-n/q)
        assert r ** (-n * (q - 1) / q) * mass == pytest.approx(oracles.morrey_power_ball_value(n, q), rel=1e-12)
    assert oracles.power_shell_mass(2, 2.0, 1.0, 0.1, 1.0) == pytest.approx(2 * math.pi * math.log(10))


# -- problem builders ------------------------------------------------------------


def test_punctured_ball():
    prob = punctured_ball_hardy(6, n=3, levels=2)
    r = prob.grid.radius()
    assert not prob.grid.mask[r == 0].any()
    np.testing.assert_allclose(prob.g.values[prob.grid.mask], r[prob.grid.mask] ** -2.0)


def test_condenser_builder():
    prob = condenser(16)
    r = prob.grid.radius()
    assert np.all(r[prob.K] <= 0.25) and prob.K.sum() == np.count_nonzero((r <= 0.25) & prob.grid.mask)
    nested = condenser(16, R=0.6, grid_R=1.0)
    assert nested.grid.shape == prob.grid.shape and nested.grid.mask.sum() < prob.grid.mask.sum()


def test_mazya_instance_deterministic():
    p1, u1, K1 = mazya_instance(3, 16)
    p2, u2, K2 = mazya_instance(3, 16)
    np.testing.assert_array_equal(p1.g.values, p2.g.values)
    np.testing.assert_array_equal(u1.values, u2.values)
    assert len(K1) == 7 and all(np.array_equal(a, b) for a, b in zip(K1, K2))
    assert all(np.all(K <= p1.grid.mask) for K in K1)
    assert np.all(u1.values > 0) and np.all(p1.g.values[p1.grid.mask] >= 0.05)


def test_superlevel_compacts():
    mask = np.zeros((5, 5), bool)
    mask[1:4, 1:4] = True
    f = np.arange(25.0).reshape(5, 5)
    out = superlevel_compacts(f, mask, (0.0, 0.9, 2.0))
    assert len(out) == 2 and out[0].sum() == 9 and out[1].sum() == 2


@pytest.mark.parametrize("regime", sorted(BRACKET_EXPONENTS))
def test_bracket_catalogue(regime):
    cat = bracket_catalogue(regime, 16)
    assert len(cat) == 5
    for u, psi, fam, ep in cat:
        assert np.all(u.values > 0) and np.all(psi.values >= 0) and psi.values.max() > 0
        assert fam.s == ep.s
        assert (ep.p == ep.s) == (regime == "p=s")


def test_morrey_instance():
    f, spec = morrey_instance(16)
    assert spec.p == 1.5 and spec.q == 2.0
    spec.validate(2)
    assert np.all(f.values[f.domain.mask] > 0)
