import math

import numpy as np
import pytest

from artifact.energy import (
    EnergyOperator,
    MorreySpec,
    energy_Q,
    forward_diff,
    forward_diff_T,
    lq_shell_mass,
    morrey_norm,
    morrey_profile,
    residual_field,
    residual_Qprime,
    simplified_energy_bracket,
)
from artifact.grid import GridDomain, GridFunction
from artifact.norms import ExponentPair, NormFamily
from artifact.oracles import power_shell_mass
from artifact.problems import BRACKET_EXPONENTS, bracket_catalogue


def sin_field(N, n=2):
    dom = GridDomain.box(n, N)
    return GridFunction.from_callable(dom, lambda x: np.prod(np.sin(np.pi * x), axis=-1))


def test_zero_field():
    dom = GridDomain.box(2, 8)
    assert energy_Q(GridFunction.zeros(dom), NormFamily.euclidean(2), ExponentPair(3.0), 1.0) == 0.0


def test_sin_dirichlet_integral():
    Q = energy_Q(sin_field(128), NormFamily.euclidean(2), ExponentPair(2.0))
    assert abs(Q / (math.pi**2 / 2) - 1) < 0.02


def test_convergence_order():
    errs = [abs(energy_Q(sin_field(N), NormFamily.euclidean(2), ExponentPair(2.0)) - math.pi**2 / 2)
            for N in (32, 64, 128)]
    orders = [math.log2(errs[k] / errs[k + 1]) for k in range(2)]
    assert min(orders) >= 0.9


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_homogeneity(p):
    fam = NormFamily.weighted_s(3.0, [1.0, 2.0])
    ep = ExponentPair(p, 3.0)
    f = sin_field(16)
    V = GridFunction.constant(f.domain, 0.7)
    for lam in (2.0, -0.3, 5.0):
        np.testing.assert_allclose(energy_Q(lam * f, fam, ep, V), abs(lam) ** p * energy_Q(f, fam, ep, V), rtol=1e-13)


def test_potential_term_is_volume():
    dom = GridDomain.box(2, 20)
    one = GridFunction.constant(dom, 1.0)
    fam, ep = NormFamily.euclidean(2), ExponentPair(2.0)
    diff = energy_Q(one, fam, ep, GridFunction.constant(dom, 1.0)) - energy_Q(one, fam, ep)
    assert diff == pytest.approx(dom.cell_volume * dom.mask.sum(), rel=1e-14)
    assert diff == pytest.approx(1.0, abs=0.1)


def test_adjoint():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((6, 7, 5))
    w = rng.standard_normal((6, 7, 5, 3))
    assert np.sum(forward_diff(v, 0.3) * w) == pytest.approx(np.sum(v * forward_diff_T(w, 0.3)), rel=1e-12)


@pytest.mark.parametrize("fam,ep", [
    (NormFamily.weighted_s(1.5, [1.0, 2.0]), ExponentPair(3.0, 1.5)),
    (NormFamily.weighted_s(3.0, [0.5, 1.0]), ExponentPair(2.0, 3.0)),
    (NormFamily.matrix([[2.0, 0.5], [0.5, 1.0]]), ExponentPair(2.5)),
    (NormFamily.combined(4.0, [1.0, 1.0], np.eye(2)), ExponentPair(3.0, 4.0)),
])
def test_operator_matches_Q_and_residual(fam, ep):
    dom = GridDomain.box(2, 12)
    rng = np.random.default_rng(1)
    f = GridFunction(dom, np.where(dom.mask, rng.standard_normal(dom.shape), 0.0))
    V = GridFunction(dom, rng.uniform(0, 2, dom.shape))
    op = EnergyOperator(dom, fam, ep, V)
    val, grad = op.value_and_grad(f.values)
    assert val == pytest.approx(energy_Q(f, fam, ep, V), rel=1e-12)
    np.testing.assert_allclose(grad, ep.p * residual_field(f, fam, ep, V), rtol=1e-10, atol=1e-12)
    d = np.where(dom.mask, rng.standard_normal(dom.shape), 0.0)
    t = 1e-6
    fd = (op.value(f.values + t * d) - op.value(f.values - t * d)) / (2 * t)
    assert fd == pytest.approx(np.sum(grad * d), rel=1e-6)
    test = GridFunction(dom, d)
    assert residual_Qprime(f, fam, ep, V, test) == pytest.approx(np.sum(residual_field(f, fam, ep, V) * d), rel=1e-10)


def test_residual_examples():
    dom = GridDomain.box(2, 16)
    fam = NormFamily.weighted_s(3.0, [1.0, 2.0])
    ep = ExponentPair(3.0, 3.0)
    hat = np.zeros(dom.shape)
    hat[8, 8] = 4.0
    test = GridFunction(dom, hat)
    assert residual_Qprime(GridFunction.zeros(dom), fam, ep, 0.0, test) == 0.0
    one = GridFunction.constant(dom, 1.0)
    mass = dom.cell_volume * 4.0
    assert residual_Qprime(one, fam, ep, GridFunction.constant(dom, 1.0), test) == pytest.approx(mass, rel=1e-14)
    aff = GridFunction.from_callable(dom, lambda x: 1.0 + 2.0 * x[..., 0] - x[..., 1])
    r = residual_field(aff, fam, ep)
    scale = np.max(np.abs(r))
    assert np.max(np.abs(r[2:-2, 2:-2])) <= 1e-8 * scale
    with pytest.raises(ValueError):
        residual_Qprime(one, fam, ep, None, GridFunction.constant(dom, 1.0, masked=False))


# -- simplified energies ---------------------------------------------------------


def bump(dom, c=(0.5, 0.5), rho=0.3):
    return GridFunction.from_callable(dom, lambda x: np.clip(1 - np.sum((x - np.asarray(c)) ** 2, -1) / rho**2, 0, None) ** 3)


def test_bracket_hilbert_collapses():
    dom = GridDomain.box(2, 32)
    psi = bump(dom)
    u = GridFunction.constant(dom, 1.0, masked=False)
    fam, ep = NormFamily.euclidean(2), ExponentPair(2.0)
    b = simplified_energy_bracket(u, psi, fam, ep, slack=1.0)
    Q = energy_Q(psi, fam, ep)
    assert b.lower == pytest.approx(Q, rel=1e-12) and b.upper == pytest.approx(Q, rel=1e-12)
    assert b.Q_value == pytest.approx(Q, rel=1e-14)


def test_bracket_zero_psi_and_errors():
    dom = GridDomain.box(2, 16)
    fam, ep = NormFamily.weighted_s(3.0, [1.0, 1.0]), ExponentPair(3.0, 3.0)
    u = GridFunction.constant(dom, 2.0, masked=False)
    b = simplified_energy_bracket(u, GridFunction.zeros(dom), fam, ep)
    assert (b.lower, b.upper, b.Q_value) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        simplified_energy_bracket(GridFunction.constant(dom, 0.0, masked=False), bump(dom), fam, ep)
    with pytest.raises(ValueError):
        simplified_energy_bracket(u, bump(dom), NormFamily.matrix(np.eye(2)), ExponentPair(3.0))


def test_picone_sum_tracks_Q():
    # for affine u the Bregman sum with xi = psi Du, eta = u(x + h e_i) D psi equals Q[u psi] up to O(h)
    dom = GridDomain.box(2, 32)
    psi = bump(dom)
    u = GridFunction.from_callable(dom, lambda x: 2.0 + x[..., 0] - 0.5 * x[..., 1], masked=False)
    for p, s in [(3.0, 3.0), (2.0, 4.0), (4.0, 1.5)]:
        fam = NormFamily.weighted_s(s, [1.0, 2.0])
        b = simplified_energy_bracket(u, psi, fam, ExponentPair(p, s))
        ep = ExponentPair(p, s)
        assert b.picone_sum == pytest.approx(b.Q_value, rel=1e-2)
        assert b.Q_value == pytest.approx(energy_Q(u * psi, fam, ep), rel=1e-14)


@pytest.mark.parametrize("regime", sorted(BRACKET_EXPONENTS))
def test_bracket_catalogue_inside(regime):
    for u, psi, fam, ep in bracket_catalogue(regime, 32):
        b = simplified_energy_bracket(u, psi, fam, ep)
        assert b.inside, (regime, ep, b)
        assert b.regime == regime


# -- Morrey ------------------------------------------------------------------------


def test_morrey_zero_and_validation():
    dom = GridDomain.cells(2, 16)
    assert morrey_norm(GridFunction.zeros(dom), MorreySpec(1.5, 2.0)) == 0.0
    for bad in (MorreySpec(1.5, 1.2), MorreySpec(2.0, 2.0), MorreySpec(3.0, 2.0),
                MorreySpec(1.5, 2.0, "enhanced_tilde"), MorreySpec(2.0, 3.0, "enhanced_tilde"),
                MorreySpec(1.5, 3.0, "weird"), MorreySpec(1.0, 3.0)):
        with pytest.raises(ValueError):
            bad.validate(2)
    MorreySpec(2.0, 3.0, "enhanced_tilde", theta=1.5).validate(2)
    MorreySpec(3.0, 1.0, "enhanced_hat", vartheta=2.5).validate(2)


def test_morrey_constant_bruteforce():
    dom = GridDomain.cells(2, 16)
    one = GridFunction.constant(dom, 1.0)
    spec = MorreySpec(1.5, 2.0)
    prof = morrey_profile(one, spec, center_stride=1, radii_per_octave=4)
    pts = dom.points()[dom.mask]
    r0 = 2 * dom.h
    best = 0.0
    for c in pts:
        dist = np.linalg.norm(pts - c, axis=1)
        for j in range(prof["radii"]):
            r = r0 * 2 ** (j / 4)
            best = max(best, r ** (-2 * 0.5) * dom.cell_volume * np.count_nonzero(dist < r))
    assert prof["value"] == pytest.approx(best, rel=1e-13)


def test_morrey_monotone_under_refinement():
    dom = GridDomain.cells(2, 32, -1.0, 1.0)
    f = GridFunction.from_callable(dom, lambda x: np.exp(-4 * np.sum((x - 0.3) ** 2, -1)))
    spec = MorreySpec(1.5, 2.0)
    coarse = morrey_norm(f, spec, center_stride=4, radii_per_octave=2)
    fine = morrey_norm(f, spec, center_stride=2, radii_per_octave=4)
    assert fine >= coarse


def test_morrey_l1_branch():
    dom = GridDomain.cells(2, 8)
    f = GridFunction.constant(dom, 2.0)
    assert morrey_norm(f, MorreySpec(3.0, 1.0)) == pytest.approx(2.0, rel=1e-14)


def test_shell_mass_quadrature():
    for q, alpha in [(2.0, 1.0), (3.0, 2.0 / 3.0), (2.0, 0.5)]:
        got = lq_shell_mass(lambda t: t ** (-alpha), q, 2, 1e-3, 1.0)
        assert got == pytest.approx(power_shell_mass(2, q, alpha, 1e-3, 1.0), rel=1e-9)
