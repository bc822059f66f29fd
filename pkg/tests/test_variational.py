import math

import numpy as np
import pytest

from artifact.energy import energy_Q
from artifact.grid import GridDomain, GridFunction
from artifact.norms import ExponentPair, NormFamily
from artifact.oracles import annulus_eigenvalue, discrete_dirichlet_eigenvalue_cube
from artifact.problems import ball_domain, condenser, unit_square_hardy
from artifact.variational import (
    CapacityProblem,
    HardyProblem,
    SolverConfig,
    attainment_check,
    capacity,
    coarsen,
    hardy_constant,
    hardy_tail_constant,
    mazya_ratio,
    prolong,
    rayleigh_quotient,
)

CFG = SolverConfig(tol=1e-10, restarts=1)


@pytest.fixture(scope="module")
def square16():
    prob = unit_square_hardy(16)
    return prob, hardy_constant(prob, CFG)


def test_square_matches_discrete_eigenvalue(square16):
    prob, res = square16
    assert res.converged and res.status == "ok"
    assert res.value == pytest.approx(discrete_dirichlet_eigenvalue_cube(2, 16), rel=1e-8)
    phi = res.minimizer
    G = prob.grid.cell_volume * math.fsum((np.abs(prob.g.values) * phi.masked() ** 2)[prob.grid.mask])
    assert G == pytest.approx(1.0, abs=1e-10)
    assert rayleigh_quotient(prob, phi) == pytest.approx(res.value, rel=1e-12)
    assert rayleigh_quotient(prob, 3.0 * phi.values) == pytest.approx(res.value, rel=1e-12)
    assert res.history and res.history[-1] == pytest.approx(res.value, rel=1e-12)


def test_weight_and_potential_identities(square16):
    prob, res = square16
    dom = prob.grid
    half = hardy_constant(HardyProblem(dom, prob.fam, prob.ep, GridFunction.constant(dom, 2.0)), CFG)
    assert half.value == pytest.approx(res.value / 2, rel=1e-8)
    shifted = hardy_constant(HardyProblem(dom, prob.fam, prob.ep, prob.g, GridFunction.constant(dom, 3.0)), CFG)
    assert shifted.value == pytest.approx(res.value + 3.0, rel=1e-8)


def test_degenerate_weight():
    dom = GridDomain.box(2, 8)
    with pytest.raises(ValueError):
        HardyProblem(dom, NormFamily.euclidean(2), ExponentPair(2.0), GridFunction.zeros(dom))
    # g nonzero only off the mask: no admissible phi
    prob = HardyProblem(dom, NormFamily.euclidean(2), ExponentPair(2.0),
                        GridFunction.constant(dom, 1.0, masked=False).values * ~dom.mask)
    res = hardy_constant(prob)
    assert res.infeasible and math.isinf(res.value)


def test_multilevel_agrees():
    prob = unit_square_hardy(32)
    one = hardy_constant(prob, CFG)
    three = hardy_constant(prob, SolverConfig(tol=1e-10, restarts=1, levels=3))
    assert three.value == pytest.approx(one.value, rel=1e-7)
    assert [lv["h"] for lv in three.levels] == [0.125, 0.0625, 0.03125]


def test_nonlinear_hardy_positive():
    dom = GridDomain.box(2, 12)
    prob = HardyProblem(dom, NormFamily.weighted_s(3.0, [1.0, 2.0]), ExponentPair(3.0, 3.0), 1.0)
    res = hardy_constant(prob, CFG)
    assert res.converged and res.value > 0
    # the minimizer can only be matched or beaten by a perturbation
    rng = np.random.default_rng(0)
    pert = res.minimizer.values * (1 + 0.01 * rng.standard_normal(dom.shape))
    assert rayleigh_quotient(prob, pert) >= res.value * (1 - 1e-9)


def test_attainment(square16):
    prob, res = square16
    rep = attainment_check(prob, CFG, res)
    assert rep["sign_definite"] and rep["min"] > 0
    assert rep["residual_rel"] <= 1e-4
    assert rep["quotient_gap"] <= 1e-9 * res.value
    flipped = GridFunction(prob.grid, -res.minimizer.values)
    assert energy_Q(flipped, prob.fam, prob.ep, prob.V) == energy_Q(res.minimizer, prob.fam, prob.ep, prob.V)


# -- capacity ----------------------------------------------------------------------


def test_capacity_projection_and_scaling():
    cfg = SolverConfig(tol=1e-13, patience=50, restarts=1)
    base = capacity(condenser(32), cfg)
    prob = condenser(32)
    assert np.all(base.minimizer.values[prob.K] >= 1.0)
    assert base.value == pytest.approx(2 * math.pi / math.log(4), rel=0.1)
    for alpha in (0.5, 2.0, 3.0):
        v = capacity(condenser(32, alpha=alpha), cfg).value
        assert v == pytest.approx(alpha**2 * base.value, rel=2e-13)


def test_capacity_monotone():
    cfg = SolverConfig(tol=1e-10, restarts=1)
    inner = [capacity(condenser(32, r=r), cfg).value for r in (0.2, 0.3)]
    outer = [capacity(condenser(32, R=R, grid_R=1.0), cfg).value for R in (0.7, 1.0)]
    assert inner[0] < inner[1] and outer[0] > outer[1]


def test_capacity_validation():
    dom = GridDomain.box(2, 8)
    fam, ep = NormFamily.euclidean(2), ExponentPair(2.0)
    with pytest.raises(ValueError):
        CapacityProblem(dom, fam, ep, np.zeros(dom.shape, bool), 1.0)
    with pytest.raises(ValueError):
        CapacityProblem(dom, fam, ep, ~dom.mask, 1.0)
    K = np.zeros(dom.shape, bool)
    K[4, 4] = True
    with pytest.raises(ValueError):
        CapacityProblem(dom, fam, ep, K, -1.0)
    a, b = CapacityProblem(dom, fam, ep, K, 1.0), CapacityProblem(dom, fam, ep, K, 2.0)
    assert a.problem_hash() == CapacityProblem(dom, fam, ep, K, 1.0).problem_hash() != b.problem_hash()


# -- Maz'ya ------------------------------------------------------------------------


def test_mazya_single_compact_definition():
    dom = GridDomain.box(2, 16)
    prob = HardyProblem(dom, NormFamily.euclidean(2), ExponentPair(2.0), 1.0)
    x = dom.points()
    K = np.all(np.abs(x - 0.5) <= 0.25, axis=-1) & dom.mask
    out = mazya_ratio(prob, 1.0, [K], CFG)
    cap = capacity(CapacityProblem(dom, prob.fam, prob.ep, K, 1.0), CFG).value
    assert out["norm_u"] == pytest.approx(dom.cell_volume * K.sum() / cap, rel=1e-12)
    assert out["lower_ok"] and "upper_ok" not in out
    with pytest.raises(ValueError):
        mazya_ratio(prob, 1.0, [], CFG)


def test_mazya_zero_weight_on_mask():
    dom = GridDomain.box(2, 8)
    g = np.where(dom.mask, 0.0, 1.0)
    prob = HardyProblem(dom, NormFamily.euclidean(2), ExponentPair(2.0), g)
    K = np.zeros(dom.shape, bool)
    K[4, 4] = True
    out = mazya_ratio(prob, 1.0, [K], CFG)
    assert out["norm_u"] == 0.0 and out["hardy_norm"] == 0.0


def test_mazya_nested_squares():
    dom = GridDomain.box(2, 16)
    prob = HardyProblem(dom, NormFamily.euclidean(2), ExponentPair(2.0), 1.0)
    x = dom.points()
    Ks = [np.all(np.abs(x - 0.5) <= w, axis=-1) & dom.mask for w in (0.1, 0.2, 0.3, 0.4)]
    out = mazya_ratio(prob, 1.0, Ks, CFG, slack=0.05, C_cal=4.0)
    assert out["lower_ok"] and out["upper_ok"]


# -- tail constants ----------------------------------------------------------------


def disk(dom, rho):
    return dom.radius() < rho


def test_tail_single_exhaustion_matches_plain():
    dom = ball_domain(2, 16)
    prob = HardyProblem(dom, NormFamily.euclidean(2), ExponentPair(2.0), 1.0)
    om = disk(dom, 0.3) & dom.mask
    [tail] = hardy_tail_constant(prob, [om], CFG)
    collar = dom.with_mask(dom.mask & ~om)
    plain = hardy_constant(HardyProblem(collar, prob.fam, prob.ep, 1.0), CFG)
    assert tail.value == pytest.approx(plain.value, rel=1e-12)


def test_tail_grows_and_infeasible():
    dom = ball_domain(2, 24)
    prob = HardyProblem(dom, NormFamily.euclidean(2), ExponentPair(2.0), 1.0)
    radii = (0.3, 0.5, 0.7)
    vals = [r.value for r in hardy_tail_constant(prob, [disk(dom, r) & dom.mask for r in radii], CFG)]
    assert vals[0] < vals[1] < vals[2]
    # same ordering as the continuum annulus eigenvalues
    ref = [annulus_eigenvalue(r) for r in radii]
    assert all(v > 0.5 * e for v, e in zip(vals, ref))
    g = np.where(disk(dom, 0.2), 1.0, 0.0) * dom.mask
    deep = HardyProblem(dom, prob.fam, prob.ep, g)
    [res] = hardy_tail_constant(deep, [disk(dom, 0.4) & dom.mask])
    assert res.infeasible and math.isinf(res.value)


def test_tail_errors():
    dom = ball_domain(2, 16)
    prob = HardyProblem(dom, NormFamily.euclidean(2), ExponentPair(2.0), 1.0)
    with pytest.raises(ValueError):
        hardy_tail_constant(prob, [disk(dom, 0.5), disk(dom, 0.3)])
    ring = (dom.radius() > 0.4) & (dom.radius() < 0.6)
    with pytest.raises(ValueError):
        hardy_tail_constant(prob, [ring])


# -- hierarchy ---------------------------------------------------------------------


def test_coarsen_and_prolong():
    fine = GridDomain.box(2, 16)
    coarse = coarsen(fine)
    assert coarse.shape == (9, 9) and coarse.h == 2 * fine.h
    lin = lambda x: 1.0 + 2.0 * x[..., 0] - 3.0 * x[..., 1]
    up = prolong(GridFunction.from_callable(coarse, lin, masked=False).values, fine)
    np.testing.assert_allclose(up[fine.mask], lin(fine.points())[fine.mask], rtol=1e-13)
    assert coarsen(GridDomain.box(2, 3)) is None


def test_solver_config_validation():
    for kw in (dict(tol=0), dict(max_iter=0), dict(shrink=1.0), dict(armijo=0.0), dict(restarts=0), dict(levels=0)):
        with pytest.raises(ValueError):
            SolverConfig(**kw)
