"""Standard domains and problem instances shared by the CLI, calibration and acceptance."""

from __future__ import annotations

import numpy as np

from .energy import MorreySpec
from .grid import GridDomain, GridFunction
from .norms import ExponentPair, NormFamily
from .variational import CapacityProblem, HardyProblem, SolverConfig, mazya_ratio

__all__ = [
    "ball_domain",
    "unit_square_hardy",
    "punctured_ball_hardy",
    "condenser",
    "mazya_instance",
    "superlevel_compacts",
    "bracket_catalogue",
    "morrey_instance",
    "calibrate_mazya",
    "BRACKET_EXPONENTS",
]


def ball_domain(n: int, N: int, R: float = 1.0, pad: int = 2, levels: int = 1,
                puncture: bool = False) -> GridDomain:
    """Nodes of spacing 1/N on a cube around B_R(0); the mask is |x| < R.

    The cube is widened until its cell count is divisible by 2^levels so the
    grid can be coarsened by injection, keeping a node at the origin.
    ``puncture`` removes the origin from the mask.
    """
    h = 1.0 / N
    half_cells = int(np.ceil(R * N - 1e-9)) + pad
    step = 2 ** max(levels - 1, 0)
    while (2 * half_cells) % (2 * step):
        half_cells += 1
    half = half_cells * h

    def pred(x):
        r = np.linalg.norm(x, axis=-1)
        inside = r < R
        return inside & (r > 0) if puncture else inside

    return GridDomain.box(n, 2 * half_cells, -half, half, pred=pred)


def unit_square_hardy(N: int, n: int = 2, p: float = 2.0) -> HardyProblem:
    dom = GridDomain.box(n, N)
    return HardyProblem(dom, NormFamily.euclidean(n), ExponentPair(p), GridFunction.constant(dom, 1.0))


def punctured_ball_hardy(N: int, n: int = 3, p: float = 2.0, levels: int = 1) -> HardyProblem:
    """g = |x|^-p on the unit ball with the origin node removed."""
    dom = ball_domain(n, N, levels=levels, puncture=True)
    r = dom.radius()
    g = np.where(dom.mask, np.where(r > 0, r, 1.0) ** (-p), 0.0)
    return HardyProblem(dom, NormFamily.euclidean(n), ExponentPair(p), GridFunction(dom, g))


def condenser(N: int, r: float = 0.25, R: float = 1.0, p: float = 2.0, alpha: float = 1.0,
              levels: int = 1, grid_R: float | None = None) -> CapacityProblem:
    """K = closed disk of radius r inside the open disk of radius R, u = alpha.

    ``grid_R`` sizes the lattice (default R) so that problems on nested disks
    can share one grid.
    """
    dom = ball_domain(2, N, R=grid_R or R, levels=levels)
    rad = dom.radius()
    mask = dom.mask & (rad < R)
    if mask is not dom.mask:
        dom = dom.with_mask(mask)
    K = (rad <= r) & dom.mask
    return CapacityProblem(dom, NormFamily.euclidean(2), ExponentPair(p), K, GridFunction.constant(dom, alpha))


def mazya_instance(seed: int, N: int = 32):
    """Seeded (HardyProblem, u, compacts) with p = s = 2 on the unit square.

    g is a positive floor plus three Gaussian bumps, u = exp(b . x), and the
    compacts are nested centred squares and superlevel sets of g.
    """
    rng = np.random.default_rng(seed)
    dom = GridDomain.box(2, N)
    x = dom.points()
    a = rng.uniform(0.5, 2.0, 2)
    g = np.full(dom.shape, 0.05)
    for _ in range(3):
        c = rng.uniform(0.2, 0.8, 2)
        sig = rng.uniform(0.05, 0.2)
        w = rng.uniform(0.5, 2.0)
        g += w * np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * sig**2))
    b = rng.uniform(-1.0, 1.0, 2)
    u = np.exp(x @ b)
    fam = NormFamily.weighted_s(2.0, a)
    prob = HardyProblem(dom, fam, ExponentPair(2.0, 2.0), GridFunction(dom, np.where(dom.mask, g, 0.0)))
    compacts = []
    for half in (0.1, 0.2, 0.3, 0.4):
        sq = np.all(np.abs(x - 0.5) <= half + 1e-12, axis=-1) & dom.mask
        compacts.append(sq)
    compacts += superlevel_compacts(prob.g.values, dom.mask, (0.25, 0.5, 0.75))
    return prob, GridFunction(dom, u), compacts


def superlevel_compacts(field: np.ndarray, mask: np.ndarray, levels) -> list:
    """{field >= t max field} inside the mask, for each t in ``levels``."""
    top = np.max(np.abs(field[mask]))
    out = []
    for t in levels:
        K = (np.abs(field) >= t * top) & mask
        if K.any():
            out.append(K)
    return out


# (p, s) of the five catalogue pairs in each exponent regime
BRACKET_EXPONENTS = {
    "p=s": [(3.0, 3.0), (4.0, 4.0), (1.5, 1.5), (2.0, 2.0), (3.0, 3.0)],
    "s<p": [(3.0, 2.0), (4.0, 3.0), (4.0, 1.5), (2.0, 1.5), (3.0, 1.5)],
    "p<s": [(2.0, 3.0), (1.5, 4.0), (3.0, 4.0), (2.0, 4.0), (1.5, 2.0)],
}

_U_CATALOGUE = [
    lambda x: np.ones(x.shape[:-1]),
    lambda x: 1.0 + x[..., 0],
    lambda x: 2.0 + x[..., 0] - 0.5 * x[..., 1],
    lambda x: 1.0 + 0.5 * x[..., 0] + 0.25 * x[..., 1],
    lambda x: 3.0 - x[..., 0] - x[..., 1],
]

_PSI_CATALOGUE = [((0.5, 0.5), 0.3), ((0.4, 0.6), 0.25), ((0.5, 0.5), 0.45), ((0.6, 0.4), 0.2), ((0.45, 0.55), 0.35)]


def bracket_catalogue(regime: str, N: int = 64, a=(1.0, 2.0)):
    """Five (u, psi, fam, ep) tuples for one exponent regime on the unit square.

    u runs through positive constants and affine fields (solutions of
    Q'[u] = 0 with V = 0 for every constant norm family); psi through smooth
    compactly supported bumps (1 - |x - c|^2 / rho^2)_+^3.
    """
    dom = GridDomain.box(2, N)
    x = dom.points()
    out = []
    for k, (p, s) in enumerate(BRACKET_EXPONENTS[regime]):
        u = GridFunction(dom, _U_CATALOGUE[k](x))
        c, rho = _PSI_CATALOGUE[k]
        t = 1.0 - np.sum((x - np.asarray(c)) ** 2, axis=-1) / rho**2
        psi = GridFunction(dom, np.where(dom.mask, np.clip(t, 0.0, None) ** 3, 0.0))
        out.append((u, psi, NormFamily.weighted_s(s, a), ExponentPair(p, s)))
    return out


def morrey_instance(N: int = 64, n: int = 2, q: float = 2.0, p: float = 1.5):
    """f = |x|^(-n/q) on cell centres of [-1, 1]^n, with its Morrey spec."""
    dom = GridDomain.cells(n, N, -1.0, 1.0)
    r = dom.radius()
    f = GridFunction(dom, np.where(dom.mask, r ** (-n / q), 0.0))
    return f, MorreySpec(p, q)


def calibrate_mazya(seeds, N: int = 32, cfg: SolverConfig | None = None, slack: float = 1.2) -> dict:
    """Empirical Maz'ya constant: slack * max over instances of (1/S_g) / norm_u."""
    cfg = cfg or SolverConfig()
    ratios = []
    for seed in seeds:
        prob, u, compacts = mazya_instance(seed, N)
        res = mazya_ratio(prob, u, compacts, cfg)
        ratios.append(res["hardy_norm"] / res["norm_u"])
    worst = max(ratios)
    return {"p": 2.0, "s": 2.0, "n": 2, "N": N, "seeds": list(seeds), "ratios": ratios,
            "max_ratio": worst, "slack": slack, "C_cal": slack * worst}
