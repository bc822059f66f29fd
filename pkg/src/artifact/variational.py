"""Hardy constants, Q-capacities, Maz'ya ratios and tail constants on grids.

All minimizations use one projected-gradient core: Barzilai-Borwein trial
steps, monotone Armijo backtracking, and a projection after every step
(renormalization onto {int |g| |phi|^p = 1} for Hardy problems, the obstacle
clamp phi >= u on K for capacities). Problems can be solved by nested
iteration: the grid is coarsened by node injection, the coarsest level is
solved from several seeded starts, and each finer level starts from the
multilinear prolongation of the coarser minimizer.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .energy import EnergyOperator, energy_Q, residual_field
from .fileio import content_hash
from .grid import GridDomain, GridFunction
from .norms import ExponentPair, NormFamily

__all__ = [
    "SolverConfig",
    "SolveResult",
    "HardyProblem",
    "CapacityProblem",
    "projected_gradient",
    "hardy_constant",
    "capacity",
    "mazya_ratio",
    "hardy_tail_constant",
    "attainment_check",
    "coarsen",
    "prolong",
]


@dataclass
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 50_000
    patience: int = 5
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 60
    restarts: int = 3
    restart_noise: float = 0.25
    seed: int = 0
    levels: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.shrink < 1 or not 0 < self.armijo < 1:
            raise ValueError("backtracking parameters must lie in (0, 1)")
        if self.restarts < 1 or self.levels < 1:
            raise ValueError("restarts and levels must be >= 1")


@dataclass
class SolveResult:
    value: float
    minimizer: GridFunction | None
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    status: str = "ok"
    levels: list = field(default_factory=list)
    restarts: list = field(default_factory=list)

    @property
    def infeasible(self) -> bool:
        return self.status == "infeasible"

    def summary(self) -> dict:
        return {
            "value": self.value,
            "converged": self.converged,
            "iterations": self.iterations,
            "status": self.status,
            "levels": self.levels,
        }


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------


def _field(F, dom, default=0.0):
    if F is None:
        return GridFunction.constant(dom, default)
    if isinstance(F, GridFunction):
        if F.domain.shape != dom.shape:
            raise ValueError("field lives on a different grid")
        return F
    return GridFunction(dom, np.broadcast_to(np.asarray(F, dtype=float), dom.shape))


@dataclass
class HardyProblem:
    grid: GridDomain
    fam: NormFamily
    ep: ExponentPair
    g: GridFunction
    V: GridFunction | None = None

    def __post_init__(self):
        self.g = _field(self.g, self.grid)
        self.V = _field(self.V, self.grid)
        if not np.any(self.g.values != 0):
            raise ValueError("Hardy weight g vanishes identically")

    @property
    def feasible(self) -> bool:
        return bool(np.any(self.g.values[self.grid.mask] != 0))

    def describe(self) -> dict:
        return {
            "kind": "hardy",
            "grid": self.grid.header(),
            "fam": self.fam.to_dict(),
            "p": self.ep.p,
            "s": self.ep.s,
            "g_sha256": hashlib.sha256(self.g.values.tobytes()).hexdigest(),
            "V_sha256": hashlib.sha256(self.V.values.tobytes()).hexdigest(),
        }

    def problem_hash(self) -> str:
        return content_hash(self.describe())


@dataclass
class CapacityProblem:
    grid: GridDomain
    fam: NormFamily
    ep: ExponentPair
    K: np.ndarray
    u: GridFunction
    V: GridFunction | None = None

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=bool)
        if self.K.shape != self.grid.shape:
            raise ValueError("K must be a node mask of the grid's shape")
        if not self.K.any():
            raise ValueError("K is empty")
        if np.any(self.K & ~self.grid.mask):
            raise ValueError("K must lie inside the mask")
        self.u = _field(self.u, self.grid, 1.0)
        if np.any(self.u.values[self.grid.mask] <= 0):
            raise ValueError("u must be positive on the mask")
        self.V = _field(self.V, self.grid)

    def describe(self) -> dict:
        return {
            "kind": "capacity",
            "grid": self.grid.header(),
            "fam": self.fam.to_dict(),
            "p": self.ep.p,
            "s": self.ep.s,
            "K_sha256": hashlib.sha256(np.packbits(self.K).tobytes()).hexdigest(),
            "u_sha256": hashlib.sha256(self.u.values.tobytes()).hexdigest(),
            "V_sha256": hashlib.sha256(self.V.values.tobytes()).hexdigest(),
        }

    def problem_hash(self) -> str:
        return content_hash(self.describe())


# ---------------------------------------------------------------------------
# Grid hierarchy
# ---------------------------------------------------------------------------


def coarsen(dom: GridDomain) -> GridDomain | None:
    """Injection onto every second node, or None when impossible."""
    if any((k - 1) % 2 for k in dom.shape) or min(dom.shape) < 5:
        return None
    sl = (slice(None, None, 2),) * dom.n
    mask = dom.mask[sl]
    try:
        return GridDomain(mask.shape, 2 * dom.h, mask, dom.origin)
    except ValueError:
        return None


def prolong(values: np.ndarray, fine: GridDomain) -> np.ndarray:
    """Multilinear interpolation from the injected coarse grid onto ``fine``."""
    out = values
    for ax in range(out.ndim):
        k = out.shape[ax]
        shape = list(out.shape)
        shape[ax] = 2 * k - 1
        up = np.empty(shape)
        idx = [slice(None)] * out.ndim
        idx[ax] = slice(None, None, 2)
        up[tuple(idx)] = out
        idx[ax] = slice(1, None, 2)
        lo = np.take(out, np.arange(k - 1), axis=ax)
        hi = np.take(out, np.arange(1, k), axis=ax)
        up[tuple(idx)] = 0.5 * (lo + hi)
        out = up
    return np.where(fine.mask, out, 0.0)


def _hierarchy(dom: GridDomain, levels: int):
    doms = [dom]
    while len(doms) < levels:
        c = coarsen(doms[-1])
        if c is None:
            raise ValueError(f"grid cannot be coarsened to {levels} levels")
        doms.append(c)
    return doms[::-1]


def _inject(values, fine: GridDomain, coarse: GridDomain):
    step = round(coarse.h / fine.h)
    return values[(slice(None, None, step),) * fine.n]


# ---------------------------------------------------------------------------
# Projected gradient core
# ---------------------------------------------------------------------------


@dataclass
class _Run:
    x: np.ndarray
    f: float
    iterations: int
    converged: bool
    history: list
    status: str


def projected_gradient(fun, project, x0: np.ndarray, cfg: SolverConfig, nonneg: bool = True) -> _Run:
    """Minimize ``fun`` (returning value and gradient) over the range of ``project``.

    A step from x to x_new = project(x - t g) is accepted when
    f(x_new) <= f(x) + c <g, x_new - x> with <g, x_new - x> < 0. Trial steps t
    come from the Barzilai-Borwein rule. Stops once the relative objective
    change stays below ``cfg.tol`` for ``cfg.patience`` accepted steps.
    ``nonneg`` aborts with status "supercritical" on a negative objective.
    """
    x = project(x0)
    f, g = fun(x)
    history = [f]
    if nonneg and f < 0:
        return _Run(x, f, 0, False, history, "supercritical")
    gn = math.sqrt(float(np.vdot(g, g)))
    if gn == 0:
        return _Run(x, f, 0, True, history, "stationary")
    t = math.sqrt(float(np.vdot(x, x))) / gn or 1.0
    quiet = 0
    it = 0
    while it < cfg.max_iter:
        it += 1
        for _ in range(cfg.max_backtracks):
            x_new = project(x - t * g)
            d = x_new - x
            slope = float(np.vdot(g, d))
            if slope < 0:
                f_new, g_new = fun(x_new)
                if f_new <= f + cfg.armijo * slope:
                    break
            t *= cfg.shrink
        else:
            # no descent left at working precision
            return _Run(x, f, it - 1, quiet > 0, history, "stalled")
        if nonneg and f_new < 0:
            return _Run(x_new, f_new, it, False, history + [f_new], "supercritical")
        yv = g_new - g
        sy = float(np.vdot(d, yv))
        t = float(np.vdot(d, d)) / sy if sy > 0 else t / cfg.shrink
        rel = abs(f - f_new) / max(abs(f_new), 1e-300)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        quiet = quiet + 1 if rel < cfg.tol else 0
        if quiet >= cfg.patience:
            return _Run(x, f, it, True, history, "ok")
    return _Run(x, f, it, False, history, "max_iter")


# ---------------------------------------------------------------------------
# Hardy constant
# ---------------------------------------------------------------------------


def _half_sine_bump(dom: GridDomain) -> np.ndarray:
    idx = np.argwhere(dom.mask)
    lo = idx.min(axis=0) - 1
    hi = idx.max(axis=0) + 1
    out = np.ones(dom.shape)
    for ax in range(dom.n):
        k = np.arange(dom.shape[ax])
        prof = np.sin(np.pi * np.clip((k - lo[ax]) / (hi[ax] - lo[ax]), 0.0, 1.0))
        shape = [1] * dom.n
        shape[ax] = -1
        out = out * prof.reshape(shape)
    return np.where(dom.mask, out, 0.0)


class _Rayleigh:
    def __init__(self, prob: HardyProblem):
        self.E = EnergyOperator(prob.grid, prob.fam, prob.ep, prob.V)
        self.w = np.where(prob.grid.mask, np.abs(prob.g.values), 0.0)
        self.p = prob.ep.p
        self.hv = prob.grid.cell_volume
        self.mask = prob.grid.mask

    def G(self, x):
        return float(self.hv * np.sum(self.w * np.abs(x) ** self.p))

    def project(self, x):
        x = np.where(self.mask, x, 0.0)
        G = self.G(x)
        if not G > 0:
            raise FloatingPointError("iterate left the constraint set")
        return x / G ** (1.0 / self.p)

    def __call__(self, x):
        Q, dQ = self.E.value_and_grad(x)
        G = self.G(x)
        R = Q / G
        dG = self.hv * self.p * self.w * np.sign(x) * np.abs(x) ** (self.p - 1.0)
        return R, (dQ - R * dG) / G


def _best_of(runs):
    order = sorted(range(len(runs)), key=lambda i: (runs[i].status == "supercritical", runs[i].f))
    return runs[order[0]]


def _solve_levels(doms, make, init, cfg, nonneg=True):
    """Nested iteration; ``make(dom)`` gives (fun, project), ``init(dom, k)`` a start."""
    level_info = []
    restarts = []
    total_it = 0
    history = []
    x = None
    run = None
    for li, dom in enumerate(doms):
        fun, project = make(dom)
        if li == 0:
            runs = [projected_gradient(fun, project, init(dom, k), cfg, nonneg) for k in range(cfg.restarts)]
            restarts = [{"value": r.f, "iterations": r.iterations, "status": r.status} for r in runs]
            total_it += sum(r.iterations for r in runs)
            run = _best_of(runs)
        else:
            run = projected_gradient(fun, project, prolong(x, dom), cfg, nonneg)
            total_it += run.iterations
        x = run.x
        history = run.history
        level_info.append({"h": dom.h, "value": run.f, "iterations": run.iterations,
                           "converged": run.converged, "status": run.status})
        if run.status == "supercritical":
            break
    return run, total_it, history, level_info, restarts


def hardy_constant(prob: HardyProblem, cfg: SolverConfig | None = None) -> SolveResult:
    """S_g = inf { Q[phi] : int |g| |phi|^p = 1 } by projected gradient on Q / G.

    Renormalizing after each step makes the Rayleigh quotient Q/G equal to Q
    on the constraint set. The history is the objective after every accepted
    step of the finest level. When |g| vanishes on the whole mask the
    constraint cannot be met and the value is reported as +inf.
    """
    cfg = cfg or SolverConfig()
    if not prob.feasible:
        return SolveResult(math.inf, None, 0, False, [], "infeasible")
    doms = _hierarchy(prob.grid, cfg.levels)

    def make(dom):
        if dom is prob.grid:
            R = _Rayleigh(prob)
        else:
            R = _Rayleigh(HardyProblem(dom, prob.fam, prob.ep, _inject(prob.g.values, prob.grid, dom),
                                       _inject(prob.V.values, prob.grid, dom)))
        return R, R.project

    def init(dom, k):
        x = _half_sine_bump(dom)
        if k:
            rng = np.random.default_rng([cfg.seed, k])
            x = x * (1.0 + cfg.restart_noise * rng.random(dom.shape))
        w = np.abs(_inject(prob.g.values, prob.grid, dom)) if dom is not prob.grid else np.abs(prob.g.values)
        if not np.any(w[x > 0]):
            x = np.where(dom.mask, 1.0, 0.0)
        return x

    for dom in doms:
        if not np.any(_inject(prob.g.values, prob.grid, dom)[dom.mask] != 0):
            raise ValueError("Hardy weight vanishes on the mask of a coarse level; use fewer levels")
    run, total_it, history, levels, restarts = _solve_levels(doms, make, init, cfg)
    return SolveResult(run.f, GridFunction(prob.grid, run.x), total_it, run.converged, history,
                       run.status, levels, restarts)


def rayleigh_quotient(prob: HardyProblem, phi) -> float:
    """Q[phi] / int |g| |phi|^p with correctly rounded sums."""
    phi = phi if isinstance(phi, GridFunction) else GridFunction(prob.grid, phi)
    Q = energy_Q(phi, prob.fam, prob.ep, prob.V)
    dom = prob.grid
    G = dom.cell_volume * math.fsum((np.abs(prob.g.values) * np.abs(phi.masked()) ** prob.ep.p)[dom.mask])
    return Q / G if G > 0 else math.inf


# ---------------------------------------------------------------------------
# Capacity
# ---------------------------------------------------------------------------


def _capacity_start(dom, K, u):
    d_out = ndimage.distance_transform_edt(dom.mask)
    d_K = ndimage.distance_transform_edt(~K)
    x = u * d_out / (d_K + d_out)
    return np.where(dom.mask, np.where(K, u, x), 0.0)


def capacity(prob: CapacityProblem, cfg: SolverConfig | None = None) -> SolveResult:
    """cap(K, u) = inf { Q[phi] : phi >= u on K } with the clamp phi <- max(phi, u) on K."""
    cfg = cfg or SolverConfig()
    doms = _hierarchy(prob.grid, cfg.levels)
    fine = prob.grid

    def pieces(dom):
        if dom is fine:
            return prob.K, prob.u.values, prob.V.values
        return (_inject(prob.K, fine, dom) & dom.mask, _inject(prob.u.values, fine, dom),
                _inject(prob.V.values, fine, dom))

    def make(dom):
        K, u, V = pieces(dom)
        if not K.any():
            raise ValueError("K disappears on a coarse level; use fewer levels")
        E = EnergyOperator(dom, prob.fam, prob.ep, V)
        lower = np.where(K, u, -np.inf)

        def project(x):
            return np.where(dom.mask, np.maximum(x, lower), 0.0)

        return E.value_and_grad, project

    def init(dom, k):
        K, u, _ = pieces(dom)
        x = _capacity_start(dom, K, u)
        if k:
            rng = np.random.default_rng([cfg.seed, k])
            x = x * (1.0 + cfg.restart_noise * rng.random(dom.shape))
        return x

    run, total_it, history, levels, restarts = _solve_levels(doms, make, init, cfg)
    x = np.where(prob.K, np.maximum(run.x, prob.u.values), run.x)
    return SolveResult(run.f, GridFunction(fine, x), total_it, run.converged, history,
                       run.status, levels, restarts)


# ---------------------------------------------------------------------------
# Maz'ya ratio, tail constants, attainment
# ---------------------------------------------------------------------------


def mazya_ratio(prob: HardyProblem, u, compacts, cfg: SolverConfig | None = None,
                S_g: float | None = None, C_cal: float | None = None, slack: float = 0.05) -> dict:
    """max over the compacts of int_K |g| u^p / cap(K, u), against 1/S_g.

    Returns the per-compact table, ``norm_u``, ``hardy_norm = 1/S_g`` and the
    two bracket checks norm_u <= (1 + slack)/S_g and 1/S_g <= C_cal norm_u
    (the latter only when ``C_cal`` is given).
    """
    cfg = cfg or SolverConfig()
    compacts = list(compacts)
    if not compacts:
        raise ValueError("need at least one compact set")
    dom = prob.grid
    u = _field(u, dom, 1.0)
    w = np.abs(prob.g.values)
    table = []
    for j, K in enumerate(compacts):
        K = np.asarray(K, dtype=bool)
        mass = dom.cell_volume * math.fsum((w * u.values ** prob.ep.p)[K])
        res = capacity(CapacityProblem(dom, prob.fam, prob.ep, K, u, prob.V), cfg)
        row = {"index": j, "nodes": int(K.sum()), "mass": mass, "cap": res.value,
               "converged": res.converged, "skipped": not res.value > 0}
        row["ratio"] = mass / res.value if res.value > 0 else None
        table.append(row)
    ratios = [r["ratio"] for r in table if r["ratio"] is not None]
    norm_u = max(ratios) if ratios else 0.0
    if S_g is None:
        S_g = hardy_constant(prob, cfg).value if np.any(w[dom.mask]) else math.inf
    hardy_norm = 0.0 if math.isinf(S_g) else 1.0 / S_g
    out = {"norm_u": norm_u, "S_g": S_g, "hardy_norm": hardy_norm, "table": table,
           "lower_ok": norm_u <= (1.0 + slack) * hardy_norm}
    if C_cal is not None:
        out["C_cal"] = C_cal
        out["upper_ok"] = hardy_norm <= C_cal * norm_u
    return out


def hardy_tail_constant(prob: HardyProblem, exhaustion, cfg: SolverConfig | None = None) -> list:
    """S_g on the collars Omega minus omega_i for a nested increasing exhaustion.

    A collar on which |g| vanishes gets value +inf (status "infeasible").
    """
    cfg = cfg or SolverConfig()
    out = []
    prev = None
    for om in exhaustion:
        om = np.asarray(om, dtype=bool)
        if prev is not None and np.any(prev & ~om):
            raise ValueError("exhaustion must be nested increasing")
        prev = om
        collar = prob.grid.mask & ~om
        if not collar.any():
            raise ValueError("collar is empty")
        if ndimage.label(collar)[1] != 1:
            raise ValueError("collar is disconnected")
        dom = prob.grid.with_mask(collar)
        sub = HardyProblem(dom, prob.fam, prob.ep, GridFunction(dom, prob.g.values), GridFunction(dom, prob.V.values))
        if not sub.feasible:
            out.append(SolveResult(math.inf, None, 0, False, [], "infeasible"))
        else:
            out.append(hardy_constant(sub, cfg))
    return out


SIGN_QUANTILE = 0.999


def attainment_check(prob: HardyProblem, cfg: SolverConfig | None = None, result: SolveResult | None = None) -> dict:
    """Sign-definiteness, Euler-Lagrange residual and quotient gap of the Hardy minimizer.

    The residual is Q'_{p,A,V - S_g|g|}[phi] tested against every nodal hat,
    reported as its largest magnitude relative to the largest magnitude of
    the gradient part alone.
    """
    cfg = cfg or SolverConfig()
    if result is None:
        result = hardy_constant(prob, cfg)
    if result.minimizer is None:
        return {"attained": False, "status": result.status}
    dom = prob.grid
    phi = result.minimizer.masked()
    if np.sum(phi) < 0:
        phi = -phi
    inner = phi[dom.mask]
    frac = float(np.mean(inner > 0))
    S = result.value
    pot = GridFunction(dom, prob.V.values - S * np.abs(prob.g.values))
    f = GridFunction(dom, phi)
    res = residual_field(f, prob.fam, prob.ep, pot)
    scale = np.max(np.abs(residual_field(f, prob.fam, prob.ep, None)))
    return {
        "value": S,
        "converged": result.converged,
        "min": float(inner.min()),
        "max": float(inner.max()),
        "positive_fraction": frac,
        "sign_definite": frac >= SIGN_QUANTILE,
        "sign_quantile": SIGN_QUANTILE,
        "residual_max": float(np.max(np.abs(res))),
        "residual_rel": float(np.max(np.abs(res)) / scale) if scale > 0 else 0.0,
        "quotient_gap": abs(rayleigh_quotient(prob, f) - S),
    }
