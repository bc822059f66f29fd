"""Discrete energy Q, its weak residual, simplified-energy brackets, Morrey norms.

Discretization: forward differences and node quadrature. For phi vanishing
off the mask,

    Q[phi] = h^n ( sum_{all nodes} H(D phi)^p + sum_{mask} V |phi|^p ),

where the gradient sum runs over every node so that the edges leaving Omega
(which carry the Dirichlet jump) are counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .bregman import (
    bregman_distance,
    load_calibration,
    lookup_calibration,
    pseudo_comparison,
    r1,
    r2,
)
from .grid import GridDomain, GridFunction
from .norms import ExponentPair, Kind, NormFamily, norm, norm_power, operator_A

__all__ = [
    "forward_diff",
    "forward_diff_T",
    "discrete_gradient",
    "energy_Q",
    "EnergyOperator",
    "residual_Qprime",
    "residual_field",
    "BracketResult",
    "simplified_energy_bracket",
    "MorreySpec",
    "morrey_norm",
    "morrey_profile",
    "lq_shell_mass",
]


def forward_diff(values: np.ndarray, h: float) -> np.ndarray:
    """Forward differences with zero reads past the last node; shape ``(*shape, n)``."""
    return np.stack([np.diff(values, axis=i, append=0.0) / h for i in range(values.ndim)], axis=-1)


def forward_diff_T(w: np.ndarray, h: float) -> np.ndarray:
    """Adjoint of :func:`forward_diff` for the Euclidean inner product."""
    n = w.shape[-1]
    out = np.zeros(w.shape[:-1])
    for i in range(n):
        out -= np.diff(w[..., i], axis=i, prepend=0.0) / h
    return out


def _edge_diff(values, h):
    # forward differences of a field that is defined past the mask (u > 0)
    return np.stack([np.diff(values, axis=i, append=np.take(values, [-1], axis=i)) / h
                     for i in range(values.ndim)], axis=-1)


def _shifted(values, i):
    """u(x + h e_i), repeating the last layer past the array edge."""
    return np.concatenate([np.take(values, np.arange(1, values.shape[i]), axis=i),
                           np.take(values, [-1], axis=i)], axis=i)


def discrete_gradient(u: GridFunction) -> np.ndarray:
    """Forward-difference gradient with Dirichlet-zero reads off the mask."""
    return forward_diff(u.masked(), u.domain.h)


def _V(V, domain):
    if V is None:
        return np.zeros(domain.shape)
    return V.values if isinstance(V, GridFunction) else np.broadcast_to(np.asarray(V, dtype=float), domain.shape)


def energy_Q(phi: GridFunction, fam: NormFamily, ep: ExponentPair, V: GridFunction | None = None) -> float:
    """Q[phi] with correctly rounded summation (``math.fsum``)."""
    dom = phi.domain
    vals = phi.masked()
    grad = norm_power(forward_diff(vals, dom.h), fam, ep.p)
    pot = (_V(V, dom) * np.abs(vals) ** ep.p)[dom.mask]
    return dom.cell_volume * math.fsum(np.concatenate([grad.ravel(), pot]))


def _pow(x, e):
    """x^e for x >= 0 with exact fast paths for the common exponents."""
    if e == 1.0:
        return x
    if e == 2.0:
        return x * x
    if e == 0.5:
        return np.sqrt(x)
    if e == 0.0:
        return np.ones_like(x)
    return x**e


def _take(axis, sl, ndim):
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def _fdiff(x, axis):
    """Unscaled forward difference x(. + e_axis) - x with a zero read past the end."""
    out = np.empty_like(x)
    nd = x.ndim
    np.subtract(x[_take(axis, slice(1, None), nd)], x[_take(axis, slice(None, -1), nd)],
                out=out[_take(axis, slice(None, -1), nd)])
    np.negative(x[_take(axis, slice(-1, None), nd)], out=out[_take(axis, slice(-1, None), nd)])
    return out


def _fdiff_T_acc(w, axis, acc):
    """acc += unscaled adjoint of :func:`_fdiff` applied to w."""
    nd = w.ndim
    acc[_take(axis, slice(0, 1), nd)] -= w[_take(axis, slice(0, 1), nd)]
    acc[_take(axis, slice(1, None), nd)] += w[_take(axis, slice(None, -1), nd)]
    acc[_take(axis, slice(1, None), nd)] -= w[_take(axis, slice(1, None), nd)]


def _density_and_field(comps, fam, p):
    """H(g)^p and A(g) for a gradient held as a list of n component arrays.

    Component-major twin of ``norm_power`` and ``operator_A`` for the solvers;
    avoids reductions over a short trailing axis.
    """
    dens = 0.0
    field = [0.0] * len(comps)
    if fam.kind in (Kind.WEIGHTED_S, Kind.COMBINED):
        s = fam.s
        if s == 2.0:
            ab = comps
            S = sum(ai * (c * c) for ai, c in zip(fam.a, comps))
        else:
            ab = [np.abs(c) for c in comps]
            S = sum(ai * _pow(x, s) for ai, x in zip(fam.a, ab))
        dens = dens + _pow(S, p / s)
        if p == s:
            scale = 1.0
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(S > 0, _pow(S, (p - s) / s), 0.0)
        for i, (ai, c, x) in enumerate(zip(fam.a, comps, ab)):
            core = c if s == 2.0 else np.sign(c) * _pow(x, s - 1.0)
            field[i] = field[i] + (ai * scale) * core
    if fam.kind in (Kind.MATRIX, Kind.COMBINED):
        A, L = fam.A, fam._chol
        n = len(comps)
        z = [sum(L[j, i] * comps[j] for j in range(n)) for i in range(n)]
        q = sum(zi * zi for zi in z)
        dens = dens + _pow(q, p / 2.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = 1.0 if p == 2.0 else np.where(q > 0, _pow(q, (p - 2.0) / 2.0), 0.0)
        for i in range(n):
            field[i] = field[i] + scale * sum(A[i, j] * comps[j] for j in range(n))
    return dens, field


class EnergyOperator:
    """Vectorized Q and its gradient in the mask unknowns, for the solvers.

    Sums use numpy's pairwise reduction, fixed for a given array layout.
    """

    def __init__(self, domain: GridDomain, fam: NormFamily, ep: ExponentPair, V=None):
        self.domain = domain
        self.fam = fam
        self.ep = ep
        self.V = np.where(domain.mask, _V(V, domain), 0.0)
        self.has_V = bool(np.any(self.V != 0))

    def _comps(self, x):
        inv_h = 1.0 / self.domain.h
        out = []
        for i in range(x.ndim):
            c = _fdiff(x, i)
            c *= inv_h
            out.append(c)
        return out

    def value(self, x: np.ndarray) -> float:
        dens, _ = _density_and_field(self._comps(x), self.fam, self.ep.p)
        total = np.sum(dens)
        if self.has_V:
            total += np.sum(self.V * _pow(np.abs(x), self.ep.p))
        return float(self.domain.cell_volume * total)

    def value_and_grad(self, x: np.ndarray):
        """Q and dQ/dx (zero off the mask)."""
        h, p = self.domain.h, self.ep.p
        dens, field = _density_and_field(self._comps(x), self.fam, p)
        total = np.sum(dens)
        grad = np.zeros(x.shape)
        for i, w in enumerate(field):
            _fdiff_T_acc(np.broadcast_to(w, x.shape), i, grad)
        grad *= p / h
        if self.has_V:
            ax = np.abs(x)
            total += np.sum(self.V * _pow(ax, p))
            grad += p * self.V * np.sign(x) * _pow(ax, p - 1.0)
        grad = np.where(self.domain.mask, grad, 0.0) * self.domain.cell_volume
        return float(self.domain.cell_volume * total), grad


def residual_field(u: GridFunction, fam: NormFamily, ep: ExponentPair, V=None) -> np.ndarray:
    """Q'[u] tested against every nodal hat: h^n (D^T A(Du) + V |u|^(p-2) u)."""
    dom = u.domain
    vals = u.masked()
    r = forward_diff_T(operator_A(forward_diff(vals, dom.h), fam, ep), dom.h)
    r = r + _V(V, dom) * np.sign(vals) * np.abs(vals) ** (ep.p - 1.0)
    return np.where(dom.mask, r, 0.0) * dom.cell_volume


def residual_Qprime(u: GridFunction, fam: NormFamily, ep: ExponentPair, V, test: GridFunction) -> float:
    """h^n sum ( A(Du) . D test + V |u|^(p-2) u test )."""
    dom = u.domain
    if np.any(test.values[~dom.mask] != 0):
        raise ValueError("test function must vanish off the mask")
    vals = u.masked()
    a = operator_A(forward_diff(vals, dom.h), fam, ep)
    dt = forward_diff(test.values, dom.h)
    pot = _V(V, dom) * np.sign(vals) * np.abs(vals) ** (ep.p - 1.0) * test.values
    return dom.cell_volume * math.fsum(np.concatenate([np.sum(a * dt, axis=-1).ravel(), pot[dom.mask]]))


# ---------------------------------------------------------------------------
# Simplified energies
# ---------------------------------------------------------------------------

GRAD_DROP_TOL = 1e-14


@dataclass
class BracketResult:
    lower: float
    upper: float
    Q_value: float
    regime: str
    picone_sum: float
    constants: dict = field(default_factory=dict)
    omega1_nodes: int = 0
    omega2_nodes: int = 0
    dropped_nodes: int = 0
    grad_drop_tol: float = GRAD_DROP_TOL

    @property
    def inside(self) -> bool:
        return self.lower <= self.Q_value <= self.upper

    @property
    def violation(self) -> bool:
        return not self.inside


def _regime(ep):
    if ep.p == ep.s:
        return "p=s"
    return "s<p" if ep.s < ep.p else "p<s"


def _fsum(x):
    return math.fsum(np.asarray(x, dtype=float).ravel())


def simplified_energy_bracket(u_pos: GridFunction, psi: GridFunction, fam: NormFamily, ep: ExponentPair,
                              calibration: dict | None = None, slack: float = 1.2,
                              grad_drop_tol: float = GRAD_DROP_TOL) -> BracketResult:
    """Bracket Q[u psi] (V = 0) by sums of R1 / R2 with xi = psi Du and eta = u Dpsi.

    ``u_pos`` must be positive on the mask and is read unmasked, so that the
    product rule D(u psi) = psi(x) Du(x) + u(x + h e_i) D_i psi(x) holds exactly
    componentwise; eta uses the shifted value u(x + h e_i). The constants come
    from the calibration table for (p, s, n), divided (lower) or multiplied
    (upper) by ``slack``.
    """
    if fam.kind is not Kind.WEIGHTED_S or fam.s != ep.s:
        raise ValueError("simplified energies need a weighted s-norm with s = ep.s")
    dom = u_pos.domain
    if np.any(u_pos.values[dom.mask] <= 0):
        raise ValueError("u_pos must be strictly positive on the mask")
    if np.any(psi.values < 0) or np.any(psi.values[~dom.mask] != 0):
        raise ValueError("psi must be nonnegative and vanish off the mask")
    table = calibration if calibration is not None else load_calibration()
    regime = _regime(ep)
    n = dom.n
    h = dom.h
    u = u_pos.values
    ps = psi.values
    xi = ps[..., None] * _edge_diff(u, h)
    ushift = np.stack([_shifted(u, i) for i in range(n)], axis=-1)
    eta = ushift * forward_diff(ps, h)
    Q = energy_Q(GridFunction(dom, u * ps), fam, ep)
    if not np.any(ps):
        return BracketResult(0.0, 0.0, Q, regime, 0.0)
    picone = dom.cell_volume * _fsum(bregman_distance(fam, ep, xi, eta))
    hv = dom.cell_volume

    def const(lemma, key):
        return lookup_calibration(table, lemma, ep.p, ep.s, n)[key]

    nx = norm(xi, fam)
    ne = norm(eta, fam)
    om1 = nx <= ne
    om2 = ~om1
    consts = {}
    dropped = 0
    if regime == "p=s":
        comp = hv * _fsum(pseudo_comparison(fam, ep, xi, eta))
        consts = {"c": const("pseudo", "c_hat"), "C": const("pseudo", "C_hat")}
        lower, upper = consts["c"] * comp, consts["C"] * comp
    elif regime == "s<p":
        R1M = r1(fam, ep, xi, eta, ep.M)
        R2 = r2(fam, ep, xi, eta)
        consts = {
            "c_uniform": const("uniform", "c_hat"),
            "c_s_lt_p_lower": const("s_lt_p_lower", "c_hat"),
            "C_near_M": const("near_M", "C_hat"),
            "C_s_lt_p_upper_far": const("s_lt_p_upper_far", "C_hat"),
        }
        c = min(consts["c_uniform"], consts["c_s_lt_p_lower"]) / 2.0
        lower = c * hv * (_fsum(R1M) + _fsum(R2))
        upper = hv * (consts["C_near_M"] * _fsum(R1M[om1]) + consts["C_s_lt_p_upper_far"] * _fsum(R2[om2]))
    else:
        R1m = r1(fam, ep, xi, eta, ep.m)
        gu = np.linalg.norm(_edge_diff(u, h), axis=-1)
        keep = om2 & (gu >= grad_drop_tol)
        dropped = int(np.count_nonzero(om2 & ~keep))
        R2 = np.zeros(dom.shape)
        R2[keep] = r2(fam, ep, xi[keep], eta[keep])
        consts = {
            "c_near_m": const("near_m", "c_hat"),
            "c_p_lt_s_lower_far": const("p_lt_s_lower_far", "c_hat"),
            "C_uniform": const("uniform", "C_hat"),
            "C_p_lt_s_upper": const("p_lt_s_upper", "C_hat"),
        }
        lower = hv * (consts["c_near_m"] * _fsum(R1m[om1]) + consts["c_p_lt_s_lower_far"] * _fsum(R2[keep]))
        upper = hv * (consts["C_uniform"] * _fsum(R1m[om1]) + consts["C_p_lt_s_upper"] * _fsum(R2[keep]))
    return BracketResult(lower / slack, upper * slack, Q, regime, picone, consts,
                         int(om1.sum()), int(om2.sum()), dropped, grad_drop_tol)


# ---------------------------------------------------------------------------
# Morrey norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MorreySpec:
    """Parameters of the local Morrey norm on a domain of dimension n.

    ``variant`` is ``basic``, ``enhanced_tilde`` or ``enhanced_hat``. The
    tilde variant needs q > n when p < n and ``theta`` in (n-1, n) when p = n;
    the hat variant additionally needs ``vartheta`` in (p-1, p) when p > n.
    """

    p: float
    q: float
    variant: str = "basic"
    theta: float | None = None
    vartheta: float | None = None

    def validate(self, n: int) -> None:
        p, q = self.p, self.q
        if self.variant not in ("basic", "enhanced_tilde", "enhanced_hat"):
            raise ValueError(f"unknown Morrey variant {self.variant!r}")
        if not p > 1:
            raise ValueError("p must exceed 1")
        if p < n:
            if not q > n / p:
                raise ValueError(f"p < n requires q > n/p = {n / p}")
            if self.variant != "basic" and not q > n:
                raise ValueError("enhanced Morrey norms with p < n require q > n")
        elif p == n:
            if not q > n:
                raise ValueError("p = n requires q > n")
            if self.variant != "basic" and not (self.theta is not None and n - 1 < self.theta < n):
                raise ValueError("p = n enhanced norms require theta in (n-1, n)")
        else:
            if q != 1:
                raise ValueError("p > n requires q = 1")
            if self.variant == "enhanced_hat" and not (self.vartheta is not None and p - 1 < self.vartheta < p):
                raise ValueError("p > n hat norm requires vartheta in (p-1, p)")

    def weight(self, r, n: int, diam: float):
        """Radius weight multiplying the ball integral; None means the L^1 norm."""
        p, q = self.p, self.q
        r = np.asarray(r, dtype=float)
        if p < n:
            return r ** (-n * (q - 1.0) / q)
        if p == n:
            if self.variant == "basic":
                return np.log(diam / r) ** (q * (n - 1.0) / n)
            return r ** (-self.theta)
        if self.variant == "enhanced_hat":
            return r ** (-(n - p + self.vartheta))
        return None


def _diameter(pts):
    if len(pts) < 2:
        return 0.0
    if pts.shape[1] == 1:
        return float(pts.max() - pts.min())
    from scipy.spatial import ConvexHull
    from scipy.spatial.distance import pdist

    try:
        hull = pts[ConvexHull(pts).vertices]
    except Exception:
        hull = pts
    return float(pdist(hull).max())


def morrey_profile(f: GridFunction, spec: MorreySpec, center_stride: int = 4, radii_per_octave: int = 4,
                   r_min: float | None = None, diam: float | None = None, chunk: int = 256) -> dict:
    """Lattice supremum of weight(r) * int_{omega cap B_r(y)} |f| with its argmax.

    Centres are the masked nodes whose indices are all multiples of
    ``center_stride``; radii are r_min 2^(j / radii_per_octave) below diam.
    Balls are open.
    """
    dom = f.domain
    n = dom.n
    spec.validate(n)
    pts = dom.points()[dom.mask]
    w = np.abs(f.values[dom.mask]) * dom.cell_volume
    d = _diameter(pts) if diam is None else float(diam)
    if not np.any(w):
        return {"value": 0.0, "center": None, "radius": None, "diam": d, "centers": 0, "radii": 0}
    if spec.weight(1.0, n, 2.0) is None:
        return {"value": math.fsum(w), "center": None, "radius": None, "diam": d, "centers": 0, "radii": 0}
    r0 = 2.0 * dom.h if r_min is None else float(r_min)
    count = int(np.floor(radii_per_octave * np.log2(d / r0) - 1e-12)) + 1
    radii = r0 * 2.0 ** (np.arange(count) / radii_per_octave)
    radii = radii[radii < d]
    idx = np.indices(dom.shape).reshape(n, -1).T[dom.mask.ravel()]
    centers = pts[np.all(idx % center_stride == 0, axis=1)]
    weights = spec.weight(radii, n, d)
    best, arg = -1.0, (None, None)
    for start in range(0, len(centers), chunk):
        c = centers[start:start + chunk]
        dist = np.sqrt(((c[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        # bin j collects nodes with radii[j-1] <= dist < radii[j]
        bins = np.searchsorted(radii, dist, side="right")
        nb = len(radii) + 1
        flat = (np.arange(len(c))[:, None] * nb + bins).ravel()
        mass = np.bincount(flat, weights=np.broadcast_to(w, bins.shape).ravel(),
                           minlength=len(c) * nb).reshape(len(c), nb)
        ball = np.cumsum(mass, axis=1)[:, :-1]
        vals = ball * weights[None, :]
        k = np.unravel_index(np.argmax(vals), vals.shape)
        if vals[k] > best:
            best, arg = float(vals[k]), (c[k[0]].tolist(), float(radii[k[1]]))
    return {"value": best, "center": arg[0], "radius": arg[1], "diam": d,
            "centers": int(len(centers)), "radii": int(len(radii))}


def morrey_norm(f: GridFunction, spec: MorreySpec, center_stride: int = 4, radii_per_octave: int = 4,
                r_min: float | None = None, diam: float | None = None) -> float:
    return morrey_profile(f, spec, center_stride, radii_per_octave, r_min, diam)["value"]


def lq_shell_mass(profile, q: float, n: int, eps: float, r0: float) -> float:
    """int_{eps < |x| < r0} |f|^q for radial f = profile(|x|), by radial quadrature."""
    area = 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)
    val, _ = integrate.quad(lambda t: abs(profile(t)) ** q * t ** (n - 1), eps, r0,
                            points=None, limit=200, epsabs=0.0, epsrel=1e-12)
    return area * val
