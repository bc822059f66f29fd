"""Bregman distances of H^p and seeded estimation of their equivalence constants.

``bregman_distance(fam, ep, xi, eta)`` is D_{H^p}(xi + eta, xi). It is never
evaluated by the textbook formula, whose three terms cancel catastrophically
once |eta| << |xi|. Instead the distance is split with the chain rule through
the smooth power f = |.|_{s,a}^s (or f = |.|_A^2):

    D_{f^q}(zeta, xi) = D_{t^q}(f(zeta), f(xi)) + q f(xi)^(q-1) D_f(zeta, xi),

where D_f is a sum of one-dimensional distances and every one-dimensional
distance switches to its binomial series when the increment is small.
"""

from __future__ import annotations

import math
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .fileio import atomic_write_text, dumps
from .norms import ExponentPair, Kind, NormFamily, norm, _check_dim

__all__ = [
    "BregmanSample",
    "EstimateReport",
    "LEMMAS",
    "SamplerConfig",
    "scalar_bregman",
    "bregman_distance",
    "bregman_sample",
    "norm_bregman",
    "r1",
    "r2",
    "pseudo_comparison",
    "matrix_comparison",
    "bregman_chain_decompose",
    "sample_pairs",
    "estimate_equivalence_constants",
    "load_calibration",
    "save_calibration",
    "lookup_calibration",
]

_SERIES_RADIUS = 0.25
_SERIES_TERMS = 32


def _binomial_tail(q: float, t):
    """(1 + t)^q - 1 - q t for |t| <= 1/4 via its binomial series."""
    coef = []
    c = q * (q - 1.0) / 2.0
    for k in range(2, _SERIES_TERMS + 2):
        coef.append(c)
        c *= (q - k) / (k + 1.0)
    acc = np.zeros_like(t)
    for c in reversed(coef):
        acc = acc * t + c
    return acc * t * t


def scalar_bregman(p: float, x, y):
    """|y|^p - |x|^p - p |x|^(p-2) x (y - x), elementwise.

    Written in terms of the base point x and the increment d = y - x so
    that callers who already hold d exactly can use :func:`_sb_increment`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return _sb_increment(p, x, y - x, y)


def _sb_increment(q: float, x, d, y=None):
    x, d = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(d, dtype=float))
    if y is None:
        y = x + d
    y = np.broadcast_to(y, x.shape)
    out = np.empty(x.shape)
    ax = np.abs(x)
    zero = ax == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(zero, np.inf, d / np.where(zero, 1.0, x))
    small = np.abs(t) <= _SERIES_RADIUS
    big = ~small & ~zero
    out[zero] = np.abs(d[zero]) ** q
    if np.any(small):
        out[small] = ax[small] ** q * _binomial_tail(q, t[small])
    if np.any(big):
        xb, db, yb = x[big], d[big], y[big]
        if q == 1.0:
            # |y| - |x| - sign(x) d vanishes unless the sign flips
            out[big] = np.where(np.sign(yb) == np.sign(xb), 0.0, 2.0 * np.abs(yb))
        else:
            out[big] = np.abs(yb) ** q - np.abs(xb) ** q - q * np.sign(xb) * np.abs(xb) ** (q - 1.0) * db
    return out


def _chain(q: float, f0, fz, lin, Df):
    """D_{f^q}(zeta, xi) from f(xi), f(zeta), grad f(xi) . eta and D_f(zeta, xi).

    Near xi (|f(zeta) - f(xi)| <= f(xi) / 4) the outer distance comes from the
    series and the inner term is added; elsewhere the direct formula is used,
    which then has no cancellation to fear.
    """
    f0, fz, lin, Df = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (f0, fz, lin, Df)))
    if q == 1.0:
        return Df.copy()
    df = lin + Df
    small = (f0 > 0) & (np.abs(df) <= _SERIES_RADIUS * f0)
    out = np.empty(f0.shape)
    if np.any(small):
        x, d = f0[small], df[small]
        out[small] = x**q * _binomial_tail(q, d / x) + q * x ** (q - 1.0) * Df[small]
    big = ~small
    if np.any(big):
        x = f0[big]
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(x > 0, q * x ** (q - 1.0) * lin[big], 0.0)
        out[big] = fz[big] ** q - x**q - slope
    return out


def _s_pieces(fam, xi, eta):
    """f(xi), f(zeta), grad f(xi) . eta and D_f(zeta, xi) for f = |.|_{s,a}^s."""
    s, a = fam.s, fam.a
    comp = _sb_increment(s, xi, eta)
    f0 = np.sum(a * np.abs(xi) ** s, axis=-1)
    fz = np.sum(a * np.abs(xi + eta) ** s, axis=-1)
    lin = np.sum(a * s * np.sign(xi) * np.abs(xi) ** (s - 1.0) * eta, axis=-1)
    Df = np.sum(a * comp, axis=-1)
    return f0, fz, lin, Df


def _a_pieces(fam, xi, eta):
    """Same pieces for f = |.|_A^2, where D_f(zeta, xi) = A eta . eta."""
    L = fam._chol
    X = xi @ L
    E = eta @ L
    Z = X + E
    f0 = np.sum(X * X, axis=-1)
    Df = np.sum(E * E, axis=-1)
    return f0, np.sum(Z * Z, axis=-1), 2.0 * np.sum(X * E, axis=-1), Df


def bregman_distance(fam: NormFamily, ep: ExponentPair, xi, eta):
    """D_{H^p}(xi + eta, xi) = H(xi+eta)^p - H(xi)^p - p A(xi) . eta."""
    xi = _check_dim(xi, fam.dim)
    eta = _check_dim(eta, fam.dim)
    xi, eta = np.broadcast_arrays(xi, eta)
    p = ep.p
    total = 0.0
    if fam.kind in (Kind.WEIGHTED_S, Kind.COMBINED):
        total = total + _chain(p / fam.s, *_s_pieces(fam, xi, eta))
    if fam.kind in (Kind.MATRIX, Kind.COMBINED):
        total = total + _chain(p / 2.0, *_a_pieces(fam, xi, eta))
    return total


def _pure_pieces(fam, xi, eta):
    """Exponent 1/e of h = f^(1/e) and the pieces of f for a pure family."""
    if fam.kind is Kind.WEIGHTED_S:
        return fam.s, _s_pieces(fam, xi, eta)
    if fam.kind is Kind.MATRIX:
        return 2.0, _a_pieces(fam, xi, eta)
    raise ValueError("operation needs a pure (weighted_s or matrix) family")


def norm_bregman(fam: NormFamily, xi, eta):
    """D_H(xi + eta, xi) for the norm itself (H convex, 1-homogeneous).

    The gradient of H at 0 is taken to be 0, so D_H(eta, 0) = H(eta).
    """
    xi = _check_dim(xi, fam.dim)
    eta = _check_dim(eta, fam.dim)
    xi, eta = np.broadcast_arrays(xi, eta)
    e, pieces = _pure_pieces(fam, xi, eta)
    return _chain(1.0 / e, *pieces)


@dataclass
class BregmanSample:
    xi: np.ndarray
    eta: np.ndarray
    D: float
    r1_m: float
    r1_M: float
    r2: float | None = None


def bregman_sample(fam, ep, xi, eta) -> BregmanSample:
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    try:
        val2 = float(r2(fam, ep, xi, eta))
    except ValueError:
        val2 = None
    return BregmanSample(xi, eta, float(bregman_distance(fam, ep, xi, eta)),
                         float(r1(fam, ep, xi, eta, ep.m)), float(r1(fam, ep, xi, eta, ep.M)), val2)


def r1(fam: NormFamily, ep: ExponentPair, xi, eta, l: float):
    """|eta|^l (|eta| + |xi|)^(p - l), norms taken in H."""
    nx = norm(xi, fam, ep)
    ne = norm(eta, fam, ep)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ne > 0, ne**l * (ne + nx) ** (ep.p - l), 0.0)


def _pair_terms(fam, xi, eta, e):
    """sum_i |eta'_i|^2 (|eta'_i| + |xi'_i|)^(e - 2) with xi'_i = a_i^(1/s) xi_i."""
    w = fam.a ** (1.0 / fam.s)
    ex = np.abs(w * xi)
    ee = np.abs(w * eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(ee > 0, ee**2 * (ee + ex) ** (e - 2.0), 0.0)
    return np.sum(term, axis=-1)


def r2(fam: NormFamily, ep: ExponentPair, xi, eta):
    """|xi|_{s,a}^(p-s) sum_i |eta'_i|^2 (|eta'_i| + |xi'_i|)^(s-2).

    Undefined at xi = 0 when p < s; raises ``ValueError`` there.
    """
    if fam.kind is not Kind.WEIGHTED_S:
        raise ValueError("R2 is defined for weighted s-norms")
    xi = _check_dim(xi, fam.dim)
    eta = _check_dim(eta, fam.dim)
    p, s = ep.p, fam.s
    nx = norm(xi, fam)
    if p < s and np.any(nx == 0):
        raise ValueError("R2 is undefined at xi = 0 when p < s")
    with np.errstate(divide="ignore"):
        lead = nx ** (p - s) if p != s else np.ones_like(nx)
    return lead * _pair_terms(fam, xi, eta, s)


def pseudo_comparison(fam, ep, xi, eta):
    """sum_i |eta'_i|^2 (|eta'_i| + |xi'_i|)^(p-2), the p = s comparison."""
    return _pair_terms(fam, _check_dim(xi, fam.dim), _check_dim(eta, fam.dim), ep.p)


def matrix_comparison(fam, ep, xi, eta):
    """|eta|_A^2 (|eta|_A + |xi|_A)^(p-2)."""
    nx = norm(xi, fam)
    ne = norm(eta, fam)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ne > 0, ne**2 * (ne + nx) ** (ep.p - 2.0), 0.0)


def bregman_chain_decompose(fam: NormFamily, ep: ExponentPair, r: float, xi, eta):
    """Split D_{h^r}(xi+eta, xi) with h = H into outer and slope parts.

    Returns ``(total, outer, slope_term)`` where ``total`` is the distance of
    h^r, ``outer`` the distance of t -> t^r between h(xi+eta) and h(xi), and
    ``slope_term = r h(xi)^(r-1) (h(xi+eta) - h(xi) - grad h(xi) . eta)``.
    ``ep`` is accepted for signature symmetry; only ``r`` enters.
    """
    if not r > 1:
        raise ValueError("r must exceed 1")
    xi = _check_dim(xi, fam.dim)
    eta = _check_dim(eta, fam.dim)
    xi, eta = np.broadcast_arrays(xi, eta)
    e, (f0, fz, lin, Df) = _pure_pieces(fam, xi, eta)
    total = _chain(r / e, f0, fz, lin, Df)
    hx = f0 ** (1.0 / e)
    df = lin + Df
    near = (f0 > 0) & (np.abs(df) <= _SERIES_RADIUS * f0)
    # near xi: h(zeta) - h(xi) = h(xi) ((1 + df/f0)^(1/e) - 1) without cancellation
    with np.errstate(divide="ignore", invalid="ignore"):
        dh = np.where(near, hx * np.expm1(np.log1p(df / np.where(near, f0, 1.0)) / e), fz ** (1.0 / e) - hx)
    outer = _sb_increment(r, hx, dh)
    slope = r * hx ** (r - 1.0) * _chain(1.0 / e, f0, fz, lin, Df)
    return total, outer, slope


# ---------------------------------------------------------------------------
# Seeded estimation of equivalence constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lemma:
    id: str
    bound: str  # "lower", "upper" or "two-sided"
    regime: str  # "all", "near" (|xi| <= |eta|) or "far" (|xi| > |eta|)
    summary: str
    family: str = "weighted_s"


LEMMAS = {
    lem.id: lem
    for lem in [
        Lemma("euclidean", "two-sided", "all",
              "D_{|.|^p} vs |eta|^2 (|eta| + |xi|)^(p-2), Euclidean norm"),
        Lemma("matrix", "two-sided", "all",
              "D_{|.|_A^p} vs |eta|_A^2 (|eta|_A + |xi|_A)^(p-2)", family="matrix"),
        Lemma("pseudo", "two-sided", "all",
              "p = s: D vs sum |eta'_i|^2 (|eta'_i| + |xi'_i|)^(p-2)"),
        Lemma("uniform", "two-sided", "all",
              "c R1(M) <= D <= C R1(m)"),
        Lemma("near", "two-sided", "near",
              "|xi| <= |eta|: D vs R1(l), l uniform in [m, M]"),
        Lemma("near_m", "two-sided", "near", "|xi| <= |eta|: D vs R1(m)"),
        Lemma("near_M", "two-sided", "near", "|xi| <= |eta|: D vs R1(M)"),
        Lemma("s_lt_p_lower", "lower", "all", "s < p: D >= c R2"),
        Lemma("s_lt_p_upper_far", "upper", "far", "s < p, |xi| > |eta|: D <= C R2"),
        Lemma("p_lt_s_upper", "upper", "all", "p < s, xi != 0: D <= C R2"),
        Lemma("p_lt_s_lower_far", "lower", "far", "p < s, |xi| > |eta|: D >= c R2"),
    ]
}


def applicable(lemma_id: str, ep: ExponentPair) -> bool:
    """Whether the exponent regime of ``ep`` is the one the lemma is stated for."""
    p, s = ep.p, ep.s
    if lemma_id == "euclidean":
        return s == 2.0
    if lemma_id == "pseudo":
        return p == s
    if lemma_id.startswith("s_lt_p"):
        return s < p
    if lemma_id.startswith("p_lt_s"):
        return p < s
    return True


@dataclass
class SamplerConfig:
    """Directions uniform on the sphere, radii log-uniform on [r_min, r_max]."""

    r_min: float = 1e-3
    r_max: float = 1e3
    chunk: int = 65536
    cap: float = math.inf
    max_violations: int = 20


@dataclass
class EstimateReport:
    lemma_id: str
    p: float
    s: float
    n: int
    sample_count: int
    c_hat: float
    C_hat: float
    bound: str
    seed: int
    cap: float = math.inf
    violation_count: int = 0
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violation_count == 0

    def to_dict(self) -> dict:
        return asdict(self)

    CSV_FIELDS = ("lemma_id", "p", "s", "n", "sample_count", "c_hat", "C_hat",
                  "bound", "seed", "cap", "violation_count")

    def csv_row(self) -> list:
        return [getattr(self, k) for k in self.CSV_FIELDS]


def _chunk_rng(seed: int, index: int):
    return np.random.default_rng([seed, index])


def _draw(rng, count, n, cfg):
    d = rng.standard_normal((count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = np.exp(rng.uniform(np.log(cfg.r_min), np.log(cfg.r_max), count))
    return d * r[:, None]


def sample_pairs(fam, ep, regime, N, seed, cfg: SamplerConfig | None = None):
    """Draw N pairs (xi, eta) inside a regime, plus per-sample l in [m, M].

    Chunk k of every run draws from the stream seeded by ``(seed, k)``, so a
    run of N samples is a prefix of any longer run with the same seed.
    """
    cfg = cfg or SamplerConfig()
    n = fam.dim
    xs, es, ls = [], [], []
    have = 0
    k = 0
    while have < N:
        rng = _chunk_rng(seed, k)
        xi = _draw(rng, cfg.chunk, n, cfg)
        eta = _draw(rng, cfg.chunk, n, cfg)
        l = rng.uniform(ep.m, ep.M, cfg.chunk)
        if regime != "all":
            nx, ne = norm(xi, fam, ep), norm(eta, fam, ep)
            keep = nx <= ne if regime == "near" else nx > ne
            xi, eta, l = xi[keep], eta[keep], l[keep]
        xs.append(xi)
        es.append(eta)
        ls.append(l)
        have += len(xi)
        k += 1
        if k > 1000 and have == 0:
            raise RuntimeError("regime filter rejected every sample")
    return np.concatenate(xs)[:N], np.concatenate(es)[:N], np.concatenate(ls)[:N]


def _ratios(lemma, fam, ep, xi, eta, l):
    """(lower-side ratio, upper-side ratio) of D against the lemma's comparison."""
    D = bregman_distance(fam, ep, xi, eta)
    lid = lemma.id
    if lid in ("euclidean", "matrix"):
        comp = matrix_comparison(fam, ep, xi, eta) if lid == "matrix" else r1(fam, ep, xi, eta, 2.0)
        return D / comp, D / comp
    if lid == "pseudo":
        comp = pseudo_comparison(fam, ep, xi, eta)
        return D / comp, D / comp
    if lid == "uniform":
        return D / r1(fam, ep, xi, eta, ep.M), D / r1(fam, ep, xi, eta, ep.m)
    if lid.startswith("near"):
        ll = {"near": l, "near_m": ep.m, "near_M": ep.M}[lid]
        ratio = D / r1(fam, ep, xi, eta, ll)
        return ratio, ratio
    ratio = D / r2(fam, ep, xi, eta)
    return ratio, ratio


def _validate(lemma_id, fam, ep):
    if lemma_id not in LEMMAS:
        raise ValueError(f"unknown lemma {lemma_id!r}; choose from {sorted(LEMMAS)}")
    lemma = LEMMAS[lemma_id]
    if lemma.family == "matrix":
        if fam.kind is not Kind.MATRIX:
            raise ValueError(f"lemma {lemma_id} needs a matrix family")
    else:
        if fam.kind is not Kind.WEIGHTED_S:
            raise ValueError(f"lemma {lemma_id} needs a weighted s-norm family")
        if fam.s != ep.s:
            raise ValueError("family exponent s and ExponentPair.s disagree")
        if lemma_id == "euclidean" and not np.all(fam.a == 1.0):
            raise ValueError("lemma euclidean needs unit weights")
    if not applicable(lemma_id, ep):
        raise ValueError(f"lemma {lemma_id} does not apply to p={ep.p}, s={ep.s}")
    return lemma


def estimate_equivalence_constants(lemma_id: str, fam: NormFamily, ep: ExponentPair,
                                   sampler_cfg: SamplerConfig | None = None,
                                   N: int = 100_000, seed: int = 0) -> EstimateReport:
    """Empirical min/max of D over the lemma's comparison quantity.

    ``c_hat`` is the minimum of the lower-side ratio and ``C_hat`` the maximum
    of the upper-side ratio. A lower bound is violated by a ratio that is not
    strictly positive; an upper bound by a ratio above ``sampler_cfg.cap``.
    Samples with eta = 0 are excluded since both sides vanish there.
    """
    cfg = sampler_cfg or SamplerConfig()
    lemma = _validate(lemma_id, fam, ep)
    xi, eta, l = sample_pairs(fam, ep, lemma.regime, N, seed, cfg)
    keep = np.any(eta != 0, axis=1)
    if not np.any(keep):
        raise RuntimeError("every sample is degenerate (eta = 0)")
    xi, eta, l = xi[keep], eta[keep], l[keep]
    lo, hi = _ratios(lemma, fam, ep, xi, eta, l)
    bad = np.zeros(len(xi), dtype=bool)
    if lemma.bound in ("lower", "two-sided"):
        bad |= ~(lo > 0) | ~np.isfinite(lo)
    if lemma.bound in ("upper", "two-sided"):
        bad |= ~np.isfinite(hi) | (hi > cfg.cap)
    viol = [
        {"xi": xi[i].tolist(), "eta": eta[i].tolist(), "lower_ratio": float(lo[i]), "upper_ratio": float(hi[i])}
        for i in np.flatnonzero(bad)[: cfg.max_violations]
    ]
    return EstimateReport(
        lemma_id=lemma_id, p=ep.p, s=ep.s if lemma.family != "matrix" else 2.0, n=fam.dim,
        sample_count=int(len(xi)), c_hat=float(np.min(lo)), C_hat=float(np.max(hi)),
        bound=lemma.bound, seed=seed, cap=cfg.cap, violation_count=int(bad.sum()), violations=viol,
    )


# ---------------------------------------------------------------------------
# Calibration file: {lemma_id: [{p, s, n, c_hat, C_hat, N, seed}, ...]}
# ---------------------------------------------------------------------------

CALIBRATION_PATH = Path(__file__).with_name("data") / "calibration.json"


def load_calibration(path=None) -> dict:
    path = Path(path) if path else CALIBRATION_PATH
    with open(path) as fh:
        return json.load(fh)


def save_calibration(table: dict, path) -> None:
    atomic_write_text(path, dumps(table))


def lookup_calibration(table: dict, lemma_id: str, p: float, s: float, n: int) -> dict:
    for entry in table.get(lemma_id, []):
        if entry["p"] == p and entry["s"] == s and entry["n"] == n:
            return entry
    raise KeyError(f"no calibration for {lemma_id} at p={p}, s={s}, n={n}")


def standard_matrix(n: int, seed: int = 0) -> np.ndarray:
    """Seeded symmetric positive definite matrix used for the matrix-norm lemma."""
    rng = np.random.default_rng([seed, n])
    B = rng.standard_normal((n, n))
    return B @ B.T / n + 0.5 * np.eye(n)


def lemma_family(lemma_id: str, ep: ExponentPair, n: int, matrix_seed: int = 0) -> NormFamily:
    if LEMMAS[lemma_id].family == "matrix":
        return NormFamily.matrix(standard_matrix(n, matrix_seed))
    return NormFamily.weighted_s(ep.s, np.ones(n))


def lemma_runs(exponents, dims):
    """(lemma_id, ExponentPair, n) triples of the two-sided estimate suite.

    The matrix lemma does not involve s and runs once per (p, n), keyed s = 2.
    """
    runs = []
    for p in exponents:
        for s in exponents:
            ep = ExponentPair(p, s)
            for n in dims:
                for lid, lem in LEMMAS.items():
                    if lem.family == "matrix":
                        if s != exponents[0]:
                            continue
                        runs.append((lid, ExponentPair(p, 2.0), n))
                    elif applicable(lid, ep):
                        runs.append((lid, ep, n))
    return runs


def calibrate_lemmas(exponents, dims, N: int, seed: int, matrix_seed: int = 0, progress=None) -> dict:
    """Empirical (c_hat, C_hat) for every lemma run, keyed by lemma id."""
    table: dict = {}
    for lid, ep, n in lemma_runs(exponents, dims):
        fam = lemma_family(lid, ep, n, matrix_seed)
        rep = estimate_equivalence_constants(lid, fam, ep, N=N, seed=seed)
        table.setdefault(lid, []).append({
            "p": ep.p, "s": ep.s, "n": n, "c_hat": rep.c_hat, "C_hat": rep.C_hat,
            "N": rep.sample_count, "seed": seed, "bound": rep.bound,
        })
        if progress:
            progress(lid, ep, n, rep)
    return table
