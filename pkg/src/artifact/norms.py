"""Norm families on R^n, the Lagrangian F = H^p / p and its gradient field.

All evaluators broadcast over leading axes: ``xi`` has shape ``(..., n)`` and
scalar results have shape ``(...)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Kind",
    "NormFamily",
    "ExponentPair",
    "weighted_s_norm",
    "matrix_norm",
    "norm",
    "norm_power",
    "lagrangian_F",
    "operator_A",
    "structure_constants",
    "equivalence_constants",
    "modulus_of_convexity_estimate",
]


class Kind(str, enum.Enum):
    WEIGHTED_S = "weighted_s"
    MATRIX = "matrix"
    COMBINED = "combined"


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NormFamily:
    """A constant-in-x norm H on R^n.

    ``WEIGHTED_S`` is ``(sum a_i |xi_i|^s)^(1/s)``, ``MATRIX`` is
    ``sqrt(A xi . xi)`` and ``COMBINED`` is ``(|xi|_{s,a}^p + |xi|_A^p)^(1/p)``,
    which needs the exponent p at evaluation time.
    """

    kind: Kind
    s: float | None = None
    a: np.ndarray | None = None
    A: np.ndarray | None = None
    _chol: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (Kind.WEIGHTED_S, Kind.COMBINED):
            if self.s is None or not self.s > 1:
                raise ValueError(f"s must be > 1, got {self.s!r}")
            if self.a is None:
                raise ValueError("weights a are required")
            a = _frozen(self.a)
            if a.ndim != 1 or a.size == 0:
                raise ValueError("a must be a non-empty vector")
            if not np.all(np.isfinite(a)) or np.any(a <= 0):
                raise ValueError("all weights a_i must be positive")
            object.__setattr__(self, "s", float(self.s))
            object.__setattr__(self, "a", a)
        if kind in (Kind.MATRIX, Kind.COMBINED):
            if self.A is None:
                raise ValueError("matrix A is required")
            A = _frozen(self.A)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ValueError("A must be square")
            if np.any(np.abs(A - A.T) > 1e-12):
                raise ValueError("A must be symmetric")
            if np.linalg.eigvalsh(A)[0] <= 0:
                raise ValueError("A must be positive definite")
            if kind is Kind.COMBINED and A.shape[0] != self.a.size:
                raise ValueError("dimensions of a and A disagree")
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "_chol", _frozen(np.linalg.cholesky(A)))

    @classmethod
    def weighted_s(cls, s, a):
        return cls(Kind.WEIGHTED_S, s=s, a=a)

    @classmethod
    def matrix(cls, A):
        return cls(Kind.MATRIX, A=A)

    @classmethod
    def combined(cls, s, a, A):
        return cls(Kind.COMBINED, s=s, a=a, A=A)

    @classmethod
    def euclidean(cls, n):
        return cls(Kind.WEIGHTED_S, s=2.0, a=np.ones(n))

    @property
    def dim(self) -> int:
        return self.a.size if self.a is not None else self.A.shape[0]

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.s is not None:
            out["s"] = self.s
        if self.a is not None:
            out["a"] = self.a.tolist()
        if self.A is not None:
            out["A"] = self.A.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "NormFamily":
        return cls(Kind(d["kind"]), s=d.get("s"), a=d.get("a"), A=d.get("A"))


@dataclass(frozen=True)
class ExponentPair:
    """Growth exponent p of the energy and exponent s of the weighted norm."""

    p: float
    s: float = 2.0

    def __post_init__(self):
        if not (self.p > 1 and self.s > 1):
            raise ValueError(f"need p > 1 and s > 1, got p={self.p}, s={self.s}")
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "s", float(self.s))

    @property
    def m(self) -> float:
        return min(self.s, 2.0)

    @property
    def M(self) -> float:
        return max(self.s, 2.0)


def _check_dim(xi, n):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0 or xi.shape[-1] != n:
        raise ValueError(f"expected vectors of dimension {n}, got shape {xi.shape}")
    return xi


def _require(fam, *kinds):
    if fam.kind not in kinds:
        raise ValueError(f"operation needs a {'/'.join(k.value for k in kinds)} family, got {fam.kind.value}")


def _s_power(xi, fam):
    """sum_i a_i |xi_i|^s, i.e. |xi|_{s,a}^s."""
    return np.sum(fam.a * np.abs(xi) ** fam.s, axis=-1)


def _quad(xi, fam):
    """A xi . xi, computed as |L^T xi|^2 so it is never negative."""
    y = xi @ fam._chol
    return np.sum(y * y, axis=-1)


# rows whose largest component lies outside this range are rescaled by a power of two
_SAFE = (1e-60, 1e60)


def _rescale(xi):
    """(xi / m, m) with m = 1 on safe rows and an exact power of two elsewhere."""
    big = np.max(np.abs(xi), axis=-1)
    bad = (big > 0) & ((big < _SAFE[0]) | (big > _SAFE[1]))
    if not np.any(bad):
        return xi, None
    m = np.where(bad, np.ldexp(1.0, np.frexp(np.where(bad, big, 1.0))[1]), 1.0)
    return xi / m[..., None], m


def weighted_s_norm(xi, fam: NormFamily):
    _require(fam, Kind.WEIGHTED_S, Kind.COMBINED)
    xi, m = _rescale(_check_dim(xi, fam.dim))
    out = _s_power(xi, fam) ** (1.0 / fam.s)
    return out if m is None else m * out


def matrix_norm(xi, fam: NormFamily):
    _require(fam, Kind.MATRIX, Kind.COMBINED)
    xi, m = _rescale(_check_dim(xi, fam.dim))
    out = np.sqrt(_quad(xi, fam))
    return out if m is None else m * out


def norm_power(xi, fam: NormFamily, p: float):
    """H(xi)^p, evaluated without an intermediate p-th root where possible."""
    xi, m = _rescale(_check_dim(xi, fam.dim))
    if fam.kind is Kind.WEIGHTED_S:
        out = _s_power(xi, fam) ** (p / fam.s)
    elif fam.kind is Kind.MATRIX:
        out = _quad(xi, fam) ** (p / 2.0)
    else:
        out = _s_power(xi, fam) ** (p / fam.s) + _quad(xi, fam) ** (p / 2.0)
    return out if m is None else m**p * out


def norm(xi, fam: NormFamily, ep: ExponentPair | None = None):
    """Evaluate H(xi). Combined families need ``ep`` for their exponent p."""
    if fam.kind is Kind.WEIGHTED_S:
        return weighted_s_norm(xi, fam)
    if fam.kind is Kind.MATRIX:
        return matrix_norm(xi, fam)
    if ep is None:
        raise ValueError("the combined norm depends on p; pass an ExponentPair")
    xi, m = _rescale(_check_dim(xi, fam.dim))
    out = norm_power(xi, fam, ep.p) ** (1.0 / ep.p)
    return out if m is None else m * out


def lagrangian_F(xi, fam: NormFamily, ep: ExponentPair):
    return norm_power(xi, fam, ep.p) / ep.p


def _signed_power(x, e):
    """sign(x) |x|^e with value 0 at x = 0 (e > 0)."""
    return np.sign(x) * np.abs(x) ** e


def _grad_s_part(xi, fam, p):
    # a_i |xi|_{s,a}^{p-s} |xi_i|^{s-2} xi_i, defined as 0 at xi = 0
    S = _s_power(xi, fam)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(S > 0, S ** ((p - fam.s) / fam.s), 0.0)
    return fam.a * _signed_power(xi, fam.s - 1.0) * scale[..., None]


def _grad_matrix_part(xi, fam, p):
    q = _quad(xi, fam)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(q > 0, q ** ((p - 2.0) / 2.0), 0.0)
    return (xi @ fam.A) * scale[..., None]


def operator_A(xi, fam: NormFamily, ep: ExponentPair):
    """The field grad_xi F(xi) with F = H^p / p."""
    xi, m = _rescale(_check_dim(xi, fam.dim))
    p = ep.p
    if fam.kind is Kind.WEIGHTED_S:
        out = _grad_s_part(xi, fam, p)
    elif fam.kind is Kind.MATRIX:
        out = _grad_matrix_part(xi, fam, p)
    else:
        out = _grad_s_part(xi, fam, p) + _grad_matrix_part(xi, fam, p)
    return out if m is None else (m ** (p - 1.0))[..., None] * out


def equivalence_constants(fam: NormFamily, ep: ExponentPair | None = None):
    """Constants (kappa, nu) with kappa |xi| <= H(xi) <= nu |xi| (Euclidean |.|)."""
    n = fam.dim
    parts = []
    if fam.kind in (Kind.WEIGHTED_S, Kind.COMBINED):
        s = fam.s
        r = n ** (1.0 / s - 0.5)
        parts.append((fam.a.min() ** (1.0 / s) * min(1.0, r), fam.a.max() ** (1.0 / s) * max(1.0, r)))
    if fam.kind in (Kind.MATRIX, Kind.COMBINED):
        ev = np.linalg.eigvalsh(fam.A)
        parts.append((np.sqrt(ev[0]), np.sqrt(ev[-1])))
    if len(parts) == 1:
        return parts[0]
    if ep is None:
        raise ValueError("the combined norm depends on p; pass an ExponentPair")
    p = ep.p
    (k1, n1), (k2, n2) = parts
    return (k1**p + k2**p) ** (1 / p), (n1**p + n2**p) ** (1 / p)


def structure_constants(fam: NormFamily, ep: ExponentPair):
    """Ellipticity and growth constants (alpha, beta) of the field A.

    alpha |xi|^p <= A(xi) . xi and |A(xi)| <= beta |xi|^(p-1), with
    alpha = kappa^p / p and beta = 2^p nu^p / p.
    """
    kappa, nu = equivalence_constants(fam, ep)
    p = ep.p
    return kappa**p / p, 2.0**p * nu**p / p


def _unit(x, fam, ep):
    return x / norm(x, fam, ep)[..., None]


def modulus_of_convexity_estimate(fam: NormFamily, eps: float, N: int, seed: int,
                                  ep: ExponentPair | None = None, bisect_steps: int = 60) -> float:
    """Sampled upper estimate of the modulus of convexity of (R^n, H).

    Each sample picks a random 2-plane, a random point x on the unit circle of
    H in that plane, and walks along the circle until ||x - y|| = eps
    (bisection on the angle). The estimate is min 1 - ||(x + y)/2||.
    """
    if not 0 < eps <= 2:
        raise ValueError("eps must lie in (0, 2]")
    if N < 1:
        raise ValueError("N must be >= 1")
    n = fam.dim
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((N, n, 2))
    basis, _ = np.linalg.qr(g)
    u, v = basis[..., 0], basis[..., 1]
    theta0 = rng.uniform(0.0, 2 * np.pi, N)

    def circle(theta):
        pts = np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v
        return _unit(pts, fam, ep)

    x = circle(theta0)
    lo = np.zeros(N)
    hi = np.full(N, np.pi)
    # distance grows from 0 at offset 0 to 2 at offset pi (antipode)
    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        d = norm(x - circle(theta0 + mid), fam, ep)
        below = d < eps
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    y = circle(theta0 + hi)
    if eps == 2:
        y = -x
    vals = 1.0 - norm(0.5 * (x + y), fam, ep)
    return float(max(vals.min(), 0.0))
