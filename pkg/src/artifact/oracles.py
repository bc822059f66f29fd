"""Analytic and one-dimensional reference values used to check the grid solvers."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

__all__ = [
    "sphere_area",
    "dirichlet_eigenvalue_cube",
    "discrete_dirichlet_eigenvalue_cube",
    "classical_hardy_constant",
    "condenser_capacity",
    "radial_dirichlet_eigenvalue",
    "truncated_hardy_eigenvalue",
    "annulus_eigenvalue",
    "euclidean_modulus_of_convexity",
    "morrey_power_ball_value",
    "power_shell_mass",
]


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def dirichlet_eigenvalue_cube(n: int, L: float = 1.0) -> float:
    """First Dirichlet eigenvalue of the Laplacian on [0, L]^n."""
    return n * (math.pi / L) ** 2


def discrete_dirichlet_eigenvalue_cube(n: int, N: int, L: float = 1.0) -> float:
    """First eigenvalue of the (2n+1)-point Laplacian with N cells per side."""
    h = L / N
    return n * 4.0 / h**2 * math.sin(math.pi * h / (2.0 * L)) ** 2


def classical_hardy_constant(n: int, p: float) -> float:
    """|(n - p) / p|^p, the best constant for g = |x|^-p."""
    return abs((n - p) / p) ** p


def condenser_capacity(n: int, p: float, r: float, R: float) -> float:
    """p-capacity of the closed ball B_r relative to B_R in R^n."""
    w = sphere_area(n)
    if p == n:
        return w * math.log(R / r) ** (1.0 - p)
    e = (p - n) / (p - 1.0)
    return w * abs((n - p) / (p - 1.0)) ** (p - 1.0) * abs(r**e - R**e) ** (1.0 - p)


def _shoot(n, a, b, lam, weight):
    """phi(b) for (r^(n-1) phi')' + lam w(r) r^(n-1) phi = 0, phi(a) = 0, phi'(a) = 1."""

    def rhs(r, y):
        phi, flux = y  # flux = r^(n-1) phi'
        return [flux / r ** (n - 1), -lam * weight(r) * r ** (n - 1) * phi]

    sol = integrate.solve_ivp(rhs, (a, b), [0.0, a ** (n - 1)], method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[0, -1], sol.y[0]


def radial_dirichlet_eigenvalue(n: int, a: float, b: float, weight=None, lam_max: float = 1e6) -> float:
    """Smallest lam with a radial Dirichlet solution on the shell a < |x| < b.

    Shooting from r = a and bisecting on the first sign change of phi(b),
    for -div grad phi = lam w(|x|) phi (p = 2).
    """
    if not 0 < a < b:
        raise ValueError("need 0 < a < b")
    weight = weight or (lambda r: 1.0)

    def has_zero(lam):
        # the first eigenvalue is the smallest lam whose solution vanishes in (a, b]
        ys = _shoot(n, a, b, lam, weight)[1][1:]
        return bool(np.any(ys <= 0))

    lo, hi = 0.0, 1.0
    while not has_zero(hi):
        lo, hi = hi, 2.0 * hi
        if hi > lam_max:
            raise RuntimeError("no eigenvalue below lam_max")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if has_zero(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def truncated_hardy_eigenvalue(eps: float, n: int = 3) -> float:
    """Closed form for -Lap phi = lam |x|^-2 phi on eps < |x| < 1 (p = 2, n >= 3).

    With phi = r^((2-n)/2) psi(log r) the problem becomes a constant
    coefficient one, giving lam = ((n-2)/2)^2 + (pi / log(1/eps))^2.
    """
    return ((n - 2) / 2.0) ** 2 + (math.pi / math.log(1.0 / eps)) ** 2


def annulus_eigenvalue(rho: float, R: float = 1.0) -> float:
    """First Dirichlet eigenvalue of the planar annulus rho < |x| < R via radial shooting."""
    return radial_dirichlet_eigenvalue(2, rho, R)


def euclidean_modulus_of_convexity(eps: float) -> float:
    return 1.0 - math.sqrt(1.0 - eps * eps / 4.0)


def morrey_power_ball_value(n: int, q: float) -> float:
    """r^(-n/q') int_{B_r(0)} |x|^(-n/q) dx, independent of r."""
    return sphere_area(n) / (n - n / q)


def power_shell_mass(n: int, q: float, alpha: float, eps: float, r0: float) -> float:
    """int_{eps < |x| < r0} |x|^(-alpha q) dx in closed form."""
    e = n - alpha * q
    if e == 0:
        return sphere_area(n) * math.log(r0 / eps)
    return sphere_area(n) * (r0**e - eps**e) / e
