"""The acceptance suite: one deterministic check per criterion.

Every ``criterion_k`` returns a JSON-ready dict with ``id``, ``name``,
``passed`` and the measured quantities. Wall-clock times are kept apart from
the results so that result files are byte-identical across reruns.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import mpmath
import numpy as np

from . import oracles
from .bregman import (
    EstimateReport,
    LEMMAS,
    SamplerConfig,
    bregman_chain_decompose,
    bregman_distance,
    estimate_equivalence_constants,
    lemma_family,
    lemma_runs,
    load_calibration,
    lookup_calibration,
    sample_pairs,
    scalar_bregman,
    standard_matrix,
)
from .energy import lq_shell_mass, morrey_profile, simplified_energy_bracket
from .fileio import atomic_write_text, dumps
from .norms import (
    ExponentPair,
    NormFamily,
    lagrangian_F,
    norm_power,
    operator_A,
    structure_constants,
)
from .problems import (
    bracket_catalogue,
    condenser,
    mazya_instance,
    morrey_instance,
    punctured_ball_hardy,
    unit_square_hardy,
)
from .variational import SolverConfig, capacity, hardy_constant, mazya_ratio

__all__ = ["AcceptanceConfig", "CRITERIA", "BUDGETS", "run_suite", "run_acceptance", "summary_line", "summary_lines"]

# wall-clock budgets in seconds
BUDGETS = {1: 10, 2: 300, 3: 30, 4: 60, 5: 300, 6: 120, 7: 180, 8: 60, 9: 30}


@dataclass
class AcceptanceConfig:
    seed: int = 0
    identity_samples: int = 100_000
    oracle_samples: int = 2_000
    estimate_samples: int = 100_000
    structure_samples: int = 10_000
    exponents: list = field(default_factory=lambda: [1.5, 2.0, 3.0, 4.0])
    dims: list = field(default_factory=lambda: [2, 3, 5])
    cap_factor: float = 1.2
    hardy_N: list = field(default_factory=lambda: [32, 64, 128])
    ball_N: int = 48
    ball_levels: int = 3
    ball_restarts: int = 1
    condenser_N: int = 256
    condenser_levels: int = 3
    scaling_N: int = 64
    scaling_tol: float = 1e-13
    scaling_patience: int = 50
    monotone_N: int = 64
    mazya_N: int = 32
    mazya_instances: int = 3
    mazya_slack: float = 0.05
    bracket_N: int = 64
    morrey_N: int = 64


def _rel(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.abs(b), np.finfo(float).tiny)
    return np.abs(a - b) / scale


# ---------------------------------------------------------------------------
# 1. Bregman identities
# ---------------------------------------------------------------------------


def _mp_pseudo_bregman(p, a, xi, zeta, dps=40):
    """sum_i a_i (|z_i|^p - |x_i|^p - p |x_i|^(p-2) x_i (z_i - x_i)) in extended precision."""
    with mpmath.workdps(dps):
        P = mpmath.mpf(p)
        A = [mpmath.mpf(float(w)) for w in a]
        out = np.empty(len(xi))
        for j, (x, z) in enumerate(zip(xi, zeta)):
            tot = mpmath.mpf(0)
            for w, xv, zv in zip(A, x, z):
                X, Z = mpmath.mpf(float(xv)), mpmath.mpf(float(zv))
                tot += w * (abs(Z) ** P - abs(X) ** P - P * mpmath.sign(X) * abs(X) ** (P - 1) * (Z - X))
            out[j] = float(tot)
    return out


def criterion_1(cfg: AcceptanceConfig, calibration=None) -> dict:
    N, seed = cfg.identity_samples, cfg.seed
    rng = np.random.default_rng([seed, 1])

    fam = NormFamily.euclidean(3)
    ep = ExponentPair(2.0, 2.0)
    xi, eta, _ = sample_pairs(fam, ep, "all", N, seed)
    hilbert = float(np.max(_rel(bregman_distance(fam, ep, xi, eta), np.sum(eta * eta, axis=-1))))

    comp, oracle = {}, {}
    for k, p in enumerate((1.25, 1.5, 3.0, 4.0)):
        fam = NormFamily.weighted_s(p, rng.uniform(0.5, 2.0, 3))
        ep = ExponentPair(p, p)
        xi, eta, _ = sample_pairs(fam, ep, "all", N, seed + 1)
        zeta = xi + eta
        # the increment the stored zeta actually represents
        eta = zeta - xi
        direct = bregman_distance(fam, ep, xi, eta)
        parts = np.sum(fam.a * scalar_bregman(p, xi, zeta), axis=-1)
        comp[str(p)] = float(np.max(_rel(direct, parts)))
        # independent route: the unsplit formula in 40-digit arithmetic on a subsample
        pick = np.random.default_rng([seed, 11, k]).choice(N, cfg.oracle_samples, replace=False)
        ref = _mp_pseudo_bregman(p, fam.a, xi[pick], zeta[pick])
        oracle[str(p)] = float(np.max(_rel(direct[pick], ref)))

    chain = {}
    families = {
        "s=1.5": NormFamily.weighted_s(1.5, rng.uniform(0.5, 2.0, 3)),
        "s=3": NormFamily.weighted_s(3.0, rng.uniform(0.5, 2.0, 3)),
        "matrix": NormFamily.matrix(standard_matrix(3, seed)),
    }
    for name, fam in families.items():
        ep = ExponentPair(2.0, fam.s or 2.0)
        xi, eta, _ = sample_pairs(fam, ep, "all", N, seed + 2)
        for r in (1.5, 2.0, 3.0, 4.0):
            total, outer, slope = bregman_chain_decompose(fam, ep, r, xi, eta)
            chain[f"{name},r={r}"] = float(np.max(_rel(outer + slope, total)))

    worst_comp = max(max(comp.values()), max(oracle.values()))
    worst_chain = max(chain.values())
    return {
        "id": 1,
        "name": "Bregman identities",
        "samples": N,
        "hilbert_max_rel": hilbert,
        "componentwise_max_rel": comp,
        "componentwise_oracle_max_rel": oracle,
        "oracle_samples": cfg.oracle_samples,
        "chain_max_rel": chain,
        "thresholds": {"hilbert": 1e-12, "componentwise": 1e-12, "chain": 1e-10},
        "passed": bool(hilbert <= 1e-12 and worst_comp <= 1e-12 and worst_chain <= 1e-10),
    }


# ---------------------------------------------------------------------------
# 2. Two-sided estimates
# ---------------------------------------------------------------------------


def estimate_reports(cfg: AcceptanceConfig, calibration: dict) -> list:
    """EstimateReports of every lemma run, upper bounds capped at cap_factor x calibration."""
    reports = []
    for lid, ep, n in lemma_runs(cfg.exponents, cfg.dims):
        fam = lemma_family(lid, ep, n)
        cal = lookup_calibration(calibration, lid, ep.p, ep.s, n)
        cap = cfg.cap_factor * cal["C_hat"] if LEMMAS[lid].bound != "lower" else math.inf
        reports.append(estimate_equivalence_constants(lid, fam, ep, SamplerConfig(cap=cap),
                                                      N=cfg.estimate_samples, seed=cfg.seed))
    return reports


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EstimateReport.CSV_FIELDS)
    for r in reports:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r.csv_row()])
    return buf.getvalue()


def criterion_2(cfg: AcceptanceConfig, calibration: dict, reports=None) -> dict:
    reports = reports if reports is not None else estimate_reports(cfg, calibration)
    failed = [
        {"lemma": r.lemma_id, "p": r.p, "s": r.s, "n": r.n, "c_hat": r.c_hat, "C_hat": r.C_hat,
         "cap": r.cap, "violations": r.violation_count}
        for r in reports if not r.passed
    ]
    return {
        "id": 2,
        "name": "Two-sided Bregman estimates",
        "runs": len(reports),
        "samples_per_run": cfg.estimate_samples,
        "cap_factor": cfg.cap_factor,
        "min_lower_ratio": min(r.c_hat for r in reports if r.bound != "upper"),
        "max_upper_over_cap": max(r.C_hat / r.cap for r in reports if r.bound != "lower"),
        "failed_runs": failed,
        "passed": not failed,
    }


# ---------------------------------------------------------------------------
# 3. Structure conditions
# ---------------------------------------------------------------------------


def _structure_families(seed):
    rng = np.random.default_rng([seed, 3])
    A = standard_matrix(3, seed)
    return [
        ("weighted_s(1.5)", NormFamily.weighted_s(1.5, rng.uniform(0.5, 2.0, 3)), 3.0),
        ("weighted_s(3)", NormFamily.weighted_s(3.0, rng.uniform(0.5, 2.0, 3)), 1.5),
        ("weighted_s(4)", NormFamily.weighted_s(4.0, rng.uniform(0.5, 2.0, 3)), 4.0),
        ("matrix", NormFamily.matrix(A), 2.5),
        ("combined", NormFamily.combined(3.0, rng.uniform(0.5, 2.0, 3), A), 3.0),
    ]


def structure_checks(fam: NormFamily, ep: ExponentPair, N: int, seed: int) -> dict:
    """Euler identity, homogeneity, monotonicity, gradient check and alpha/beta bounds."""
    rng = np.random.default_rng([seed, 31])
    n = fam.dim
    xi = rng.standard_normal((N, n)) * np.exp(rng.uniform(-3, 3, (N, 1)))
    eta = rng.standard_normal((N, n)) * np.exp(rng.uniform(-3, 3, (N, 1)))
    lam = rng.choice([-1, 1], N) * np.exp(rng.uniform(-2, 2, N))
    p = ep.p
    A = operator_A(xi, fam, ep)
    euler = float(np.max(_rel(np.sum(A * xi, axis=-1), p * lagrangian_F(xi, fam, ep))))
    Al = operator_A(lam[:, None] * xi, fam, ep)
    target = (lam * np.abs(lam) ** (p - 2.0))[:, None] * A
    homog = float(np.max(np.linalg.norm(Al - target, axis=-1) / np.linalg.norm(target, axis=-1)))
    mono = np.sum((A - operator_A(eta, fam, ep)) * (xi - eta), axis=-1)
    # gradient of H^p against central differences, components bounded away from 0
    z = rng.choice([-1, 1], (N, n)) * rng.uniform(0.1, 3.0, (N, n))
    step = 1e-5
    fd = np.empty((N, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        fd[:, i] = (norm_power(z + e, fam, p) - norm_power(z - e, fam, p)) / (2 * step)
    exact = p * operator_A(z, fam, ep)
    grad = float(np.max(np.linalg.norm(fd - exact, axis=-1) / np.linalg.norm(exact, axis=-1)))
    alpha, beta = structure_constants(fam, ep)
    ne = np.linalg.norm(xi, axis=-1)
    ellip = float(np.min(np.sum(A * xi, axis=-1) / (alpha * ne**p)))
    bound = float(np.max(np.linalg.norm(A, axis=-1) / (beta * ne ** (p - 1.0))))
    zero_ok = bool(np.all(operator_A(np.zeros(n), fam, ep) == 0))
    out = {
        "p": p,
        "euler_max_rel": euler,
        "homogeneity_max_rel": homog,
        "monotone_min": float(mono.min()),
        "grad_fd_max_rel": grad,
        "ellipticity_min_ratio": ellip,
        "growth_max_ratio": bound,
        "A_zero": zero_ok,
    }
    out["passed"] = bool(euler <= 1e-12 and homog <= 1e-12 and mono.min() > 0 and grad <= 1e-6
                         and ellip >= 1.0 and bound <= 1.0 and zero_ok)
    return out


def criterion_3(cfg: AcceptanceConfig, calibration=None) -> dict:
    fams = {}
    for name, fam, p in _structure_families(cfg.seed):
        ep = ExponentPair(p, fam.s or 2.0)
        fams[name] = structure_checks(fam, ep, cfg.structure_samples, cfg.seed)
    return {
        "id": 3,
        "name": "Structure conditions",
        "samples_per_family": cfg.structure_samples,
        "families": fams,
        "passed": all(v["passed"] for v in fams.values()),
    }


# ---------------------------------------------------------------------------
# 4-6. Variational oracles
# ---------------------------------------------------------------------------


def criterion_4(cfg: AcceptanceConfig, calibration=None) -> dict:
    target = 2 * math.pi**2
    rows = []
    for N in cfg.hardy_N:
        res = hardy_constant(unit_square_hardy(N), SolverConfig(seed=cfg.seed))
        rows.append({"h": 1.0 / N, "value": res.value, "rel_err": abs(res.value - target) / target,
                     "discrete_oracle": oracles.discrete_dirichlet_eigenvalue_cube(2, N),
                     "converged": res.converged, "iterations": res.iterations})
    errs = [r["rel_err"] for r in rows]
    approaching = all(b < a for a, b in zip(errs, errs[1:]))
    return {
        "id": 4,
        "name": "Dirichlet eigenvalue of the unit square",
        "target": target,
        "levels": rows,
        "approaching": approaching,
        "tolerance": 0.02,
        "passed": bool(errs[-1] <= 0.02 and approaching),
    }


def criterion_5(cfg: AcceptanceConfig, calibration=None) -> dict:
    target = oracles.classical_hardy_constant(3, 2.0)
    prob = punctured_ball_hardy(cfg.ball_N, levels=cfg.ball_levels)
    res = hardy_constant(prob, SolverConfig(levels=cfg.ball_levels, restarts=cfg.ball_restarts, seed=cfg.seed))
    rows = []
    for lv in res.levels:
        h = lv["h"]
        rows.append({"h": h, "value": lv["value"], "rel_err": abs(lv["value"] - target) / target,
                     "truncated_oracle_eps_h": oracles.truncated_hardy_eigenvalue(h),
                     "converged": lv["converged"]})
    errs = [r["rel_err"] for r in rows]
    approaching = all(b < a for a, b in zip(errs, errs[1:]))
    return {
        "id": 5,
        "name": "Hardy constant of the punctured ball",
        "target": target,
        "levels": rows,
        "approaching": approaching,
        "tolerance": 0.15,
        "passed": bool(errs[-1] <= 0.15 and approaching),
    }


def criterion_6(cfg: AcceptanceConfig, calibration=None) -> dict:
    target = oracles.condenser_capacity(2, 2.0, 0.25, 1.0)
    res = capacity(condenser(cfg.condenser_N, levels=cfg.condenser_levels),
                   SolverConfig(levels=cfg.condenser_levels, seed=cfg.seed))
    oracle_err = abs(res.value - target) / target

    # scaling law at a tolerance where the stopping rule pins the value
    scfg = SolverConfig(tol=cfg.scaling_tol, patience=cfg.scaling_patience, restarts=1, seed=cfg.seed)
    base = capacity(condenser(cfg.scaling_N), scfg).value
    scaling = {}
    for alpha in (0.5, 2.0, 3.0):
        v = capacity(condenser(cfg.scaling_N, alpha=alpha), scfg).value
        scaling[str(alpha)] = abs(v / (alpha**2 * base) - 1.0)
    scaling_ok = all(e <= 2 * cfg.scaling_tol for e in scaling.values())

    mcfg = SolverConfig(seed=cfg.seed)
    tol = 2 * mcfg.tol
    caps_K = [capacity(condenser(cfg.monotone_N, r=r), mcfg).value for r in (0.2, 0.25, 0.3)]
    K_ok = all(a <= b * (1 + tol) for a, b in zip(caps_K, caps_K[1:]))
    caps_Om = [capacity(condenser(cfg.monotone_N, R=R, grid_R=1.0), mcfg).value for R in (0.6, 0.8, 1.0)]
    Om_ok = all(b <= a * (1 + tol) for a, b in zip(caps_Om, caps_Om[1:]))
    return {
        "id": 6,
        "name": "Condenser capacity",
        "target": target,
        "value": res.value,
        "rel_err": oracle_err,
        "levels": res.levels,
        "tolerance": 0.03,
        "scaling_rel_err": scaling,
        "scaling_tol": cfg.scaling_tol,
        "K_radii": [0.2, 0.25, 0.3],
        "cap_in_K": caps_K,
        "Omega_radii": [0.6, 0.8, 1.0],
        "cap_in_Omega": caps_Om,
        "passed": bool(oracle_err <= 0.03 and scaling_ok and K_ok and Om_ok),
    }


# ---------------------------------------------------------------------------
# 7-9. Maz'ya bracket, simplified energies, Morrey membership
# ---------------------------------------------------------------------------


def criterion_7(cfg: AcceptanceConfig, calibration: dict) -> dict:
    C_cal = lookup_calibration(calibration, "mazya", 2.0, 2.0, 2)["C_cal"]
    rows = []
    for k in range(cfg.mazya_instances):
        prob, u, compacts = mazya_instance(cfg.seed + k, cfg.mazya_N)
        res = mazya_ratio(prob, u, compacts, SolverConfig(seed=cfg.seed), C_cal=C_cal, slack=cfg.mazya_slack)
        rows.append({"instance_seed": cfg.seed + k, "norm_u": res["norm_u"], "hardy_norm": res["hardy_norm"],
                     "S_g": res["S_g"], "lower_ok": res["lower_ok"], "upper_ok": res["upper_ok"],
                     "compacts": len(compacts)})
    return {
        "id": 7,
        "name": "Maz'ya bracket",
        "C_cal": C_cal,
        "slack": cfg.mazya_slack,
        "instances": rows,
        "passed": all(r["lower_ok"] and r["upper_ok"] for r in rows),
    }


def criterion_8(cfg: AcceptanceConfig, calibration: dict) -> dict:
    rows = []
    for regime in ("p=s", "s<p", "p<s"):
        for k, (u, psi, fam, ep) in enumerate(bracket_catalogue(regime, cfg.bracket_N)):
            b = simplified_energy_bracket(u, psi, fam, ep, calibration=calibration)
            rows.append({"regime": regime, "pair": k, "p": ep.p, "s": ep.s, "lower": b.lower,
                         "Q": b.Q_value, "upper": b.upper, "inside": b.inside,
                         "dropped_nodes": b.dropped_nodes, "grad_drop_tol": b.grad_drop_tol})
    return {
        "id": 8,
        "name": "Simplified-energy brackets",
        "pairs": rows,
        "passed": all(r["inside"] for r in rows),
    }


def criterion_9(cfg: AcceptanceConfig, calibration=None) -> dict:
    n, q = 2, 2.0
    f, spec = morrey_instance(cfg.morrey_N, n, q)
    coarse = morrey_profile(f, spec, center_stride=4, radii_per_octave=4)
    fine = morrey_profile(f, spec, center_stride=2, radii_per_octave=8)
    change = abs(fine["value"] - coarse["value"]) / coarse["value"]
    r0 = 0.5
    eps = [r0 * 2.0**-k for k in range(1, 13)]
    mass = [lq_shell_mass(lambda r: r ** (-n / q), q, n, e, r0) for e in eps]
    growth = mass[-1] / mass[0]
    return {
        "id": 9,
        "name": "Morrey membership without L^q",
        "morrey_coarse": coarse["value"],
        "morrey_fine": fine["value"],
        "morrey_rel_change": change,
        "oracle": oracles.morrey_power_ball_value(n, q),
        "lq_eps": eps,
        "lq_mass": mass,
        "lq_growth": growth,
        "passed": bool(change < 0.01 and fine["value"] >= coarse["value"] and growth > 10.0),
    }


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


def run_suite(cfg: AcceptanceConfig, calibration: dict, only=None, log=None):
    """Run the selected criteria; returns (results, timings, {file name: text})."""
    results, timings, files = {}, {}, {}
    for k, fn in CRITERIA.items():
        if only and k not in only:
            continue
        t0 = time.perf_counter()
        if k == 2:
            reports = estimate_reports(cfg, calibration)
            files["estimates.csv"] = reports_csv(reports)
            res = criterion_2(cfg, calibration, reports)
        else:
            res = fn(cfg, calibration)
        dt = time.perf_counter() - t0
        timings[str(k)] = {"seconds": dt, "budget": BUDGETS[k], "within_budget": dt < BUDGETS[k]}
        results[str(k)] = res
        if log:
            log(summary_line(res, dt))
    payload = {"config": asdict(cfg), "criteria": results,
               "passed": all(r["passed"] for r in results.values())}
    files["results.json"] = dumps(payload)
    files["timings.json"] = dumps(timings)
    return payload, timings, files


def run_acceptance(cfg: AcceptanceConfig, out_dir, calibration: dict | None = None, only=None, log=None):
    """Run the suite and write results.json, timings.json and estimates.csv into ``out_dir``."""
    calibration = calibration if calibration is not None else load_calibration()
    payload, timings, files = run_suite(cfg, calibration, only, log)
    for name, text in files.items():
        atomic_write_text(Path(out_dir) / name, text)
    return payload, timings


def summary_line(res: dict, seconds: float | None = None) -> str:
    tag = "PASS" if res["passed"] else "FAIL"
    t = f" ({seconds:.1f} s)" if seconds is not None else ""
    return f"[{tag}] criterion {res['id']}: {res['name']}{t}"


def summary_lines(results: dict, timings: dict | None = None) -> list:
    return [summary_line(r, (timings or {}).get(k, {}).get("seconds")) for k, r in results["criteria"].items()]
