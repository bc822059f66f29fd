"""Config-driven batch runner.

Usage: ``artifact <command> [--config FILE] [flags]``. The configuration is
a JSON document validated against ``data/config.schema.json``; every default
lives in that schema. Flags override config keys. Exit codes: 0 success,
2 a checked assertion failed, 3 configuration error (nothing written).
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import acceptance as acc
from . import oracles
from .bregman import (
    LEMMAS,
    SamplerConfig,
    applicable,
    calibrate_lemmas,
    estimate_equivalence_constants,
    lemma_family,
    load_calibration,
    lookup_calibration,
)
from .energy import MorreySpec, energy_Q, morrey_profile, simplified_energy_bracket
from .fileio import atomic_write_text, dumps
from .grid import GridDomain, GridFunction
from .norms import ExponentPair, NormFamily, modulus_of_convexity_estimate
from .problems import ball_domain, bracket_catalogue, calibrate_mazya, mazya_instance
from .variational import (
    CapacityProblem,
    HardyProblem,
    SolverConfig,
    attainment_check,
    capacity,
    hardy_constant,
    hardy_tail_constant,
    mazya_ratio,
)

SCHEMA_PATH = Path(__file__).with_name("data") / "config.schema.json"
COMMANDS = ("verify-norms", "verify-bregman", "calibrate", "energy", "morrey", "hardy", "capacity",
            "mazya", "tail", "attainment", "acceptance")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG = 0, 2, 3


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def load_schema() -> dict:
    with open(SCHEMA_PATH) as fh:
        return json.load(fh)


def schema_defaults(schema: dict) -> dict:
    """Nested dict of every property default in the schema."""
    out = {}
    for key, sub in schema.get("properties", {}).items():
        if sub.get("type") == "object" and "properties" in sub:
            out[key] = schema_defaults(sub)
        elif "default" in sub:
            out[key] = copy.deepcopy(sub["default"])
    return out


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# flag name -> (config path, type)
OVERRIDES = {
    "p": (("exponents", "p"), float),
    "s": (("exponents", "s"), float),
    "n": (("grid", "n"), int),
    "N": (("grid", "N"), int),
    "kind": (("norm", "kind"), str),
    "a": (("norm", "a"), lambda t: [float(x) for x in t.split(",")]),
    "samples": (("sampler", "samples"), int),
    "lemma": (("sampler", "lemma"), str),
    "tol": (("solver", "tol"), float),
    "max_iter": (("solver", "max_iter"), int),
    "restarts": (("solver", "restarts"), int),
    "levels": (("solver", "levels"), int),
    "domain": (("problem", "domain"), str),
    "weight": (("problem", "weight"), str),
    "V": (("problem", "V"), float),
    "regime": (("problem", "regime"), str),
    "q": (("problem", "q"), float),
    "only": (("acceptance", "only"), lambda t: [int(x) for x in t.split(",")]),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description="Finsler p-Laplace energy toolkit")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--seed", type=int, help="base seed (calibrate: calibration seed)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=int, help="recorded only; every computation is single-threaded")
    ap.add_argument("--calibration", help="calibration file (default: packaged table)")
    for name in OVERRIDES:
        ap.add_argument(f"--{name.replace('_', '-')}", dest=name, type=str, default=None)
    return ap


def resolve_config(args) -> dict:
    """Defaults < config file < flags, validated against the schema."""
    schema = load_schema()
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    if cfg.get("command", args.command) != args.command:
        raise ConfigError(f"config is for command {cfg['command']!r}, not {args.command!r}")
    cfg["command"] = args.command
    for name, (path, conv) in OVERRIDES.items():
        raw = getattr(args, name)
        if raw is None:
            continue
        try:
            val = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for --{name}: {raw!r}") from exc
        if args.command == "calibrate" and name == "samples":
            path = ("calibrate", "samples")
        cfg.setdefault(path[0], {})[path[1]] = val
    if args.seed is not None:
        if args.command == "calibrate":
            cfg.setdefault("calibrate", {})["seed"] = args.seed
        else:
            cfg["seed"] = args.seed
    for key in ("out", "threads", "calibration"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config at {'/'.join(map(str, exc.absolute_path)) or '<root>'}: {exc.message}")
    cfg = _merge(schema_defaults(schema), cfg)
    if cfg["calibration"] is not None and not Path(cfg["calibration"]).is_file():
        raise ConfigError(f"calibration file {cfg['calibration']} does not exist")
    return cfg


def _calibration(cfg):
    try:
        return load_calibration(cfg["calibration"])
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read calibration: {exc}") from exc


def _family(cfg, n=None) -> NormFamily:
    nc = cfg["norm"]
    n = n or cfg["grid"]["n"]
    a = np.ones(n) if nc["a"] is None else np.asarray(nc["a"], dtype=float)
    A = np.eye(n) if nc["A"] is None else np.asarray(nc["A"], dtype=float)
    s = cfg["exponents"]["s"]
    if nc["kind"] == "weighted_s":
        return NormFamily.weighted_s(s, a)
    if nc["kind"] == "matrix":
        return NormFamily.matrix(A)
    return NormFamily.combined(s, a, A)


def _ep(cfg) -> ExponentPair:
    return ExponentPair(cfg["exponents"]["p"], cfg["exponents"]["s"])


def _solver(cfg) -> SolverConfig:
    return SolverConfig(seed=cfg["seed"], **cfg["solver"])


def _hardy_problem(cfg) -> HardyProblem:
    pc, n, N = cfg["problem"], cfg["grid"]["n"], cfg["grid"]["N"]
    levels = cfg["solver"]["levels"]
    if pc["domain"] == "unit_box":
        dom = GridDomain.box(n, N)
    else:
        dom = ball_domain(n, N, R=pc["R"], levels=levels, puncture=pc["domain"] == "punctured_ball")
    p = cfg["exponents"]["p"]
    if pc["weight"] == "one":
        g = np.where(dom.mask, 1.0, 0.0)
    else:
        r = dom.radius()
        g = np.where(dom.mask & (r > 0), np.where(r > 0, r, 1.0) ** (-p), 0.0)
    return HardyProblem(dom, _family(cfg), _ep(cfg), GridFunction(dom, g),
                        GridFunction.constant(dom, pc["V"]))


def _result_record(cfg, prob, res) -> dict:
    return {
        "problem_hash": prob.problem_hash(),
        "value": res.value,
        "converged": res.converged,
        "iterations": res.iterations,
        "status": res.status,
        "seed": cfg["seed"],
        "h": prob.grid.h,
        "p": prob.ep.p,
        "s": prob.ep.s,
        "levels": res.levels,
        "restarts": res.restarts,
    }


def _history_ok(res) -> bool:
    hist = res.history
    return all(b <= a for a, b in zip(hist, hist[1:]))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Commands: each returns (files {name: text}, ok flag, summary text)
# ---------------------------------------------------------------------------


def cmd_verify_norms(cfg):
    fam = _family(cfg)
    ep = _ep(cfg)
    N = cfg["sampler"]["samples"]
    checks = acc.structure_checks(fam, ep, N, cfg["seed"])
    eps = cfg["sampler"]["eps"]
    delta = modulus_of_convexity_estimate(fam, eps, min(N, 10_000), cfg["seed"], ep)
    out = {"family": fam.to_dict(), "p": ep.p, "samples": N, "checks": checks,
           "modulus_of_convexity": {"eps": eps, "estimate": delta}}
    if fam.dim == 2 and fam.kind.value == "weighted_s" and ep.s == 2.0 and np.all(fam.a == 1.0):
        out["modulus_of_convexity"]["euclidean_oracle"] = oracles.euclidean_modulus_of_convexity(eps)
    ok = checks["passed"] and delta >= 0
    return {"verify-norms.json": dumps(out)}, ok, f"structure checks {'passed' if ok else 'FAILED'}"


def cmd_verify_bregman(cfg):
    sc = cfg["sampler"]
    ep = _ep(cfg)
    n = cfg["grid"]["n"]
    lemmas = list(LEMMAS) if sc["lemma"] == "all" else [sc["lemma"]]
    for lid in lemmas:
        if lid not in LEMMAS:
            raise ConfigError(f"unknown lemma {lid!r}; choose from {sorted(LEMMAS)} or 'all'")
        if sc["lemma"] != "all" and not applicable(lid, ep):
            raise ConfigError(f"lemma {lid} does not apply to p={ep.p}, s={ep.s}")
    lemmas = [l for l in lemmas if applicable(l, ep) or LEMMAS[l].family == "matrix"]
    if sc["lemma"] == "all" and cfg["norm"]["a"] is not None and any(x != 1.0 for x in cfg["norm"]["a"]):
        lemmas = [l for l in lemmas if l != "euclidean"]
    try:
        table = _calibration(cfg)
    except ConfigError:
        table = {}
    reports = []
    for lid in lemmas:
        lep = ExponentPair(ep.p, 2.0) if LEMMAS[lid].family == "matrix" else ep
        if LEMMAS[lid].family == "matrix":
            fam = lemma_family(lid, lep, n, cfg["seed"])
        else:
            fam = _family(cfg, n) if cfg["norm"]["kind"] == "weighted_s" else lemma_family(lid, lep, n)
        cap = math.inf
        if LEMMAS[lid].bound != "lower":
            try:
                cap = sc["cap_factor"] * lookup_calibration(table, lid, lep.p, lep.s, n)["C_hat"]
            except KeyError:
                pass
        scfg = SamplerConfig(r_min=sc["r_min"], r_max=sc["r_max"], chunk=sc["chunk"], cap=cap)
        reports.append(estimate_equivalence_constants(lid, fam, lep, scfg, N=sc["samples"], seed=cfg["seed"]))
    ok = all(r.passed for r in reports)
    files = {
        "estimates.csv": acc.reports_csv(reports),
        "verify-bregman.json": dumps({"reports": [r.to_dict() for r in reports], "passed": ok}),
    }
    lines = [f"{r.lemma_id:18s} c_hat={r.c_hat:.6g} C_hat={r.C_hat:.6g} violations={r.violation_count}"
             for r in reports]
    return files, ok, "\n".join(lines)


def cmd_calibrate(cfg):
    cc = cfg["calibrate"]
    table = calibrate_lemmas(cc["exponents"], cc["dims"], cc["samples"], cc["seed"])
    if cc["mazya_seeds"]:
        table["mazya"] = [calibrate_mazya(cc["mazya_seeds"], cc["mazya_N"], SolverConfig(**cfg["solver"]),
                                          cc["mazya_slack"])]
    runs = sum(len(v) for v in table.values())
    return {"calibration.json": dumps(table)}, True, f"{runs} calibration entries"


def cmd_energy(cfg):
    n, N = cfg["grid"]["n"], cfg["grid"]["N"]
    fam, ep = _family(cfg), _ep(cfg)
    regime = cfg["problem"]["regime"]
    if regime is not None:
        rows = []
        table = _calibration(cfg)
        for k, (u, psi, bfam, bep) in enumerate(bracket_catalogue(regime, N)):
            b = simplified_energy_bracket(u, psi, bfam, bep, calibration=table)
            rows.append({"pair": k, "p": bep.p, "s": bep.s, "lower": b.lower, "Q": b.Q_value,
                         "upper": b.upper, "inside": b.inside, "dropped_nodes": b.dropped_nodes,
                         "grad_drop_tol": b.grad_drop_tol, "constants": b.constants})
        ok = all(r["inside"] for r in rows)
        return {"energy.json": dumps({"regime": regime, "N": N, "pairs": rows, "passed": ok})}, ok, \
            f"{sum(r['inside'] for r in rows)}/{len(rows)} brackets hold"
    dom = GridDomain.box(n, N)
    phi = GridFunction.from_callable(dom, lambda x: np.prod(np.sin(np.pi * x), axis=-1))
    V = GridFunction.constant(dom, cfg["problem"]["V"])
    Q = energy_Q(phi, fam, ep, V)
    out = {"field": "sin_product", "n": n, "h": dom.h, "p": ep.p, "s": ep.s, "Q": Q}
    if fam.kind.value == "weighted_s" and ep.p == 2.0 and ep.s == 2.0 and np.all(fam.a == 1.0) \
            and cfg["problem"]["V"] == 0:
        out["oracle"] = n * math.pi**2 / 2.0**n
    return {"energy.json": dumps(out)}, True, f"Q = {Q:.10g}"


def cmd_morrey(cfg):
    pc = cfg["problem"]
    n, N = cfg["grid"]["n"], cfg["grid"]["N"]
    spec = MorreySpec(cfg["exponents"]["p"], pc["q"], pc["variant"], pc["theta"], pc["vartheta"])
    try:
        spec.validate(n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dom = GridDomain.cells(n, N, -1.0, 1.0)
    if pc["field"] == "power":
        f = GridFunction(dom, np.where(dom.mask, dom.radius() ** (-n / pc["q"]), 0.0))
    else:
        f = GridFunction.constant(dom, 1.0)
    prof = morrey_profile(f, spec, pc["center_stride"], pc["radii_per_octave"])
    out = {"field": pc["field"], "n": n, "h": dom.h, "spec": {"p": spec.p, "q": spec.q, "variant": spec.variant},
           "center_stride": pc["center_stride"], "radii_per_octave": pc["radii_per_octave"], **prof}
    return {"morrey.json": dumps(out)}, True, f"Morrey norm = {prof['value']:.10g}"


def cmd_hardy(cfg):
    prob = _hardy_problem(cfg)
    res = hardy_constant(prob, _solver(cfg))
    rec = _result_record(cfg, prob, res)
    files = {"hardy.json": dumps(rec)}
    if res.minimizer is not None:
        files["hardy_minimizer.csv"] = res.minimizer.to_csv_text()
        files["hardy_minimizer.json"] = dumps(prob.grid.header())
    return files, _history_ok(res), f"S_g = {res.value:.10g} ({res.status})"


def cmd_capacity(cfg):
    pc = cfg["problem"]
    dom = ball_domain(cfg["grid"]["n"], cfg["grid"]["N"], R=pc["R"], levels=cfg["solver"]["levels"])
    K = (dom.radius() <= pc["r"]) & dom.mask
    prob = CapacityProblem(dom, _family(cfg), _ep(cfg), K, GridFunction.constant(dom, pc["alpha"]),
                           GridFunction.constant(dom, pc["V"]))
    res = capacity(prob, _solver(cfg))
    rec = _result_record(cfg, prob, res)
    rec.update({"r": pc["r"], "R": pc["R"], "alpha": pc["alpha"]})
    if prob.ep.p > 1 and prob.fam.kind.value == "weighted_s" and prob.ep.s == 2.0 and np.all(prob.fam.a == 1.0) \
            and pc["V"] == 0:
        rec["oracle"] = pc["alpha"] ** prob.ep.p * oracles.condenser_capacity(dom.n, prob.ep.p, pc["r"], pc["R"])
    files = {"capacity.json": dumps(rec), "capacity_minimizer.csv": res.minimizer.to_csv_text(),
             "capacity_minimizer.json": dumps(dom.header())}
    ok = _history_ok(res) and bool(np.all(res.minimizer.values[K] >= prob.u.values[K]))
    return files, ok, f"cap = {res.value:.10g} ({res.status})"


def cmd_mazya(cfg):
    pc = cfg["problem"]
    table = _calibration(cfg)
    C_cal = lookup_calibration(table, "mazya", 2.0, 2.0, 2)["C_cal"]
    rows, detail = [], []
    for seed in pc["instance_seeds"]:
        prob, u, compacts = mazya_instance(seed, cfg["grid"]["N"])
        res = mazya_ratio(prob, u, compacts, _solver(cfg), C_cal=C_cal, slack=pc["slack"])
        detail.append({"instance_seed": seed, **res})
        for row in res["table"]:
            rows.append([seed, row["index"], row["nodes"], row["mass"], row["cap"], row["ratio"]])
    ok = all(d["lower_ok"] and d["upper_ok"] for d in detail)
    files = {"mazya.json": dumps({"C_cal": C_cal, "instances": detail, "passed": ok}),
             "mazya_table.csv": _csv(["instance_seed", "compact", "nodes", "mass", "cap", "ratio"], rows)}
    return files, ok, "\n".join(f"seed {d['instance_seed']}: |g|_u = {d['norm_u']:.6g}, 1/S_g = {d['hardy_norm']:.6g}"
                                for d in detail)


def cmd_tail(cfg):
    cfg = copy.deepcopy(cfg)
    if cfg["problem"]["domain"] == "unit_box":
        cfg["problem"]["domain"] = "ball"
    prob = _hardy_problem(cfg)
    r = prob.grid.radius()
    exhaustion = [(r < rho) & prob.grid.mask for rho in cfg["problem"]["exhaustion_radii"]]
    try:
        results = hardy_tail_constant(prob, exhaustion, _solver(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = []
    for rho, res in zip(cfg["problem"]["exhaustion_radii"], results):
        row = {"radius": rho, "value": res.value, "status": res.status, "converged": res.converged}
        if cfg["exponents"]["p"] == 2.0 and prob.grid.n == 2 and cfg["problem"]["weight"] == "one":
            row["annulus_oracle"] = oracles.annulus_eigenvalue(rho, cfg["problem"]["R"])
        rows.append(row)
    vals = [row["value"] for row in rows]
    tol = 2 * cfg["solver"]["tol"]
    ok = all(b >= a * (1 - tol) for a, b in zip(vals, vals[1:]))
    files = {"tail.json": dumps({"collars": rows, "nondecreasing": ok}),
             "tail.csv": _csv(["radius", "value", "status"], [[r_["radius"], r_["value"], r_["status"]] for r_ in rows])}
    return files, ok, "\n".join(f"rho={r_['radius']}: {r_['value']:.8g}" for r_ in rows)


def cmd_attainment(cfg):
    prob = _hardy_problem(cfg)
    rep = attainment_check(prob, _solver(cfg))
    rep["problem_hash"] = prob.problem_hash()
    return {"attainment.json": dumps(rep)}, True, \
        f"sign-definite: {rep.get('sign_definite')}, residual_rel = {rep.get('residual_rel')}"


def cmd_acceptance(cfg):
    ac = dict(cfg["acceptance"])
    only = ac.pop("only")
    acfg = acc.AcceptanceConfig(seed=cfg["seed"], **ac)
    payload, timings, files = acc.run_suite(acfg, _calibration(cfg), only,
                                            log=lambda line: print(line, file=sys.stderr, flush=True))
    return files, payload["passed"], "\n".join(acc.summary_lines(payload, timings))


HANDLERS = {
    "verify-norms": cmd_verify_norms,
    "verify-bregman": cmd_verify_bregman,
    "calibrate": cmd_calibrate,
    "energy": cmd_energy,
    "morrey": cmd_morrey,
    "hardy": cmd_hardy,
    "capacity": cmd_capacity,
    "mazya": cmd_mazya,
    "tail": cmd_tail,
    "attainment": cmd_attainment,
    "acceptance": cmd_acceptance,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        files, ok, text = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg["out"])
    run = {"command": args.command, "seed": cfg["seed"], "threads": cfg["threads"], "config": cfg}
    files[f"{args.command}.config.json"] = dumps(run)
    for name, text_ in files.items():
        atomic_write_text(out / name, text_)
    print(text)
    if not ok:
        print(f"{args.command}: checked assertion failed", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
