import dataclasses
import json
import math

import pytest

from artifact import cli
from artifact.acceptance import AcceptanceConfig
from artifact.bregman import SamplerConfig, lookup_calibration
from artifact.fileio import atomic_write_text
from artifact.variational import SolverConfig


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_malformed_config_exits_3(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, out = run(tmp_path, "hardy", "--config", str(bad))
    assert code == 3 and not out.exists()
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"solver": {"tol": -1}}))
    code, out = run(tmp_path, "hardy", "--config", str(wrong))
    assert code == 3 and not out.exists()
    code, out = run(tmp_path, "hardy", "--calibration", str(tmp_path / "missing.json"))
    assert code == 3 and not out.exists()
    code, out = run(tmp_path, "verify-bregman", "--lemma", "nonsense")
    assert code == 3 and not out.exists()
    code, out = run(tmp_path, "calibrate", "--samples", "1000")
    assert code == 3 and not out.exists()


def test_command_mismatch(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"command": "capacity"}))
    assert run(tmp_path, "hardy", "--config", str(cfg))[0] == 3


def test_verify_bregman_example(tmp_path):
    code, out = run(tmp_path, "verify-bregman", "--lemma", "all", "--p", "3", "--s", "2", "--n", "3",
                    "--samples", "100000", "--seed", "7")
    assert code == 0
    rows = (out / "estimates.csv").read_text().splitlines()
    assert rows[0].startswith("lemma") and len(rows) > 5
    rep = read_json(out / "verify-bregman.json")
    assert rep["passed"] and all(r["c_hat"] > 0 for r in rep["reports"])
    assert read_json(out / "verify-bregman.config.json")["seed"] == 7


def test_hardy_unit_square(tmp_path):
    code, out = run(tmp_path, "hardy", "--N", "32")
    assert code == 0
    rec = read_json(out / "hardy.json")
    assert rec["value"] == pytest.approx(2 * math.pi**2, rel=0.02)
    assert rec["converged"] and len(rec["problem_hash"]) == 64
    assert (out / "hardy_minimizer.csv").exists()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"grid": {"N": 16}, "solver": {"tol": 1e-9}}))
    code, out = run(tmp_path, "hardy", "--config", str(cfg), "--tol", "1e-10", "--threads", "4")
    assert code == 0
    used = read_json(out / "hardy.config.json")
    assert used["config"]["grid"]["N"] == 16 and used["config"]["solver"]["tol"] == 1e-10
    assert used["threads"] == 4


@pytest.mark.parametrize("argv,files", [
    (["verify-norms"], ["verify-norms.json"]),
    (["energy", "--N", "32"], ["energy.json"]),
    (["energy", "--N", "32", "--regime", "s<p"], ["energy.json"]),
    (["morrey", "--N", "32", "--p", "1.5", "--q", "2"], ["morrey.json"]),
    (["capacity", "--N", "32"], ["capacity.json", "capacity_minimizer.csv"]),
    (["mazya", "--N", "16"], ["mazya.json", "mazya_table.csv"]),
    (["tail", "--N", "16"], ["tail.json", "tail.csv"]),
    (["attainment", "--N", "16"], ["attainment.json"]),
])
def test_commands_run_and_are_deterministic(tmp_path, argv, files):
    c1, o1 = run(tmp_path, *argv, name="a")
    c2, o2 = run(tmp_path, *argv, name="b")
    assert c1 == c2 == 0
    for f in files:
        assert (o1 / f).read_bytes() == (o2 / f).read_bytes()


def test_energy_sin_oracle(tmp_path):
    code, out = run(tmp_path, "energy", "--N", "128")
    rec = read_json(out / "energy.json")
    assert code == 0 and rec["Q"] == pytest.approx(rec["oracle"], rel=0.02)


def test_calibrate_deterministic(tmp_path):
    cfg = tmp_path / "cal.json"
    cfg.write_text(json.dumps({"calibrate": {"exponents": [2.0], "dims": [2], "samples": 1_000_000,
                                             "mazya_seeds": []}}))
    c1, o1 = run(tmp_path, "calibrate", "--config", str(cfg), "--seed", "11", name="a")
    c2, o2 = run(tmp_path, "calibrate", "--config", str(cfg), "--seed", "11", name="b")
    assert c1 == c2 == 0
    assert (o1 / "calibration.json").read_bytes() == (o2 / "calibration.json").read_bytes()
    tab = read_json(o1 / "calibration.json")
    for lid in ("euclidean", "pseudo", "uniform"):
        e = lookup_calibration(tab, lid, 2.0, 2.0, 2)
        assert e["seed"] == 11 and e["N"] == 1_000_000
        assert e["c_hat"] == pytest.approx(1.0, abs=1e-12) and e["C_hat"] == pytest.approx(1.0, abs=1e-12)
    # the shipped table answers the p = 4, s = 2, n = 2 example
    from artifact.bregman import load_calibration

    e = lookup_calibration(load_calibration(), "uniform", 4.0, 2.0, 2)
    assert e["c_hat"] > 0 and math.isfinite(e["C_hat"])


def test_schema_defaults_match_dataclasses():
    d = cli.schema_defaults(cli.load_schema())
    solver = {f.name: f.default for f in dataclasses.fields(SolverConfig) if f.name != "seed"}
    assert d["solver"] == solver
    sampler = SamplerConfig()
    for key in ("r_min", "r_max", "chunk"):
        assert d["sampler"][key] == getattr(sampler, key)
    acc = {f.name: f.default if f.default is not dataclasses.MISSING else f.default_factory()
           for f in dataclasses.fields(AcceptanceConfig)}
    assert d["seed"] == acc.pop("seed")
    assert {k: v for k, v in d["acceptance"].items() if k != "only"} == acc
    assert set(cli.COMMANDS) == set(cli.HANDLERS)


def test_atomic_write_leaves_nothing_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "x.json"
    atomic_write_text(target, "old\n")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr("artifact.fileio.os.replace", boom)
    with pytest.raises(OSError):
        atomic_write_text(target, "new\n")
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.json"]
