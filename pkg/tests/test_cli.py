import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from tropdyn import cli

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(kind, config, out, *extra):
    return cli.main([kind, "--config", *([config] if isinstance(config, str) else config), "--out", str(out), *extra])


def manifest(out):
    return json.loads((Path(out) / cli.MANIFEST).read_text())


PDE_SMALL = {
    "kind": "pde",
    "inputs": {"f": "builtin:field_u", "g": "builtin:field_v"},
    "params": {"t": 2, "r": 0.5, "R": 1.5, "q": 0.1, "X": 2, "S": 2,
               "u0": {"base": 1.0, "amp": 0.3, "wave": "sin"}, "v0": 1.0},
}


class TestKinds:
    def test_eval(self, tmp_path):
        assert run("eval", str(SCENARIOS / "eval_lyness.json"), tmp_path) == 0
        line = (tmp_path / "result.txt").read_text()
        assert line.count("\n") == 1 and line.startswith("phi=")
        assert {"phi", "phi_t", "log_t_M"} == {kv.split("=")[0] for kv in line.split()}

    def test_orbit(self, tmp_path):
        assert run("orbit", str(SCENARIOS / "orbit_lamplighter.json"), tmp_path) == 0
        assert (tmp_path / "grid.csv").read_text().startswith("i,j,x,y\n")

    def test_compare(self, tmp_path):
        assert run("compare", str(SCENARIOS / "compare_scaled.json"), tmp_path) == 0
        assert {"grid1.csv", "grid2.csv", "sandwich.csv"} <= {f["name"] for f in manifest(tmp_path)["files"]}

    def test_recurse_lyness(self, tmp_path):
        assert run("recurse", str(SCENARIOS / "recurse_lyness.json"), tmp_path) == 0
        assert "p=5" in (tmp_path / "period.txt").read_text()

    def test_recurse_abs(self, tmp_path):
        assert run("recurse", str(SCENARIOS / "recurse_abs_pl.json"), tmp_path) == 0
        assert "p=9" in (tmp_path / "period.txt").read_text()

    def test_recurse_probe(self, tmp_path):
        assert run("recurse", str(SCENARIOS / "recurse_grigorchuk.json"), tmp_path) == 0
        assert (tmp_path / "period.txt").read_text().startswith("p=2 ")

    def test_pde_constant(self, tmp_path):
        assert run("pde", str(SCENARIOS / "pde_constant.json"), tmp_path) == 0
        m = manifest(tmp_path)
        assert m["summary"]["residual"] <= 1e-8 and m["status"] == "pass"

    def test_pde_small(self, tmp_path):
        assert run("pde", write(tmp_path, "p.json", PDE_SMALL), tmp_path / "out") == 0
        diag = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
        assert diag["diagnostics"]["max_contraction"] <= 0.5

    def test_refine_swap(self, tmp_path):
        assert run("refine", str(SCENARIOS / "refine_one_state_swap.json"), tmp_path) == 0
        doc = json.loads((tmp_path / "refinement.json").read_text())
        assert {"psi", "phi", "states", "symbols"} <= set(doc)
        assert (tmp_path / "report.txt").read_text().startswith("PASS")

    def test_manifest_hashes(self, tmp_path):
        import hashlib

        run("eval", str(SCENARIOS / "eval_lyness.json"), tmp_path)
        for entry in manifest(tmp_path)["files"]:
            data = (tmp_path / entry["name"]).read_bytes()
            assert hashlib.sha256(data).hexdigest() == entry["sha256"] and len(data) == entry["bytes"]


class TestExitCodes:
    def test_bound_failure(self, tmp_path):
        assert run("refine", str(SCENARIOS / "refine_lamplighter.json"), tmp_path) == 2
        m = manifest(tmp_path)
        assert m["status"] == "fail" and m["exit_code"] == 2

    def test_planted_residual_failure(self, tmp_path):
        doc = json.loads(json.dumps(PDE_SMALL))
        doc["params"]["residual_tol"] = 1e-12
        assert run("pde", write(tmp_path, "p.json", doc), tmp_path / "out") == 2
        assert "FAIL" in (tmp_path / "out" / "report.txt").read_text()

    def test_invariant_error_is_a_failure(self, tmp_path):
        # 4u/(1+u) drives u to 3, outside the declared window
        term = {"offset": 0.0, "coeffs": ["0", "1"]}
        f = {"arity": 2, "num": [term] * 4, "den": [{"offset": 0.0, "coeffs": ["0", "0"]}, term]}
        doc = json.loads(json.dumps(PDE_SMALL))
        doc["inputs"]["f"] = f
        doc["params"].update({"X": 4, "S": 4, "energy": False})
        assert run("pde", write(tmp_path, "p.json", doc), tmp_path / "out") == 2
        m = manifest(tmp_path / "out")
        assert m["error"].startswith("InvariantError") and m["status"] == "fail"

    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"kind": "eval",\n  "params": {,}}')
        assert run("eval", str(path), tmp_path / "out") == 1
        assert f"{path}:2:" in capsys.readouterr().err

    def test_kind_mismatch(self, tmp_path, capsys):
        assert run("pde", str(SCENARIOS / "eval_lyness.json"), tmp_path) == 1
        assert "kind" in capsys.readouterr().err

    def test_missing_param(self, tmp_path, capsys):
        doc = {"kind": "eval", "inputs": {"presentation": "builtin:lyness"}, "params": {"t": 10}}
        assert run("eval", write(tmp_path, "e.json", doc), tmp_path / "out") == 1
        assert "params.point" in capsys.readouterr().err

    def test_unknown_builtin(self, tmp_path, capsys):
        doc = {"kind": "eval", "inputs": {"presentation": "builtin:nope"}, "params": {"t": 10, "point": [0, 0]}}
        assert run("eval", write(tmp_path, "e.json", doc), tmp_path / "out") == 1
        assert "unknown builtin" in capsys.readouterr().err

    def test_crash_wins_over_failure(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        good = str(SCENARIOS / "refine_lamplighter.json")
        assert cli.main(["refine", "--config", good, str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_bad_jobs(self, tmp_path):
        assert run("eval", str(SCENARIOS / "eval_lyness.json"), tmp_path, "--jobs", "0") == 1


class TestValidate:
    def test_well_formed_pde(self):
        s = cli.load_scenario(SCENARIOS / "pde_perturbed.json")
        assert cli.validate(s) == []

    def test_probe_threshold(self):
        s = cli.load_scenario(SCENARIOS / "recurse_grigorchuk.json")
        s.params["t"] = 100.0
        diags = cli.validate(s)
        assert len(diags) == 1
        assert "μδ + 2 log_{t₀} M < δ" in diags[0] and "minimal admissible t" in diags[0]
        assert "params.t" in diags[0]

    def test_sandwich_without_seed(self):
        s = cli.load_scenario(SCENARIOS / "compare_scaled.json")
        s.params.pop("seed")
        s.params["x_init"] = [0.0] * 20
        s.params["y_init"] = [0.0] * 20
        diags = cli.validate(s)
        assert len(diags) == 1 and "params.seed" in diags[0]

    def test_initial_range(self):
        s = cli.Scenario("pde", dict(PDE_SMALL["inputs"]), dict(PDE_SMALL["params"], u0=0.55))
        diags = cli.validate(s)
        assert len(diags) == 1 and "params.u0" in diags[0]

    def test_unknown_kind(self):
        assert "unknown kind" in cli.validate(cli.Scenario("plot", {}, {}))[0]

    def test_dry_run(self, tmp_path, capsys):
        cfg = str(SCENARIOS / "recurse_grigorchuk.json")
        assert run("recurse", cfg, tmp_path / "out", "--dry-run") == 0
        assert not (tmp_path / "out").exists()
        s = json.loads(Path(cfg).read_text())
        s["params"]["t"] = 100
        assert run("recurse", write(tmp_path, "g.json", s), tmp_path / "out", "--dry-run") == 1
        assert "minimal admissible t" in capsys.readouterr().err


class TestDeterminism:
    def test_rerun_identical(self, tmp_path):
        for out in ("a", "b"):
            assert run("compare", str(SCENARIOS / "compare_scaled.json"), tmp_path / out) == 0
        assert (tmp_path / "a" / cli.MANIFEST).read_bytes() == (tmp_path / "b" / cli.MANIFEST).read_bytes()

    def test_seed_override(self, tmp_path):
        cfg = str(SCENARIOS / "compare_scaled.json")
        run("compare", cfg, tmp_path / "a")
        run("compare", cfg, tmp_path / "b", "--seed", "99")
        assert manifest(tmp_path / "b")["scenario"]["params"]["seed"] == 99
        assert (tmp_path / "a" / "grid1.csv").read_bytes() != (tmp_path / "b" / "grid1.csv").read_bytes()

    def test_jobs(self, tmp_path):
        cfgs = [str(SCENARIOS / "recurse_lyness.json"), str(SCENARIOS / "recurse_abs_pl.json")]
        assert run("recurse", cfgs, tmp_path / "par", "--jobs", "2") == 0
        assert run("recurse", cfgs, tmp_path / "seq") == 0
        for stem in ("recurse_lyness", "recurse_abs_pl"):
            assert (tmp_path / "par" / stem / cli.MANIFEST).read_bytes() == \
                (tmp_path / "seq" / stem / cli.MANIFEST).read_bytes()


class TestOutput:
    def test_gnuplot(self, tmp_path):
        assert run("orbit", str(SCENARIOS / "orbit_lamplighter.json"), tmp_path / "a", "--gnuplot") == 0
        scripts = list((tmp_path / "a").glob("*.gp"))
        assert scripts and "grid.csv" in scripts[0].read_text()
        assert run("orbit", str(SCENARIOS / "orbit_lamplighter.json"), tmp_path / "b") == 0
        assert not list((tmp_path / "b").glob("*.gp"))

    def test_log_levels(self, tmp_path, monkeypatch, capsys):
        cfg = str(SCENARIOS / "eval_lyness.json")
        monkeypatch.setenv("TROPDYN_LOG", "quiet")
        run("eval", cfg, tmp_path / "q")
        assert "INFO" not in capsys.readouterr().err
        monkeypatch.setenv("TROPDYN_LOG", "info")
        run("eval", cfg, tmp_path / "i")
        assert "INFO" in capsys.readouterr().err
        monkeypatch.setenv("TROPDYN_LOG", "debug")
        run("eval", cfg, tmp_path / "d")
        assert "DEBUG" in capsys.readouterr().err
        monkeypatch.setenv("TROPDYN_LOG", "loud")
        run("eval", cfg, tmp_path / "l")
        assert "TROPDYN_LOG" in capsys.readouterr().err

    def test_module_entry_point(self, tmp_path):
        env = dict(os.environ, TROPDYN_LOG="quiet")
        proc = subprocess.run(
            [sys.executable, "-m", "tropdyn.cli", "eval", "--config", str(SCENARIOS / "eval_lyness.json"),
             "--out", str(tmp_path)],
            capture_output=True, text=True, env=env, check=False,
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "result.txt").exists()

    def test_no_partial_files(self, tmp_path):
        run("eval", str(SCENARIOS / "eval_lyness.json"), tmp_path)
        assert not [p for p in tmp_path.iterdir() if p.name.startswith(".") or p.suffix == ".tmp"]


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_scenarios_validate(path):
    assert cli.validate(cli.load_scenario(path)) == []
