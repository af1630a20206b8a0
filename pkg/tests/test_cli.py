import io
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from avgmdp import cli
from avgmdp.errors import SolverError

MODELS = Path(__file__).resolve().parent.parent / "models"
GAPS = str(MODELS / "discontinuous_gaps_0.1.json")
RD = str(MODELS / "regret_discontinuity.json")
LEVEL = str(MODELS / "leveling_perturbed.json")
KL_01 = 0.1 * math.log(0.2) + 0.9 * math.log(1.8)


def run(*argv):
    buf = io.StringIO()
    code = cli.dispatch(list(argv), stdout=buf)
    text = buf.getvalue()
    return code, (json.loads(text) if text else None), text


def test_solve_gaps():
    code, out, _ = run("solve", "--model", GAPS)
    assert code == 0
    assert [out["gaps"][k] for k in ("1,go", "2,go", "1,loop", "2,loop")] == pytest.approx([1.2, 0, 0, 0.1], abs=1e-8)
    assert out["optimal_pairs"] == ["1,loop"] and out["diameter"] == 2.0


def test_solve_malformed_kernel_row(tmp_path):
    d = json.loads(Path(RD).read_text())
    d["kernel"]["1,star"] = [0.5, 0.6]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    code, out, _ = run("solve", "--model", str(bad))
    assert code == 1 and out is None


def test_solve_non_communicating_reports_witness(tmp_path):
    d = json.loads(Path(RD).read_text())
    d["kernel"]["1,star"] = [1.0, 0.0]
    p = tmp_path / "nc.json"
    p.write_text(json.dumps(d))
    code, out, _ = run("solve", "--model", str(p))
    assert code == 0 and out["communicating"] is False and out["witness"] is not None


def test_level():
    code, out, _ = run("level", "--model", LEVEL, "--epsilon", "0.05")
    assert code == 0
    assert out["bumped_pairs"] == ["2,loop"]
    assert out["leveled_reward"]["2,loop"] == pytest.approx(0.52, abs=1e-9)
    assert {"1,loop", "2,loop"} <= set(out["leveled_optimal_pairs"])


@pytest.mark.parametrize("eps", ["0", "-1", "nan"])
def test_level_rejects_bad_epsilon(eps):
    assert run("level", "--model", LEVEL, "--epsilon", eps)[0] == 1


def test_level_needs_epsilon():
    assert run("level", "--model", LEVEL)[0] == 1


def test_decompose_inline_measure():
    mu = json.dumps({"1,star": 0.25, "2,dagger": 0.25, "2,ddagger": 0.5})
    code, out, _ = run("decompose", "--model", RD, "--measure", mu)
    assert code == 0
    got = sorted((t["pairs"], round(t["coefficient"], 12)) for t in out["terms"])
    assert got == [(["1,star", "2,dagger"], 0.5), (["2,ddagger"], 0.5)]


def test_decompose_rejects_non_invariant():
    assert run("decompose", "--model", RD, "--measure", json.dumps({"1,star": 1.0}))[0] == 1


def test_lower_bound_closed_form():
    code, out, _ = run("lower-bound", "--model", RD)
    assert code == 0
    assert out["extrapolated"] == pytest.approx(0.4 / KL_01, rel=1e-2)
    assert out["value"] == pytest.approx(0.4 / KL_01, rel=1e-2)


def test_lower_bound_explicit_regularizer():
    code, out, _ = run("lower-bound", "--model", RD, "--eflat", "0.01", "--eunif", "0.001", "--ereg", "0.001")
    assert code == 0 and out["regularizer"]["eps_reg"] == 0.001 and out["value"] > 0


def test_lower_bound_rejects_negative_flags():
    assert run("lower-bound", "--model", RD, "--ereg", "-0.1")[0] == 1
    assert run("lower-bound", "--model", RD, "--levels", "0")[0] == 1


def test_bound_check():
    code, out, _ = run("bound-check", "--model", RD, "--grid", "0.1")
    assert code == 0 and out["passed"] and out["simple_bound"] == pytest.approx(3200)


def test_verify_small_scale(capsys):
    code, out, _ = run("verify", "--suite", "invariant_measures", "--scale", "0.05")
    assert code == 0 and out["passed"]
    assert "invariant_measures  PASS" in capsys.readouterr().err


def test_unknown_flag_and_command():
    assert run("solve", "--model", RD, "--bogus")[0] == 1
    assert run("frobnicate")[0] == 1
    assert run()[0] == 1


def test_solver_error_exit_code(monkeypatch, capsys):
    def boom(args):
        raise SolverError("did not converge")

    monkeypatch.setitem(cli.HANDLERS, "solve", boom)
    assert run("solve", "--model", RD)[0] == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "did not converge" in err


def _config(tmp_path, seeds=2):
    cfg = {"model": RD, "learners": ["uniform", {"algo": "ecoe", "name": "ecoe", "schedule": {"scale": {"flat": 0.1}}}],
           "horizon": 300, "seeds": seeds}
    p = tmp_path / "exp.json"
    p.write_text(json.dumps(cfg))
    return p


def test_run_writes_traces_and_uses_master_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("AVGMDP_SEED", "40")
    code, out, _ = run("run", "--config", str(_config(tmp_path)), "--out", str(tmp_path / "o"))
    assert code == 0 and out["seeds"] == [40, 41]
    assert (tmp_path / "o" / "regret_discontinuity_ecoe_seed41.csv").exists()


def test_run_bad_master_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("AVGMDP_SEED", "x")
    assert run("run", "--config", str(_config(tmp_path)))[0] == 1


def test_run_is_byte_identical(tmp_path):
    cfg = _config(tmp_path)
    run("run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--jobs", "2")
    run("run", "--config", str(cfg), "--out", str(tmp_path / "b"))
    a = sorted((tmp_path / "a").glob("*.csv"))
    assert len(a) == 4
    for f in a:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


@pytest.mark.parametrize("argv", [
    ("solve", "--model", GAPS),
    ("level", "--model", LEVEL, "--epsilon", "0.05"),
    ("lower-bound", "--model", RD, "--levels", "3"),
    ("bound-check", "--model", RD, "--grid", "0.1"),
])
def test_commands_are_idempotent(argv):
    assert run(*argv)[2] == run(*argv)[2]


def test_pretty_and_out_file(tmp_path):
    target = tmp_path / "s.json"
    code, out, _ = run("solve", "--model", GAPS, "--pretty", "--out", str(target))
    assert code == 0 and out is None
    text = target.read_text()
    assert text.startswith("{\n  ") and json.loads(text)["optimal_gain"] == pytest.approx(0.6)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "avgmdp", "solve", "--model", GAPS], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["optimal_gain"] == pytest.approx(0.6)
    proc = subprocess.run([sys.executable, "-m", "avgmdp", "solve"], capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr.count("\n") == 1
