from __future__ import annotations

import json

import pytest

from degma import io
from degma.cli import RunConfig, config_from_args, main
from degma.errors import ConfigurationError


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_q0_paraboloid(tmp_path, capsys):
    code, out, _ = _run(["solve", "--q", "0", "--lambda", "1", "--domain", "1,1", "--nr", "16", "--ntheta", "8",
                         "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert res["residual"] <= 1e-10
    u = io.read_field(tmp_path / "solution.dgma")
    assert u.center_value() == pytest.approx(-0.5, abs=1e-10)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["digest"] == RunConfig.from_json(json.dumps(man["config"])).digest()
    assert "total" in man["timings"] and man["environment"]["workers"] >= 1


def test_cl1_report(tmp_path, capsys):
    code, out, _ = _run(["diagnose", "--what", "cl1", "--pmax", "40", "--bmax", "5", "--out-dir", str(tmp_path)],
                        capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert res["passed"] and res["failures"] == 0 and res["control_failures"] > 0
    lines = (tmp_path / "cl1.csv").read_text().splitlines()
    assert lines[0] == "p,b,S,bound,pass" and len(lines) == 1 + 41 * 6
    assert lines[1].split(",")[2] == "1/1"


def test_verify_linear_is_deterministic(tmp_path, capsys, monkeypatch):
    args = ["verify-linear", "--m", "1", "--k", "0", "--samples", "12", "--seed", "7",
            "--modes", "32", "--vertical", "16"]
    outs = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "4")):
        monkeypatch.setenv("DEGMA_THREADS", threads)
        assert _run([*args, "--out-dir", str(tmp_path / name)], capsys)[0] == 0
        outs.append((tmp_path / name / "ratios.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert outs[0].startswith(b"case,ratio,h,")
    man = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert man["environment"]["workers"] == 4


@pytest.mark.parametrize(
    "argv, status",
    [
        (["bogus"], 2),
        (["solve", "--nosuch", "1"], 2),
        ([], 2),
        (["solve", "--tol", "-1"], 3),
        (["transform", "--input", "/nonexistent/u.dgma"], 4),
        (["diagnose", "--what", "radius"], 3),
        (["oracle", "--q", "1", "--mode", "eigen"], 5),
        (["solve", "--q", "1", "--nr", "16", "--ntheta", "8", "--max-iter", "1"], 6),
    ],
)
def test_distinct_exit_codes(tmp_path, capsys, argv, status):
    argv = [*argv, "--out-dir", str(tmp_path)] if argv and argv[0] != "bogus" else argv
    code, _, err = _run(argv, capsys)
    assert code == status
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["exit_status"] == status and doc["message"]


def test_error_json_written(tmp_path, capsys):
    _run(["solve", "--q", "1", "--nr", "16", "--ntheta", "8", "--max-iter", "1", "--out-dir", str(tmp_path)], capsys)
    doc = json.loads((tmp_path / "error.json").read_text())
    assert doc["type"] == "ConvergenceError"


def test_config_roundtrip_and_override(tmp_path):
    cfg = RunConfig("solve", q=3, lam=2.0, domain=(1.2, 0.8), nr=32)
    assert RunConfig.from_json(cfg.to_json()) == cfg
    assert cfg.to_json() == RunConfig.from_json(cfg.to_json()).to_json()
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    loaded = config_from_args(["solve", "--config", str(path), "--nr", "16"])
    assert loaded.q == 3 and loaded.nr == 16 and loaded.domain == (1.2, 0.8)
    other = RunConfig("solve", q=3, lam=2.0, domain=(1.2, 0.8), nr=32, out_dir="elsewhere")
    assert other.digest() == cfg.digest()
    with pytest.raises(ConfigurationError):
        RunConfig.from_json('{"subcommand": "solve", "nope": 1}')


def test_threads_env_validation(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DEGMA_THREADS", "zero")
    code, _, _ = _run(["oracle", "--q", "0", "--out-dir", str(tmp_path)], capsys)
    assert code == 3


def test_solve_transform_diagnose_pipeline(tmp_path, capsys):
    sol = tmp_path / "sol"
    assert _run(["eigen", "--nr", "128", "--ntheta", "16", "--out-dir", str(sol)], capsys)[0] == 0
    dump = sol / "solution.dgma"
    code, out, _ = _run(["transform", "--input", str(dump), "--m", "2", "--out-dir", str(tmp_path / "tr")], capsys)
    assert code == 0
    rep = json.loads(out)["results"]
    assert rep["identity_error"] <= 1e-10 and rep["lambda"] == pytest.approx(7.49, rel=1e-2)
    vs = io.read_field(tmp_path / "tr" / "vstar.dgma")
    assert vs.kind == "v*"
    code, out, _ = _run(["diagnose", "--what", "induction", "--input", str(tmp_path / "tr" / "vstar.dgma"),
                         "--m", "2", "--out-dir", str(tmp_path / "ind")], capsys)
    assert code == 0 and json.loads(out)["results"]["satisfied"]
    assert (tmp_path / "ind" / "induction.csv").read_text().startswith("N,s_N,bound_N\n")
    code, out, _ = _run(["diagnose", "--what", "radius", "--input", str(dump), "--out-dir", str(tmp_path / "rad")],
                        capsys)
    assert code == 0 and json.loads(out)["results"]["radius"] > 0
    code, out, _ = _run(["diagnose", "--what", "exponent", "--input", str(dump), "--out-dir", str(tmp_path / "ex")],
                        capsys)
    assert code == 0


def test_oracle_and_flow(tmp_path, capsys):
    code, out, _ = _run(["oracle", "--q", "1", "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 0
    assert json.loads(out)["results"]["center"] == pytest.approx(-0.179036, abs=1e-6)
    code, out, _ = _run(["flow", "--q", "1", "--nr", "12", "--ntheta", "8", "--dt", "2e-4", "--steps", "20000",
                         "--out-dir", str(tmp_path / "f")], capsys)
    assert code == 0
    trace = (tmp_path / "f" / "flow_trace.csv").read_text().splitlines()
    assert trace[0] == "step,residual,J,dt"
