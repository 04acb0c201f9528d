import json

import numpy as np
import pytest

from steinerchase import cli
from steinerchase.errors import ValidationError
from steinerchase.harness import (CheckContext, RunConfig, execute, fit_slope, growth,
                                  load_report_instance, ratio, run_checks, worker_count)
from steinerchase.instances import RandomBodies, gen, save


def run_cli(capsys, *args):
    code = cli.main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_ratio_guard():
    assert ratio(0.0, 0.0) == 0.0
    assert ratio(2.0, 1.0) == 2.0
    assert ratio(1.0, 0.0) == 1e12


def test_worker_count(monkeypatch):
    monkeypatch.setenv("CHASE_THREADS", "3")
    assert worker_count(10) == 3 and worker_count(2) == 2
    monkeypatch.setenv("CHASE_THREADS", "x")
    with pytest.raises(ValidationError):
        worker_count(4)


def test_run_example_ratio(capsys):
    code, out, _ = run_cli(capsys, "run", "--gen", "hypercube:d=2,N=8", "--algo", "steiner",
                           "--norm", "linf", "--seed", "1")
    assert code == 0
    rep = json.loads(out)
    assert rep["ratio"] <= 2.3
    assert rep["config"]["seed"] == 1 and rep["config"]["samples"] == 4096
    assert len(rep["trace"]) == 8 and len(rep["instance"]["requests"]) == 8


def test_run_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert cli.main(["run", "--gen", "random:d=2,N=3", "--seed", "2", "--samples", "512",
                         "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_greedy_degenerate(tmp_path, capsys):
    p = tmp_path / "one.json"
    p.write_text('{"dim": 2, "norm": "l2", "requests": [{"type": "body", '
                 '"A": [[1,0],[-1,0],[0,1],[0,-1]], "b": [1,1,1,1]}]}')
    code, out, _ = run_cli(capsys, "run", "--instance", str(p), "--algo", "greedy")
    rep = json.loads(out)
    assert code == 0 and rep["alg_total"] == 0 and rep["opt_total"] == 0 and rep["ratio"] == 0


def test_csv_and_svg(tmp_path, capsys):
    svg = tmp_path / "p.svg"
    code, out, _ = run_cli(capsys, "run", "--gen", "random:d=2,N=3", "--format", "csv",
                           "--samples", "512", "--svg", str(svg))
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "step,x_0,x_1,movement,service,cum_alg,cum_opt,fixup_distance"
    assert len(lines) == 4 and all(len(l.split(",")) == 8 for l in lines)
    text = svg.read_text()
    assert text.startswith("<?xml") and 'version="1.1"' in text
    assert text.count("<polygon") == 3 and "<polyline" in text and "<rect x=" in text


def test_svg_needs_2d(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", "--gen", "random:d=3,N=2", "--svg", str(tmp_path / "x.svg"))
    assert code == 2 and "d = 2" in err


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dim": 2,')
    code, _, err = run_cli(capsys, "run", "--instance", str(bad))
    assert code == 2 and "line" in err
    missing = tmp_path / "m.json"
    missing.write_text('{"dim": 2, "requests": []}')
    code, _, err = run_cli(capsys, "run", "--instance", str(missing))
    assert code == 2 and "norm" in err
    code, _, err = run_cli(capsys, "run", "--gen", "random:d=2,N=3", "--algo", "nested")
    assert code == 2 and "not contained" in err
    code, _, _ = run_cli(capsys, "run", "--gen", "bogus:d=2,N=3")
    assert code == 2


def test_solver_failure_exit(monkeypatch, capsys):
    from steinerchase.errors import SolverFailure

    def boom(*a, **k):
        raise SolverFailure("no convergence", iterations=5)
    monkeypatch.setattr(cli, "execute", boom)
    code, _, err = run_cli(capsys, "run", "--gen", "random:d=2,N=2")
    assert code == 3 and "solver failure" in err


def test_replay_from_report(tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["run", "--gen", "hypercube:d=2,N=4", "--samples", "512", "--out", str(out)]) == 0
    inst = load_report_instance(out.read_text())
    p = tmp_path / "replay.json"
    save(inst, p)
    rep = json.loads(out.read_text())
    replay = tmp_path / "replay_report.json"
    assert cli.main(["run", "--instance", str(p), "--samples", "512", "--out", str(replay)]) == 0
    again = json.loads(replay.read_text())
    assert again["alg_total"] == rep["alg_total"]


def test_check_default_passes(capsys):
    code, out, _ = run_cli(capsys, "check", "--seed", "1")
    assert code == 0
    assert out.count("[PASS]") >= 10 and "[FAIL]" not in out


def test_check_perturbed_names_fenchel(capsys):
    code, out, err = run_cli(capsys, "check", "--perturb-conjugate", "0.1")
    assert code == 1
    assert "first failing check: fenchel/" in err


def test_check_suite_filter(capsys):
    code, out, _ = run_cli(capsys, "check", "--suite", "derivative")
    lines = [l for l in out.splitlines() if l.startswith("[")]
    assert code == 0 and lines and all("derivative/" in l for l in lines)


def test_check_api_results():
    res = run_checks(CheckContext(seed=2), ["dual-bound", "oracle"])
    assert [r.suite for r in res] == ["dual-bound", "dual-bound", "oracle"]
    with pytest.raises(ValidationError):
        run_checks(CheckContext(), ["nope"])


def test_growth_d1(capsys):
    code, out, _ = run_cli(capsys, "growth", "--d", "1", "--N", "4", "8", "--samples", "1024")
    rep = json.loads(out)
    assert code == 0 and [c["N"] for c in rep["cells"]] == [4, 8]
    assert all(c["ratio"] <= 1.2 for c in rep["cells"])
    assert np.isfinite(rep["slope"])


def test_growth_empty_grid(capsys):
    with pytest.raises(ValidationError):
        growth(3, [])
    code, _, _ = run_cli(capsys, "growth", "--N")
    assert code == 2


def test_fit_slope():
    Ns = [4, 8, 16]
    r = np.sqrt(1 + 2 * np.log(Ns))
    assert fit_slope(Ns, r) == pytest.approx(2.0)


def test_execute_budget_and_flags():
    cfg = RunConfig(samples=1024, seed=3)
    rep = execute(gen(RandomBodies(2, 3, seed=1), "l2"), cfg)
    assert rep.estimator_error_budget == pytest.approx(
        sum(5 * s.stderr + s.gap for s in rep.steps))
    assert not rep.flagged
    assert rep.alg_total == pytest.approx(rep.total_movement + rep.total_service)


def test_run_config_validation():
    with pytest.raises(ValidationError):
        RunConfig(algo="magic")
    with pytest.raises(ValidationError):
        RunConfig(tol=0)
