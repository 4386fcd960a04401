import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from accelera.cli import EXIT_ANALYSIS, EXIT_OK, EXIT_USAGE, main
from accelera.model_io import serialize_model
from conftest import random_model

BENCH_DIR = Path(__file__).resolve().parents[1] / "benchmarks"
THERMOSTAT = str(BENCH_DIR / "thermostat.model")

IDENTITY = """\
name identity
vars x y
A [ 1 0 ; 0 1 ]
B [ 0 ; 0 ]
guard none
init box [ -1 2 ; 3 4 ]
input box [ 0 0 ]
template box
"""


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_thermostat(capsys):
    code, out, err = run(["analyze", "--model", THERMOSTAT], capsys)
    assert code == EXIT_OK
    res = json.loads(out)
    assert res["n_lower"] == 32
    assert "thermostat: n_lower=32" in err


def test_analyze_quiet_to_file(tmp_path, capsys):
    target = tmp_path / "res.json"
    code, out, err = run(["analyze", "--model", THERMOSTAT, "--quiet", "--out", str(target)], capsys)
    assert code == EXIT_OK and out == "" and err == ""
    assert json.loads(target.read_text())["n_lower"] == 32


def test_analyze_identity_loop_is_initial_box(tmp_path, capsys):
    path = tmp_path / "identity.model"
    path.write_text(IDENTITY)
    code, out, _ = run(["analyze", "--model", str(path), "--quiet"], capsys)
    assert code == EXIT_OK
    res = json.loads(out)
    bounds = {tuple(b["direction"]): (b["lo"], b["hi"]) for b in res["bounds"]}
    assert bounds[(1.0, 0.0)] == pytest.approx((-1, 2), abs=1e-9)
    assert bounds[(0.0, 1.0)] == pytest.approx((3, 4), abs=1e-9)


def test_malformed_file_exit_two_with_position(tmp_path, capsys):
    path = tmp_path / "bad.model"
    path.write_text("A [\n 1 x\n]\ninit box [ 0 1 ]\n")
    code, out, err = run(["analyze", "--model", str(path)], capsys)
    assert code == EXIT_USAGE
    assert out == ""
    assert f"{path}:2:4:" in err


def test_usage_errors_exit_two(tmp_path, capsys):
    assert run(["analyze"], capsys)[0] == EXIT_USAGE
    assert run(["frobnicate"], capsys)[0] == EXIT_USAGE
    assert run(["analyze", "--model", str(tmp_path / "missing.model")], capsys)[0] == EXIT_USAGE
    assert run(["analyze", "--model", "builtin:nope"], capsys)[0] == EXIT_USAGE
    assert run(["analyze", "--model", THERMOSTAT, "--template", "hexagon"], capsys)[0] == EXIT_USAGE
    assert run(["compare", "--model", THERMOSTAT], capsys)[0] == EXIT_USAGE
    assert run(["bench", "--dir", str(tmp_path / "nowhere")], capsys)[0] == EXIT_USAGE


def test_analysis_error_exit_one(tmp_path, capsys):
    # a defective block with an enormous off-diagonal coupling defeats the decomposition
    path = tmp_path / "nasty.model"
    path.write_text("A [ 1 1e300 ; 0 1 ]\nB [ 0 ; 0 ]\ninit box [ 0 1 ; 0 1 ]\ninput box [ 0 0 ]\n")
    code, out, err = run(["analyze", "--model", str(path)], capsys)
    assert code == EXIT_ANALYSIS
    assert err.startswith("accelera:")


def test_template_file(tmp_path, capsys):
    tpl = tmp_path / "dirs.txt"
    tpl.write_text("# two directions\n1 0\n0 1\n")
    code, out, _ = run(["analyze", "--model", THERMOSTAT, "--quiet", "--template", f"file:{tpl}"], capsys)
    assert code == EXIT_OK
    assert [b["direction"] for b in json.loads(out)["bounds"]] == [[1.0, 0.0], [0.0, 1.0]]
    tpl.write_text("1 0 0\n")
    assert run(["analyze", "--model", THERMOSTAT, "--template", f"file:{tpl}"], capsys)[0] == EXIT_USAGE


def test_csv_output(capsys):
    code, out, _ = run(["analyze", "--model", THERMOSTAT, "--quiet", "--format", "csv", "--template", "box"], capsys)
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    assert lines[0] == "d0,d1,lo,hi" and len(lines) == 3


def test_deterministic_without_timings(capsys):
    argv = ["analyze", "--model", THERMOSTAT, "--quiet", "--no-timings", "--seed", "7"]
    a = run(argv, capsys)[1]
    b = run(argv, capsys)[1]
    assert a == b
    assert "timings" not in json.loads(a)


def test_horizon_flag(capsys):
    base = json.loads(run(["analyze", "--model", THERMOSTAT, "--quiet"], capsys)[1])
    short = json.loads(run(["analyze", "--model", THERMOSTAT, "--quiet", "--horizon", "5"], capsys)[1])
    assert all(s["hi"] <= b["hi"] + 1e-9 for s, b in zip(short["bounds"], base["bounds"]))


def test_compare_zero_horizon_reports_initial_set(capsys):
    code, out, _ = run(["compare", "--model", THERMOSTAT, "--horizon", "0", "--quiet", "--template", "box"], capsys)
    assert code == EXIT_OK
    res = json.loads(out)
    expect = {(1.0, 0.0): (5.0, 40.0), (0.0, 1.0): (0.0, 1.0)}
    for row in res["directions"]:
        lo, hi = expect[tuple(row["direction"])]
        assert (row["lgg"]["lo"], row["lgg"]["hi"]) == pytest.approx((lo, hi), abs=1e-9)
        # the unbounded tube still contains X0
        assert row["acceleration"]["lo"] <= lo + 1e-9 and row["acceleration"]["hi"] >= hi - 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_compare_lgg_inside_acceleration(tmp_path, capsys, seed):
    m = random_model(np.random.default_rng(seed), guarded=False, unstable=False)
    path = tmp_path / "m.model"
    path.write_text(serialize_model(m))
    code, out, _ = run(["compare", "--model", str(path), "--horizon", "40", "--quiet", "--no-timings"], capsys)
    assert code == EXIT_OK
    for row in json.loads(out)["directions"]:
        scale = 1e-9 * (1 + abs(row["lgg"]["hi"]))
        assert row["lgg"]["hi"] <= row["acceleration"]["hi"] + scale
        assert row["lgg"]["lo"] >= row["acceleration"]["lo"] - scale


def test_compare_csv(capsys):
    code, out, _ = run(["compare", "--model", THERMOSTAT, "--horizon", "3", "--quiet", "--format", "csv"], capsys)
    assert code == EXIT_OK
    assert out.splitlines()[0] == "d0,d1,acc_lo,acc_hi,lgg_lo,lgg_hi"


def test_bench_empty_dir(tmp_path, capsys):
    code, out, _ = run(["bench", "--dir", str(tmp_path), "--quiet"], capsys)
    assert code == EXIT_OK
    assert json.loads(out)["results"] == []


def test_bench_marks_broken_model(tmp_path, capsys):
    for name in ("thermostat", "doubling"):
        (tmp_path / f"{name}.model").write_text((BENCH_DIR / f"{name}.model").read_text())
    (tmp_path / "broken.model").write_text("A [ 1 2 ; 3 ]\n")
    code, out, err = run(["bench", "--dir", str(tmp_path), "--jobs", "2"], capsys)
    assert code == EXIT_OK
    status = {r["model"]: r for r in json.loads(out)["results"]}
    assert status["broken.model"]["status"] == "failed"
    assert "1:11" in status["broken.model"]["error"]
    assert status["thermostat.model"]["status"] == "ok" and status["thermostat.model"]["n_lower"] == 32
    assert status["doubling.model"]["status"] == "ok"
    assert "broken.model: failed" in err


def test_bench_convoy_sweep_and_thread_cap(monkeypatch, capsys):
    monkeypatch.setenv("ACCELERA_THREADS", "1")
    code, out, _ = run(["bench", "--sizes", "2", "--quiet", "--no-timings"], capsys)
    assert code == EXIT_OK
    (row,) = json.loads(out)["results"]
    assert row["model"] == "convoyCar2" and row["status"] == "ok" and "runtime" not in row
    assert row["p"] == 3


def test_builtin_model_reference(capsys):
    code, out, _ = run(["analyze", "--model", "builtin:doubling", "--quiet"], capsys)
    assert code == EXIT_OK
    res = json.loads(out)
    assert res["n_lower"] <= 6 and (res["n_upper"] == "inf" or res["n_upper"] >= 7)


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "accelera.cli", "analyze", "--model", THERMOSTAT,
                           "--quiet", "--no-timings"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["n_lower"] == 32
    assert math.isinf(float(json.loads(proc.stdout)["n_upper"]))
