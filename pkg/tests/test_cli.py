import subprocess
import sys

import numpy as np
import pytest

from healthshock import __version__
from healthshock.calibration import gompertz_rate
from healthshock.cli import main


def read_csv_body(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# healthshock {__version__}")
    return lines[1:]


def test_solve_writes_tables(tmp_path):
    assert main(["solve", "--out", str(tmp_path)]) == 0
    for name in ("dead_coeffs.csv", "alive_coeffs.csv", "summary.csv", "config_resolved.yaml"):
        assert (tmp_path / name).exists()
    summary = dict(row.split(",") for row in read_csv_body(tmp_path / "summary.csv")[1:])
    assert float(summary["B0"]) == pytest.approx(10.3905985, rel=1e-8)
    assert float(summary["N"]) == pytest.approx(-0.0210069444, rel=1e-8)


def test_resolved_config_round_trips(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--out", str(a), "--set", "habit.alpha=0.12"]) == 0
    assert main(["solve", "--out", str(b), "--config", str(a / "config_resolved.yaml")]) == 0
    assert (a / "summary.csv").read_text() == (b / "summary.csv").read_text()


@pytest.mark.parametrize("argv", [
    ["solve", "--set", "market.mu=0.02"],
    ["solve", "--set", "nope=1"],
    ["simulate", "--paths", "0"],
    ["verify", "--grid", "0,2,2"],
    ["verify", "--grid", ""],
    ["sweep", "--axis", "habit.alpha", "--values", "0.1"],
    ["calibrate", "--model", "illness", "--table", "missing.csv"],
])
def test_usage_errors(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_simulate_is_reproducible(tmp_path):
    runs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        code = main(["simulate", "--out", str(out), "--paths", "8", "--dt", "0.05", "--seed", "3",
                     "--dump", "2", "--perturb", "merton:0.5"])
        assert code in (0, 1)
        runs.append(((out / "mc_report.csv").read_text(), (out / "paths.csv").read_text()))
    assert runs[0] == runs[1]
    assert read_csv_body(tmp_path / "a" / "paths.csv")[0] == "path,t,X,h,eta,pi,c,p,annuity"


def test_verify_single_state_passes(tmp_path):
    args = ["verify", "--out", str(tmp_path), "--grid", "6,4,3",
            "--set", "transitions.0.m1=0", "--set", "eta0=1"]
    assert main(args) == 0
    assert "dead_hjb: PASS" in (tmp_path / "verify_report.txt").read_text()


def test_verify_detects_corruption(tmp_path):
    args = ["verify", "--out", str(tmp_path), "--grid", "6,4,3", "--corrupt", "g:1e-3"]
    assert main(args) == 1
    assert "dead_hjb: FAIL" in (tmp_path / "verify_report.txt").read_text()


def test_calibrate(tmp_path):
    ages = np.arange(20.0, 90.0)
    table = tmp_path / "mort.csv"
    table.write_text("age,rate\n" + "".join(f"{a},{float(r)!r}\n" for a, r in
                                            zip(ages, gompertz_rate(ages, 20.0, 12.14982, 92.29736))))
    assert main(["calibrate", "--model", "gompertz", "--table", str(table), "--out", str(tmp_path)]) == 0
    rows = {ln.split(",")[1]: ln.split(",")[2] for ln in read_csv_body(tmp_path / "fit_gompertz.csv")[1:]}
    assert float(rows["n"]) == pytest.approx(12.14982, rel=1e-8)
    assert main(["calibrate", "--model", "illness", "--table", str(table), "--out", str(tmp_path)]) == 2


def test_sweep(tmp_path):
    code = main(["sweep", "--out", str(tmp_path), "--axis", "habit.alpha", "--values", "0.05,0.1",
                 "--times", "3"])
    assert code == 0
    body = read_csv_body(tmp_path / "sweep_habit_alpha.csv")
    assert body[0] == "axis,value,t,control,result,annuity" and len(body) == 1 + 2 * 3 * 3
    assert (tmp_path / "sweep_habit_alpha.gp").exists()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "healthshock", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
