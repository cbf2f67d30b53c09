import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import adaptris
from adaptris.cli import main
from adaptris.errors import ConfigError
from adaptris.io import parse_config, read_trajectory, write_trajectory
from adaptris.verify import check_bv

DATA = Path(adaptris.__file__).parent / "data"


def test_config_defaults_and_overrides():
    cfg = parse_config((DATA / "one_d.toml").read_text())
    assert cfg.model == "one_d" and cfg.tol == 1e-3 and cfg.tau_init == 0.1 and cfg.states == "csv"
    cfg = parse_config((DATA / "fem2d.toml").read_text())
    assert cfg.n_per_side == 21 and cfg.solver.kkt_tol == 1e-6


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("format_version = 1\n[run]\ntol = 0\n", 3, "tol must be positive"),
        ("[run]\nmode = 'adaptive'\ntol = = 1\n", 3, "Invalid value"),
        ("[model]\nkind = 'one_d'\n\n[bogus]\nx = 1\n", 4, "unknown section"),
        ("[run]\n\ntol_sequence = [1e-3, 1e-2]\n", 3, "strictly decreasing"),
        ("[solver]\nnewton_tol = 'small'\n", 2, "must be a number"),
        ("[run]\nnq = 7\n", 2, "nq"),
    ],
)
def test_config_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert fragment in str(info.value)
    assert str(info.value).startswith(f"line {line}:")


def test_roundtrip_is_bit_identical(tmp_path, one_d, run_1d):
    traj = run_1d(1e-2)
    for fmt in ("npy", "csv"):
        path = tmp_path / f"traj_{fmt}.csv"
        write_trajectory(traj, path, one_d.metric, fmt)
        back = read_trajectory(path)
        np.testing.assert_array_equal(back.s, traj.s)
        np.testing.assert_array_equal(back.t, traj.t)
        np.testing.assert_array_equal(back.tau, traj.tau)
        np.testing.assert_array_equal(back.z, traj.z)
        a, b = check_bv(traj, one_d).to_dict(), check_bv(back, one_d).to_dict()
        assert a == b


def test_cli_run_is_deterministic_and_verifies(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--config", str(DATA / "one_d.toml"), "--tol", "1e-2", "--out", str(tmp_path / name)]) == 0
    csv_a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert csv_a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert (tmp_path / "a" / "trajectory_states.csv").read_bytes() == (tmp_path / "b" / "trajectory_states.csv").read_bytes()
    assert csv_a.startswith(b"# format_version=1\n")

    summary = json.loads((tmp_path / "a" / "trajectory_summary.json").read_text())
    assert summary["format_version"] == 1 and summary["reached_T"]
    labels = [(g["label"], g["s0"], g["s1"]) for g in summary["regime_segments"]]
    jumps = [g for g in labels if g[0] == "jump"]
    assert any(abs(g[1] - 2) <= 0.5 for g in jumps) and any(abs(g[2] - 10) <= 0.5 for g in jumps)

    report = tmp_path / "report.json"
    assert main(["verify", str(tmp_path / "a" / "trajectory.csv"), "--out", str(report)]) == 0
    payload = json.loads(report.read_text())
    assert payload["files"][0]["passed"]


def test_cli_verify_shipped_oracle(tmp_path):
    report = tmp_path / "r.json"
    assert main(["verify", str(DATA / "exact_1d.csv"), "--out", str(report)]) == 0
    rep = json.loads(report.read_text())["files"][0]["report"]
    for name in ("complementarity_defect", "normalization_defect", "endtime_defect", "energy_identity_defect"):
        assert rep[name] <= 1e-8


def test_cli_verify_rejects_corrupted_time(tmp_path):
    lines = (DATA / "exact_1d.csv").read_text().splitlines()
    header = next(i for i, ln in enumerate(lines) if ln.startswith("k,"))
    row = lines[header + 50].split(",")
    row[2] = repr(float(row[2]) - 0.2)
    lines[header + 50] = ",".join(row)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    (tmp_path / "bad_states.csv").write_bytes((DATA / "exact_1d_states.csv").read_bytes())
    report = tmp_path / "r.json"
    assert main(["verify", str(bad), "--out", str(report)]) == 4
    entry = json.loads(report.read_text())["files"][0]
    assert not entry["gates"]["monotonicity"]
    assert entry["report"]["monotonicity_defect"] > 0.1


def test_cli_exit_codes(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[run]\ntol = 0.0\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    one = tmp_path / "one.toml"
    one.write_text("[run]\ntol_sequence = [1e-2]\n")
    assert main(["sweep", "--config", str(one), "--out", str(tmp_path)]) == 2
    assert main(["verify", str(tmp_path / "missing.csv"), "--model", "one_d"]) == 5
    assert main(["run", "--tol", "-1", "--out", str(tmp_path)]) == 2
    floor = tmp_path / "floor.toml"
    floor.write_text("[run]\ntol = 1e-14\n[solver]\nmax_fallback = 0\nmax_newton = 0\n")
    assert main(["run", "--config", str(floor), "--out", str(tmp_path / "f")]) == 3
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--bogus"])
    assert info.value.code == 2


def test_cli_sweep_and_dump_mesh(tmp_path):
    cfg = tmp_path / "sweep.toml"
    cfg.write_text("[run]\ntol_sequence = [1e-1, 1e-2]\ntau_init = 0.1\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "sw"), "--mode", "adaptive,uniform,nested"]) == 0
    rows = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert rows[0] == "tol,mode,N_steps,max_residuum,sum_residuum,S,wall_time,tau_min"
    assert len(rows) == 1 + 6
    summary = json.loads((tmp_path / "sw" / "sweep_summary.json").read_text())
    assert summary["nested_inclusion"] is True

    assert main(["dump-mesh", "--n-per-side", "5", "--out", str(tmp_path / "mesh.json")]) == 0
    assert json.loads((tmp_path / "mesh.json").read_text())["n_per_side"] == 5


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "adaptris.cli", "dump-mesh", "--n-per-side", "3", "--out", str(tmp_path / "m.json")],
                          capture_output=True, text=True, env={**os.environ, "ADAPTRIS_DISABLE_NUMBA": "1"})
    assert proc.returncode == 0, proc.stderr
