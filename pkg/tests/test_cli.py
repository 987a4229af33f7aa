import subprocess
import sys

import meshio
import numpy as np
import pytest

from mgfsi.cli_io import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, run


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    rc = run(["run", "--case", "ex1", "--max-levels", "2", "--out", str(out), *extra])
    return rc, out


def test_csv_is_deterministic(tmp_path):
    rc1, a = _run(tmp_path, "a")
    rc2, b = _run(tmp_path, "b")
    assert rc1 == rc2 == EXIT_OK
    assert (a / "levels.csv").read_bytes() == (b / "levels.csv").read_bytes()
    lines = (a / "levels.csv").read_text().splitlines()
    assert lines[0].startswith("level,dofs,J_drag,J_J2,J_c,true_error,eta_h")
    assert len(lines) == 3
    assert (a / "run.json").exists() and (a / "case.cfg").exists()


def test_vtk_files_are_readable(tmp_path):
    rc, out = _run(tmp_path, "v", "--vtk")
    assert rc == EXIT_OK
    m = meshio.read(out / "solution_2.vtk")
    assert m.cells[0].type == "quad"
    n = len(m.cells[0].data)
    assert set(m.point_data) >= {"v", "u", "p"}
    assert np.all(np.isfinite(m.point_data["v"]))
    assert len(m.cell_data["eta"][0]) == n
    z = meshio.read(out / "indicators_1.vtk")
    assert "z_v" in z.point_data


def test_usage_and_config_errors(tmp_path, capsys):
    assert run([]) == EXIT_USAGE
    assert run(["run", "--case", "ex1", "--mode", "sideways"]) == EXIT_USAGE
    assert run(["run", "--case", "no_such_case", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert run(["run", "--case", "ex1", "--weights", "1,2,3", "--out", str(tmp_path)]) \
        == EXIT_CONFIG
    assert run(["run", "--case", "ex1", "--alpha", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path):
    assert run(["config", "--case", "ex1"]) == EXIT_OK
    from mgfsi.cases import builtin_case, case_to_text
    text = case_to_text(builtin_case("ex1"))
    lid = [ln for ln in text.splitlines() if ln.startswith("velocity = Piecewise")][0]
    text = text.replace(lid, "velocity = 500*x*(2 - x) ; 0").replace("mu_s = 2.0", "mu_s = 0.01")
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    assert run(["run", "--case", str(cfg), "--max-levels", "1",
                "--out", str(tmp_path / "o")]) == EXIT_SOLVER


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mgfsi", "verify", "--case", "verify_elasticity",
                          "--levels", "2"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "orders" in res.stdout
