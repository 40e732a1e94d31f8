import numpy as np
import pytest
import scipy.sparse as sp

from flexgmres import bounds, read_trace_dat, write_matrix_market
from flexgmres.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, run
from flexgmres.experiments import ExperimentConfig, cmd_sharp, cmd_solve, cmd_stagnate, cmd_tables, stall_iteration


def test_tables_output(capsys):
    assert run(["tables"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "0.204309643689220" in out
    assert "0.51     13     9.34e-03" in out
    assert "0.5      inf    0" in out


def test_bound_command(capsys, tmp_path):
    path = tmp_path / "b.txt"
    assert run(["bound", "--mu", "0.3", "--outer", "5", "--out", str(path)]) == EXIT_OK
    rows = [ln.split() for ln in path.read_text().splitlines() if not ln.startswith("#")]
    assert len(rows) == 6
    assert float(rows[5][2]) == bounds.fgmres_bound(0.3, 5)


def test_sharp_small(tmp_path, capsys):
    path = tmp_path / "sharp.dat"
    code = run(["sharp", "--n", "20", "--inner", "3", "--outer", "5", "--out", str(path)])
    assert code == EXIT_OK
    rec = read_trace_dat(path)
    assert len(rec) == 6
    assert float(rec.meta["max_relative_gap"]) <= 1e-10
    # bound column is the bounds-module curve bit for bit
    np.testing.assert_array_equal(rec.bound, bounds.bound_curve(0.5, 5))
    assert np.all(np.diff(rec.fg_rel) <= 0)
    assert "max_relative_gap" in capsys.readouterr().out


def test_sharp_quarter_final_residual():
    rec = cmd_sharp(ExperimentConfig("sharp", mu=0.25, n=101, inner=5))
    assert rec.fg_rel[-1] == pytest.approx(bounds.fgmres_bound(0.25, 20), rel=1e-8)


@pytest.mark.parametrize("mu, stall, value", [(0.55, 5, 0.198), (0.6, 3, 0.408)])
def test_stagnate_small(mu, stall, value):
    rec = cmd_stagnate(ExperimentConfig("stagnate", mu=mu, n=101, inner=4, outer=15))
    assert rec.meta["observed_stall_iteration"] == stall
    assert rec.fg_rel[stall] == pytest.approx(value, rel=1e-2)
    assert len(rec) == 16


def test_solve_default_problem():
    rec = cmd_solve(ExperimentConfig("solve", n=20))
    assert rec.meta["bound"] == "a priori (mu)"
    assert np.all(rec.fg_rel <= rec.bound + 1e-12)


def test_solve_missed_target_uses_measured_factors():
    rec = cmd_solve(ExperimentConfig("solve", n=20, inner=2, outer=6))
    assert rec.meta["bound"].startswith("a posteriori")
    gamma_curve = bounds.gamma_bound_curve(rec.p_res[1:])
    np.testing.assert_array_equal(rec.bound, gamma_curve)
    ok = ~np.isnan(rec.bound)
    assert np.all(rec.fg_rel[ok] <= rec.bound[ok] + 1e-12)


def test_solve_identity_matrix(tmp_path, capsys):
    path = tmp_path / "eye.mtx"
    write_matrix_market(path, sp.eye_array(10, format="csr"))
    assert run(["solve", "--matrix", str(path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "status: converged" in out
    rec = cmd_solve(ExperimentConfig("solve", matrix=str(path)))
    assert len(rec) == 2


def test_solve_breakdown_exit_code(tmp_path, capsys):
    path = tmp_path / "sing.mtx"
    write_matrix_market(path, sp.csr_array(np.diag([1.0, 0.0])))
    assert run(["solve", "--matrix", str(path)]) == EXIT_NUMERICAL


def test_usage_errors(capsys):
    assert run(["solve", "--bogus"]) == EXIT_USAGE
    assert run([]) == EXIT_USAGE
    assert run(["sharp", "--mu", "abc"]) == EXIT_USAGE
    assert run(["sharp", "--mu", "1.5"]) == EXIT_USAGE
    assert run(["sharp", "--mu", "0.6", "--n", "200", "--inner", "5"]) == EXIT_USAGE
    assert run(["sharp", "--n", "50"]) == EXIT_USAGE
    assert run(["tables", "--mu", "0.3"]) == EXIT_USAGE


def test_io_errors(tmp_path, capsys):
    assert run(["solve", "--matrix", str(tmp_path / "missing.mtx")]) == EXIT_IO
    bad = tmp_path / "bad.mtx"
    bad.write_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n5 5 1.0\n")
    assert run(["solve", "--matrix", str(bad)]) == EXIT_IO
    assert "line 3" in capsys.readouterr().err
    assert run(["sharp", "--n", "20", "--inner", "3", "--outer", "5", "--out", str(tmp_path / "no" / "x.dat")]) == EXIT_IO


def test_commands_deterministic(tmp_path):
    a, b = tmp_path / "a.dat", tmp_path / "b.dat"
    for p in (a, b):
        cmd_solve(ExperimentConfig("solve", n=15, out=str(p)))
    strip = lambda p: [ln for ln in p.read_text().splitlines() if "seconds" not in ln]  # noqa: E731
    assert strip(a) == strip(b)


def test_tables_to_file(tmp_path):
    path = tmp_path / "tables.txt"
    text = cmd_tables(ExperimentConfig("tables", out=str(path)))
    assert path.read_text() == text


def test_stall_iteration_helper():
    assert stall_iteration([1.0, 0.5, 0.25, 0.25, 0.25]) == 2
    assert stall_iteration([1.0, 0.5, 0.25]) is None
    assert stall_iteration([1.0]) is None


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "flexgmres", "tables"], capture_output=True, text=True)
    assert res.returncode == 0 and "Stalling index" in res.stdout
