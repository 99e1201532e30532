"""Config parsing, deterministic ledgers, VTK round-trips, CLI exit codes."""

import filecmp
import os

import numpy as np
import pytest

from cnsfv.io_cli import (ConfigError, main, parse_config, read_csv,
                          read_vtk, write_csv, write_vtk)
from cnsfv.mesh import structured_box_mesh, write_mesh_file
from conftest import perturbed_box_mesh


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    return str(path)


def test_parse_config_defaults_and_overrides(tmp_path):
    p = _write(tmp_path / "a.cfg", """
# comment line
case = uniform-inflow
n = 3            # trailing comment
dt_from_h = off
dt = 0.02
levels = 2, 4, 8
""")
    cfg = parse_config(p)
    assert cfg["case"] == "uniform-inflow"
    assert cfg["n"] == 3
    assert cfg["dt_from_h"] is False
    assert cfg["dt"] == 0.02
    assert cfg["levels"] == (2, 4, 8)
    assert cfg["gamma"] == 2.0          # untouched default
    assert "dt" not in parse_config(_write(tmp_path / "b.cfg", ""))


@pytest.mark.parametrize("body,frag", [
    ("wibble = 3", "unknown key"),
    ("n = not-an-int", "bad value"),
    ("case = vortex-sheet", "unknown case"),
    ("study = all", "study must be"),
    ("dt_from_h = maybe", "boolean"),
    ("levels = 2 4 x", "integers"),
    ("n 4", "expected 'key = value'"),
])
def test_parse_config_rejects(tmp_path, body, frag):
    with pytest.raises(ConfigError, match=frag):
        parse_config(_write(tmp_path / "bad.cfg", body + "\n"))


def test_csv_round_trip_and_determinism(tmp_path):
    rows = [
        dict(step=0, time=0.0, value=1.0 / 3.0, name="alpha"),
        dict(step=1, time=0.125, value=np.float64(2.0) ** -52, name="beta"),
    ]
    p1, p2 = str(tmp_path / "x.csv"), str(tmp_path / "y.csv")
    write_csv(p1, rows)
    write_csv(p2, rows)
    assert filecmp.cmp(p1, p2, shallow=False)
    back = read_csv(p1)
    assert back[0]["value"] == rows[0]["value"]      # repr() round-trips
    assert back[1]["value"] == rows[1]["value"]
    assert back[0]["name"] == "alpha"
    assert back[1]["step"] == 1


def test_vtk_round_trip(tmp_path):
    mesh = perturbed_box_mesh(2, seed=11)
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.5, 2.0, mesh.nt)
    ph = rng.uniform(0.1, 1.0, mesh.nt)
    uh = rng.standard_normal((mesh.nt, 3))
    p = str(tmp_path / "state.vtk")
    write_vtk(p, mesh, rho, ph, uh)
    verts, cells, data = read_vtk(p)
    assert np.array_equal(verts, mesh.verts)
    assert np.array_equal(cells, mesh.tets)
    assert np.array_equal(data["rho"], rho)
    assert np.array_equal(data["p_h"], ph)
    assert np.array_equal(data["velocity"], uh)


def _steady_cfg(tmp_path, extra=""):
    return _write(tmp_path / "run.cfg", f"""
case = steady-constant
n = 2
T = 0.3
dt_from_h = false
dt = 0.15
{extra}
""")


def test_cli_solve_writes_ledgers_and_vtk(tmp_path, capsys):
    cfg = _steady_cfg(tmp_path, "vtk_every = 1")
    out = str(tmp_path / "out")
    assert main(["solve", cfg, "--out-dir", out]) == 0
    mass = read_csv(os.path.join(out, "mass.csv"))
    energy = read_csv(os.path.join(out, "energy.csv"))
    assert [r["step"] for r in mass] == [0, 1, 2]
    assert abs(mass[-1]["residual"]) < 1e-12
    assert energy[0]["energy"] > 0.0
    assert all(abs(r["identity_residual"]) < 1e-9 for r in energy)
    assert os.path.exists(os.path.join(out, "state_00000.vtk"))
    assert os.path.exists(os.path.join(out, "state_00002.vtk"))
    assert "ledgers" in capsys.readouterr().out


def test_cli_solve_output_is_byte_identical(tmp_path):
    cfg = _steady_cfg(tmp_path)
    o1, o2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    assert main(["solve", cfg, "--out-dir", o1]) == 0
    assert main(["solve", cfg, "--out-dir", o2]) == 0
    for name in ("mass.csv", "energy.csv"):
        assert filecmp.cmp(os.path.join(o1, name), os.path.join(o2, name),
                           shallow=False)


def test_cli_check_passes_on_steady_cases(tmp_path, capsys):
    for case in ("steady-constant", "uniform-inflow"):
        cfg = _write(tmp_path / f"{case}.cfg", f"""
case = {case}
n = 2
T = 0.3
dt_from_h = false
dt = 0.15
""")
        assert main(["check", cfg]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "PASS positivity" in out
        assert "PASS exact steady state" in out


def test_cli_check_with_regularization(tmp_path, capsys):
    cfg = _write(tmp_path / "r.cfg", """
case = periodic-bump
n = 2
T = 0.2
dt_from_h = false
dt = 0.1
kappa = 1
omega = 1.0
eta = 0.3
""")
    assert main(["check", cfg]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_cli_convergence_writes_eoc(tmp_path):
    cfg = _write(tmp_path / "c.cfg", """
case = periodic-bump
T = 0.2
levels = 1 2
study = both
""")
    out = str(tmp_path / "conv")
    assert main(["convergence", cfg, "--out-dir", out]) == 0
    eoc_rows = read_csv(os.path.join(out, "eoc.csv"))
    assert {(r["study"], r["quantity"]) for r in eoc_rows} == {
        ("errors", "rel_energy"), ("errors", "vel_l2"),
        ("errors", "vel_h1"), ("consistency", "res_mass"),
        ("consistency", "res_momentum"),
    }
    assert all(np.isfinite(r["order"]) for r in eoc_rows)
    assert os.path.exists(os.path.join(out, "errors.csv"))
    assert os.path.exists(os.path.join(out, "consistency.csv"))


def test_cli_solve_from_mesh_file(tmp_path):
    mesh = structured_box_mesh(2)
    mfile = str(tmp_path / "box.mesh")
    write_mesh_file(mfile, mesh)
    cfg = _write(tmp_path / "m.cfg", f"""
case = uniform-inflow
mesh_file = {mfile}
T = 0.2
dt_from_h = false
dt = 0.1
""")
    out = str(tmp_path / "mf")
    assert main(["solve", cfg, "--out-dir", out]) == 0
    assert len(read_csv(os.path.join(out, "mass.csv"))) == 3


def test_cli_error_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path / "bad.cfg", "wibble = 1\n")
    assert main(["solve", bad]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["solve", str(tmp_path / "missing.cfg")]) == 2
    capsys.readouterr()
    badreg = _write(tmp_path / "badreg.cfg", "kappa = 0.5\n")
    assert main(["solve", badreg]) == 2
    assert "kappa" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["frobnicate", bad])
