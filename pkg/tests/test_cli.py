import csv
import json
import shutil
import subprocess

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dipole_eddy import cli
from dipole_eddy.config import ConfigError, RunConfig, TargetSpec
from dipole_eddy.fem import SolverError
from dipole_eddy.mesh import Region, export_msh

from test_mesh import _write_raw

pytestmark = pytest.mark.filterwarnings("ignore::dipole_eddy.state_adjoint.ConstraintCompatibilityWarning")

MESH4 = {"kind": "nested-box", "outer_half_width": 1.0, "inner_half_width": 0.5, "n": 4}


def _run(tmp_path, command, name="cfg", **overrides):
    cfg = RunConfig.from_dict({"mesh": MESH4, "check_samples": 3, **overrides})
    path = tmp_path / f"{name}.json"
    path.write_text(cfg.to_json())
    out = tmp_path / f"{name}_{command}"
    code = cli.main([command, "--config", str(path), "--out", str(out)])
    return code, out


def _load(path):
    return json.loads(path.read_text())


# -- configuration -------------------------------------------------------------------

def test_config_round_trip():
    cfg = RunConfig(mu={"insulator": [[2.0, 0, 0], [0, 3.0, 0], [0, 0, 2.0]]},
                    target=TargetSpec("dipole-manufactured", p_bar=[0.1, 0.2, 0.3]))
    again = RunConfig.from_json(cfg.to_json())
    assert again.to_dict() == cfg.to_dict()
    assert RunConfig.from_json(again.to_json()).to_json() == cfg.to_json()


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(0, 10),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_config_round_trip_property(omega, sigma0, nu, p):
    cfg = RunConfig(omega=omega, sigma0=sigma0, nu=nu, p=p)
    assert RunConfig.from_json(cfg.to_json()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("bad", [{"omega": 0.0}, {"r": -1.0}, {"nu": -1.0}, {"colour": 1},
                                 {"mu": {"vacuum": 1.0}}, {"mesh": {"kind": "cube"}},
                                 {"target": {"kind": "dipole-manufactured"}},
                                 {"target": {"kind": "wave"}}])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_floats_lossless(tmp_path):
    x = 0.1 + 0.2
    cfg = RunConfig(omega=x, p=[1 / 3, -2 / 7, np.nextafter(0.5, 1)])
    back = RunConfig.from_json(cfg.to_json())
    assert back.omega == x and back.p == cfg.p


# -- commands -----------------------------------------------------------------------

def test_validate_default_passes(tmp_path, capsys):
    code, out = _run(tmp_path, "validate")
    assert code == 0
    rep = _load(out / "validate.json")
    assert rep["ok"] and set(rep["checks"]) == {"topology", "homogeneity", "kernel_pde_residual",
                                                "matrix_structure", "coercivity"}
    assert "FAIL" not in capsys.readouterr().out


def test_validate_large_r_fails_homogeneity(tmp_path):
    code, out = _run(tmp_path, "validate", r=0.75)
    assert code == 2
    rep = _load(out / "validate.json")
    assert not rep["checks"]["homogeneity"]["ok"]


def test_validate_conductor_touching_gamma(tmp_path, mesh4, capsys):
    regions = np.where(mesh4.centroids[:, 0] > 0.5, Region.CONDUCTOR, Region.INSULATOR)
    path = _write_raw(tmp_path, mesh4.vertices, mesh4.tets, regions)
    code, _ = _run(tmp_path, "validate", mesh={"kind": "msh", "path": str(path)})
    assert code == 2
    assert "stage 'mesh'" in capsys.readouterr().err


def test_msh_mesh_source(tmp_path, mesh4):
    path = tmp_path / "box.msh"
    export_msh(mesh4, path)
    code, _ = _run(tmp_path, "validate", mesh={"kind": "msh", "path": str(path)})
    assert code == 0


def test_solve_state_zero(tmp_path):
    code, out = _run(tmp_path, "solve-state")
    assert code == 0
    s = _load(out / "summary.json")
    assert s["q_solve_residual"] == 0 and s["eta_solve_residual"] == 0
    assert s["constraint_residual"] == 0
    assert all(v == [0.0, 0.0] for v in _load(out / "Q.json")["dofs"])
    text = (out / "fields.vtu").read_text()
    assert "E_real" in text


def test_solve_state_deterministic_and_consistent(tmp_path):
    mesh8 = dict(MESH4, n=8)
    c1, o1 = _run(tmp_path, "solve-state", "a", mesh=mesh8, p=[0.3, -0.2, 0.5])
    c2, o2 = _run(tmp_path, "solve-state", "b", mesh=mesh8, p=[0.3, -0.2, 0.5])
    assert c1 == c2 == 0
    for name in ("Q.json", "eta.json", "summary.json", "fields.vtu"):
        assert (o1 / name).read_bytes() == (o2 / name).read_bytes()
    s = _load(o1 / "summary.json")
    assert s["multiplier_norm"] <= 1e-6 * s["q_norm"]


def test_solve_adjoint(tmp_path):
    code, out = _run(tmp_path, "solve-adjoint", p=[0.3, -0.2, 0.5],
                     target={"kind": "constant-field", "E": [[0.1, 0], [0, 0.1], [0, 0]]})
    assert code == 0
    s = _load(out / "summary.json")
    assert s["t_solve_residual"] <= 1e-10 and s["psi_solve_residual"] <= 1e-10
    assert len(_load(out / "T.json")["dofs"]) > 0


def test_optimize_manufactured(tmp_path):
    code, out = _run(tmp_path, "optimize",
                     target={"kind": "dipole-manufactured", "p_bar": [0.3, -0.2, 0.5]})
    assert code == 0
    r = _load(out / "result.json")
    assert r["converged"] and r["F_star"] <= 1e-12 * r["F0"]
    with open(out / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["iter", "F", "grad_norm", "stationarity", "p1", "p2", "p3", "step"]
    F = np.array([float(row["F"]) for row in rows])
    assert len(F) >= 2 and np.all(np.diff(F) < 0)


def test_optimize_regularizer_only(tmp_path):
    code, out = _run(tmp_path, "optimize", nu_E=0.0, nu_H=0.0, nu=1.0, p0=[0.5, 0.5, -0.5])
    assert code == 0
    assert _load(out / "result.json")["p_star"] == [0.0, 0.0, 0.0]


def test_optimize_nonconvergence_exit(tmp_path):
    code, out = _run(tmp_path, "optimize", max_iter=1, opt_tol=1e-300,
                     target={"kind": "dipole-manufactured", "p_bar": [0.3, -0.2, 0.5]})
    assert code == 3
    assert not _load(out / "result.json")["converged"]
    assert (out / "trace.csv").exists()


def test_manufactured_target_must_be_admissible(tmp_path, capsys):
    code, _ = _run(tmp_path, "optimize", target={"kind": "dipole-manufactured",
                                                  "p_bar": [3.0, 0, 0]})
    assert code == 2
    assert "stage 'targets'" in capsys.readouterr().err


def test_check_gradient_default(tmp_path):
    code, out = _run(tmp_path, "check-gradient",
                     target={"kind": "constant-field", "E": [[0.1, 0], [0, 0.1], [0, 0]],
                             "H": [[0, 0], [0.05, 0], [0, 0]]})
    assert code == 0
    rep = _load(out / "gradient_check.json")
    assert rep["max_deviation"] <= 1e-8
    assert len(rep["samples"]) == 3
    assert set(rep["samples"][0]) == {"p", "adjoint", "fd", "deviation"}


def test_check_gradient_regularizer_only(tmp_path):
    code, out = _run(tmp_path, "check-gradient", nu_E=0.0, nu_H=0.0, nu=2.0)
    assert code == 0
    assert _load(out / "gradient_check.json")["max_deviation"] <= 1e-12


def test_export_vtu(tmp_path):
    code, out = _run(tmp_path, "export-vtu", p=[1.0, 0.0, 0.0])
    assert code == 0 and (out / "fields.vtu").stat().st_size > 0


def test_sampled_grid_target(tmp_path):
    ax = np.linspace(-1, 1, 5)
    E = np.broadcast_to(np.array([0.1, 0.2j, 0]), (5, 5, 5, 3))
    H = np.zeros((5, 5, 5, 3), complex)
    np.savez(tmp_path / "grid.npz", x=ax, y=ax, z=ax, E=E, H=H)
    cfg = RunConfig(mesh=MESH4, target=TargetSpec("sampled-grid", path=str(tmp_path / "grid.npz")))
    ref = RunConfig(mesh=MESH4, target=TargetSpec("constant-field", E=[[0.1, 0], [0, 0.2], [0, 0]]))
    model = cfg.build_model()
    a, b = cfg.target.build(model), ref.target.build(model)
    assert np.allclose(a.E_d, b.E_d, rtol=0, atol=1e-15) and np.all(a.H_d == 0)
    np.savez(tmp_path / "small.npz", x=ax / 2, y=ax, z=ax, E=E, H=H)
    with pytest.raises(ConfigError, match="cover"):
        TargetSpec("sampled-grid", path=str(tmp_path / "small.npz")).build(model)


def test_solver_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(self, mesh=None):
        raise SolverError("factorization failed")
    monkeypatch.setattr(RunConfig, "build_model", boom)
    code, _ = _run(tmp_path, "solve-state")
    assert code == 4
    assert "stage 'assembly'" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    assert cli.main(["validate", "--config", str(tmp_path / "nope.json")]) == 2
    assert "error" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("dipole-eddy") is None, reason="console script not installed")
def test_console_script(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(RunConfig(mesh=MESH4).to_json())
    proc = subprocess.run(["dipole-eddy", "validate", "--config", str(path), "--out",
                           str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
