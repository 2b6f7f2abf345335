"""Command-line pipeline: validate, solve, optimize, check gradients, export fields."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, kernel_spot_check
from .fem import InternalError, SolverError, coercivity_terms
from .mesh import MeshError, validate_topology
from .optimizer import fd_gradient_oracle, optimize
from .state_adjoint import dofs_to_json, state_to_json, write_json, write_vtu

log = logging.getLogger("dipole_eddy")

EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGED, EXIT_SOLVER = 0, 2, 3, 4


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception, code: int):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage, self.code = stage, code


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, MeshError) as exc:
        raise StageError(name, exc, EXIT_VALIDATION) from exc
    except (SolverError, InternalError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc, EXIT_SOLVER) from exc


def _out(config: RunConfig, out: str | None) -> Path:
    path = Path(out if out is not None else config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _state_summary(state) -> dict:
    rep = state.q_report
    return {
        "p": [float(v) for v in state.control.p],
        "q_solve_residual": rep.residual,
        "eta_solve_residual": state.eta_residual,
        "multiplier_norm": rep.multiplier_norm,
        "q_norm": rep.primal_norm,
        "multiplier_ratio": rep.multiplier_norm / rep.primal_norm if rep.primal_norm else 0.0,
        "constraint_residual": state.constraint_residual,
    }


# -- commands ----------------------------------------------------------------------

def cmd_validate(config: RunConfig, out: str | None = None) -> int:
    checks = {}
    mesh = _stage("mesh", config.build_mesh)
    topo = validate_topology(mesh)
    checks["topology"] = {"ok": topo.ok, "failures": list(topo.failures)}
    problem = _stage("problem", config.build_problem)
    try:
        problem.check_homogeneity(mesh)
        checks["homogeneity"] = {"ok": True}
    except MeshError as exc:
        checks["homogeneity"] = {"ok": False, "message": str(exc)}
    res = kernel_spot_check(problem, seed=config.seed)
    checks["kernel_pde_residual"] = {"ok": res <= 1e-5, "max_residual": res}
    if checks["homogeneity"]["ok"] and topo.ok:
        model = _stage("assembly", config.build_model, mesh)
        ap, am = model.a_plus.matrix, model.a_minus.matrix
        scale = abs(ap).max()
        adj = abs(ap.conj().T - am).max() / scale
        bsym = abs(model.b.matrix - model.b.matrix.conj().T).max()
        rng = np.random.default_rng(config.seed)
        v = rng.normal(size=(mesh.n_edges, 20)) + 1j * rng.normal(size=(mesh.n_edges, 20))
        lhs, rhs = coercivity_terms(mesh, problem, model.a_plus, v)
        checks["matrix_structure"] = {"ok": bool(adj <= 1e-13 and bsym == 0),
                                      "adjoint_defect": adj, "b_asymmetry": bsym}
        checks["coercivity"] = {"ok": bool(np.all(lhs >= rhs * (1 - 1e-12))),
                                "min_ratio": float(np.min(lhs / rhs))}
    ok = all(c["ok"] for c in checks.values())
    report = {"ok": ok, "checks": checks}
    write_json(report, _out(config, out) / "validate.json")
    for name, c in checks.items():
        print(f"{'PASS' if c['ok'] else 'FAIL'} {name}")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_solve_state(config: RunConfig, out: str | None = None) -> int:
    path = _out(config, out)
    model = _stage("assembly", config.build_model)
    state = _stage("state", model.solve_state, config.p)
    data = state_to_json(state)
    write_json({"p": data["p"], "dofs": data["eta_dofs"]}, path / "eta.json")
    write_json({"p": data["p"], "dofs": data["q_dofs"]}, path / "Q.json")
    write_vtu(state, path / "fields.vtu")
    write_json(_state_summary(state), path / "summary.json")
    return EXIT_OK


def cmd_solve_adjoint(config: RunConfig, out: str | None = None) -> int:
    path = _out(config, out)
    model = _stage("assembly", config.build_model)
    rp = _stage("targets", config.build_reduced, model)
    state = _stage("state", model.solve_state, config.p)
    adj = _stage("adjoint", model.solve_adjoint, state, rp.targets, config.nu_E, config.nu_H)
    write_json({"dofs": dofs_to_json(adj.t_dofs)}, path / "T.json")
    write_json({"dofs": dofs_to_json(adj.psi_dofs)}, path / "Psi.json")
    summary = _state_summary(state)
    summary.update({"t_solve_residual": adj.t_report.residual,
                    "psi_solve_residual": adj.psi_residual})
    write_json(summary, path / "summary.json")
    return EXIT_OK


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "F", "grad_norm", "stationarity", "p1", "p2", "p3", "step"])
        for row in trace:
            w.writerow([row.iteration, repr(float(row.F)), repr(float(row.grad_norm)),
                        repr(float(row.residual)),
                        *(repr(float(v)) for v in row.p), repr(float(row.step))])


def cmd_optimize(config: RunConfig, out: str | None = None) -> int:
    path = _out(config, out)
    model = _stage("assembly", config.build_model)
    rp = _stage("targets", config.build_reduced, model)
    res = _stage("optimize", optimize, rp, config.p0, config.box, config.opt_tol,
                 config.max_iter)
    write_json({
        "p_star": [float(v) for v in res.p_star],
        "F_star": res.F_star,
        "F0": rp.cost(np.zeros(3)),
        "iterations": res.iterations,
        "stationarity_residual": res.stationarity_residual,
        "active_set": list(res.active_set),
        "converged": res.converged,
        "gradient": [float(v) for v in res.gradient],
        "corner_margin": res.corner_margin,
    }, path / "result.json")
    write_trace(res.trace, path / "trace.csv")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_check_gradient(config: RunConfig, out: str | None = None) -> int:
    path = _out(config, out)
    model = _stage("assembly", config.build_model)
    rp = _stage("targets", config.build_reduced, model)
    rng = np.random.default_rng(config.seed)
    samples = []
    h = config.check_h * config.p_max
    for _ in range(config.check_samples):
        p = rng.uniform(-config.p_max, config.p_max, 3)
        g = _stage("gradient", rp.gradient, p)
        fd = _stage("fd-oracle", fd_gradient_oracle, rp, p, h)
        dev = float(np.linalg.norm(g - fd) / (1 + np.linalg.norm(g)))
        samples.append({"p": p.tolist(), "adjoint": g.tolist(), "fd": fd.tolist(),
                        "deviation": dev})
    worst = max(s["deviation"] for s in samples) if samples else 0.0
    ok = worst <= config.check_threshold
    write_json({"ok": ok, "h": h, "threshold": config.check_threshold,
                "max_deviation": worst, "samples": samples}, path / "gradient_check.json")
    print(f"max relative deviation {worst:.3e} ({'PASS' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_export_vtu(config: RunConfig, out: str | None = None) -> int:
    model = _stage("assembly", config.build_model)
    state = _stage("state", model.solve_state, config.p)
    write_vtu(state, _out(config, out) / "fields.vtu")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "solve-state": cmd_solve_state,
    "solve-adjoint": cmd_solve_adjoint,
    "optimize": cmd_optimize,
    "check-gradient": cmd_check_gradient,
    "export-vtu": cmd_export_vtu,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dipole-eddy", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _stage("config", RunConfig.load, args.config)
        return COMMANDS[args.command](config, args.out)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        print(f"error: stage 'io' failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
