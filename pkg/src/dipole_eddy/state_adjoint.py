"""State, adjoint and auxiliary-lift solves on a fixed mesh.

``EddyModel`` assembles every operator once and caches the factorizations,
so each state or adjoint solve is a pair of triangular solves. The adjoint
edge system uses the entrywise conjugate of the state matrix, which the
cached factorization handles without refactoring.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import kernels
from .fem import (EdgeSpace, NodalSpace, ObservationQuadrature, SaddleSolver, SolveReport,
                  SymmetricSolver, assemble_a_minus, assemble_a_plus, assemble_b,
                  assemble_constraint, assemble_rhs_eta, assemble_rhs_Q, assemble_tracking_rhs,
                  discrete_gradient, interpolate_edges)
from .kernels import ControlVector, DipoleProblem
from .mesh import Mesh, ObservationMask, classify_observation_region


class ConstraintCompatibilityWarning(UserWarning):
    """Saddle multiplier larger than expected for compatible data."""


class FieldDomainError(ValueError):
    """Field requested outside the observation region."""


MULTIPLIER_WARN = 1e-6


@dataclass(frozen=True, eq=False)
class StateSplit:
    """Discrete E = Q + grad(eta) + K for one control."""

    q_dofs: np.ndarray
    eta_dofs: np.ndarray
    control: ControlVector
    model: "EddyModel" = field(repr=False)
    q_report: SolveReport | None = None
    eta_residual: float = 0.0

    @property
    def problem(self) -> DipoleProblem:
        return self.model.problem

    @property
    def constraint_residual(self) -> float:
        scale = np.linalg.norm(self.q_dofs)
        return float(np.linalg.norm(self.model.C @ self.q_dofs) / scale) if scale else 0.0

    def eta_vertex_values(self) -> np.ndarray:
        return self.model.nodal.extend(self.eta_dofs)


@dataclass(frozen=True, eq=False)
class AdjointPair:
    t_dofs: np.ndarray
    psi_dofs: np.ndarray
    t_report: SolveReport | None = None
    psi_residual: float = 0.0


@dataclass(frozen=True, eq=False)
class AuxLift:
    """Nodal lifts u_j and edge interpolants of the cutoff extensions, column j."""

    u_dofs: np.ndarray  # (dim W, 3)
    extension_dofs: np.ndarray  # (n_edges, 3)
    constraint_residual: np.ndarray  # (3,) relative, see EddyModel.aux_lift


@dataclass(frozen=True, eq=False)
class ObservedTargets:
    """Desired fields E_d and H_d at the observation quadrature points."""

    E_d: np.ndarray
    H_d: np.ndarray

    @classmethod
    def zero(cls, quad: ObservationQuadrature) -> "ObservedTargets":
        z = np.zeros((quad.n_points, 3), dtype=complex)
        return cls(z, z.copy())

    @classmethod
    def from_functions(cls, quad: ObservationQuadrature, E_fun, H_fun) -> "ObservedTargets":
        E = np.broadcast_to(np.asarray(E_fun(quad.points), dtype=complex), (quad.n_points, 3))
        H = np.broadcast_to(np.asarray(H_fun(quad.points), dtype=complex), (quad.n_points, 3))
        return cls(E.copy(), H.copy())

    @classmethod
    def from_state(cls, state: StateSplit) -> "ObservedTargets":
        E, H = state.model.observe(state)
        return cls(E, H)


class EddyModel:
    """Assembled discrete problem on one mesh."""

    def __init__(self, mesh: Mesh, problem: DipoleProblem,
                 mask: ObservationMask | None = None, rtol: float = 1e-10):
        problem.check_homogeneity(mesh)
        self.mesh = mesh
        self.problem = problem
        self.mask = mask if mask is not None else classify_observation_region(
            mesh, problem.x0, problem.r)
        self.rtol = rtol
        self.edge = EdgeSpace(mesh)
        self.nodal = NodalSpace(mesh)
        self.a_plus = assemble_a_plus(mesh, problem)
        self.a_minus = assemble_a_minus(mesh, problem)
        self.b = assemble_b(mesh, problem)
        self.C = assemble_constraint(mesh, problem)
        self.G_tilde = assemble_rhs_eta(mesh, problem)
        self.G = assemble_rhs_Q(mesh, problem, self.mask)

    # -- cached pieces -----------------------------------------------------------
    @cached_property
    def saddle(self) -> SaddleSolver:
        return SaddleSolver(self.a_plus.matrix, self.C, name="A+ saddle", rtol=self.rtol)

    @cached_property
    def b_solver(self) -> SymmetricSolver:
        return SymmetricSolver(self.b.matrix, name="b", rtol=self.rtol)

    @cached_property
    def quad(self) -> ObservationQuadrature:
        return ObservationQuadrature.build(self.mesh, self.problem, self.mask)

    @cached_property
    def grad_lift(self):
        """Edge DOFs of grad(w) for w in W, sparse (n_edges, dim W)."""
        return (discrete_gradient(self.mesh) @ self.nodal.prolongation).tocsr()

    def control(self, p) -> ControlVector:
        return ControlVector.from_intensity(p, self.problem)

    # -- state ---------------------------------------------------------------------
    def solve_eta(self, p) -> np.ndarray:
        """Solve B eta = G~ p."""
        return self._solve_eta(np.asarray(p, dtype=float))[0]

    def _solve_eta(self, p):
        return self.b_solver.solve(self.G_tilde @ p)

    def solve_Q(self, p) -> np.ndarray:
        return self._solve_Q(np.asarray(p, dtype=float))[0]

    def _solve_Q(self, p):
        x, lam, report = self.saddle.solve(self.G @ p)
        if report.multiplier_norm > MULTIPLIER_WARN * max(report.primal_norm, np.finfo(float).tiny):
            warnings.warn(f"multiplier norm {report.multiplier_norm:.3e} exceeds "
                          f"{MULTIPLIER_WARN:g} * |Q| = {MULTIPLIER_WARN * report.primal_norm:.3e}",
                          ConstraintCompatibilityWarning, stacklevel=3)
        return x, report

    def solve_state(self, p) -> StateSplit:
        ctrl = self.control(p)
        q, rep = self._solve_Q(ctrl.p)
        eta, eres = self._solve_eta(ctrl.p)
        return StateSplit(q, eta, ctrl, self, rep, eres)

    def observe(self, state: StateSplit) -> tuple[np.ndarray, np.ndarray]:
        """E and H = mu^{-1} curl E at the observation quadrature points."""
        quad = self.quad
        p = state.control.p
        E = (quad.apply(quad.value_op, state.q_dofs) + quad.apply(quad.grad_op, state.eta_dofs)
             + quad.A @ p)
        curl = quad.apply(quad.curl_op, state.q_dofs) + quad.curl_A @ p
        return E, np.einsum("nij,nj->ni", quad.mu_inv, curl)

    # -- adjoint -------------------------------------------------------------------
    def tracking_rhs(self, state: StateSplit, targets: ObservedTargets, nu_E: float,
                     nu_H: float) -> tuple[np.ndarray, np.ndarray]:
        E, H = self.observe(state)
        return assemble_tracking_rhs(self.quad, E, H, targets.E_d, targets.H_d, nu_E, nu_H)

    def solve_adjoint(self, state: StateSplit, targets: ObservedTargets, nu_E: float = 1.0,
                      nu_H: float = 1.0) -> AdjointPair:
        """Solve a^-[T, v] = tracking(v) on V and b[Psi, xi] = tracking_E(grad xi) on W."""
        edge_rhs, nodal_rhs = self.tracking_rhs(state, targets, nu_E, nu_H)
        t, _, rep = self.saddle.solve(edge_rhs, conjugate=True)
        psi, pres = self.b_solver.solve(nodal_rhs)
        return AdjointPair(t, psi, rep, pres)

    # -- auxiliary lifts -----------------------------------------------------------
    @cached_property
    def aux_lift(self) -> AuxLift:
        """u_j with b[u_j, xi] = int eps A^(j) . grad(xi) and the interpolants of chi A^(j).

        The weak form comes from div(eps grad u_j) = div(eps A^(j)) with the
        Neumann datum eps A^(j) . n on Gamma: integrating by parts against xi
        in W (zero on Gamma_C) leaves int eps grad u_j . grad xi =
        int eps A^(j) . grad xi, so the load is -G~.
        """
        u = self.b_solver.solve(-self.G_tilde)[0]
        ext = interpolate_edges(self.mesh, lambda x: kernels.eval_extension(self.problem, x))
        w = ext - self.grad_lift @ u
        num = np.linalg.norm(self.C @ w, axis=0)
        den = np.linalg.norm(self.C @ ext, axis=0)
        return AuxLift(u, ext, num / np.where(den > 0, den, 1.0))

    # -- point evaluation ----------------------------------------------------------
    def _locate_masked(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tets = self.mesh.locate(x)
        bad = (tets < 0) | ~self.mask.contains(tets)
        if np.any(bad):
            raise FieldDomainError(
                f"points {np.flatnonzero(bad).tolist()[:10]} are outside the observation region")
        return x, tets


def compose_E(state: StateSplit, x) -> np.ndarray:
    """E = Q_h + grad(eta_h) + K at points inside masked tets."""
    model = state.model
    pts, tets = model._locate_masked(x)
    bary = model.mesh.barycentric(pts, tets)
    E = (model.edge.evaluate(state.q_dofs, tets, bary)
         + model.nodal.evaluate_grad(state.eta_dofs, tets)
         + kernels.eval_K(model.problem, pts, state.control.p))
    return E.reshape(np.shape(x))


def compose_curlE(state: StateSplit, x) -> np.ndarray:
    """curl E = curl Q_h + curl K; the gradient part has no curl."""
    model = state.model
    pts, tets = model._locate_masked(x)
    c = (model.edge.evaluate_curl(state.q_dofs, tets)
         + kernels.eval_curl_K(model.problem, pts, state.control.p))
    return c.reshape(np.shape(x))


def solve_eta(model: EddyModel, p) -> np.ndarray:
    return model.solve_eta(p)


def solve_Q(model: EddyModel, p) -> np.ndarray:
    return model.solve_Q(p)


def solve_adjoint(state: StateSplit, targets: ObservedTargets, nu_E: float = 1.0,
                  nu_H: float = 1.0) -> AdjointPair:
    return state.model.solve_adjoint(state, targets, nu_E, nu_H)


def build_aux_lift(model: EddyModel) -> AuxLift:
    return model.aux_lift


# -- export ------------------------------------------------------------------------

def dofs_to_json(dofs: np.ndarray) -> list:
    """Complex vector as a list of [re, im] pairs."""
    d = np.asarray(dofs, dtype=complex).ravel()
    return [[float(v.real), float(v.imag)] for v in d]


def dofs_from_json(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return arr[:, 0] + 1j * arr[:, 1]


def write_vtu(state: StateSplit, path) -> None:
    """Per-tet E and curl E at centroids of the masked tets, VTU XML ASCII."""
    model = state.model
    mesh = model.mesh
    tets = np.asarray(model.mask.included_tets)
    cells = mesh.tets[tets]
    used, local = np.unique(cells, return_inverse=True)
    local = local.reshape(cells.shape)
    cent = mesh.centroids[tets]
    E = compose_E(state, cent) if len(tets) else np.zeros((0, 3), complex)
    curlE = compose_curlE(state, cent) if len(tets) else np.zeros((0, 3), complex)

    def arr(name, values, ncomp=3, kind="Float64"):
        text = " ".join(repr(float(v)) for v in np.asarray(values).ravel())
        return (f'<DataArray type="{kind}" Name="{escape(name)}" NumberOfComponents="{ncomp}" '
                f'format="ascii">{text}</DataArray>')

    def ints(name, values):
        text = " ".join(str(int(v)) for v in np.asarray(values).ravel())
        return f'<DataArray type="Int64" Name="{name}" format="ascii">{text}</DataArray>'

    xml = [
        '<?xml version="1.0"?>',
        '<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">',
        "<UnstructuredGrid>",
        f'<Piece NumberOfPoints="{len(used)}" NumberOfCells="{len(tets)}">',
        "<Points>", arr("Points", mesh.vertices[used]), "</Points>",
        "<Cells>", ints("connectivity", local), ints("offsets", 4 * np.arange(1, len(tets) + 1)),
        '<DataArray type="UInt8" Name="types" format="ascii">'
        + " ".join(["10"] * len(tets)) + "</DataArray>",
        "</Cells>",
        "<CellData>",
        arr("E_real", E.real), arr("E_imag", E.imag),
        arr("curlE_real", curlE.real), arr("curlE_imag", curlE.imag),
        arr("region", mesh.tet_region[tets], 1),
        "</CellData>",
        "</Piece>", "</UnstructuredGrid>", "</VTKFile>",
    ]
    Path(path).write_text("\n".join(xml) + "\n")


def state_to_json(state: StateSplit) -> dict:
    return {"p": [float(v) for v in state.control.p],
            "q_dofs": dofs_to_json(state.q_dofs),
            "eta_dofs": dofs_to_json(state.eta_dofs)}


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")
