"""Lowest-order Nedelec / P1 spaces, form assembly and saddle-point solves.

Edge basis on a tet with local edge (a, b), a < b in global numbering:
N_e = lambda_a grad(lambda_b) - lambda_b grad(lambda_a), whose curl is
2 grad(lambda_a) x grad(lambda_b) and whose tangential moment along the
edge vector x_b - x_a equals one. Because tet rows are stored with
ascending vertex ids, local and global edge orientations always agree.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .kernels import DipoleProblem
from .mesh import LOCAL_EDGES, FaceTag, Mesh, ObservationMask, Region
from .quadrature import TET_DEGREE2, TET_DEGREE5, TRI_DEGREE4, Rule, map_points

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Factorization failure or residual above tolerance."""


class InternalError(RuntimeError):
    pass


# -- spaces --------------------------------------------------------------------

def edge_basis(grad_lambda: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Values of the six edge functions; (n, 4, 3) gradients, (n, nq, 4) bary -> (n, nq, 6, 3)."""
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    return (bary[:, :, a, None] * grad_lambda[:, None, b, :]
            - bary[:, :, b, None] * grad_lambda[:, None, a, :])


def edge_curls(grad_lambda: np.ndarray) -> np.ndarray:
    """Constant curls of the six edge functions, shape (n, 6, 3)."""
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    return 2.0 * np.cross(grad_lambda[:, a], grad_lambda[:, b])


@dataclass(frozen=True, eq=False)
class EdgeSpace:
    mesh: Mesh

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_edges

    @cached_property
    def signs(self) -> np.ndarray:
        """Local-to-global orientation signs; all +1 with sorted tet rows."""
        m = self.mesh
        loc = m.tets[:, LOCAL_EDGES]
        glob = m.edges[m.tet_edges]
        return np.where(np.all(loc == glob, axis=2), 1.0, -1.0)

    def evaluate(self, dofs: np.ndarray, tet_ids: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """Field value at points given by (tet, barycentric) pairs, shape (n, 3)."""
        g = self.mesh.grad_lambda[tet_ids]
        vals = edge_basis(g, bary[:, None, :])[:, 0]
        coeff = dofs[self.mesh.tet_edges[tet_ids]] * self.signs[tet_ids]
        return np.einsum("ne,ned->nd", coeff, vals)

    def evaluate_curl(self, dofs: np.ndarray, tet_ids: np.ndarray) -> np.ndarray:
        c = edge_curls(self.mesh.grad_lambda[tet_ids])
        coeff = dofs[self.mesh.tet_edges[tet_ids]] * self.signs[tet_ids]
        return np.einsum("ne,ned->nd", coeff, c)


@dataclass(frozen=True, eq=False)
class NodalSpace:
    """P1 functions on the insulator vanishing on GAMMA_C, extended by zero."""

    mesh: Mesh

    @cached_property
    def vertex_dofs(self) -> np.ndarray:
        """Global vertex ids carrying a DOF, ascending."""
        m = self.mesh
        ins = np.unique(m.tets[m.tet_region == Region.INSULATOR])
        return np.setdiff1d(ins, m.gamma_c_vertices)

    @cached_property
    def dof_of_vertex(self) -> np.ndarray:
        out = np.full(self.mesh.n_vertices, -1, dtype=np.int64)
        out[self.vertex_dofs] = np.arange(len(self.vertex_dofs))
        return out

    @property
    def n_dofs(self) -> int:
        return len(self.vertex_dofs)

    def extend(self, dofs: np.ndarray) -> np.ndarray:
        """Vertex values of the zero extension to the whole mesh."""
        out = np.zeros(self.mesh.n_vertices, dtype=np.result_type(dofs, float))
        out[self.vertex_dofs] = dofs
        return out

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        """Sparse map from DOFs to vertex values."""
        n = self.n_dofs
        return sp.csr_matrix((np.ones(n), (self.vertex_dofs, np.arange(n))),
                             shape=(self.mesh.n_vertices, n))

    def evaluate_grad(self, dofs: np.ndarray, tet_ids: np.ndarray) -> np.ndarray:
        vals = self.extend(dofs)[self.mesh.tets[tet_ids]]
        return np.einsum("nk,nkd->nd", vals, self.mesh.grad_lambda[tet_ids])


def discrete_gradient(mesh: Mesh) -> sp.csr_matrix:
    """Edge DOFs of grad(phi) for vertex values phi: phi_b - phi_a."""
    ne = mesh.n_edges
    rows = np.repeat(np.arange(ne), 2)
    cols = mesh.edges.ravel()
    vals = np.tile([-1.0, 1.0], ne)
    return sp.csr_matrix((vals, (rows, cols)), shape=(ne, mesh.n_vertices))


def interpolate_edges(mesh: Mesh, field, n_gauss: int = 4) -> np.ndarray:
    """Edge DOFs of a vector field: line integrals of ``field`` along each edge.

    ``field`` maps points (..., 3) to values (..., 3) or (..., 3, k); the
    result has shape (n_edges,) or (n_edges, k).
    """
    t, w = np.polynomial.legendre.leggauss(n_gauss)
    s = 0.5 * (t + 1.0)
    xa = mesh.vertices[mesh.edges[:, 0]]
    xb = mesh.vertices[mesh.edges[:, 1]]
    tangent = xb - xa
    pts = xa[:, None, :] + s[None, :, None] * tangent[:, None, :]
    vals = field(pts)
    if vals.ndim == 3:
        return 0.5 * np.einsum("q,eqd,ed->e", w, vals, tangent)
    return 0.5 * np.einsum("q,eqdk,ed->ek", w, vals, tangent)


# -- assembled operators ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AssembledOperator:
    matrix: sp.csr_matrix
    symmetry: str  # "hermitian" | "complex-symmetric" | "none"
    tol: float = field(default=1e-13, repr=False)

    def __post_init__(self):
        if self.symmetry not in ("hermitian", "complex-symmetric", "none"):
            raise ValueError(f"unknown symmetry flag {self.symmetry!r}")
        if self.symmetry == "none":
            return
        m = self.matrix
        other = m.conj().T if self.symmetry == "hermitian" else m.T
        scale = abs(m).max() if m.nnz else 0.0
        defect = abs(m - other).max() if m.nnz else 0.0
        if defect > self.tol * scale:
            raise InternalError(f"declared {self.symmetry} operator has defect {defect:.3e}")

    @property
    def shape(self):
        return self.matrix.shape


def _scatter(rows: np.ndarray, cols: np.ndarray, local: np.ndarray, shape) -> sp.csr_matrix:
    """Sum element matrices (n, r, c) into a sparse matrix in element order."""
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    m = sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def _sym(local: np.ndarray) -> np.ndarray:
    return 0.5 * (local + np.swapaxes(local, 1, 2))


def curl_curl_stiffness(mesh: Mesh, mu_inv: np.ndarray) -> sp.csr_matrix:
    """int mu^{-1} curl N_j . curl N_i over all tets."""
    c = edge_curls(mesh.grad_lambda) * EdgeSpace(mesh).signs[:, :, None]
    local = np.einsum("n,nid,nde,nje->nij", mesh.volumes, c, mu_inv, c)
    return _scatter(mesh.tet_edges, mesh.tet_edges, _sym(local), (mesh.n_edges,) * 2)


def edge_mass(mesh: Mesh, tensor: np.ndarray, tet_ids: np.ndarray) -> sp.csr_matrix:
    """int tensor N_j . N_i over ``tet_ids`` with the degree-2 rule (exact)."""
    g = mesh.grad_lambda[tet_ids]
    bary = np.broadcast_to(TET_DEGREE2.bary, (len(tet_ids),) + TET_DEGREE2.bary.shape)
    n = edge_basis(g, bary) * EdgeSpace(mesh).signs[tet_ids][:, None, :, None]
    local = np.einsum("q,n,nqid,nde,nqje->nij", TET_DEGREE2.weights, mesh.volumes[tet_ids],
                      n, tensor[tet_ids], n)
    te = mesh.tet_edges[tet_ids]
    return _scatter(te, te, _sym(local), (mesh.n_edges,) * 2)


def _assemble_a(mesh: Mesh, problem: DipoleProblem, sign: float) -> AssembledOperator:
    stiff = curl_curl_stiffness(mesh, problem.tet_mu_inv(mesh))
    cond = np.flatnonzero(mesh.tet_region == Region.CONDUCTOR)
    mass = edge_mass(mesh, problem.tet_tensor(mesh, "sigma"), cond)
    return AssembledOperator((stiff + (sign * 1j * problem.omega) * mass).tocsr(),
                             "complex-symmetric")


def assemble_a_plus(mesh: Mesh, problem: DipoleProblem) -> AssembledOperator:
    """Curl-curl stiffness plus i omega sigma-mass on the conductor."""
    return _assemble_a(mesh, problem, 1.0)


def assemble_a_minus(mesh: Mesh, problem: DipoleProblem) -> AssembledOperator:
    return _assemble_a(mesh, problem, -1.0)


def _insulator(mesh: Mesh) -> np.ndarray:
    return np.flatnonzero(mesh.tet_region == Region.INSULATOR)


def _nodal_rows(space: NodalSpace, tet_ids: np.ndarray) -> np.ndarray:
    """DOF index of each tet vertex, or a dump row ``n_dofs`` for non-DOF vertices."""
    d = space.dof_of_vertex[space.mesh.tets[tet_ids]]
    return np.where(d < 0, space.n_dofs, d)


def assemble_b(mesh: Mesh, problem: DipoleProblem) -> AssembledOperator:
    """int_{Omega_I} eps grad(phi_j) . grad(phi_i) on the nodal space W."""
    space = NodalSpace(mesh)
    ins = _insulator(mesh)
    g = mesh.grad_lambda[ins]
    local = np.einsum("n,nid,nde,nje->nij", mesh.volumes[ins], g,
                      problem.tet_tensor(mesh, "eps")[ins], g)
    rows = _nodal_rows(space, ins)
    n = space.n_dofs
    full = _scatter(rows, rows, _sym(local), (n + 1, n + 1))
    return AssembledOperator(full[:n, :n].tocsr(), "hermitian", tol=0.0)


def assemble_constraint(mesh: Mesh, problem: DipoleProblem) -> sp.csr_matrix:
    """C[i, e] = int_{Omega_I} eps N_e . grad(phi_i); rows W, columns edges."""
    space = NodalSpace(mesh)
    ins = _insulator(mesh)
    g = mesh.grad_lambda[ins]
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    # int N_e = vol/4 (grad lambda_b - grad lambda_a)
    mean_n = 0.25 * (g[:, b] - g[:, a]) * EdgeSpace(mesh).signs[ins][:, :, None]
    local = np.einsum("n,nid,nde,nje->nij", mesh.volumes[ins], g,
                      problem.tet_tensor(mesh, "eps")[ins], mean_n)
    n = space.n_dofs
    full = _scatter(_nodal_rows(space, ins), mesh.tet_edges[ins], local, (n + 1, mesh.n_edges))
    return full[:n].tocsr()


# -- kernel right-hand sides ----------------------------------------------------------

def _kernel_points(mesh: Mesh, tet_ids: np.ndarray, problem: DipoleProblem,
                   rule: Rule = TET_DEGREE5) -> np.ndarray:
    pts = map_points(mesh.vertices[mesh.tets[tet_ids]], rule)
    if pts.size and np.linalg.norm(pts - problem.x0, axis=-1).min() < problem.r:
        raise InternalError("kernel quadrature point inside B_r(x0)")
    return pts


def assemble_rhs_eta(mesh: Mesh, problem: DipoleProblem) -> np.ndarray:
    """G~[i, j] = -int_{Omega_I} eps A^(j) . grad(phi_i), shape (dim W, 3)."""
    space = NodalSpace(mesh)
    ins = _insulator(mesh)
    pts = _kernel_points(mesh, ins, problem)
    A = kernels.eval_A(problem, pts)  # (n, q, 3, 3)
    eps = problem.tet_tensor(mesh, "eps")[ins]
    # int eps A e_j over the tet
    mean = np.einsum("q,n,nde,nqej->ndj", TET_DEGREE5.weights, mesh.volumes[ins], eps, A)
    local = -np.einsum("nid,ndj->nij", mesh.grad_lambda[ins], mean)
    rows = _nodal_rows(space, ins)
    out = np.zeros((space.n_dofs + 1, 3), dtype=complex)
    np.add.at(out, rows.ravel(), local.reshape(-1, 3))
    return out[:-1]


def contrast_tets(mesh: Mesh, problem: DipoleProblem) -> np.ndarray:
    """Tets where mu or sigma differ from the scalar constants mu0, sigma0."""
    mu = problem.tet_tensor(mesh, "mu")
    sigma = problem.tet_tensor(mesh, "sigma")
    differs = (np.any(mu != problem.mu0 * np.eye(3), axis=(1, 2))
               | np.any(sigma != problem.sigma0 * np.eye(3), axis=(1, 2)))
    return np.flatnonzero(differs)


def assemble_rhs_Q(mesh: Mesh, problem: DipoleProblem, mask: ObservationMask | None = None
                   ) -> np.ndarray:
    """G[l, j]: regular-part load for the unit control e_j, shape (n_edges, 3).

    Volume terms over material-contrast tets
        -int (mu^{-1} - mu0^{-1}) curl A^(j) . curl N_l
        - i omega int (sigma - sigma0) A^(j) . N_l
    plus the outer-boundary term int_Gamma (n x mu0^{-1} curl A^(j)) . N_l.
    """
    tets = contrast_tets(mesh, problem)
    if mask is not None and not np.all(mask.contains(tets)):
        raise InternalError("material contrast inside the excluded ball")
    out = np.zeros((mesh.n_edges, 3), dtype=complex)
    if tets.size:
        pts = _kernel_points(mesh, tets, problem)
        vol = mesh.volumes[tets]
        w = TET_DEGREE5.weights
        signs = EdgeSpace(mesh).signs[tets]
        g = mesh.grad_lambda[tets]
        dmu = problem.tet_mu_inv(mesh)[tets] - np.eye(3) / problem.mu0
        dsig = problem.tet_tensor(mesh, "sigma")[tets] - problem.sigma0 * np.eye(3)
        curl_a = kernels.eval_curl_A(problem, pts)
        mean_curl = np.einsum("q,n,nde,nqej->ndj", w, vol, dmu, curl_a)
        c = edge_curls(g) * signs[:, :, None]
        local = -np.einsum("nid,ndj->nij", c, mean_curl)
        bary = TET_DEGREE5.bary
        nb = edge_basis(g, np.broadcast_to(bary, (len(tets),) + bary.shape))
        nb = nb * signs[:, None, :, None]
        A = kernels.eval_A(problem, pts)
        local -= 1j * problem.omega * np.einsum("q,n,nqid,nde,nqej->nij", w, vol, nb, dsig, A)
        np.add.at(out, mesh.tet_edges[tets].ravel(), local.reshape(-1, 3))
    out += _gamma_term(mesh, problem)
    return out


def _gamma_term(mesh: Mesh, problem: DipoleProblem) -> np.ndarray:
    faces = mesh.faces_with_tag(FaceTag.GAMMA)
    tri = mesh.vertices[mesh.boundary_faces[faces]]
    pts = map_points(tri, TRI_DEGREE4)  # (nf, q, 3)
    owner = mesh.face_tets[faces]
    nq = TRI_DEGREE4.n_points
    flat_owner = np.repeat(owner, nq)
    bary = mesh.barycentric(pts.reshape(-1, 3), flat_owner).reshape(len(faces), nq, 4)
    nb = edge_basis(mesh.grad_lambda[owner], bary) * EdgeSpace(mesh).signs[owner][:, None, :, None]
    curl_a = kernels.eval_curl_A(problem, pts) / problem.mu0  # (nf, q, 3, 3)
    normal = mesh.face_normals[faces]
    ncurl = np.cross(np.broadcast_to(normal[:, None, :, None], curl_a.shape), curl_a, axis=2)
    local = np.einsum("q,n,nqid,nqdj->nij", TRI_DEGREE4.weights, mesh.face_areas[faces], nb, ncurl)
    out = np.zeros((mesh.n_edges, 3), dtype=complex)
    np.add.at(out, mesh.tet_edges[owner].ravel(), local.reshape(-1, 3))
    return out


# -- observation quadrature and tracking ---------------------------------------------

@dataclass(frozen=True, eq=False)
class ObservationQuadrature:
    """Degree-5 quadrature on the masked tets with sparse evaluation operators.

    For edge DOFs ``v`` the field at the stacked points is ``(value_op @ v)``
    reshaped to (n_points, 3); likewise ``curl_op`` and, for W DOFs,
    ``grad_op``. ``A`` and ``curl_A`` hold the kernel matrices at the points.
    """

    points: np.ndarray  # (n_points, 3)
    weights: np.ndarray  # (n_points,) physical weights
    tet_ids: np.ndarray  # (n_points,)
    value_op: sp.csr_matrix
    curl_op: sp.csr_matrix
    grad_op: sp.csr_matrix
    mu_inv: np.ndarray  # (n_points, 3, 3)
    A: np.ndarray  # (n_points, 3, 3)
    curl_A: np.ndarray  # (n_points, 3, 3)

    @classmethod
    def build(cls, mesh: Mesh, problem: DipoleProblem, mask: ObservationMask,
              rule: Rule = TET_DEGREE5) -> "ObservationQuadrature":
        tets = np.asarray(mask.included_tets)
        nt, nq = len(tets), rule.n_points
        pts = _kernel_points(mesh, tets, problem, rule)
        weights = (mesh.volumes[tets][:, None] * rule.weights[None, :]).ravel()
        tet_ids = np.repeat(tets, nq)
        g = mesh.grad_lambda[tets]
        signs = EdgeSpace(mesh).signs[tets]
        bary = np.broadcast_to(rule.bary, (nt,) + rule.bary.shape)
        nb = edge_basis(g, bary) * signs[:, None, :, None]  # (nt, nq, 6, 3)
        cb = np.broadcast_to((edge_curls(g) * signs[:, :, None])[:, None], nb.shape)
        npts = nt * nq
        rows = (3 * np.arange(npts)[:, None, None] + np.arange(3)[None, None, :])
        rows = np.broadcast_to(rows, (npts, 6, 3))
        cols = np.broadcast_to(np.repeat(mesh.tet_edges[tets], nq, axis=0)[:, :, None],
                               (npts, 6, 3))

        def op(vals, ncols, cols=cols, rows=rows):
            return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                                 shape=(3 * npts, ncols))

        value_op = op(nb.reshape(npts, 6, 3), mesh.n_edges)
        curl_op = op(cb.reshape(npts, 6, 3), mesh.n_edges)
        space = NodalSpace(mesh)
        gl = np.repeat(g, nq, axis=0)  # (npts, 4, 3)
        vrows = np.broadcast_to(rows[:, :1, :], (npts, 4, 3))
        vcols = np.broadcast_to(np.repeat(mesh.tets[tets], nq, axis=0)[:, :, None], (npts, 4, 3))
        grad_vertex = sp.csr_matrix((gl.ravel(), (vrows.ravel(), vcols.ravel())),
                                    shape=(3 * npts, mesh.n_vertices))
        grad_op = (grad_vertex @ space.prolongation).tocsr()
        flat = pts.reshape(-1, 3)
        return cls(flat, weights, tet_ids, value_op, curl_op, grad_op,
                   problem.tet_mu_inv(mesh)[tet_ids],
                   kernels.eval_A(problem, flat), kernels.eval_curl_A(problem, flat))

    @property
    def n_points(self) -> int:
        return len(self.weights)

    def apply(self, operator: sp.csr_matrix, dofs: np.ndarray) -> np.ndarray:
        return (operator @ dofs).reshape(self.n_points, 3)

    def adjoint(self, operator: sp.csr_matrix, values: np.ndarray) -> np.ndarray:
        """Integrate ``values . phi_l`` for every basis function phi_l of ``operator``."""
        return operator.T @ (self.weights[:, None] * values).ravel()


def assemble_tracking_rhs(quad: ObservationQuadrature, E: np.ndarray, H: np.ndarray,
                          E_d: np.ndarray, H_d: np.ndarray, nu_E: float, nu_H: float
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand sides of the two adjoint problems.

    ``E`` and ``H = mu^{-1} curl E`` and the targets are given at the
    observation points. Returns (edge vector, W vector) with entries
    nu_E int (E - E_d) . N_l + nu_H int (H - H_d) . mu^{-1} curl N_l and
    nu_E int (E - E_d) . grad(phi_l).
    """
    rE = nu_E * (E - E_d)
    rH = nu_H * np.einsum("nij,nj->ni", quad.mu_inv, H - H_d)  # mu^{-1} symmetric
    edge = quad.adjoint(quad.value_op, rE) + quad.adjoint(quad.curl_op, rH)
    nodal = quad.adjoint(quad.grad_op, rE)
    return edge, nodal


# -- solves ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SaddleSystem:
    """Block system [[A, C^H], [C, 0]] [x; lam] = [f; g]."""

    A: sp.spmatrix
    C: sp.spmatrix
    f: np.ndarray
    g: np.ndarray | None = None

    def matrix(self) -> sp.csc_matrix:
        return sp.bmat([[self.A, self.C.conj().T], [self.C, None]], format="csc")


@dataclass(frozen=True)
class SolveReport:
    residual: float
    multiplier_norm: float
    primal_norm: float


class SaddleSolver:
    """Factorize a saddle matrix once; solve for many right-hand sides."""

    def __init__(self, A, C, name: str = "saddle", rtol: float = 1e-10):
        self.n, self.m = A.shape[0], C.shape[0]
        self.name = name
        self.rtol = rtol
        self.K = SaddleSystem(A, C, np.zeros(0)).matrix().astype(complex)
        try:
            self.lu = spla.splu(self.K)
        except RuntimeError as exc:
            raise SolverError(f"factorization of the {name} block system failed: {exc}") from exc

    def solve(self, f: np.ndarray, g: np.ndarray | None = None, conjugate: bool = False):
        """Solve, optionally with the entrywise conjugate matrix.

        Returns (x, lam, report); f may be a vector or an (n, k) array.
        """
        f = np.asarray(f, dtype=complex)
        if g is None:
            g = np.zeros((self.m,) + f.shape[1:], dtype=complex)
        rhs = np.concatenate([f, np.asarray(g, dtype=complex)])
        K = self.K.conj() if conjugate else self.K
        sol = self.lu.solve(rhs.conj()).conj() if conjugate else self.lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        res = np.linalg.norm(K @ sol - rhs) / scale if scale > 0 else np.linalg.norm(sol)
        if res > self.rtol:
            # one step of iterative refinement before giving up
            corr = (self.lu.solve((rhs - K @ sol).conj()).conj() if conjugate
                    else self.lu.solve(rhs - K @ sol))
            sol = sol + corr
            res = np.linalg.norm(K @ sol - rhs) / scale if scale > 0 else np.linalg.norm(sol)
        if not np.all(np.isfinite(sol)) or res > self.rtol:
            raise SolverError(f"{self.name} solve residual {res:.3e} exceeds {self.rtol:.1e}")
        x, lam = sol[:self.n], sol[self.n:]
        return x, lam, SolveReport(float(res), float(np.linalg.norm(lam)),
                                   float(np.linalg.norm(x)))


def solve_saddle(system: SaddleSystem, rtol: float = 1e-10):
    """Direct solve of a saddle system; returns (primal, multiplier, report)."""
    return SaddleSolver(system.A, system.C, rtol=rtol).solve(system.f, system.g)


class SymmetricSolver:
    """Sparse LU of a single (nodal) operator with a residual check."""

    def __init__(self, M, name: str = "nodal", rtol: float = 1e-10):
        self.M = sp.csc_matrix(M)
        self.name = name
        self.rtol = rtol
        try:
            self.lu = spla.splu(self.M)
        except RuntimeError as exc:
            raise SolverError(f"factorization of the {name} operator failed: {exc}") from exc

    def solve(self, rhs: np.ndarray):
        rhs = np.asarray(rhs)
        if np.iscomplexobj(rhs):
            x = self.lu.solve(rhs.real.copy()) + 1j * self.lu.solve(rhs.imag.copy())
        else:
            x = self.lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        res = np.linalg.norm(self.M @ x - rhs) / scale if scale > 0 else np.linalg.norm(x)
        if not np.all(np.isfinite(x)) or res > self.rtol:
            raise SolverError(f"{self.name} solve residual {res:.3e} exceeds {self.rtol:.1e}")
        return x, float(res)


def coercivity_terms(mesh: Mesh, problem: DipoleProblem, a_plus: AssembledOperator,
                     v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of |v^H A+ v|^2 >= mu_max^-2 |curl v|^4 + omega^2 sigma_min^2 |v|_C^4.

    ``v`` holds one edge vector per column; returns (lhs, rhs) per column.
    """
    v = np.atleast_2d(np.asarray(v, dtype=complex).T).T
    cond = np.flatnonzero(mesh.tet_region == Region.CONDUCTOR)
    curl2 = curl_curl_stiffness(mesh, np.broadcast_to(np.eye(3), (mesh.n_tets, 3, 3)))
    mass = edge_mass(mesh, np.broadcast_to(np.eye(3), (mesh.n_tets, 3, 3)), cond)
    mu_max = max(np.linalg.eigvalsh(t).max() for t in problem.mu_map.values())
    sigma_min = np.linalg.eigvalsh(problem.sigma_map[Region.CONDUCTOR]).min()

    def quadform(M):
        return np.einsum("ek,ek->k", v.conj(), M @ v)

    lhs = np.abs(quadform(a_plus.matrix)) ** 2
    rhs = (quadform(curl2).real / mu_max) ** 2 + (problem.omega * sigma_min
                                                    * quadform(mass).real) ** 2
    return lhs, rhs
