"""Closed-form dipole kernels of the curl curl - z^2 operator.

With rho = |x - x0| and u = (x - x0) / rho the Helmholtz kernel and its
derivatives are

    phi   = exp(i z rho) / (4 pi rho)
    phi'  = phi (i z - 1/rho)
    phi'' = phi ((i z - 1/rho)^2 + 1/rho^2)
    grad phi = phi' u
    hess phi = phi'' u u^T + (phi'/rho) (I - u u^T)

The singular field of a dipole with moment q is K = q phi + hess(phi) q / z^2,
and A = -i omega mu0 (phi I + hess(phi) / z^2) maps the real intensity p to
K = A p. The Hessian term is a gradient, so curl K = grad(phi) x q and the
curl of the j-th column of A is -i omega mu0 grad(phi) x e_j.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, MeshError, Region, check_ball_in_conductor


def _tensor(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(3)
    if arr.shape != (3, 3):
        raise ValueError(f"material tensor must be scalar or 3x3, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class DipoleProblem:
    """Physical constants, dipole location and per-region material tensors.

    ``sigma_map[INSULATOR]`` defaults to zero: the eddy-current model has no
    conduction there and the value only enters the conductivity contrast of
    the regular-part right-hand side.
    """

    mu0: float
    sigma0: float
    omega: float
    x0: np.ndarray
    r: float
    mu_map: dict = field(default_factory=dict)
    sigma_map: dict = field(default_factory=dict)
    eps_map: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mu0", "sigma0", "omega"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.r < 0:
            raise ValueError("r must be nonnegative")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(3))
        mu = {Region.CONDUCTOR: self.mu0, Region.INSULATOR: self.mu0}
        sigma = {Region.CONDUCTOR: self.sigma0, Region.INSULATOR: 0.0}
        eps = {Region.CONDUCTOR: 1.0, Region.INSULATOR: 1.0}
        for target, given in ((mu, self.mu_map), (sigma, self.sigma_map), (eps, self.eps_map)):
            target.update({Region(k): v for k, v in given.items()})
        object.__setattr__(self, "mu_map", {k: _tensor(v) for k, v in mu.items()})
        object.__setattr__(self, "sigma_map", {k: _tensor(v) for k, v in sigma.items()})
        object.__setattr__(self, "eps_map", {k: _tensor(v) for k, v in eps.items()})
        for name, tensors, regions in (("mu", self.mu_map, list(Region)),
                                       ("sigma", self.sigma_map, [Region.CONDUCTOR]),
                                       ("eps", self.eps_map, [Region.INSULATOR])):
            for reg in regions:
                t = tensors[reg]
                if not np.allclose(t, t.T, rtol=0, atol=1e-14 * np.abs(t).max()):
                    raise ValueError(f"{name} tensor of {reg.name} is not symmetric")
                if np.linalg.eigvalsh(t).min() <= 0:
                    raise ValueError(f"{name} tensor of {reg.name} is not positive definite")

    @property
    def z(self) -> complex:
        """Root of z^2 = -i omega mu0 sigma0 with negative real part."""
        return np.sqrt(self.omega * self.mu0 * self.sigma0) * np.exp(0.75j * np.pi)

    @property
    def z2(self) -> complex:
        return -1j * self.omega * self.mu0 * self.sigma0

    def moment(self, p) -> np.ndarray:
        """Complex dipole moment q = -i omega mu0 p."""
        return -1j * self.omega * self.mu0 * np.asarray(p, dtype=float)

    def check_homogeneity(self, mesh: Mesh) -> None:
        """Require B_r(x0) inside the conductor with scalar mu0, sigma0 there."""
        check_ball_in_conductor(mesh, self.x0, self.r)
        if not (np.array_equal(self.mu_map[Region.CONDUCTOR], self.mu0 * np.eye(3))
                and np.array_equal(self.sigma_map[Region.CONDUCTOR], self.sigma0 * np.eye(3))):
            raise MeshError("homogeneity violated: conductor materials differ from mu0, sigma0")

    # per-tet material arrays
    def tet_tensor(self, mesh: Mesh, which: str) -> np.ndarray:
        table = {"mu": self.mu_map, "sigma": self.sigma_map, "eps": self.eps_map}[which]
        out = np.empty((mesh.n_tets, 3, 3))
        for reg, t in table.items():
            out[mesh.tet_region == reg] = t
        return out

    def tet_mu_inv(self, mesh: Mesh) -> np.ndarray:
        inv = {reg: np.linalg.inv(t) for reg, t in self.mu_map.items()}
        out = np.empty((mesh.n_tets, 3, 3))
        for reg, t in inv.items():
            out[mesh.tet_region == reg] = 0.5 * (t + t.T)
        return out


@dataclass(frozen=True)
class ControlVector:
    """Real dipole intensity p and its complex moment q = -i omega mu0 p."""

    p: np.ndarray
    q: np.ndarray

    @classmethod
    def from_intensity(cls, p, problem: DipoleProblem) -> "ControlVector":
        p = np.asarray(p, dtype=float).reshape(3)
        return cls(p, problem.moment(p))


class SingularPointError(ValueError):
    """Kernel evaluated at the dipole location."""


def _radial(problem: DipoleProblem, x):
    x = np.asarray(x, dtype=float)
    d = x - problem.x0
    rho = np.linalg.norm(d, axis=-1)
    if np.any(rho == 0):
        raise SingularPointError("kernel is singular at x0")
    return d / rho[..., None], rho


def _phi_derivs(problem: DipoleProblem, rho):
    iz = 1j * problem.z
    phi = np.exp(iz * rho) / (4 * np.pi * rho)
    a = iz - 1.0 / rho
    d1 = phi * a
    d2 = phi * (a * a + 1.0 / rho**2)
    return phi, d1, d2


def phi(problem: DipoleProblem, x) -> np.ndarray:
    _, rho = _radial(problem, x)
    return _phi_derivs(problem, rho)[0]


def grad_phi(problem: DipoleProblem, x) -> np.ndarray:
    u, rho = _radial(problem, x)
    _, d1, _ = _phi_derivs(problem, rho)
    return d1[..., None] * u


def hess_phi(problem: DipoleProblem, x) -> np.ndarray:
    u, rho = _radial(problem, x)
    _, d1, d2 = _phi_derivs(problem, rho)
    uu = u[..., :, None] * u[..., None, :]
    tang = (d1 / rho)[..., None, None]
    return d2[..., None, None] * uu + tang * (np.eye(3) - uu)


def eval_A(problem: DipoleProblem, x) -> np.ndarray:
    """The symmetric matrix A(x) with K = A p, shape (..., 3, 3)."""
    u, rho = _radial(problem, x)
    ph, d1, d2 = _phi_derivs(problem, rho)
    uu = u[..., :, None] * u[..., None, :]
    hess = d2[..., None, None] * uu + (d1 / rho)[..., None, None] * (np.eye(3) - uu)
    scale = -1j * problem.omega * problem.mu0
    return scale * (ph[..., None, None] * np.eye(3) + hess / problem.z2)


def eval_curl_A(problem: DipoleProblem, x) -> np.ndarray:
    """Curls of the columns of A; ``out[..., :, j]`` is curl of column j."""
    g = grad_phi(problem, x)
    scale = -1j * problem.omega * problem.mu0
    # grad(phi) x e_j as column j
    out = np.zeros(g.shape[:-1] + (3, 3), dtype=complex)
    out[..., 1, 0], out[..., 2, 0] = g[..., 2], -g[..., 1]
    out[..., 0, 1], out[..., 2, 1] = -g[..., 2], g[..., 0]
    out[..., 0, 2], out[..., 1, 2] = g[..., 1], -g[..., 0]
    return scale * out


def eval_A_column(problem: DipoleProblem, j: int, x) -> np.ndarray:
    """Column ``j`` (0-based) of A at ``x``."""
    return eval_A(problem, x)[..., :, j]


def eval_curl_A_column(problem: DipoleProblem, j: int, x) -> np.ndarray:
    return eval_curl_A(problem, x)[..., :, j]


def eval_K(problem: DipoleProblem, x, p) -> np.ndarray:
    """Singular field K = q phi + hess(phi) q / z^2 for real intensity ``p``."""
    q = problem.moment(p)
    return phi(problem, x)[..., None] * q + hess_phi(problem, x) @ q / problem.z2


def eval_curl_K(problem: DipoleProblem, x, p) -> np.ndarray:
    q = problem.moment(p)
    return np.cross(grad_phi(problem, x), q)


# -- cutoff extension ----------------------------------------------------------------

def cutoff(rho, r: float):
    """C^2 radial cutoff: 0 on [0, r/2], 1 on [r, inf), quintic blend between.

    Returns (chi, dchi/drho).
    """
    rho = np.asarray(rho, dtype=float)
    s = np.clip((rho - 0.5 * r) / (0.5 * r), 0.0, 1.0)
    chi = s**3 * (10 - 15 * s + 6 * s**2)
    dchi = 30 * s**2 * (1 - s) ** 2 / (0.5 * r)
    return chi, dchi


def eval_extension(problem: DipoleProblem, x) -> np.ndarray:
    """chi(rho) A(x), defined everywhere (zero on B_{r/2}(x0)); shape (..., 3, 3)."""
    x = np.asarray(x, dtype=float)
    rho = np.linalg.norm(x - problem.x0, axis=-1)
    out = np.zeros(x.shape[:-1] + (3, 3), dtype=complex)
    far = rho > 0.5 * problem.r
    if np.any(far):
        chi, _ = cutoff(rho[far], problem.r)
        out[far] = chi[:, None, None] * eval_A(problem, x[far])
    return out


def eval_curl_extension(problem: DipoleProblem, x) -> np.ndarray:
    """curl(chi A e_j) = chi curl(A e_j) + (chi' u) x A e_j, column j."""
    x = np.asarray(x, dtype=float)
    rho = np.linalg.norm(x - problem.x0, axis=-1)
    out = np.zeros(x.shape[:-1] + (3, 3), dtype=complex)
    far = rho > 0.5 * problem.r
    if np.any(far):
        xf = x[far]
        chi, dchi = cutoff(rho[far], problem.r)
        u = (xf - problem.x0) / rho[far][:, None]
        A = eval_A(problem, xf)
        gchi = (dchi[:, None] * u)[:, :, None]
        cross = np.cross(np.broadcast_to(gchi, A.shape), A, axis=1)
        out[far] = chi[:, None, None] * eval_curl_A(problem, xf) + cross
    return out


def eval_extension_column(problem: DipoleProblem, j: int, x) -> np.ndarray:
    return eval_extension(problem, x)[..., :, j]


# -- finite-difference checks ----------------------------------------------------------

def fd_jacobian(f, x, h: float) -> np.ndarray:
    """Central-difference Jacobian of a vector field; ``out[..., i, k] = d f_i / d x_k``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_curl(f, x, h: float) -> np.ndarray:
    J = fd_jacobian(f, x, h)
    return np.stack([J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0],
                     J[..., 1, 0] - J[..., 0, 1]], axis=-1)


def fd_pde_residual(problem: DipoleProblem, x, p, h: float) -> np.ndarray:
    """Per-point residual of curl curl K - z^2 K with nested central differences.

    The residual is a cancellation between second derivatives of K, so it is
    normalized by the Frobenius norm of the finite-difference second-derivative
    tensor of K at the same point and step.
    """
    def K(y):
        return eval_K(problem, y, p)

    x = np.asarray(x, dtype=float)
    res = fd_curl(lambda y: fd_curl(K, y, h), x, h) - problem.z2 * K(x)
    second = fd_jacobian(lambda y: fd_jacobian(K, y, h), x, h)
    scale = np.sqrt(np.sum(np.abs(second) ** 2, axis=(-3, -2, -1)))
    return np.linalg.norm(res, axis=-1) / scale
