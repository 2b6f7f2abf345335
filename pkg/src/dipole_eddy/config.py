"""Run configuration, target specification and model construction."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import kernels
from .kernels import DipoleProblem
from .mesh import Mesh, MeshError, Region, generate_nested_box_mesh, import_msh
from .optimizer import ControlBox, CostWeights, ReducedProblem
from .state_adjoint import EddyModel, ObservedTargets

TARGET_KINDS = ("constant-field", "dipole-manufactured", "sampled-grid")
_REGION_KEYS = {"conductor": Region.CONDUCTOR, "insulator": Region.INSULATOR}


class ConfigError(ValueError):
    pass


def _complex3(value) -> np.ndarray:
    """Complex 3-vector from [[re, im] x 3], a list of reals, or complex numbers."""
    arr = np.asarray(value)
    if arr.shape == (3, 2) and np.isrealobj(arr):
        return arr[:, 0] + 1j * arr[:, 1]
    if arr.shape == (3,):
        return arr.astype(complex)
    raise ConfigError(f"expected a complex 3-vector, got {value!r}")


@dataclass
class TargetSpec:
    """How E_d and H_d are produced.

    constant-field: ``E`` and ``H`` as [[re, im] x 3];
    dipole-manufactured: ``p_bar`` real 3-vector, targets are the discrete
    fields E(p_bar) and mu^{-1} curl E(p_bar) on the same mesh;
    sampled-grid: ``path`` to an npz with 1-D axes ``x``, ``y``, ``z`` and
    complex arrays ``E``, ``H`` of shape (nx, ny, nz, 3), trilinearly
    interpolated.
    """

    kind: str = "constant-field"
    E: list | None = None
    H: list | None = None
    p_bar: list | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind {self.kind!r}; expected one of {TARGET_KINDS}")
        if self.kind == "dipole-manufactured" and (self.p_bar is None or len(self.p_bar) != 3):
            raise ConfigError("dipole-manufactured targets need p_bar (3 reals)")
        if self.kind == "sampled-grid" and not self.path:
            raise ConfigError("sampled-grid targets need a path")

    def build(self, model: EddyModel, box: ControlBox | None = None) -> ObservedTargets:
        quad = model.quad
        if self.kind == "constant-field":
            E = _complex3(self.E) if self.E is not None else np.zeros(3, complex)
            H = _complex3(self.H) if self.H is not None else np.zeros(3, complex)
            return ObservedTargets.from_functions(quad, lambda x: E, lambda x: H)
        if self.kind == "dipole-manufactured":
            p_bar = np.asarray(self.p_bar, dtype=float)
            if box is not None and not box.admissible(p_bar):
                raise ConfigError(f"p_bar={p_bar.tolist()} is not admissible for p_max={box.p_max}")
            return ObservedTargets.from_state(model.solve_state(p_bar))
        return self._sampled(model)

    def _sampled(self, model: EddyModel) -> ObservedTargets:
        with np.load(self.path) as data:
            axes = tuple(np.asarray(data[k], dtype=float) for k in ("x", "y", "z"))
            E, H = np.asarray(data["E"]), np.asarray(data["H"])
        tets = model.mesh.tets[model.mask.included_tets]
        pts = model.mesh.vertices[tets].reshape(-1, 3)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        for k, ax in enumerate(axes):
            if ax[0] > lo[k] or ax[-1] < hi[k]:
                raise ConfigError(f"sampled grid does not cover the masked region along axis {k}")
        fE = RegularGridInterpolator(axes, E, method="linear")
        fH = RegularGridInterpolator(axes, H, method="linear")
        return ObservedTargets.from_functions(model.quad, fE, fH)


def _tensor_json(v):
    arr = np.asarray(v, dtype=float)
    return float(arr) if arr.ndim == 0 else arr.tolist()


@dataclass
class RunConfig:
    mesh: dict = field(default_factory=lambda: {
        "kind": "nested-box", "outer_half_width": 1.0, "inner_half_width": 0.5, "n": 8})
    mu0: float = 1.0
    sigma0: float = 1.0
    omega: float = 1.0
    x0: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    r: float = 0.25
    mu: dict = field(default_factory=lambda: {"insulator": 2.0})
    sigma: dict = field(default_factory=dict)
    eps: dict = field(default_factory=dict)
    nu_E: float = 1.0
    nu_H: float = 1.0
    nu: float = 0.0
    p_max: float = 1.0
    p: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    p0: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    target: TargetSpec = field(default_factory=TargetSpec)
    solver_rtol: float = 1e-10
    opt_tol: float = 1e-10
    max_iter: int = 2000
    check_samples: int = 10
    check_h: float = 1e-3
    check_threshold: float = 1e-7
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if isinstance(self.target, dict):
            self.target = TargetSpec(**self.target)
        for name in ("mu0", "sigma0", "omega", "r", "p_max", "solver_rtol", "opt_tol", "check_h"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if min(self.nu_E, self.nu_H, self.nu) < 0:
            raise ConfigError("cost weights must be nonnegative")
        for name in ("mu", "sigma", "eps"):
            unknown = set(getattr(self, name)) - set(_REGION_KEYS)
            if unknown:
                raise ConfigError(f"unknown regions {sorted(unknown)} in {name}")
        kind = self.mesh.get("kind")
        if kind not in ("nested-box", "msh"):
            raise ConfigError(f"unknown mesh kind {kind!r}")

    # -- serialization -------------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("mu", "sigma", "eps"):
            d[name] = {k: _tensor_json(v) for k, v in d[name].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    # -- construction --------------------------------------------------------------
    def build_mesh(self) -> Mesh:
        m = self.mesh
        if m["kind"] == "nested-box":
            return generate_nested_box_mesh(float(m["outer_half_width"]),
                                            float(m["inner_half_width"]), int(m["n"]))
        return import_msh(m["path"])

    def build_problem(self) -> DipoleProblem:
        def regions(d):
            return {_REGION_KEYS[k]: v for k, v in d.items()}

        return DipoleProblem(self.mu0, self.sigma0, self.omega, self.x0, self.r,
                             regions(self.mu), regions(self.sigma), regions(self.eps))

    @property
    def box(self) -> ControlBox:
        return ControlBox(self.p_max)

    @property
    def weights(self) -> CostWeights:
        return CostWeights(self.nu_E, self.nu_H, self.nu)

    def build_model(self, mesh: Mesh | None = None) -> EddyModel:
        """Mesh, problem and assembled model; checks homogeneity."""
        mesh = mesh if mesh is not None else self.build_mesh()
        return EddyModel(mesh, self.build_problem(), rtol=self.solver_rtol)

    def build_reduced(self, model: EddyModel) -> ReducedProblem:
        return ReducedProblem(model, self.target.build(model, self.box), self.weights)


def check_homogeneity(config: RunConfig, mesh: Mesh | None = None) -> None:
    """Raise MeshError when B_r(x0) is not inside a region with scalar mu0, sigma0."""
    mesh = mesh if mesh is not None else config.build_mesh()
    config.build_problem().check_homogeneity(mesh)


def kernel_spot_check(problem: DipoleProblem, n_points: int = 5, seed: int = 0,
                      h: float = 1e-4) -> float:
    """Largest normalized PDE residual of K at random points 0.1 <= |x - x0| <= 0.5."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_points, 3))
    d *= (rng.uniform(0.1, 0.5, n_points) / np.linalg.norm(d, axis=1))[:, None]
    return float(kernels.fd_pde_residual(problem, problem.x0 + d, np.ones(3), h).max())


__all__ = ["ConfigError", "MeshError", "RunConfig", "TargetSpec", "TARGET_KINDS",
           "check_homogeneity", "kernel_spot_check"]
