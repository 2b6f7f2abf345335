"""Tagged tetrahedral meshes of the conductor/insulator geometry.

A :class:`Mesh` stores tets with ascending vertex indices, so every local edge
``(a, b)`` with ``a < b`` is already globally oriented from the smaller to the
larger vertex index. Edge DOF orientation therefore needs no sign tables.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

# local vertex pairs of the six tet edges; order fixes the local edge numbering
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
# local face k is opposite to local vertex k
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


class Region(enum.IntEnum):
    CONDUCTOR = 1
    INSULATOR = 2


class FaceTag(enum.IntEnum):
    GAMMA = 10
    GAMMA_C = 11


class MeshError(ValueError):
    """Raised for meshes that violate the geometric assumptions."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable tagged tetrahedral mesh.

    Construct through :meth:`from_arrays`, which derives edges and the tagged
    boundary faces from tet adjacency and checks every invariant.
    """

    vertices: np.ndarray  # (nv, 3)
    tets: np.ndarray  # (nt, 4), ascending vertex ids per row
    tet_region: np.ndarray  # (nt,) Region values
    boundary_faces: np.ndarray  # (nf, 3), oriented (see from_arrays)
    face_tags: np.ndarray  # (nf,) FaceTag values
    face_tets: np.ndarray  # (nf,) tet owning the face (the conductor tet on GAMMA_C)
    edges: np.ndarray  # (ne, 2) with edges[:, 0] < edges[:, 1]
    tet_edges: np.ndarray  # (nt, 6) global edge index of each local edge

    @classmethod
    def from_arrays(cls, vertices, tets, tet_region) -> "Mesh":
        """Build a mesh, deriving edges, GAMMA and GAMMA_C faces.

        GAMMA faces are oriented with outward normals; GAMMA_C faces are
        oriented with normals pointing from the conductor into the insulator.
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        tets = np.sort(np.asarray(tets, dtype=np.int64), axis=1)
        tet_region = np.asarray(tet_region, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if tets.ndim != 2 or tets.shape[1] != 4 or len(tets) == 0:
            raise MeshError("tets must have shape (m, 4) with m > 0")
        bad = np.flatnonzero(~np.isin(tet_region, [Region.CONDUCTOR, Region.INSULATOR]))
        if bad.size:
            raise MeshError(f"unknown region tag on tets {bad.tolist()[:20]}")

        all_edges = tets[:, LOCAL_EDGES].reshape(-1, 2)
        edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
        tet_edges = inverse.reshape(-1, 6)

        all_faces = tets[:, LOCAL_FACES].reshape(-1, 3)
        faces, finv, fcount = np.unique(all_faces, axis=0, return_inverse=True,
                                        return_counts=True)
        finv = finv.ravel()
        owner = np.repeat(np.arange(len(tets)), 4)
        opposite = tets[:, [0, 1, 2, 3]].reshape(-1)  # vertex opposite local face k
        if np.any(fcount > 2):
            raise MeshError("non-manifold mesh: a face is shared by more than two tets")

        order = np.argsort(finv, kind="stable")
        first = order[np.r_[0, np.cumsum(fcount)[:-1]]]
        second = np.full(len(faces), -1)
        shared = fcount == 2
        second[shared] = order[np.cumsum(fcount)[shared] - 1]

        out_faces, out_tags, out_tets, out_opp = [], [], [], []
        bnd = ~shared
        out_faces.append(faces[bnd])
        out_tags.append(np.full(bnd.sum(), FaceTag.GAMMA))
        out_tets.append(owner[first[bnd]])
        out_opp.append(opposite[first[bnd]])

        r1 = tet_region[owner[first[shared]]]
        r2 = tet_region[owner[second[shared]]]
        iface = r1 != r2
        f1, f2 = first[shared][iface], second[shared][iface]
        cond_side = np.where(tet_region[owner[f1]] == Region.CONDUCTOR, f1, f2)
        out_faces.append(faces[shared][iface])
        out_tags.append(np.full(iface.sum(), FaceTag.GAMMA_C))
        out_tets.append(owner[cond_side])
        out_opp.append(opposite[cond_side])

        bfaces = np.concatenate(out_faces).astype(np.int64)
        tags = np.concatenate(out_tags).astype(np.int64)
        ftets = np.concatenate(out_tets).astype(np.int64)
        opp = np.concatenate(out_opp)
        # orient so that the normal points away from the owning tet
        p0, p1, p2 = (vertices[bfaces[:, k]] for k in range(3))
        normal = np.cross(p1 - p0, p2 - p0)
        flip = np.einsum("ij,ij->i", normal, vertices[opp] - p0) > 0
        bfaces[flip] = bfaces[flip][:, [0, 2, 1]]

        mesh = cls(vertices, tets, tet_region, bfaces, tags, ftets, edges, tet_edges)
        for arr in (vertices, tets, tet_region, bfaces, tags, ftets, edges, tet_edges):
            arr.setflags(write=False)
        mesh.check_invariants()
        return mesh

    # -- sizes ---------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    # -- geometry ------------------------------------------------------------
    @cached_property
    def jacobians(self) -> np.ndarray:
        v = self.vertices[self.tets]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.abs(np.linalg.det(self.jacobians)) / 6.0

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        """Gradients of the four barycentric coordinates, shape (nt, 4, 3)."""
        inv = np.linalg.inv(self.jacobians)  # rows are grad lambda_1..3
        g = np.empty((self.n_tets, 4, 3))
        g[:, 1:] = inv
        g[:, 0] = -inv.sum(axis=1)
        return g

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    def faces_with_tag(self, tag: FaceTag) -> np.ndarray:
        return np.flatnonzero(self.face_tags == tag)

    @cached_property
    def gamma_c_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_faces[self.face_tags == FaceTag.GAMMA_C])

    @cached_property
    def gamma_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_faces[self.face_tags == FaceTag.GAMMA])

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normals of the stored (oriented) boundary faces."""
        p = self.vertices[self.boundary_faces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def face_areas(self) -> np.ndarray:
        p = self.vertices[self.boundary_faces]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def check_invariants(self) -> None:
        if np.any(self.volumes <= 0):
            bad = np.flatnonzero(self.volumes <= 0)
            raise MeshError(f"degenerate tets {bad.tolist()[:20]}")
        cond = self.tets[self.tet_region == Region.CONDUCTOR]
        touching = np.intersect1d(np.unique(cond), self.gamma_vertices)
        if touching.size:
            raise MeshError(f"conductor touches Gamma at vertices {touching.tolist()[:20]}")

    # -- point location ------------------------------------------------------
    @cached_property
    def _centroid_tree(self) -> cKDTree:
        return cKDTree(self.centroids)

    def barycentric(self, points: np.ndarray, tet_ids: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``points`` in the given tets, shape (n, 4)."""
        points = np.atleast_2d(points)
        rel = points - self.vertices[self.tets[tet_ids, 0]]
        lam = np.einsum("nij,nj->ni", np.linalg.inv(self.jacobians[tet_ids]), rel)
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def locate(self, points: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """Index of a tet containing each point, or -1 when outside the mesh."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        result = np.full(len(points), -1, dtype=np.int64)
        k = min(32, self.n_tets)
        _, cand = self._centroid_tree.query(points, k=k)
        cand = cand.reshape(len(points), k)
        for c in range(k):
            todo = np.flatnonzero(result < 0)
            if todo.size == 0:
                break
            lam = self.barycentric(points[todo], cand[todo, c])
            hit = lam.min(axis=1) >= -tol
            result[todo[hit]] = cand[todo[hit], c]
        for i in np.flatnonzero(result < 0):
            lam = self.barycentric(np.repeat(points[i:i + 1], self.n_tets, axis=0),
                                   np.arange(self.n_tets))
            inside = np.flatnonzero(lam.min(axis=1) >= -tol)
            if inside.size:
                result[i] = inside[0]
        return result

    def tet_adjacency(self, tets: np.ndarray) -> np.ndarray:
        """Pairs of tets (from ``tets``) sharing a face."""
        sub = self.tets[tets]
        faces = sub[:, LOCAL_FACES].reshape(-1, 3)
        owner = np.repeat(tets, 4)
        _, inv = np.unique(faces, axis=0, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        inv_s, own_s = inv[order], owner[order]
        same = inv_s[1:] == inv_s[:-1]
        return np.column_stack([own_s[:-1][same], own_s[1:][same]])


# -- structured generation ------------------------------------------------------

def _kuhn_tets(n: int) -> np.ndarray:
    """Six-tet Kuhn split of every cube of an n^3 grid; returns (6 n^3, 4) ids."""
    m = n + 1
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
    steps = np.eye(3, dtype=np.int64)
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    out = []
    for perm in perms:
        c0 = base
        c1 = c0 + steps[perm[0]]
        c2 = c1 + steps[perm[1]]
        c3 = c2 + steps[perm[2]]
        ids = [c[:, 0] + m * (c[:, 1] + m * c[:, 2]) for c in (c0, c1, c2, c3)]
        out.append(np.stack(ids, axis=1))
    # keep the 6 tets of a cube adjacent in the ordering
    return np.stack(out, axis=1).reshape(-1, 4)


def structured_box_mesh(half_width: float, n: int, conductor) -> Mesh:
    """Kuhn-split structured mesh of [-a, a]^3.

    ``conductor`` is a predicate on cube centers (array (k, 3) -> bool mask)
    selecting the cubes whose six tets are tagged CONDUCTOR.
    """
    a = float(half_width)
    ticks = np.linspace(-a, a, n + 1)
    x, y, z = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    vertices = np.stack([x.ravel(order="F"), y.ravel(order="F"), z.ravel(order="F")], axis=1)
    tets = _kuhn_tets(n)
    h = 2 * a / n
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    centers = -a + h * (np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1) + 0.5)
    is_cond = np.repeat(np.asarray(conductor(centers), dtype=bool), 6)
    region = np.where(is_cond, Region.CONDUCTOR, Region.INSULATOR)
    return Mesh.from_arrays(vertices, tets, region)


def generate_nested_box_mesh(outer_half_width: float, inner_half_width: float,
                             n_cells_per_axis: int) -> Mesh:
    """Structured mesh of [-a, a]^3 with the inner cube [-b, b]^3 as conductor."""
    a, b, n = float(outer_half_width), float(inner_half_width), int(n_cells_per_axis)
    if not 0 < b < a:
        raise MeshError(f"need 0 < inner_half_width < outer_half_width, got b={b}, a={a}")
    def aligned(m: int) -> bool:
        layers = m * (a - b) / (2 * a)
        return abs(layers - round(layers)) < 1e-9 and round(layers) >= 1

    if not aligned(n):
        valid = next((m for m in range(4, 4097) if aligned(m)), None)
        hint = f"smallest valid n is {valid}" if valid else "no n <= 4096 resolves it"
        raise MeshError(
            f"inner box boundary at {b} is not on the grid lines of spacing {2 * a / n:g}; {hint}")
    if n < 4:
        raise MeshError(f"n_cells_per_axis must be >= 4, got {n}")
    return structured_box_mesh(a, n, lambda c: np.all(np.abs(c) < b, axis=1))


# -- observation region -----------------------------------------------------------

def point_triangle_distance(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Distance from point ``p`` (3,) to each triangle in ``tri`` (k, 3, 3)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    closest = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    def put(mask, value):
        sel = mask & ~done
        closest[sel] = value[sel]
        done[sel] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        put((d1 <= 0) & (d2 <= 0), a)
        put((d3 >= 0) & (d4 <= d3), b)
        put((d6 >= 0) & (d5 <= d6), c)
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v, w = vb * denom, vc * denom
        put(np.ones(len(a), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return np.linalg.norm(closest - p, axis=1)


def point_tet_distance(mesh: Mesh, p: np.ndarray, tet_ids: np.ndarray) -> np.ndarray:
    """Euclidean distance from ``p`` to the closed tets ``tet_ids`` (0 if inside)."""
    if len(tet_ids) == 0:
        return np.zeros(0)
    lam = mesh.barycentric(np.repeat(p[None], len(tet_ids), axis=0), tet_ids)
    inside = lam.min(axis=1) >= 0
    tri = mesh.vertices[mesh.tets[tet_ids][:, LOCAL_FACES]]  # (k, 4, 3, 3)
    d = point_triangle_distance(p, tri.reshape(-1, 3, 3)).reshape(-1, 4).min(axis=1)
    d[inside] = 0.0
    return d


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Tets lying entirely outside the closed ball B_r(x0)."""

    x0: np.ndarray
    r: float
    included_tets: np.ndarray
    n_tets: int = field(repr=False)

    @property
    def excluded_tets(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_tets), self.included_tets)

    def contains(self, tet_ids) -> np.ndarray:
        return np.isin(tet_ids, self.included_tets)


def conductor_clearance(mesh: Mesh, x0) -> float:
    """Distance from ``x0`` to the interface GAMMA_C (and to GAMMA)."""
    x0 = np.asarray(x0, dtype=float)
    faces = mesh.vertices[mesh.boundary_faces]
    return float(point_triangle_distance(x0, faces).min())


def check_ball_in_conductor(mesh: Mesh, x0, r: float) -> None:
    """Raise MeshError unless B_r(x0) lies strictly inside the conductor."""
    x0 = np.asarray(x0, dtype=float)
    tet = mesh.locate(x0[None])[0]
    if tet < 0:
        raise MeshError(f"x0={x0.tolist()} lies outside the mesh")
    if mesh.tet_region[tet] != Region.CONDUCTOR:
        raise MeshError(f"x0={x0.tolist()} is not inside the conductor")
    clearance = conductor_clearance(mesh, x0)
    if not r < clearance:
        raise MeshError(
            f"ball of radius {r} around x0 is not strictly inside the conductor "
            f"(distance to the interface is {clearance:g}); homogeneity cannot be verified")


def classify_observation_region(mesh: Mesh, x0, r: float) -> ObservationMask:
    """Mask of tets with empty intersection with the closed ball B_r(x0).

    A tet is excluded as soon as its closest point to ``x0`` is within ``r``,
    which excludes tets cut by the sphere even when all their vertices lie
    outside it.
    """
    x0 = np.asarray(x0, dtype=float)
    r = float(r)
    if r < 0:
        raise MeshError("radius must be nonnegative")
    check_ball_in_conductor(mesh, x0, r)
    if r == 0:
        included = np.arange(mesh.n_tets)
    else:
        vdist = np.linalg.norm(mesh.vertices[mesh.tets] - x0, axis=2)
        # a tet whose vertices are all farther than r + diameter cannot touch the ball
        diam = np.linalg.norm(mesh.vertices[mesh.tets][:, :, None] -
                              mesh.vertices[mesh.tets][:, None], axis=3).max(axis=(1, 2))
        near = np.flatnonzero(vdist.min(axis=1) < r + diam)
        d = point_tet_distance(mesh, x0, near)
        excluded = near[d < r]
        included = np.setdiff1d(np.arange(mesh.n_tets), excluded)
    return ObservationMask(x0, r, included, mesh.n_tets)


# -- topology -----------------------------------------------------------------

@dataclass
class TopologyReport:
    conductor_connected: bool
    insulator_connected: bool
    interface_connected: bool
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def _n_components(n: int, pairs: np.ndarray) -> int:
    if n == 0:
        return 0
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    return connected_components(g, directed=False)[0]


def validate_topology(mesh: Mesh) -> TopologyReport:
    """Connectivity diagnostics; failures are reported, never raised."""
    failures = []
    result = {}
    for region, name in ((Region.CONDUCTOR, "conductor"), (Region.INSULATOR, "insulator")):
        ids = np.flatnonzero(mesh.tet_region == region)
        if ids.size == 0:
            failures.append(f"empty {name}")
            result[name] = False
            continue
        local = np.full(mesh.n_tets, -1)
        local[ids] = np.arange(ids.size)
        pairs = local[mesh.tet_adjacency(ids)]
        ncomp = _n_components(ids.size, pairs)
        result[name] = ncomp == 1
        if ncomp != 1:
            failures.append(f"{name} has {ncomp} face-connected components")

    iface = mesh.boundary_faces[mesh.face_tags == FaceTag.GAMMA_C]
    if len(iface) == 0:
        result["interface"] = False
        failures.append("empty interface Gamma_C")
    else:
        fe = np.sort(iface[:, [[0, 1], [1, 2], [0, 2]]].reshape(-1, 2), axis=1)
        _, inv = np.unique(fe, axis=0, return_inverse=True)
        inv = inv.ravel()
        owner = np.repeat(np.arange(len(iface)), 3)
        order = np.argsort(inv, kind="stable")
        same = inv[order][1:] == inv[order][:-1]
        pairs = np.column_stack([owner[order][:-1][same], owner[order][1:][same]])
        ncomp = _n_components(len(iface), pairs)
        result["interface"] = ncomp == 1
        if ncomp != 1:
            failures.append(f"Gamma_C disconnected ({ncomp} components)")
    return TopologyReport(result["conductor"], result["insulator"], result["interface"], failures)


# -- MSH v2.2 ------------------------------------------------------------------------

_TET, _TRI = 4, 2
_HIGHER_ORDER = {8, 9, 10, 11, 12, 13, 14, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25,
                 26, 27, 28, 29, 30, 31, 36, 37, 38, 39, 40}


def export_msh(mesh: Mesh, path) -> None:
    """Write ASCII MSH v2.2 with physical tags (tets 1/2, faces 10/11)."""
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    lines += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.vertices.tolist())]
    lines += ["$EndNodes", "$Elements", str(len(mesh.boundary_faces) + mesh.n_tets)]
    eid = 1
    for face, tag in zip(mesh.boundary_faces.tolist(), mesh.face_tags.tolist()):
        lines.append(f"{eid} {_TRI} 2 {tag} {tag} {face[0] + 1} {face[1] + 1} {face[2] + 1}")
        eid += 1
    for tet, reg in zip(mesh.tets.tolist(), mesh.tet_region.tolist()):
        lines.append(f"{eid} {_TET} 2 {reg} {reg} " + " ".join(str(v + 1) for v in tet))
        eid += 1
    lines += ["$EndElements", ""]
    Path(path).write_text("\n".join(lines))


def _section(lines: list[str], name: str) -> list[str]:
    try:
        start = lines.index(f"${name}")
        end = lines.index(f"$End{name}")
    except ValueError:
        raise MeshError(f"missing ${name} section") from None
    return lines[start + 1:end]


def import_msh(path) -> Mesh:
    """Read an ASCII MSH v2.2 file with physical tags 1, 2 (volumes) and 10, 11 (faces).

    GAMMA_C and GAMMA are re-derived from adjacency and cross-checked against
    the tagged triangles in the file.
    """
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    fmt = _section(lines, "MeshFormat")
    if not fmt or not fmt[0].split()[0].startswith("2.2") or fmt[0].split()[1] != "0":
        raise MeshError(f"unsupported mesh format {fmt[:1]}; need ASCII MSH 2.2")

    node_lines = _section(lines, "Nodes")
    n_nodes = int(node_lines[0])
    node_ids, coords = [], []
    for ln in node_lines[1:1 + n_nodes]:
        parts = ln.split()
        node_ids.append(int(parts[0]))
        coords.append([float(v) for v in parts[1:4]])
    index = {nid: k for k, nid in enumerate(node_ids)}

    elem_lines = _section(lines, "Elements")
    tets, regions, tet_ids = [], [], []
    tris, tri_tags, tri_ids = [], [], []
    higher, untagged, bad_vol, non_tet = [], [], [], []
    for ln in elem_lines[1:1 + int(elem_lines[0])]:
        parts = [int(v) for v in ln.split()]
        eid, etype, ntags = parts[0], parts[1], parts[2]
        tags = parts[3:3 + ntags]
        nodes = [index[v] for v in parts[3 + ntags:]]
        phys = tags[0] if tags else None
        if etype in _HIGHER_ORDER:
            higher.append(eid)
        elif etype == _TET:
            if phys is None:
                untagged.append(eid)
            elif phys not in (Region.CONDUCTOR, Region.INSULATOR):
                bad_vol.append(eid)
            tets.append(nodes)
            regions.append(phys if phys is not None else -1)
            tet_ids.append(eid)
        elif etype == _TRI:
            if phys not in (FaceTag.GAMMA, FaceTag.GAMMA_C):
                untagged.append(eid)
            tris.append(nodes)
            tri_tags.append(phys)
            tri_ids.append(eid)
        elif etype in (5, 6, 7):
            non_tet.append(eid)
    if non_tet:
        raise MeshError(f"non-tet volume elements {non_tet[:20]}")
    if higher:
        raise MeshError(f"unsupported element order: elements {higher[:20]}")
    if untagged or bad_vol:
        raise MeshError(f"missing or unknown physical tags on elements {(untagged + bad_vol)[:20]}")
    if not tets:
        raise MeshError("no tetrahedra in file")

    mesh = Mesh.from_arrays(np.array(coords), np.array(tets), np.array(regions))

    derived = {tuple(f): int(t) for f, t in zip(np.sort(mesh.boundary_faces, axis=1).tolist(),
                                                 mesh.face_tags.tolist())}
    offending = []
    seen = set()
    for eid, tri, tag in zip(tri_ids, tris, tri_tags):
        key = tuple(sorted(tri))
        seen.add(key)
        if derived.get(key) != tag:
            offending.append(eid)
    missing = [k for k in derived if k not in seen]
    if offending or missing:
        raise MeshError(
            f"inconsistent interface tags: file triangles {offending[:20]} disagree with adjacency"
            + (f"; {len(missing)} derived boundary faces missing from file" if missing else ""))
    return mesh
