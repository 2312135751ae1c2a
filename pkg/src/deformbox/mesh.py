"""Triangle-mesh core: storage, OBJ I/O, the cube template, boxes and distances."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree


class ObjParseError(ValueError):
    """Malformed Wavefront OBJ input; carries the offending line number."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh with an optional part label.

    Arrays are copied and made read-only on construction, so instances can be
    shared freely.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size:
            if t.min() < 0 or t.max() >= len(v):
                raise ValueError("triangle index out of range")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValueError("degenerate triangle with repeated index")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.triangles, self.label)

    def translated(self, t) -> "TriMesh":
        return self.with_vertices(self.vertices + np.asarray(t, dtype=np.float64))

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (E, 2) index pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        e = np.unique(e, axis=0)
        e.flags.writeable = False
        return e

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 vertex adjacency matrix."""
        e = self.edges
        n = self.n_vertices
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Uniform graph Laplacian D - A."""
        return (sp.diags(self.degree.astype(np.float64)) - self.adjacency).tocsr()

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles

    def triangle_areas(self) -> np.ndarray:
        tri = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def same_connectivity(self, other: "TriMesh") -> bool:
        return (
            self.n_vertices == other.n_vertices
            and self.triangles.shape == other.triangles.shape
            and bool(np.array_equal(self.triangles, other.triangles))
        )


@dataclass(frozen=True)
class Aabb:
    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(h < 0):
            raise ValueError("half extents must be non-negative")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "half_extents", _frozen(h))

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_extents

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_extents

    @property
    def diagonal(self) -> float:
        return float(2.0 * np.linalg.norm(self.half_extents))

    @classmethod
    def from_bounds(cls, lo, hi) -> "Aabb":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        return cls((lo + hi) / 2.0, (hi - lo) / 2.0)

    def __eq__(self, other):
        if not isinstance(other, Aabb):
            return NotImplemented
        return bool(np.array_equal(self.center, other.center) and np.array_equal(self.half_extents, other.half_extents))

    def __hash__(self):
        return hash((tuple(self.center), tuple(self.half_extents)))


@dataclass(frozen=True, eq=False)
class BoxTemplate:
    """Unit cube surface carrying an m x m quad grid on each face.

    ``grid`` holds the integer lattice coordinate (0..m per axis) of every
    vertex; it parameterizes the surface for coarse-to-fine prolongation.
    """

    mesh: TriMesh
    m: int
    grid: np.ndarray = field(repr=False)

    @property
    def vertex_count(self) -> int:
        return self.mesh.n_vertices

    @cached_property
    def lattice_index(self) -> np.ndarray:
        idx = np.full((self.m + 1,) * 3, -1, dtype=np.int64)
        idx[self.grid[:, 0], self.grid[:, 1], self.grid[:, 2]] = np.arange(len(self.grid))
        return idx


def make_box_template(m: int = 40) -> BoxTemplate:
    """Closed unit cube (corners at +-0.5) with 12 m^2 triangles and 6 m^2 + 2 vertices."""
    if int(m) != m or m < 1:
        raise ValueError(f"grid resolution must be a positive integer, got {m!r}")
    m = int(m)
    r = np.arange(m + 1)
    g = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    on_surface = np.any((g == 0) | (g == m), axis=1)
    grid = g[on_surface]
    idx = np.full((m + 1,) * 3, -1, dtype=np.int64)
    idx[grid[:, 0], grid[:, 1], grid[:, 2]] = np.arange(len(grid))

    iu, iv = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    iu = iu.ravel()
    iv = iv.ravel()
    tris = []
    for a in range(3):
        u, v = (a + 1) % 3, (a + 2) % 3
        for side in (0, m):

            def corner(du, dv):
                c = np.empty((len(iu), 3), dtype=np.int64)
                c[:, a] = side
                c[:, u] = iu + du
                c[:, v] = iv + dv
                return idx[c[:, 0], c[:, 1], c[:, 2]]

            c00, c10, c11, c01 = corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)
            if side == m:
                tris.append(np.stack([c00, c10, c11], axis=1))
                tris.append(np.stack([c00, c11, c01], axis=1))
            else:
                tris.append(np.stack([c00, c11, c10], axis=1))
                tris.append(np.stack([c00, c01, c11], axis=1))
    triangles = np.concatenate(tris)
    vertices = grid / m - 0.5
    mesh = TriMesh(vertices, triangles, label="box0")
    return BoxTemplate(mesh=mesh, m=m, grid=_frozen(grid))


def prolong(coarse: BoxTemplate, positions: np.ndarray, fine: BoxTemplate) -> np.ndarray:
    """Carry per-vertex positions from a coarse template onto a finer one.

    Each fine vertex is located in the coarse face grid through the shared
    cube parameterization and its position is bilinearly interpolated.
    """
    positions = np.asarray(positions, dtype=np.float64)
    m1, m2 = coarse.m, fine.m
    u = fine.grid / m2
    out = np.empty((fine.vertex_count, 3))
    on_face = (fine.grid == 0) | (fine.grid == m2)
    face_axis = np.argmax(on_face, axis=1)
    lat = coarse.lattice_index
    for a in range(3):
        sel = np.nonzero(face_axis == a)[0]
        if len(sel) == 0:
            continue
        ta, tb = (a + 1) % 3, (a + 2) % 3
        side = np.where(fine.grid[sel, a] == 0, 0, m1)
        U = u[sel, ta] * m1
        W = u[sel, tb] * m1
        i0 = np.clip(np.floor(U).astype(np.int64), 0, m1 - 1)
        j0 = np.clip(np.floor(W).astype(np.int64), 0, m1 - 1)
        fu = (U - i0)[:, None]
        fw = (W - j0)[:, None]

        def at(di, dj):
            c = np.empty((len(sel), 3), dtype=np.int64)
            c[:, a] = side
            c[:, ta] = i0 + di
            c[:, tb] = j0 + dj
            return positions[lat[c[:, 0], c[:, 1], c[:, 2]]]

        out[sel] = (
            (1 - fu) * (1 - fw) * at(0, 0)
            + fu * (1 - fw) * at(1, 0)
            + fu * fw * at(1, 1)
            + (1 - fu) * fw * at(0, 1)
        )
    return out


def compute_aabb(mesh: TriMesh) -> Aabb:
    v = mesh.vertices if isinstance(mesh, TriMesh) else np.asarray(mesh, dtype=np.float64).reshape(-1, 3)
    if len(v) == 0:
        raise ValueError("cannot bound an empty mesh")
    return Aabb.from_bounds(v.min(axis=0), v.max(axis=0))


def merge_meshes(meshes: Sequence[TriMesh], label: Optional[str] = None) -> TriMesh:
    """Disjoint union of several meshes (indices offset, no welding)."""
    if not meshes:
        raise ValueError("nothing to merge")
    offsets = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
    v = np.concatenate([m.vertices for m in meshes])
    t = np.concatenate([m.triangles + o for m, o in zip(meshes, offsets)])
    return TriMesh(v, t, label)


def sample_surface(mesh: TriMesh, count: int = 2048, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    if mesh.n_triangles == 0:
        raise ValueError("mesh has no triangles to sample")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        return mesh.vertices[rng.integers(0, mesh.n_vertices, size=count)]
    face = rng.choice(mesh.n_triangles, size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    tri = mesh.vertices[mesh.triangles[face]]
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]


def _as_points(x) -> np.ndarray:
    pts = x.vertices if isinstance(x, TriMesh) else np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("point set is empty")
    return pts


def chamfer_distance(a, b) -> float:
    """Mean squared nearest-neighbour distance a->b plus the same for b->a."""
    a = _as_points(a)
    b = _as_points(b)
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(np.mean(da**2) + np.mean(db**2))


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Row-wise closest point on triangle (a, b, c) to p (Voronoi-region test)."""
    ab = b - a
    ac = c - a
    ap = p - a
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

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        out = a + ab * v[:, None] + ac * w[:, None]

        e1 = d4 - d3
        e2 = d5 - d6
        m = (va <= 0) & (e1 >= 0) & (e2 >= 0)
        t = np.where(e1 + e2 != 0, e1 / (e1 + e2), 0.0)
        out = np.where(m[:, None], b + (c - b) * t[:, None], out)

        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        out = np.where(m[:, None], a + ac * t[:, None], out)

        m = (d6 >= 0) & (d5 <= d6)
        out = np.where(m[:, None], c, out)

        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        out = np.where(m[:, None], a + ab * t[:, None], out)

        m = (d3 >= 0) & (d4 <= d3)
        out = np.where(m[:, None], b, out)

        m = (d1 <= 0) & (d2 <= 0)
        out = np.where(m[:, None], a, out)
    return out


class SurfaceQuery:
    """Exact closest-point queries against a fixed triangle mesh.

    Candidates come from a k-d tree over triangle centroids; any triangle
    whose centroid lies within (best distance + max circumradius) is tested,
    so the result is exact rather than approximate.
    """

    def __init__(self, mesh: TriMesh):
        if mesh.n_triangles == 0:
            raise ValueError("mesh has no triangles")
        self.tri = mesh.vertices[mesh.triangles]
        self.centroids = self.tri.mean(axis=1)
        self.radius = float(np.linalg.norm(self.tri - self.centroids[:, None, :], axis=2).max())
        self.tree = cKDTree(self.centroids)

    def closest(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (closest points, squared distances)."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        nt = len(self.tri)
        k = min(4, nt)
        _, first = self.tree.query(pts, k=k)
        first = np.asarray(first).reshape(len(pts), k)
        best_pt, best_d2 = self._eval(np.repeat(pts, k, axis=0), first.ravel(), len(pts), k)
        bound = np.sqrt(best_d2) + self.radius + 1e-12
        cand = self.tree.query_ball_point(pts, bound)
        counts = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(pts))
        flat = np.fromiter((j for c in cand for j in c), dtype=np.int64, count=int(counts.sum()))
        owner = np.repeat(np.arange(len(pts)), counts)
        q = closest_point_on_triangles(pts[owner], self.tri[flat, 0], self.tri[flat, 1], self.tri[flat, 2])
        d2 = np.sum((q - pts[owner]) ** 2, axis=1)
        order = np.lexsort((d2, owner))
        owner_sorted = owner[order]
        head = np.ones(len(order), dtype=bool)
        head[1:] = owner_sorted[1:] != owner_sorted[:-1]
        pick = order[head]
        who = owner[pick]
        better = d2[pick] < best_d2[who]
        best_d2[who[better]] = d2[pick][better]
        best_pt[who[better]] = q[pick][better]
        return best_pt, best_d2

    def _eval(self, p, tri_idx, n, k):
        q = closest_point_on_triangles(p, self.tri[tri_idx, 0], self.tri[tri_idx, 1], self.tri[tri_idx, 2])
        d2 = np.sum((q - p) ** 2, axis=1).reshape(n, k)
        j = np.argmin(d2, axis=1)
        q = q.reshape(n, k, 3)[np.arange(n), j]
        return q, d2[np.arange(n), j].copy()


def surface_chamfer(a: TriMesh, b: TriMesh) -> float:
    """Bidirectional chamfer between vertex sets and the opposite surfaces.

    Vertices of ``a`` are projected onto the surface of ``b`` and vice versa;
    the result is the sum of the two mean squared distances.  Coincident
    surfaces give exactly zero regardless of tessellation.
    """
    _, da = SurfaceQuery(b).closest(a.vertices)
    _, db = SurfaceQuery(a).closest(b.vertices)
    return float(da.mean() + db.mean())


def _fmt(x: float) -> str:
    return repr(float(x))


def save_obj(mesh: TriMesh, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        if mesh.label:
            f.write(f"o {mesh.label}\n")
        for x, y, z in mesh.vertices:
            f.write(f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}\n")
        for a, b, c in mesh.triangles + 1:
            f.write(f"f {a} {b} {c}\n")


def load_obj(path: str | os.PathLike, label: Optional[str] = None) -> TriMesh:
    with open(path, "r", encoding="utf-8") as f:
        return parse_obj(f.read().splitlines(), label=label)


def parse_obj(lines: Sequence[str], label: Optional[str] = None) -> TriMesh:
    verts = []
    faces = []
    name = None
    for line_no, raw in enumerate(lines, start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        tok = s.split()
        key = tok[0]
        if key == "v":
            if len(tok) < 4:
                raise ObjParseError("vertex needs three coordinates", line_no)
            try:
                verts.append([float(t) for t in tok[1:4]])
            except ValueError:
                raise ObjParseError(f"bad vertex coordinate in {s!r}", line_no) from None
        elif key == "f":
            if len(tok) < 4:
                raise ObjParseError("face needs at least three vertices", line_no)
            idx = []
            for t in tok[1:]:
                head = t.split("/", 1)[0]
                try:
                    i = int(head)
                except ValueError:
                    raise ObjParseError(f"bad face index {t!r}", line_no) from None
                if i <= 0:
                    raise ObjParseError(f"face index must be positive, got {i}", line_no)
                idx.append(i - 1)
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1], line_no))
        elif key == "o" and len(tok) > 1:
            name = tok[1]
    for a, b, c, line_no in faces:
        if max(a, b, c) >= len(verts):
            raise ObjParseError("face index exceeds vertex count", line_no)
    tris = np.array([f[:3] for f in faces], dtype=np.int64).reshape(-1, 3)
    try:
        return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), tris, label=label if label is not None else name)
    except ValueError as exc:
        raise ObjParseError(str(exc), 0) from None
