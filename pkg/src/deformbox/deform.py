"""Per-vertex deformation features between the box template and a deformed copy.

Each vertex carries a 3x3 deformation gradient T = R S, stored as the rotation
log-vector of R followed by the six upper-triangle entries of (S - I), so an
all-zero feature row is the identity deformation.

Flat cube faces have planar one-rings, where the one-ring alone cannot fix the
normal column of T.  The gradients are therefore fitted jointly: one-ring edge
fit plus a light smoothness coupling between neighbouring gradients, which
makes the field unique and reproduces any global linear map exactly.  A
minimum-norm correction then makes the field consistent with the
reconstruction solve, so decode(encode(x)) returns x up to solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu
from scipy.spatial.transform import Rotation

from .mesh import TriMesh

_TRIU = (np.array([0, 0, 0, 1, 1, 2]), np.array([0, 1, 2, 1, 2, 2]))
SMOOTHNESS = 1e-2


class DisconnectedMeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DeformFeatures:
    """V x 9 rows of [rotation log-vector (3) | packed S - I (6)]."""

    data: np.ndarray
    flags: np.ndarray | None = None

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64).reshape(-1, 9)
        d.flags.writeable = False
        object.__setattr__(self, "data", d)
        f = np.zeros(len(d), dtype=bool) if self.flags is None else np.array(self.flags, dtype=bool).reshape(len(d))
        f.flags.writeable = False
        object.__setattr__(self, "flags", f)

    @property
    def n_vertices(self) -> int:
        return len(self.data)

    @property
    def rotation(self) -> np.ndarray:
        return self.data[:, :3]

    @property
    def stretch(self) -> np.ndarray:
        """Full symmetric stretch matrices, shape (V, 3, 3)."""
        s = np.zeros((len(self.data), 3, 3))
        s[:, _TRIU[0], _TRIU[1]] = self.data[:, 3:]
        s[:, _TRIU[1], _TRIU[0]] = self.data[:, 3:]
        return s + np.eye(3)

    def gradients(self) -> np.ndarray:
        """Deformation gradients T = exp(r) S, shape (V, 3, 3)."""
        r = Rotation.from_rotvec(np.array(self.rotation)).as_matrix()
        return r @ self.stretch

    @classmethod
    def from_gradients(cls, t: np.ndarray) -> "DeformFeatures":
        u, sig, vt = np.linalg.svd(t)
        det = np.linalg.det(u @ vt)
        flip = det < 0
        u = u.copy()
        sig = sig.copy()
        u[flip, :, 2] *= -1
        sig[flip, 2] *= -1
        rot = u @ vt
        s = np.einsum("nji,nj,njk->nik", vt, sig, vt)
        s = 0.5 * (s + np.swapaxes(s, 1, 2))
        rv = Rotation.from_matrix(rot).as_rotvec()
        angle = np.linalg.norm(rv, axis=1)
        flags = flip | (angle > np.pi - 1e-6)
        packed = (s - np.eye(3))[:, _TRIU[0], _TRIU[1]]
        return cls(np.concatenate([rv, packed], axis=1), flags)


def _edge_lists(mesh: TriMesh):
    e = mesh.edges
    # directed one-ring pairs (v, u) for every undirected edge
    v = np.concatenate([e[:, 0], e[:, 1]])
    u = np.concatenate([e[:, 1], e[:, 0]])
    return v, u


def _gradient_operator(x: np.ndarray, mesh: TriMesh) -> sp.csr_matrix:
    """B (V x 3V): (B t)_w = sum_{u in N(w)} 0.5 (t_w + t_u) . (x_w - x_u)."""
    v, u = _edge_lists(mesh)
    d = x[v] - x[u]
    n = mesh.n_vertices
    rows = np.repeat(v, 3)
    k = np.tile(np.arange(3), len(v))
    vals = 0.5 * d.ravel()
    self_part = sp.csr_matrix((vals, (rows, 3 * rows + k)), shape=(n, 3 * n))
    nb_part = sp.csr_matrix((vals, (rows, 3 * np.repeat(u, 3) + k)), shape=(n, 3 * n))
    return (self_part + nb_part).tocsr()


def _check_connected(mesh: TriMesh):
    ncomp, lab = connected_components(mesh.adjacency, directed=False)
    if ncomp > 1:
        sizes = np.bincount(lab)
        raise DisconnectedMeshError(
            f"mesh has {ncomp} connected components (vertex counts {sizes.tolist()}); "
            "the reconstruction system is singular"
        )


def _fit_gradients(x: np.ndarray, y: np.ndarray, mesh: TriMesh) -> np.ndarray:
    v, u = _edge_lists(mesh)
    n = mesh.n_vertices
    e = x[u] - x[v]
    d = y[u] - y[v]
    ell2 = float(np.mean(np.sum(e**2, axis=1)))
    outer = np.einsum("ni,nj->nij", e, e)
    blocks = np.zeros((n, 3, 3))
    np.add.at(blocks, v, outer)
    ii, jj = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    rows = (3 * np.arange(n)[:, None, None] + ii).ravel()
    cols = (3 * np.arange(n)[:, None, None] + jj).ravel()
    k_data = sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(3 * n, 3 * n))
    smooth = sp.kron(mesh.laplacian, sp.identity(3))
    a = (k_data + SMOOTHNESS * ell2 * smooth).tocsc()
    rhs = np.zeros((n, 3, 3))  # [vertex, row c, component k]
    np.add.at(rhs, v, np.einsum("nc,nk->nck", d, e))
    b = rhs.transpose(0, 2, 1).reshape(3 * n, 3)  # column c holds row c of every T_v
    sol = splu(a).solve(b)
    return sol.reshape(n, 3, 3).transpose(0, 2, 1)


def encode_deformation(template: TriMesh, deformed: TriMesh) -> DeformFeatures:
    """Deformation features of ``deformed`` relative to ``template`` (same connectivity)."""
    if not template.same_connectivity(deformed):
        raise ValueError("template and deformed mesh must share connectivity")
    if template.degree.min() < 3:
        raise ValueError("every vertex needs at least three one-ring neighbours")
    _check_connected(template)
    x = template.vertices
    y = deformed.vertices - deformed.vertices.mean(axis=0)
    t = _fit_gradients(x, y, template)

    bop = _gradient_operator(x, template)
    n = template.n_vertices
    tcols = t.transpose(0, 2, 1).reshape(3 * n, 3)
    resid = template.laplacian @ y - bop @ tcols
    bbt = (bop @ bop.T).tocsc()[1:, 1:]
    lam = np.zeros((n, 3))
    lam[1:] = splu(bbt.tocsc()).solve(resid[1:])
    tcols = tcols + bop.T @ lam
    t = tcols.reshape(n, 3, 3).transpose(0, 2, 1)
    return DeformFeatures.from_gradients(t)


def decode_deformation(template: TriMesh, feats: DeformFeatures, anchor: tuple[int, np.ndarray] = (0, None)) -> TriMesh:
    """Rebuild vertex positions from features; ``anchor`` pins one vertex's position."""
    n = template.n_vertices
    if feats.n_vertices != n:
        raise ValueError(f"feature rows ({feats.n_vertices}) != template vertices ({n})")
    _check_connected(template)
    idx, pos = anchor
    idx = int(idx)
    pos = template.vertices[idx] if pos is None else np.asarray(pos, dtype=np.float64).reshape(3)
    t = feats.gradients()
    bop = _gradient_operator(template.vertices, template)
    rhs = bop @ t.transpose(0, 2, 1).reshape(3 * n, 3)
    lap = template.laplacian.tocsr()
    keep = np.ones(n, dtype=bool)
    keep[idx] = False
    a = lap[keep][:, keep].tocsc()
    b = rhs[keep] - lap[keep][:, [idx]].toarray() * pos[None, :]
    p = np.empty((n, 3))
    p[keep] = splu(a).solve(b)
    p[idx] = pos
    return TriMesh(p, template.triangles, label=template.label)
