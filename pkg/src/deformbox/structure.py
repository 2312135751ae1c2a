"""Per-part representation vectors and shape-level structure.

A shape with n part labels is a fixed-order list of n part slots.  Each slot
serializes to 2n + 73 reals::

    [exists | supports (n) | supported_by (n) | center (3) | has_symmetry | plane (4) | latent (64)]

Support relations are detected from part boxes (y is up), symmetry from
reflected part geometry.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .mesh import Aabb, TriMesh, chamfer_distance, compute_aabb, sample_surface

LATENT_DIM = 64
BELOW, ABOVE, SIDE = "below", "above", "side"
KINDS = (BELOW, ABOVE, SIDE)
GROUND = "ground"
UP = 1


def part_length(n: int) -> int:
    return 2 * n + 73


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True, eq=False)
class PartRecord:
    label_id: int
    exists: bool = False
    supports: np.ndarray = None
    supported_by: np.ndarray = None
    center: np.ndarray = None
    has_symmetry: bool = False
    symmetry_plane: np.ndarray = None
    latent: np.ndarray = None

    @classmethod
    def absent(cls, label_id: int, n: int) -> "PartRecord":
        return cls(label_id, False, np.zeros(n, bool), np.zeros(n, bool), np.zeros(3), False, np.zeros(4), np.zeros(LATENT_DIM))

    def __post_init__(self):
        for name, dt in (("supports", bool), ("supported_by", bool), ("center", float), ("symmetry_plane", float), ("latent", float)):
            val = getattr(self, name)
            if val is None:
                raise ValueError(f"PartRecord.{name} is required")
            arr = np.array(val, dtype=dt).ravel()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.center.shape != (3,) or self.symmetry_plane.shape != (4,):
            raise ValueError("center must have 3 entries and symmetry_plane 4")
        if self.has_symmetry:
            nrm = np.linalg.norm(self.symmetry_plane[:3])
            if abs(nrm - 1.0) > 1e-6:
                raise ValueError("symmetry plane normal must have unit norm")

    @property
    def plane_normal(self) -> np.ndarray:
        return self.symmetry_plane[:3]

    @property
    def plane_offset(self) -> float:
        return float(self.symmetry_plane[3])


@dataclass(frozen=True, eq=False)
class Category:
    """Per-category metadata fixed for a collection."""

    name: str
    labels: Sequence[str]
    part_types: Mapping[str, str] = field(default_factory=dict)
    symmetry_partner: Mapping[str, str] = field(default_factory=dict)
    lookup: "SupportLookup" = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels")
        if GROUND in self.labels:
            raise ValueError(f"{GROUND!r} is reserved")
        pt = {lab: self.part_types.get(lab, lab) for lab in self.labels}
        object.__setattr__(self, "part_types", pt)
        for a, b in self.symmetry_partner.items():
            if a not in self.labels or b not in self.labels:
                raise ValueError(f"symmetry partner {a}->{b} names an unknown label")
        if self.lookup is None:
            object.__setattr__(self, "lookup", SupportLookup({}))

    @property
    def n(self) -> int:
        return len(self.labels)

    def label_id(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r} for category {self.name!r}") from None

    def partner_id(self, i: int) -> Optional[int]:
        other = self.symmetry_partner.get(self.labels[i])
        return None if other is None else self.labels.index(other)

    def to_json(self) -> dict:
        return {
            "category": self.name,
            "labels": list(self.labels),
            "part_types": dict(self.part_types),
            "symmetry_partner": dict(self.symmetry_partner),
            "support_lookup": self.lookup.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Category":
        return cls(
            d["category"],
            d["labels"],
            d.get("part_types", {}),
            d.get("symmetry_partner", {}),
            SupportLookup.from_json(d.get("support_lookup", {})),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Category":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


@dataclass(frozen=True, eq=False)
class ShapeRecord:
    category: str
    n: int
    parts: Sequence[PartRecord]
    symmetry_partner: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        parts = tuple(self.parts)
        if len(parts) != self.n:
            raise ValueError(f"expected {self.n} part slots, got {len(parts)}")
        for i, p in enumerate(parts):
            if p.label_id != i:
                raise ValueError("parts must be stored in label order")
            if len(p.supports) != self.n or len(p.supported_by) != self.n:
                raise ValueError("support masks must have n entries")
        object.__setattr__(self, "parts", parts)

    @property
    def present(self) -> list[int]:
        return [p.label_id for p in self.parts if p.exists]

    def support_edges(self) -> list[tuple[int, int]]:
        """Directed (supporter, supported) pairs asserted by both endpoints' masks."""
        out = []
        for i in self.present:
            for j in np.nonzero(self.parts[i].supports)[0]:
                j = int(j)
                if j != i and self.parts[j].exists and self.parts[j].supported_by[i]:
                    out.append((i, j))
        return out

    def to_json(self, labels: Optional[Sequence[str]] = None) -> dict:
        parts = []
        for p in self.parts:
            parts.append(
                {
                    "label": labels[p.label_id] if labels else str(p.label_id),
                    "exists": bool(p.exists),
                    "supports": [int(k) for k in np.nonzero(p.supports)[0]],
                    "supported_by": [int(k) for k in np.nonzero(p.supported_by)[0]],
                    "center": [float(c) for c in p.center],
                    "symmetry": {"present": bool(p.has_symmetry), "plane": [float(c) for c in p.symmetry_plane]},
                    "latent": [float(c) for c in p.latent],
                }
            )
        return {"category": self.category, "n": self.n, "parts": parts}

    @classmethod
    def from_json(cls, d: dict, category: Optional[Category] = None) -> "ShapeRecord":
        n = int(d["n"])
        parts = []
        for i, pd in enumerate(d["parts"]):
            sup = np.zeros(n, bool)
            sup[pd.get("supports", [])] = True
            by = np.zeros(n, bool)
            by[pd.get("supported_by", [])] = True
            sym = pd.get("symmetry", {})
            parts.append(
                PartRecord(
                    i,
                    bool(pd["exists"]),
                    sup,
                    by,
                    pd.get("center", [0, 0, 0]),
                    bool(sym.get("present", False)),
                    sym.get("plane", [0, 0, 0, 0]),
                    pd.get("latent", [0.0] * LATENT_DIM),
                )
            )
        partner = _partner_ids(category) if category else {}
        return cls(d["category"], n, parts, partner)


def _partner_ids(category: Category) -> dict[int, int]:
    out = {}
    for i in range(category.n):
        j = category.partner_id(i)
        if j is not None:
            out[i] = j
            out.setdefault(j, i)
    return out


def assemble_shape_vector(s: ShapeRecord) -> np.ndarray:
    n = s.n
    L = part_length(n)
    v = np.zeros(n * L)
    for p in s.parts:
        if len(p.latent) != LATENT_DIM:
            raise ValueError(f"latent dimension must be {LATENT_DIM}, got {len(p.latent)}")
        if not p.exists:
            continue
        o = p.label_id * L
        v[o] = 1.0
        v[o + 1 : o + 1 + n] = p.supports
        v[o + 1 + n : o + 1 + 2 * n] = p.supported_by
        v[o + 1 + 2 * n : o + 4 + 2 * n] = p.center
        v[o + 4 + 2 * n] = float(p.has_symmetry)
        v[o + 5 + 2 * n : o + 9 + 2 * n] = p.symmetry_plane
        v[o + 9 + 2 * n : o + L] = p.latent
    return v


def parse_shape_vector(v, n: int, category: str | Category) -> ShapeRecord:
    v = np.asarray(v, dtype=np.float64).ravel()
    L = part_length(n)
    if len(v) != n * L:
        raise ValueError(f"shape vector length {len(v)} != n*(2n+73) = {n * L}")
    cat_name = category.name if isinstance(category, Category) else str(category)
    parts = []
    for i in range(n):
        seg = v[i * L : (i + 1) * L]
        if not seg[0] > 0.5:
            parts.append(PartRecord.absent(i, n))
            continue
        has_sym = bool(seg[4 + 2 * n] > 0.5)
        plane = seg[5 + 2 * n : 9 + 2 * n].copy()
        nrm = np.linalg.norm(plane[:3])
        if has_sym:
            if nrm > 0:
                plane = plane / nrm
            else:
                has_sym = False
        parts.append(
            PartRecord(
                i,
                True,
                seg[1 : 1 + n] > 0.5,
                seg[1 + n : 1 + 2 * n] > 0.5,
                seg[1 + 2 * n : 4 + 2 * n],
                has_sym,
                plane,
                seg[9 + 2 * n :],
            )
        )
    partner = _partner_ids(category) if isinstance(category, Category) else {}
    return ShapeRecord(cat_name, n, parts, partner)


# --------------------------------------------------------------------------
# support graph


@dataclass(frozen=True)
class SupportEdge:
    supporter: int
    supported: int
    kind: str


@dataclass(frozen=True, eq=False)
class SupportGraph:
    nodes: tuple
    ground: int
    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        valid = set(self.nodes) | {self.ground}
        for e in self.edges:
            if e.supporter == e.supported:
                raise ValueError("self-support edge")
            if e.supporter not in valid or e.supported not in valid:
                raise ValueError(f"edge {e} references an unknown node")
            if e.kind not in KINDS:
                raise ValueError(f"unknown sub-structure {e.kind!r}")

    def edge_set(self) -> set[tuple[int, int, str]]:
        return {(e.supporter, e.supported, e.kind) for e in self.edges}

    def supporters(self, j: int, kinds=KINDS) -> set[int]:
        return {e.supporter for e in self.edges if e.supported == j and e.kind in kinds}

    def supported(self, i: int, kinds=KINDS) -> set[int]:
        return {e.supported for e in self.edges if e.supporter == i and e.kind in kinds}


def _box_gaps(a: Aabb, b: Aabb) -> np.ndarray:
    return np.abs(a.center - b.center) - (a.half_extents + b.half_extents)


def detect_support(parts: Sequence[tuple[int, Aabb]], contact_tol: Optional[float] = None, ground: Optional[int] = None) -> SupportGraph:
    """Directed, labelled support graph from part boxes.

    Boxes closer than ``contact_tol`` are adjacent.  Support flows outward
    from the anchored parts (those resting on y = 0, or the topmost parts when
    nothing touches the ground), so of two adjacent parts the one nearer the
    anchor supports the other.  The label follows the contact face of the
    supported part: -y face gives below, +y face above, anything else side.
    """
    if not parts:
        raise ValueError("need at least one part")
    ids = [int(lab) for lab, _ in parts]
    boxes = [b for _, b in parts]
    if ground is None:
        ground = max(ids) + 1
    if contact_tol is None:
        lo = np.min([b.lo for b in boxes], axis=0)
        hi = np.max([b.hi for b in boxes], axis=0)
        contact_tol = 0.02 * float(np.linalg.norm(hi - lo))
    k = len(parts)

    adj: dict[int, list[int]] = defaultdict(list)
    axis: dict[tuple[int, int], int] = {}
    for a in range(k):
        for b in range(a + 1, k):
            g = _box_gaps(boxes[a], boxes[b])
            if g.max() <= contact_tol:
                adj[a].append(b)
                adj[b].append(a)
                axis[(a, b)] = axis[(b, a)] = int(np.argmax(g))

    grounded = [a for a in range(k) if abs(boxes[a].lo[UP]) <= contact_tol]
    roots = grounded
    if not roots:
        top = max(b.hi[UP] for b in boxes)
        roots = [a for a in range(k) if top - boxes[a].hi[UP] <= contact_tol]
    level = {a: np.inf for a in range(k)}
    q = deque()
    for r in roots:
        level[r] = 0
        q.append(r)
    while q:
        a = q.popleft()
        for b in adj[a]:
            if level[b] == np.inf:
                level[b] = level[a] + 1
                q.append(b)

    edges = [SupportEdge(ground, ids[a], BELOW) for a in grounded]
    for a in range(k):
        for b in adj[a]:
            if b < a:
                continue
            ax = axis[(a, b)]
            if level[a] != level[b]:
                sup, dep = (a, b) if level[a] < level[b] else (b, a)
            elif ax == UP:
                sup, dep = (a, b) if boxes[a].center[UP] <= boxes[b].center[UP] else (b, a)
            else:
                va = np.prod(boxes[a].half_extents)
                vb = np.prod(boxes[b].half_extents)
                sup, dep = (a, b) if va >= vb else (b, a)
            if ax != UP:
                kind = SIDE
            elif boxes[sup].center[UP] <= boxes[dep].center[UP]:
                kind = BELOW
            else:
                kind = ABOVE
            edges.append(SupportEdge(ids[sup], ids[dep], kind))
    edges.sort(key=lambda e: (e.supporter, e.supported))
    return SupportGraph(ids, ground, edges)


def detect_equal_length_groups(g: SupportGraph) -> list[tuple[tuple[int, ...], int]]:
    """Parts with identical supporter and supported sets over vertical edges."""
    vertical = (BELOW, ABOVE)
    buckets: dict[tuple, list[int]] = defaultdict(list)
    for i in g.nodes:
        below = frozenset(g.supporters(i, vertical))
        above = frozenset(g.supported(i, vertical))
        if below and above:
            buckets[(below, above)].append(i)
    groups = [(tuple(sorted(m)), UP) for m in buckets.values() if len(m) > 1]
    groups.sort()
    return groups


@dataclass(frozen=True)
class SupportLookup:
    """(supporter label, supported label) -> sub-structure type for one category."""

    table: Mapping[tuple[str, str], str]

    def __post_init__(self):
        object.__setattr__(self, "table", dict(self.table))

    def __getitem__(self, key: tuple[str, str]) -> str:
        return self.table[key]

    def __contains__(self, key) -> bool:
        return key in self.table

    def get(self, key, default=None):
        return self.table.get(key, default)

    def to_json(self) -> dict:
        return {f"{a}->{b}": k for (a, b), k in sorted(self.table.items())}

    @classmethod
    def from_json(cls, d: Mapping[str, str]) -> "SupportLookup":
        table = {}
        for key, kind in d.items():
            a, b = key.split("->")
            table[(a, b)] = kind
        return cls(table)

    @classmethod
    def from_graphs(cls, graphs: Iterable[tuple[SupportGraph, Sequence[str]]]) -> "SupportLookup":
        """Build from (graph, labels) pairs; the most frequent type wins on conflicts."""
        counts: dict[tuple[str, str], Counter] = defaultdict(Counter)
        for g, labels in graphs:
            name = lambda i: GROUND if i == g.ground else labels[i]  # noqa: E731
            for e in g.edges:
                counts[(name(e.supporter), name(e.supported))][e.kind] += 1
        return cls({k: c.most_common(1)[0][0] for k, c in counts.items()})


# --------------------------------------------------------------------------
# symmetry


@dataclass(frozen=True)
class SymmetryPair:
    i: int
    j: int
    normal: tuple
    d: float

    @property
    def plane(self) -> np.ndarray:
        return np.array([*self.normal, self.d])


def reflect_points(pts: np.ndarray, normal, d: float) -> np.ndarray:
    n = np.asarray(normal, dtype=np.float64)
    s = pts @ n + d
    return pts - 2.0 * s[:, None] * n[None, :]


def _canonical_plane(normal: np.ndarray, point: np.ndarray) -> tuple[tuple, float]:
    n = normal / np.linalg.norm(normal)
    if n[np.argmax(np.abs(n))] < 0:
        n = -n
    n = np.where(np.abs(n) < 1e-15, 0.0, n)
    d = float(-n @ point) + 0.0
    return tuple(float(c) for c in n), d


def _symmetry_points(mesh: TriMesh, samples: int) -> np.ndarray:
    if mesh.n_triangles and samples:
        return np.concatenate([mesh.vertices, sample_surface(mesh, samples, seed=0)])
    return mesh.vertices


def detect_symmetry(parts: Sequence[TriMesh], tau: float = 0.05, samples: int = 256) -> list[SymmetryPair]:
    """Reflection-symmetric part pairs; each part joins at most one pair.

    Global candidates are the three axis planes through the shape's box
    center; local candidates are bisector planes of part-centroid pairs.  A
    pair is accepted when the RMS chamfer between reflected part i and part j
    is below ``tau`` times part j's box diagonal.
    """
    if not parts:
        raise ValueError("need at least one part")
    pts = [_symmetry_points(p, samples) for p in parts]
    boxes = [compute_aabb(p) for p in parts]
    allv = np.concatenate([p.vertices for p in parts])
    center = (allv.min(axis=0) + allv.max(axis=0)) / 2.0
    cents = [p.vertices.mean(axis=0) for p in parts]
    k = len(parts)
    used: set[int] = set()
    out: list[SymmetryPair] = []

    def accept(i, j, normal, d) -> bool:
        thr = tau * max(boxes[j].diagonal, 1e-12)
        return chamfer_distance(reflect_points(pts[i], normal, d), pts[j]) < thr * thr

    for ax in range(3):
        e = np.zeros(3)
        e[ax] = 1.0
        normal, d = _canonical_plane(e, center)
        for i in range(k):
            for j in range(i + 1, k):
                if i in used or j in used:
                    continue
                if accept(i, j, normal, d):
                    out.append(SymmetryPair(i, j, normal, d))
                    used.update((i, j))
    for i in range(k):
        for j in range(i + 1, k):
            if i in used or j in used:
                continue
            delta = cents[j] - cents[i]
            if np.linalg.norm(delta) < 1e-12:
                continue
            normal, d = _canonical_plane(delta, (cents[i] + cents[j]) / 2.0)
            if accept(i, j, normal, d):
                out.append(SymmetryPair(i, j, normal, d))
                used.update((i, j))
    return out


def build_shape_record(
    category: Category,
    part_meshes: Mapping[str, TriMesh],
    latents: Optional[Mapping[str, np.ndarray]] = None,
    contact_tol: Optional[float] = None,
    tau: float = 0.05,
) -> tuple[ShapeRecord, SupportGraph]:
    """Assemble a ShapeRecord from labelled part meshes."""
    n = category.n
    ids = sorted(category.label_id(lab) for lab in part_meshes)
    meshes = [part_meshes[category.labels[i]] for i in ids]
    boxes = [compute_aabb(m) for m in meshes]
    graph = detect_support(list(zip(ids, boxes)), contact_tol, ground=n)
    pairs = detect_symmetry(meshes, tau=tau)
    sym = {}
    for p in pairs:
        sym[ids[p.i]] = p.plane
        sym[ids[p.j]] = p.plane
    parts = []
    for i in range(n):
        if i not in ids:
            parts.append(PartRecord.absent(i, n))
            continue
        box = boxes[ids.index(i)]
        sup = np.zeros(n, bool)
        by = np.zeros(n, bool)
        for e in graph.edges:
            if e.supporter == i and e.supported != n:
                sup[e.supported] = True
            if e.supported == i and e.supporter != n:
                by[e.supporter] = True
        lat = np.zeros(LATENT_DIM) if latents is None else np.asarray(latents[category.labels[i]], dtype=np.float64)
        parts.append(PartRecord(i, True, sup, by, box.center, i in sym, sym.get(i, np.zeros(4)), lat))
    return ShapeRecord(category.name, n, parts, _partner_ids(category)), graph


def save_record(record: ShapeRecord, path, labels: Optional[Sequence[str]] = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record.to_json(labels), f, indent=2, sort_keys=True)
        f.write("\n")


def load_record(path, category: Optional[Category] = None) -> ShapeRecord:
    with open(path, encoding="utf-8") as f:
        return ShapeRecord.from_json(json.load(f), category)

