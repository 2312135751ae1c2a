"""Layout refinement problem: boxes, relations, and their linear constraints.

Decision vector layout: for part ``i`` the entries ``6i .. 6i+2`` hold the
refined center and ``6i+3 .. 6i+5`` the refined half-extents.  All
constraints are linear; the containment pairs carry binary indicators that
only enter through the right-hand side once fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..mesh import TriMesh, compute_aabb
from ..structure import (
    ABOVE,
    BELOW,
    GROUND,
    KINDS,
    SIDE,
    UP,
    Category,
    ShapeRecord,
    SupportEdge,
    SupportGraph,
    SupportLookup,
    detect_equal_length_groups,
)

FAMILIES = ("symmetry", "equal_length", "support_overlap", "ground_contact", "containment", "stable_support", "nonnegative_size")


class LookupMissError(KeyError):
    def __init__(self, pairs):
        self.pairs = list(pairs)
        super().__init__("no support sub-structure for " + ", ".join(f"{a}->{b}" for a, b in self.pairs))


@dataclass(frozen=True)
class SymmetryConstraint:
    i: int
    j: int
    normal: tuple
    d: float


@dataclass(frozen=True)
class SupportConstraint:
    """``supporter`` holds up ``supported`` along ``axis``.

    ``sign`` is +1 when the supported part lies on the positive side of the
    supporter along the axis.  ``supporter == -1`` stands for the ground.
    """

    supporter: int
    supported: int
    kind: str
    axis: int
    sign: int

    @property
    def from_ground(self) -> bool:
        return self.supporter < 0


@dataclass(frozen=True)
class StableConstraint:
    """Center of ``supported`` must stay inside the union of its supporters' footprints."""

    supported: int
    axis: int
    lower: int  # supporter giving the lowest min face
    upper: int  # supporter giving the highest max face


@dataclass
class Row:
    coef: np.ndarray
    rhs: float
    family: str
    equality: bool


@dataclass
class RefineProblem:
    p: np.ndarray
    q: np.ndarray
    symmetry: list = field(default_factory=list)
    equal_length: list = field(default_factory=list)  # (members tuple, axis)
    supports: list = field(default_factory=list)
    stable: list = field(default_factory=list)
    alpha: float = 10.0
    eps: float = 0.1
    big_m: Optional[float] = None
    names: Optional[list] = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1, 3)
        self.q = np.asarray(self.q, dtype=np.float64).reshape(-1, 3)
        if self.p.shape != self.q.shape:
            raise ValueError("p and q must both be (parts, 3)")
        if np.any(self.q < 0):
            raise ValueError("half-extents must be non-negative")
        if self.alpha <= 0 or not (0 < self.eps < 0.5):
            raise ValueError("alpha must be positive and eps in (0, 0.5)")
        k = self.num_parts
        for members, axis in self.equal_length:
            if axis not in (0, 1, 2) or any(not 0 <= m < k for m in members):
                raise ValueError(f"bad equal-length group {members} on axis {axis}")
        for s in self.supports:
            if s.axis not in (0, 1, 2) or s.sign not in (-1, 1) or not 0 <= s.supported < k or s.supporter >= k:
                raise ValueError(f"bad support constraint {s}")
        for s in self.symmetry:
            if not (0 <= s.i < k and 0 <= s.j < k) or s.i == s.j:
                raise ValueError(f"bad symmetry pair {s}")
        if self.big_m is None:
            lo = (self.p - self.q).min(axis=0)
            hi = (self.p + self.q).max(axis=0)
            self.big_m = 100.0 * max(float(np.linalg.norm(hi - lo)), 1e-9)
        if self.num_parts:
            extent = float(np.max((self.p + self.q).max(axis=0) - (self.p - self.q).min(axis=0)))
            if self.big_m <= 2 * extent:
                raise ValueError("big-M constant must exceed twice the layout extent")

    @property
    def num_parts(self) -> int:
        return len(self.p)

    @property
    def num_vars(self) -> int:
        return 6 * self.num_parts

    @property
    def containment_edges(self) -> list[int]:
        """Indices into ``supports`` that carry a containment indicator pair."""
        return [k for k, s in enumerate(self.supports) if not s.from_ground]

    @property
    def num_binary(self) -> int:
        return 2 * len(self.containment_edges)

    # -- objective ---------------------------------------------------------

    def x0(self) -> np.ndarray:
        return np.concatenate([self.p, self.q], axis=1).ravel()

    def hessian_diag(self) -> np.ndarray:
        return np.tile(np.array([2.0, 2.0, 2.0] + [2.0 * self.alpha] * 3), self.num_parts)

    def objective(self, x: np.ndarray) -> float:
        d = (np.asarray(x) - self.x0()).reshape(-1, 6)
        return float(np.sum(d[:, :3] ** 2) + self.alpha * np.sum(d[:, 3:] ** 2))

    # -- constraints -------------------------------------------------------

    def _P(self, i, k):
        return 6 * i + k

    def _Q(self, i, k):
        return 6 * i + 3 + k

    def _row(self, family, equality, rhs, entries):
        c = np.zeros(self.num_vars)
        for idx, val in entries:
            c[idx] += val
        return Row(c, float(rhs), family, equality)

    def base_rows(self) -> list[Row]:
        """Every constraint except the containment blocks."""
        P, Q = self._P, self._Q
        rows: list[Row] = []
        for s in self.symmetry:
            n = np.asarray(s.normal, dtype=np.float64)
            ents = [(P(s.i, k), 0.5 * n[k]) for k in range(3)] + [(P(s.j, k), 0.5 * n[k]) for k in range(3)]
            rows.append(self._row("symmetry", True, -s.d, ents))
            pivot = int(np.argmax(np.abs(n)))
            for r in range(3):
                if r == pivot:
                    continue
                r1, r2 = (r + 1) % 3, (r + 2) % 3
                # component r of (p_i - p_j) x n
                ents = [(P(s.i, r1), n[r2]), (P(s.i, r2), -n[r1]), (P(s.j, r1), -n[r2]), (P(s.j, r2), n[r1])]
                rows.append(self._row("symmetry", True, 0.0, ents))
            for k in range(3):
                rows.append(self._row("symmetry", True, 0.0, [(Q(s.i, k), 1.0), (Q(s.j, k), -1.0)]))
        for members, t in self.equal_length:
            for m in members[1:]:
                rows.append(self._row("equal_length", True, 0.0, [(Q(members[0], t), 1.0), (Q(m, t), -1.0)]))
        eps = self.eps
        for s in self.supports:
            j, t = s.supported, s.axis
            if s.from_ground:
                rows.append(self._row("ground_contact", True, 0.0, [(P(j, UP), 1.0), (Q(j, UP), -1.0)]))
                continue
            i, sg = s.supporter, s.sign
            # sg * (facing face of i - near face of j) lies in [eps q_j, 2 eps q_j]
            gap = [(P(i, t), sg), (Q(i, t), 1.0), (P(j, t), -sg), (Q(j, t), 1.0)]
            rows.append(self._row("support_overlap", False, 0.0, gap + [(Q(j, t), -eps)]))
            rows.append(self._row("support_overlap", False, 0.0, [(a, -v) for a, v in gap] + [(Q(j, t), 2 * eps)]))
        for st in self.stable:
            j, l = st.supported, st.axis
            rows.append(self._row("stable_support", False, 0.0, [(P(j, l), 1.0), (P(st.lower, l), -1.0), (Q(st.lower, l), 1.0)]))
            rows.append(self._row("stable_support", False, 0.0, [(P(st.upper, l), 1.0), (Q(st.upper, l), 1.0), (P(j, l), -1.0)]))
        for i in range(self.num_parts):
            for k in range(3):
                rows.append(self._row("nonnegative_size", False, 0.0, [(Q(i, k), 1.0)]))
        return rows

    def containment_rows(self, edge: int, which: int, delta: int) -> list[Row]:
        """Block ``which`` (1: supported inside supporter, 2: the reverse) with its indicator fixed."""
        s = self.supports[edge]
        inner, outer = (s.supported, s.supporter) if which == 1 else (s.supporter, s.supported)
        P, Q = self._P, self._Q
        rows = []
        for l in (a for a in range(3) if a != s.axis):
            # outer.lo <= inner.lo  and  inner.hi <= outer.hi, each relaxed by M*delta
            rows.append(self._row("containment", False, -self.big_m * delta, [(P(inner, l), 1.0), (Q(inner, l), -1.0), (P(outer, l), -1.0), (Q(outer, l), 1.0)]))
            rows.append(self._row("containment", False, -self.big_m * delta, [(P(outer, l), 1.0), (Q(outer, l), 1.0), (P(inner, l), -1.0), (Q(inner, l), -1.0)]))
        return rows

    # -- transforms --------------------------------------------------------

    def with_layout(self, p, q) -> "RefineProblem":
        """Same relations, new starting layout."""
        return RefineProblem(p, q, list(self.symmetry), list(self.equal_length), list(self.supports), list(self.stable), self.alpha, self.eps, self.big_m, self.names)

    def to_json(self) -> dict:
        return {
            "p": self.p.tolist(),
            "q": self.q.tolist(),
            "names": self.names,
            "alpha": self.alpha,
            "eps": self.eps,
            "big_m": self.big_m,
            "symmetry": [{"i": s.i, "j": s.j, "normal": list(s.normal), "d": s.d} for s in self.symmetry],
            "equal_length": [{"members": list(m), "axis": t} for m, t in self.equal_length],
            "supports": [{"supporter": s.supporter, "supported": s.supported, "kind": s.kind, "axis": s.axis, "sign": s.sign} for s in self.supports],
            "stable": [{"supported": s.supported, "axis": s.axis, "lower": s.lower, "upper": s.upper} for s in self.stable],
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "RefineProblem":
        return cls(
            np.array(d["p"], dtype=float),
            np.array(d["q"], dtype=float),
            [SymmetryConstraint(int(s["i"]), int(s["j"]), tuple(float(v) for v in s["normal"]), float(s["d"])) for s in d.get("symmetry", [])],
            [(tuple(int(m) for m in g["members"]), int(g["axis"])) for g in d.get("equal_length", [])],
            [SupportConstraint(int(s["supporter"]), int(s["supported"]), s["kind"], int(s["axis"]), int(s["sign"])) for s in d.get("supports", [])],
            [StableConstraint(int(s["supported"]), int(s["axis"]), int(s["lower"]), int(s["upper"])) for s in d.get("stable", [])],
            float(d.get("alpha", 10.0)),
            float(d.get("eps", 0.1)),
            d.get("big_m"),
            d.get("names"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RefineProblem":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


# --------------------------------------------------------------------------
# construction helpers


def side_axis(p: np.ndarray, q: np.ndarray, i: int, j: int) -> int:
    """Horizontal axis whose perpendicular faces of the two boxes overlap the most."""
    best, best_score = 0, None
    for t in (0, 2):
        others = [a for a in range(3) if a != t]
        area = 1.0
        for a in others:
            lo = max(p[i, a] - q[i, a], p[j, a] - q[j, a])
            hi = min(p[i, a] + q[i, a], p[j, a] + q[j, a])
            area *= max(hi - lo, 0.0)
        # break ties by center separation along the candidate axis
        score = (area, abs(p[j, t] - p[i, t]))
        if best_score is None or score > best_score:
            best, best_score = t, score
    return best


def support_constraint(p, q, supporter: int, supported: int, kind: str) -> SupportConstraint:
    if kind not in KINDS:
        raise ValueError(f"unknown sub-structure {kind!r}")
    if supporter < 0:
        return SupportConstraint(-1, supported, BELOW, UP, 1)
    if kind == BELOW:
        return SupportConstraint(supporter, supported, kind, UP, 1)
    if kind == ABOVE:
        return SupportConstraint(supporter, supported, kind, UP, -1)
    t = side_axis(p, q, supporter, supported)
    return SupportConstraint(supporter, supported, kind, t, 1 if p[supported, t] >= p[supporter, t] else -1)


def stable_constraints(p, q, supports: Sequence[SupportConstraint]) -> list[StableConstraint]:
    """Footprint bounds for parts resting on other parts (ground contact excluded)."""
    by_part: dict[int, list[int]] = {}
    for s in supports:
        if s.kind == BELOW and not s.from_ground:
            by_part.setdefault(s.supported, []).append(s.supporter)
    out = []
    for j in sorted(by_part):
        sup = sorted(set(by_part[j]))
        for l in (0, 2):
            lower = min(sup, key=lambda i: (p[i, l] - q[i, l], i))
            upper = max(sup, key=lambda i: (p[i, l] + q[i, l], -i))
            out.append(StableConstraint(j, l, lower, upper))
    return out


def make_problem(
    p,
    q,
    supports: Sequence[tuple[int, int, str]] = (),
    symmetry: Sequence[tuple[int, int, Sequence[float], float]] = (),
    equal_length: Sequence[tuple[Sequence[int], int]] = (),
    alpha: float = 10.0,
    eps: float = 0.1,
    big_m: Optional[float] = None,
    names=None,
    stable: bool = True,
) -> RefineProblem:
    """Problem from raw boxes and (supporter, supported, kind) triples; supporter -1 is the ground."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    sc = [support_constraint(p, q, a, b, k) for a, b, k in supports]
    sym = []
    for i, j, n, d in symmetry:
        n = np.asarray(n, dtype=np.float64)
        nrm = np.linalg.norm(n)
        sym.append(SymmetryConstraint(int(i), int(j), tuple(float(c) for c in n / nrm), float(d) / float(nrm)))
    groups = [(tuple(int(m) for m in g), int(t)) for g, t in equal_length]
    st = stable_constraints(p, q, sc) if stable else []
    return RefineProblem(p, q, sym, groups, sc, st, alpha, eps, big_m, names)


def build_problem(
    shape: ShapeRecord,
    decoded: Mapping[int, TriMesh] | Sequence[TriMesh],
    lookup: SupportLookup,
    category: Category,
    alpha: float = 10.0,
    eps: float = 0.1,
) -> RefineProblem:
    """Refinement problem for a decoded shape.

    Centers come from the record, half-extents from the decoded meshes'
    boxes.  Support edges are the ones both endpoints agree on; their types
    come from the category lookup.  A part with no recorded supporter is
    tied to the ground when the lookup says its label stands on the ground.
    """
    present = shape.present
    if isinstance(decoded, Mapping):
        meshes = dict(decoded)
    else:
        meshes = dict(zip(present, decoded))
    missing = [category.labels[i] for i in present if i not in meshes]
    if missing:
        raise ValueError(f"no decoded geometry for parts {missing}")
    slot = {lab: k for k, lab in enumerate(present)}
    p = np.stack([shape.parts[i].center for i in present]) if present else np.zeros((0, 3))
    q = np.stack([compute_aabb(meshes[i]).half_extents for i in present]) if present else np.zeros((0, 3))
    if present:
        lo, hi = (p - q).min(axis=0), (p + q).max(axis=0)
        q = np.maximum(q, 1e-6 * float(np.linalg.norm(hi - lo)))

    labels = category.labels
    edges = shape.support_edges()
    miss = [(labels[a], labels[b]) for a, b in edges if (labels[a], labels[b]) not in lookup]
    if miss:
        raise LookupMissError(miss)
    triples = [(slot[a], slot[b], lookup[(labels[a], labels[b])]) for a, b in edges]
    has_support = {b for a, b, _ in triples}
    grounded = [i for i in present if slot[i] not in has_support and lookup.get((GROUND, labels[i])) == BELOW]
    triples = [(-1, slot[i], BELOW) for i in grounded] + triples

    ground_id = len(present)
    graph = SupportGraph(
        tuple(range(len(present))),
        ground_id,
        [SupportEdge(ground_id if a < 0 else a, b, k) for a, b, k in triples],
    )
    groups = detect_equal_length_groups(graph)

    sym, seen = [], set()
    for i in present:
        j = category.partner_id(i)
        if j is None or j not in slot or not shape.parts[j].exists:
            continue
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        src = shape.parts[i] if shape.parts[i].has_symmetry else shape.parts[j] if shape.parts[j].has_symmetry else None
        if src is None:
            continue
        seen.add(key)
        sym.append((slot[key[0]], slot[key[1]], src.plane_normal, src.plane_offset))
    return make_problem(p, q, triples, sym, groups, alpha, eps, names=[labels[i] for i in present])


__all__ = [
    "FAMILIES",
    "LookupMissError",
    "RefineProblem",
    "Row",
    "StableConstraint",
    "SupportConstraint",
    "SymmetryConstraint",
    "build_problem",
    "make_problem",
    "side_axis",
    "stable_constraints",
    "support_constraint",
]
