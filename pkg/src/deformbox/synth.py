"""Synthetic shapes and fixtures for desk-scale runs and tests.

Every synthetic part is a deformed copy of the box template, so it keeps
template connectivity and can be encoded without registration.  Mirror
partners are built as ``R f(R v)`` with ``R`` the reflection, which keeps
vertex order, orientation and a positive Jacobian while making the two parts
exact reflections of each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .mesh import TriMesh, compute_aabb, make_box_template, save_obj
from .refine.problem import RefineProblem, make_problem
from .structure import ABOVE, BELOW, GROUND, SIDE, Category, PartRecord, ShapeRecord, SupportLookup, build_shape_record

TABLE_LABELS = ("top", "leg_fl", "leg_fr", "leg_bl", "leg_br", "pedestal", "panel_l", "panel_r", "shelf")
TABLE_TYPES = {
    "top": "top",
    "leg_fl": "leg",
    "leg_fr": "leg",
    "leg_bl": "leg",
    "leg_br": "leg",
    "pedestal": "pedestal",
    "panel_l": "panel",
    "panel_r": "panel",
    "shelf": "shelf",
}
TABLE_PARTNERS = {"leg_fl": "leg_fr", "leg_bl": "leg_br", "panel_l": "panel_r"}
TABLE_VARIANTS = ("pedestal", "panels", "panels_shelf", "legs4")

CHAIR_LABELS = ("back", "seat", "leg_fl", "leg_fr", "leg_bl", "leg_br", "armrest_l", "armrest_r", "swivel", "stretcher")
AIRPLANE_LABELS = (
    "fuselage",
    "wing_l",
    "wing_r",
    "engine_l",
    "engine_r",
    "htail_l",
    "htail_r",
    "vtail",
    "gear_front",
    "gear_l",
    "gear_r",
    "cockpit",
    "engine_l2",
    "engine_r2",
)


def table_category() -> Category:
    lookup = {(GROUND, lab): BELOW for lab in ("leg_fl", "leg_fr", "leg_bl", "leg_br", "pedestal", "panel_l", "panel_r")}
    for lab in ("leg_fl", "leg_fr", "leg_bl", "leg_br", "pedestal", "panel_l", "panel_r"):
        lookup[(lab, "top")] = BELOW
    lookup[("panel_l", "shelf")] = SIDE
    lookup[("panel_r", "shelf")] = SIDE
    return Category("table", TABLE_LABELS, TABLE_TYPES, TABLE_PARTNERS, SupportLookup(lookup))


# --------------------------------------------------------------------------
# part geometry


@dataclass(frozen=True)
class PartDeform:
    bend: float = 0.0
    twist: float = 0.0
    taper: float = 0.0


def _deform_unit(v: np.ndarray, axis: int, d: PartDeform) -> np.ndarray:
    u1, u2 = (axis + 1) % 3, (axis + 2) % 3
    s = v[:, axis]
    out = v.copy()
    scale = 1.0 + d.taper * s
    a = out[:, u1] * scale
    b = out[:, u2] * scale
    ang = d.twist * s
    c, sn = np.cos(ang), np.sin(ang)
    out[:, u1] = c * a - sn * b + d.bend * (s * s - 0.25)
    out[:, u2] = sn * a + c * b
    return out


def _fit_box(v: np.ndarray, center, half) -> np.ndarray:
    lo, hi = v.min(axis=0), v.max(axis=0)
    mid = (lo + hi) / 2.0
    ext = np.maximum(hi - lo, 1e-12)
    return np.asarray(center) + (v - mid) * (2.0 * np.asarray(half) / ext)


def box_part(m: int, center, half, deform: PartDeform = PartDeform(), axis: Optional[int] = None, mirror_axis: Optional[int] = None, label: Optional[str] = None) -> TriMesh:
    """Template box deformed along ``axis`` and fitted exactly into the given AABB."""
    tmpl = make_box_template(m).mesh
    half = np.asarray(half, dtype=np.float64)
    axis = int(np.argmax(half)) if axis is None else axis
    v = tmpl.vertices
    if mirror_axis is None:
        w = _deform_unit(v, axis, deform)
    else:
        r = np.ones(3)
        r[mirror_axis] = -1.0
        w = _deform_unit(v * r, axis, deform) * r
    return TriMesh(_fit_box(w, center, half), tmpl.triangles, label=label)


def _rand_deform(rng: np.random.Generator, strength: float = 1.0) -> PartDeform:
    return PartDeform(
        bend=strength * rng.uniform(-0.12, 0.12),
        twist=strength * rng.uniform(-0.4, 0.4),
        taper=strength * rng.uniform(-0.3, 0.3),
    )


# --------------------------------------------------------------------------
# tables


def make_table(rng: np.random.Generator, variant: str, m: int = 6) -> dict[str, TriMesh]:
    """One synthetic table with parts resting exactly on each other and on y = 0."""
    if variant not in TABLE_VARIANTS:
        raise ValueError(f"unknown table variant {variant!r}")
    w = rng.uniform(0.5, 0.9)  # half width (x)
    dz = rng.uniform(0.3, 0.6)  # half depth (z)
    h = rng.uniform(0.5, 0.9)  # height of the top's underside
    th = rng.uniform(0.02, 0.05)  # half thickness of the top
    parts = {}
    parts["top"] = box_part(m, (0.0, h + th, 0.0), (w, th, dz), _rand_deform(rng, 0.3), axis=0, label="top")
    if variant == "pedestal":
        r = rng.uniform(0.08, 0.2)
        parts["pedestal"] = box_part(m, (0.0, h / 2, 0.0), (r, h / 2, r), _rand_deform(rng), axis=1, label="pedestal")
    elif variant == "legs4":
        r = rng.uniform(0.02, 0.05)
        inset = rng.uniform(0.0, 0.1)
        ox, oz = w - r - inset * w, dz - r - inset * dz
        d_front = _rand_deform(rng)
        d_back = _rand_deform(rng)
        legs = {"leg_fl": (-ox, oz, d_front), "leg_bl": (-ox, -oz, d_back)}
        for lab, (x, z, d) in legs.items():
            parts[lab] = box_part(m, (x, h / 2, z), (r, h / 2, r), d, axis=1, label=lab)
            partner = TABLE_PARTNERS[lab]
            parts[partner] = box_part(m, (-x, h / 2, z), (r, h / 2, r), d, axis=1, mirror_axis=0, label=partner)
    else:
        t = rng.uniform(0.02, 0.05)
        inset = rng.uniform(0.0, 0.15) * w
        x = w - t - inset
        pd = rng.uniform(0.7, 1.0) * dz
        d = _rand_deform(rng, 0.5)
        parts["panel_l"] = box_part(m, (-x, h / 2, 0.0), (t, h / 2, pd), d, axis=1, label="panel_l")
        parts["panel_r"] = box_part(m, (x, h / 2, 0.0), (t, h / 2, pd), d, axis=1, mirror_axis=0, label="panel_r")
        if variant == "panels_shelf":
            sy = rng.uniform(0.25, 0.45) * h
            st = rng.uniform(0.015, 0.03)
            parts["shelf"] = box_part(m, (0.0, sy, 0.0), (x - t, st, 0.8 * pd), _rand_deform(rng, 0.2), axis=0, label="shelf")
    return parts


def make_corpus(count: int = 240, seed: int = 0, m: int = 6) -> list[tuple[str, dict[str, TriMesh]]]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        variant = TABLE_VARIANTS[k % len(TABLE_VARIANTS)]
        out.append((f"table_{k:04d}", make_table(rng, variant, m)))
    return out


def write_corpus(root, count: int = 240, seed: int = 0, m: int = 6) -> Path:
    """Write ``<root>/table/<shape_id>/<label>.obj`` plus ``category.json``."""
    cat = table_category()
    base = Path(root) / cat.name
    base.mkdir(parents=True, exist_ok=True)
    cat.save(base / "category.json")
    for sid, parts in make_corpus(count, seed, m):
        d = base / sid
        d.mkdir(exist_ok=True)
        for lab, mesh in parts.items():
            save_obj(mesh, d / f"{lab}.obj")
    return base


# --------------------------------------------------------------------------
# support-detection fixtures


def _boxes_to_meshes(boxes: dict, m: int = 2) -> dict[str, TriMesh]:
    return {lab: box_part(m, c, h, label=lab) for lab, (c, h) in boxes.items()}


def chair_fixture(with_back: bool = True, with_arms: bool = True) -> tuple[Category, dict[str, TriMesh], set]:
    boxes = {"seat": ((0.0, 0.45, 0.0), (0.25, 0.05, 0.25))}
    for lab, x, z in (("leg_fl", -0.2, 0.2), ("leg_fr", 0.2, 0.2), ("leg_bl", -0.2, -0.2), ("leg_br", 0.2, -0.2)):
        boxes[lab] = ((x, 0.2, z), (0.03, 0.2, 0.03))
    expected = {(GROUND, lab, BELOW) for lab in ("leg_fl", "leg_fr", "leg_bl", "leg_br")}
    expected |= {(lab, "seat", BELOW) for lab in ("leg_fl", "leg_fr", "leg_bl", "leg_br")}
    if with_back:
        boxes["back"] = ((0.0, 0.8, -0.22), (0.25, 0.3, 0.03))
        expected.add(("seat", "back", BELOW))
    if with_arms:
        boxes["armrest_l"] = ((-0.23, 0.6, 0.05), (0.02, 0.1, 0.15))
        boxes["armrest_r"] = ((0.23, 0.6, 0.05), (0.02, 0.1, 0.15))
        expected |= {("seat", "armrest_l", BELOW), ("seat", "armrest_r", BELOW)}
    partners = {"leg_fl": "leg_fr", "leg_bl": "leg_br", "armrest_l": "armrest_r"}
    lookup = SupportLookup({(a, b): k for a, b, k in expected})
    cat = Category("chair", CHAIR_LABELS, {}, partners, lookup)
    return cat, _boxes_to_meshes(boxes), expected


def airplane_fixture() -> tuple[Category, dict[str, TriMesh], set]:
    boxes = {
        "fuselage": ((0.0, 1.0, 0.0), (0.3, 0.3, 2.0)),
        "gear_front": ((0.0, 0.35, 1.5), (0.05, 0.35, 0.05)),
        "gear_l": ((-0.2, 0.35, -0.3), (0.05, 0.35, 0.05)),
        "gear_r": ((0.2, 0.35, -0.3), (0.05, 0.35, 0.05)),
        "wing_l": ((-1.8, 1.0, 0.0), (1.5, 0.05, 0.5)),
        "wing_r": ((1.8, 1.0, 0.0), (1.5, 0.05, 0.5)),
        "engine_l": ((-1.8, 0.8, 0.1), (0.15, 0.15, 0.4)),
        "engine_r": ((1.8, 0.8, 0.1), (0.15, 0.15, 0.4)),
        "htail_l": ((-0.7, 1.0, -1.8), (0.4, 0.03, 0.2)),
        "htail_r": ((0.7, 1.0, -1.8), (0.4, 0.03, 0.2)),
        "vtail": ((0.0, 1.6, -1.7), (0.03, 0.3, 0.25)),
    }
    expected = {(GROUND, g, BELOW) for g in ("gear_front", "gear_l", "gear_r")}
    expected |= {(g, "fuselage", BELOW) for g in ("gear_front", "gear_l", "gear_r")}
    expected |= {("fuselage", w, SIDE) for w in ("wing_l", "wing_r", "htail_l", "htail_r")}
    expected |= {("fuselage", "vtail", BELOW), ("wing_l", "engine_l", ABOVE), ("wing_r", "engine_r", ABOVE)}
    partners = {"wing_l": "wing_r", "engine_l": "engine_r", "htail_l": "htail_r", "gear_l": "gear_r", "engine_l2": "engine_r2"}
    lookup = SupportLookup({(a, b): k for a, b, k in expected})
    cat = Category("airplane", AIRPLANE_LABELS, {}, partners, lookup)
    return cat, _boxes_to_meshes(boxes), expected


# --------------------------------------------------------------------------
# refinement fixtures


def gapped_table(m: int = 4, gap: float = 0.06, short_leg: float = 0.9, shift: float = 0.7) -> tuple[Category, dict[str, TriMesh], dict[str, TriMesh]]:
    """Clean 4-leg table and a broken copy: the top floats above the legs and one leg is short.

    Returns (category, clean parts, broken parts).  Leg heights in the broken
    copy are ``{short_leg, 1, 1, 1}`` times the clean height, and the top is
    slid sideways by ``shift`` so its center leaves the legs' footprint.
    """
    cat = table_category()
    h, w, dz, th, r = 0.8, 0.6, 0.4, 0.03, 0.04
    ox, oz = w - r, dz - r
    legs = {"leg_fl": (-ox, oz), "leg_fr": (ox, oz), "leg_bl": (-ox, -oz), "leg_br": (ox, -oz)}
    clean = {"top": box_part(m, (0.0, h + th, 0.0), (w, th, dz), label="top")}
    broken = {"top": box_part(m, (shift, h + th + gap, 0.0), (w, th, dz), label="top")}
    for lab, (x, z) in legs.items():
        clean[lab] = box_part(m, (x, h / 2, z), (r, h / 2, r), label=lab)
        lh = h * (short_leg if lab == "leg_fl" else 1.0)
        broken[lab] = box_part(m, (x, lh / 2, z), (r, lh / 2, r), label=lab)
    return cat, clean, broken


def gapped_record(**kw) -> tuple[Category, ShapeRecord, dict[str, TriMesh]]:
    """Structure taken from the clean table, centers and meshes from the broken one."""
    cat, clean, broken = gapped_table(**kw)
    record, _ = build_shape_record(cat, clean)
    parts = []
    for p in record.parts:
        if p.exists:
            center = compute_aabb(broken[cat.labels[p.label_id]]).center
            p = PartRecord(p.label_id, True, p.supports, p.supported_by, center, p.has_symmetry, p.symmetry_plane, p.latent)
        parts.append(p)
    return cat, ShapeRecord(record.category, record.n, parts, record.symmetry_partner), broken


def random_refine_instance(rng: np.random.Generator, max_parts: int = 4, noise: float = 0.15) -> RefineProblem:
    """Perturbed copy of a layout that satisfies all of its relations.

    At most two parts rest on other parts, so there are at most two
    containment pairs; a feasible layout exists by construction.
    """
    eps = 0.1
    k = int(rng.integers(2, max_parts + 1))
    p = np.zeros((k, 3))
    q = np.zeros((k, 3))
    q[0] = rng.uniform(0.2, 0.6, 3)
    p[0] = (0.0, q[0, 1], 0.0)
    supports = [(-1, 0, BELOW)]
    symmetry, groups = [], []

    def on_top(j, base):
        q[j] = rng.uniform(0.1, 0.6, 3)
        inside = rng.random() < 0.5
        for a in (0, 2):
            if inside:
                q[j, a] = min(q[j, a], 0.9 * q[base, a])
                room = q[base, a] - q[j, a]
            else:
                q[j, a] = max(q[j, a], 1.1 * q[base, a])
                room = q[j, a] - q[base, a]
            p[j, a] = p[base, a] + rng.uniform(-0.5, 0.5) * min(room, q[base, a])
        p[j, 1] = p[base, 1] + q[base, 1] + q[j, 1] - 1.5 * eps * q[j, 1]
        supports.append((base, j, BELOW))

    def beside(j, base, side):
        q[j] = rng.uniform(0.1, 0.4, 3)
        for a in (1, 2):
            q[j, a] = min(q[j, a], 0.9 * q[base, a])
            p[j, a] = p[base, a] + rng.uniform(-0.5, 0.5) * (q[base, a] - q[j, a])
        q[j, 0] = max(q[j, 0], 0.5 * q[base, 0])
        p[j, 0] = p[base, 0] + side * (q[base, 0] + q[j, 0] - 1.5 * eps * q[j, 0])
        supports.append((base, j, SIDE))

    kinds = []
    if k >= 2:
        kinds.append("stack" if rng.random() < 0.6 else "side")
    if k >= 3:
        kinds.append(rng.choice(["stack", "side", "ground"]))
    if k >= 4:
        kinds.append("ground")
    for idx, kind in enumerate(kinds, start=1):
        if kind == "stack":
            on_top(idx, int(rng.integers(0, idx)) if idx > 1 and kinds[0] != "side" else 0)
        elif kind == "side":
            beside(idx, 0, 1 if idx == 1 else -1)
            if idx == 2 and kinds[0] == "side":
                # mirror the first side part through the base's center plane
                q[2] = q[1]
                p[2] = p[1]
                p[2, 0] = 2 * p[0, 0] - p[1, 0]
                symmetry.append((1, 2, (1.0, 0.0, 0.0), -p[0, 0]))
        else:
            q[idx] = rng.uniform(0.1, 0.4, 3)
            q[idx, 1] = q[0, 1]
            p[idx] = (q[0, 0] + q[idx, 0] + rng.uniform(0.3, 1.0), q[idx, 1], rng.uniform(-0.5, 0.5))
            supports.append((-1, idx, BELOW))
            groups.append(((0, idx), 1))
    target = make_problem(p, q, supports, symmetry, groups)
    pn = p + noise * rng.standard_normal(p.shape) * q.mean()
    qn = q * (1.0 + noise * rng.uniform(-1.0, 1.0, q.shape))
    return target.with_layout(pn, qn)


# --------------------------------------------------------------------------
# other meshes


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    t = (1.0 + 5**0.5) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=np.float64)
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    )
    verts = list(v / np.linalg.norm(v, axis=1, keepdims=True))
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                c = verts[a] + verts[b]
                verts.append(c / np.linalg.norm(c))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = np.array(nf)
    return TriMesh(np.array(verts) * radius, f, label="sphere")


__all__ = [
    "AIRPLANE_LABELS",
    "CHAIR_LABELS",
    "PartDeform",
    "TABLE_LABELS",
    "TABLE_VARIANTS",
    "airplane_fixture",
    "box_part",
    "chair_fixture",
    "gapped_table",
    "icosphere",
    "make_corpus",
    "make_table",
    "random_refine_instance",
    "table_category",
    "write_corpus",
]
