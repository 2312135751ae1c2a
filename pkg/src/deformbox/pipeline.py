"""Shape-level encode / decode built from the per-module operations."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .deform import DeformFeatures, decode_deformation, encode_deformation
from .mesh import BoxTemplate, TriMesh, compute_aabb, load_obj, make_box_template
from .refine import RefineProblem, RefineSolution, build_problem, solve
from .register import FittedPart, RegistrationConfig, fit_box_to_part
from .structure import LATENT_DIM, Category, ShapeRecord, SupportGraph, build_shape_record, parse_shape_vector
from .vae import VaeConfig, VaeParams, decode, encode_mean, fill_latents, shape_matrix, train_partvae, train_spvae


class MissingWeightsError(KeyError):
    pass


@dataclass
class EncodedShape:
    record: ShapeRecord
    features: dict  # label id -> DeformFeatures
    boxes: dict  # label id -> fitted template mesh
    graph: SupportGraph
    registration: dict = field(default_factory=dict)  # label -> summary


def encode_part(template: BoxTemplate, mesh: TriMesh, cfg: Optional[RegistrationConfig] = None) -> tuple[DeformFeatures, TriMesh, Optional[FittedPart]]:
    """Features of one part; parts that already carry template connectivity skip registration."""
    if mesh.same_connectivity(template.mesh):
        deformed, fitted = mesh, None
    else:
        fitted = fit_box_to_part(template, mesh, cfg)
        deformed = fitted.deformed_box
    return encode_deformation(template.mesh, deformed), deformed, fitted


def encode_shape(
    category: Category,
    parts: Mapping[str, TriMesh],
    template: BoxTemplate,
    partvaes: Optional[Mapping[str, VaeParams]] = None,
    reg_cfg: Optional[RegistrationConfig] = None,
    contact_tol: Optional[float] = None,
    tau: float = 0.05,
) -> EncodedShape:
    if not parts:
        raise ValueError("shape has no parts")
    for lab in parts:
        category.label_id(lab)
    feats, boxes, reg, latents = {}, {}, {}, {}
    for lab, mesh in parts.items():
        f, box, fitted = encode_part(template, mesh, reg_cfg)
        i = category.label_id(lab)
        feats[i], boxes[i] = f, box
        if fitted is not None:
            reg[lab] = {"converged": bool(fitted.converged), "residual": float(fitted.residual), "initial_residual": float(fitted.initial_residual)}
        if partvaes is not None:
            ptype = category.part_types[lab]
            if ptype not in partvaes:
                raise MissingWeightsError(f"no PartVAE weights for part type {ptype!r}")
            latents[lab] = encode_mean(partvaes[ptype], f.data)[0]
        else:
            latents[lab] = np.zeros(LATENT_DIM)
    record, graph = build_shape_record(category, parts, latents, contact_tol, tau)
    return EncodedShape(record, feats, boxes, graph, reg)


def place_part(mesh: TriMesh, center, half=None) -> TriMesh:
    """Move the mesh's AABB center to ``center``; optionally rescale per axis to ``half``."""
    box = compute_aabb(mesh)
    v = mesh.vertices - box.center
    if half is not None:
        cur = box.half_extents
        scale = np.where(cur > 0, np.asarray(half, dtype=np.float64) / np.where(cur > 0, cur, 1.0), 1.0)
        v = v * scale
    return mesh.with_vertices(v + np.asarray(center, dtype=np.float64))


def decode_shape(
    record: ShapeRecord,
    category: Category,
    template: BoxTemplate,
    partvaes: Optional[Mapping[str, VaeParams]] = None,
    part_features: Optional[Mapping[int, DeformFeatures]] = None,
    refine: bool = False,
    alpha: float = 10.0,
    eps: float = 0.1,
) -> tuple[dict[str, TriMesh], Optional[RefineSolution]]:
    """Part meshes for every present part, placed at the recorded centers (then refined if asked)."""
    meshes: dict[int, TriMesh] = {}
    for i in record.present:
        lab = category.labels[i]
        if part_features is not None and i in part_features:
            feats = part_features[i]
        else:
            ptype = category.part_types[lab]
            if partvaes is None or ptype not in partvaes:
                raise MissingWeightsError(f"no PartVAE weights for part type {ptype!r}")
            out = decode(partvaes[ptype], record.parts[i].latent)[0]
            feats = DeformFeatures(out)
        shape = decode_deformation(template.mesh, feats)
        meshes[i] = place_part(TriMesh(shape.vertices, shape.triangles, label=lab), record.parts[i].center)
    sol = None
    if refine and meshes:
        _, sol, meshes = refine_parts(record, meshes, category, alpha, eps)
    return {category.labels[i]: m for i, m in meshes.items()}, sol


def refine_parts(
    record: ShapeRecord, meshes: Mapping[int, TriMesh], category: Category, alpha: float = 10.0, eps: float = 0.1
) -> tuple[RefineProblem, RefineSolution, dict[int, TriMesh]]:
    """Solve the layout refinement and re-place every part box at its refined center and size."""
    prob = build_problem(record, meshes, category.lookup, category, alpha, eps)
    sol = solve(prob)
    placed = {i: place_part(meshes[i], sol.p[k], sol.q[k]) for k, i in enumerate(record.present)}
    return prob, sol, placed


def template_for(m: int) -> BoxTemplate:
    return make_box_template(m)


# --------------------------------------------------------------------------
# dataset-level helpers


def load_shape_dir(path, category: Category) -> dict[str, TriMesh]:
    """Every ``<label>.obj`` in a shape directory; unknown labels are an error."""
    path = Path(path)
    files = sorted(path.glob("*.obj"))
    if not files:
        raise ValueError(f"no .obj parts in {path}")
    parts = {}
    for f in files:
        category.label_id(f.stem)
        parts[f.stem] = load_obj(f, label=f.stem)
    return parts


def load_dataset(root) -> tuple[Category, list[tuple[str, dict[str, TriMesh]]]]:
    """``<root>/category.json`` plus one sub-directory of part OBJs per shape, sorted by name."""
    root = Path(root)
    category = Category.load(root / "category.json")
    shapes = [(d.name, load_shape_dir(d, category)) for d in sorted(root.iterdir()) if d.is_dir()]
    if not shapes:
        raise ValueError(f"dataset {root} contains no shapes")
    return category, shapes


def features_by_type(category: Category, encoded: Sequence[EncodedShape]) -> dict[str, np.ndarray]:
    out: dict[str, list] = {}
    for e in encoded:
        for i, f in sorted(e.features.items()):
            out.setdefault(category.part_types[category.labels[i]], []).append(f.data)
    return {k: np.stack(v) for k, v in sorted(out.items())}


def train_all_partvaes(
    category: Category,
    encoded: Sequence[EncodedShape],
    cfg: VaeConfig,
    part_types: Optional[Sequence[str]] = None,
    on_step: Optional[Callable[[str, dict], None]] = None,
) -> tuple[dict[str, VaeParams], dict[str, list]]:
    """One PartVAE per part type, in sorted type order."""
    data = features_by_type(category, encoded)
    if part_types is not None:
        missing = set(part_types) - set(data)
        if missing:
            raise KeyError(f"no training parts for types {sorted(missing)}")
        data = {k: v for k, v in data.items() if k in part_types}
    models, histories = {}, {}
    for ptype, x in data.items():
        cb = (lambda rec, ptype=ptype: on_step(ptype, rec)) if on_step else None
        models[ptype], histories[ptype] = train_partvae(x, cfg, on_step=cb)
    return models, histories


def shape_vectors(category: Category, encoded: Sequence[EncodedShape], partvaes: Mapping[str, VaeParams]) -> np.ndarray:
    """SP-VAE training matrix: records with PartVAE posterior-mean latents."""
    return shape_matrix([fill_latents(e.record, e.features, partvaes, category) for e in encoded])


def fit_spvae(category, encoded, partvaes, cfg: VaeConfig, on_step=None) -> tuple[VaeParams, list]:
    records = [e.record for e in encoded]
    return train_spvae(records, partvaes, cfg, category, [e.features for e in encoded], on_step)


def decode_vector(
    vector: np.ndarray,
    category: Category,
    template: BoxTemplate,
    partvaes: Mapping[str, VaeParams],
    refine: bool = True,
    alpha: float = 10.0,
    eps: float = 0.1,
) -> tuple[ShapeRecord, dict[str, TriMesh], Optional[RefineSolution]]:
    """Parse an SP-VAE output vector and decode it to placed part meshes."""
    record = parse_shape_vector(vector, category.n, category)
    meshes, sol = decode_shape(record, category, template, partvaes, refine=refine, alpha=alpha, eps=eps)
    return record, meshes, sol


__all__ = [
    "EncodedShape",
    "MissingWeightsError",
    "decode_shape",
    "decode_vector",
    "encode_part",
    "encode_shape",
    "features_by_type",
    "fit_spvae",
    "load_dataset",
    "load_shape_dir",
    "place_part",
    "refine_parts",
    "shape_vectors",
    "template_for",
    "train_all_partvaes",
]
