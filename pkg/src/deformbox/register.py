"""Coarse-to-fine non-rigid fitting of the cube template onto a part mesh.

Each level alternates closest-point correspondences with a sparse linear
solve that pulls vertices toward their correspondences while penalizing the
uniform Laplacian of the step.  The result at one level is prolonged onto the
next finer grid through the cube parameterization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Aabb, BoxTemplate, SurfaceQuery, TriMesh, compute_aabb, make_box_template, prolong, surface_chamfer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistrationConfig:
    levels: Sequence[int] = (10, 20, 40)
    weights: Sequence[float] = (10.0, 3.0, 1.0)
    max_iter: int = 50
    tol: float = 1e-6

    def __post_init__(self):
        levels = tuple(int(m) for m in self.levels)
        weights = tuple(float(w) for w in self.weights)
        if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"levels must be strictly increasing, got {levels}")
        if len(weights) != len(levels):
            raise ValueError("need one regularization weight per level")
        if any(w <= 0 for w in weights):
            raise ValueError("regularization weights must be positive")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "weights", weights)

    def schedule(self, finest: int) -> list[tuple[int, float]]:
        """Levels up to and including ``finest``, each with its weight."""
        out = [(m, w) for m, w in zip(self.levels, self.weights) if m < finest]
        w_last = next((w for m, w in zip(self.levels, self.weights) if m >= finest), self.weights[-1])
        out.append((finest, w_last))
        return out


@dataclass(frozen=True, eq=False)
class FittedPart:
    deformed_box: TriMesh
    source_box: TriMesh
    residual: float
    initial_residual: float
    converged: bool
    level_residuals: list = field(default_factory=list)
    iterations: list = field(default_factory=list)


def _inflate(half: np.ndarray) -> np.ndarray:
    half = np.asarray(half, dtype=np.float64).copy()
    largest = 2.0 * half.max()
    floor = 0.5e-4 * largest if largest > 0 else 0.5e-4
    half[half < floor] = floor
    return half


def init_box(template: BoxTemplate, target_aabb: Aabb) -> TriMesh:
    """Scale and translate the unit template so its AABB equals ``target_aabb``.

    Degenerate axes are inflated to 1e-4 of the largest full extent.
    """
    half = _inflate(target_aabb.half_extents)
    v = target_aabb.center + template.mesh.vertices * (2.0 * half)
    return TriMesh(v, template.mesh.triangles, label=template.mesh.label)


def _fit_level(x: np.ndarray, tmpl: BoxTemplate, query: SurfaceQuery, weight: float, cfg: RegistrationConfig):
    lap = tmpl.mesh.laplacian
    a = (sp.identity(len(x), format="csc") + weight * lap).tocsc()
    lu = splu(a)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        c, _ = query.closest(x)
        rhs = c + weight * (lap @ x)
        xn = lu.solve(rhs)
        disp = float(np.mean(np.linalg.norm(xn - x, axis=1)))
        x = xn
        if disp < cfg.tol:
            converged = True
            break
    return x, it, converged


def fit_box_to_part(template: BoxTemplate, target: TriMesh, cfg: RegistrationConfig | None = None) -> FittedPart:
    """Deform the box template onto ``target``; output keeps the template connectivity."""
    cfg = cfg or RegistrationConfig()
    if target.n_vertices == 0 or target.n_triangles == 0:
        raise ValueError("target mesh is empty")
    box = compute_aabb(target)
    source = init_box(template, box)
    init_res = surface_chamfer(source, target)
    if init_res == 0.0:
        return FittedPart(source, source, 0.0, 0.0, True, [0.0], [0])

    query = SurfaceQuery(target)
    best_x, best_res = source.vertices, init_res
    all_converged = True
    level_res = []
    iters = []
    prev_t = None
    x = None
    for m, w in cfg.schedule(template.m):
        tmpl = template if m == template.m else make_box_template(m)
        if prev_t is None:
            x = init_box(tmpl, box).vertices
        else:
            x = prolong(prev_t, x, tmpl)
        x, n_it, ok = _fit_level(x, tmpl, query, w, cfg)
        all_converged &= ok
        iters.append(n_it)
        res = surface_chamfer(TriMesh(x, tmpl.mesh.triangles), target)
        level_res.append(res)
        log.debug("level m=%d iterations=%d residual=%.3e", m, n_it, res)
        prev_t = tmpl
    if level_res[-1] <= best_res:
        best_x, best_res = x, level_res[-1]
    deformed = TriMesh(best_x, template.mesh.triangles, label=target.label)
    return FittedPart(deformed, source, best_res, init_res, all_converged, level_res, iters)
