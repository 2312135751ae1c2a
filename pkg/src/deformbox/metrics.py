"""Shape-set metrics: occupancy JSD, and MMD / coverage over pairwise distances.

Shapes are point samples.  The transport distance is an entropic (Sinkhorn)
approximation, so its results carry an ``_approx`` suffix.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .mesh import chamfer_distance


@dataclass(frozen=True)
class ShapeSetMetrics:
    jsd: float
    mmd_cd: float
    cov_cd: float
    mmd_emd_approx: float
    cov_emd_approx: float

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{k} must be a finite non-negative number, got {v}")
        if self.cov_cd > 1 or self.cov_emd_approx > 1:
            raise ValueError("coverage lies in [0, 1]")

    def to_json(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}


def normalize_points(pts: np.ndarray) -> np.ndarray:
    """Center the AABB at the origin and scale its longest side to 1."""
    pts = np.asarray(pts, dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = float((hi - lo).max())
    return (pts - (lo + hi) / 2.0) / (ext if ext > 0 else 1.0)


def _check_set(shapes, name):
    if len(shapes) == 0:
        raise ValueError(f"{name} is empty")


def occupancy_distribution(shapes: Sequence[np.ndarray], resolution: int = 28) -> np.ndarray:
    """Per-shape binary occupancy of [-0.5, 0.5]^3 voxels, summed and normalized."""
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2")
    _check_set(shapes, "shape set")
    counts = np.zeros(resolution**3)
    for pts in shapes:
        cell = np.clip(np.floor((np.asarray(pts, dtype=np.float64) + 0.5) * resolution), 0, resolution - 1).astype(np.int64)
        flat = np.unique(np.ravel_multi_index(cell.T, (resolution,) * 3))
        counts[flat] += 1.0
    total = counts.sum()
    if total == 0:
        raise ValueError("shape set has no points")
    return counts / total


def _kl(p, q):
    m = p > 0
    return float(np.sum(p[m] * np.log(p[m] / q[m])))


def jsd(set_a: Sequence[np.ndarray], set_b: Sequence[np.ndarray], resolution: int = 28) -> float:
    """Jensen-Shannon divergence (natural log) between the sets' occupancy distributions."""
    p = occupancy_distribution(set_a, resolution)
    q = occupancy_distribution(set_b, resolution)
    m = 0.5 * (p + q)
    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def distance_matrix(ref: Sequence[np.ndarray], gen: Sequence[np.ndarray], distance: Callable = chamfer_distance) -> np.ndarray:
    """D[r, g] = distance(ref[r], gen[g])."""
    return np.array([[distance(r, g) for g in gen] for r in ref], dtype=np.float64).reshape(len(ref), len(gen))


def mmd_cov_from_matrix(d: np.ndarray) -> tuple[float, float]:
    """MMD and coverage from a [reference, generated] distance matrix."""
    if d.shape[0] == 0 or d.shape[1] == 0:
        raise ValueError("both sets must be non-empty")
    mmd = float(d.min(axis=1).mean())
    cov = len(set(np.argmin(d, axis=0).tolist())) / d.shape[0]
    return mmd, cov


def mmd_cov(generated: Sequence[np.ndarray], reference: Sequence[np.ndarray], distance: Callable = chamfer_distance) -> tuple[float, float]:
    _check_set(generated, "generated set")
    _check_set(reference, "reference set")
    return mmd_cov_from_matrix(distance_matrix(reference, generated, distance))


def _subsample(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if len(pts) <= k:
        return pts
    return pts[np.sort(rng.choice(len(pts), size=k, replace=False))]


def sinkhorn_emd_approx(a: np.ndarray, b: np.ndarray, reg: float = 0.01, iterations: int = 200, max_points: int = 512, seed: int = 0) -> float:
    """Transport cost of the entropic plan between uniform point clouds (Euclidean ground cost)."""
    rng = np.random.default_rng(seed)
    a = _subsample(np.asarray(a, dtype=np.float64), max_points, rng)
    b = _subsample(np.asarray(b, dtype=np.float64), max_points, rng)
    cost = np.sqrt(np.maximum(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1), 0.0))
    loga = np.full(len(a), -np.log(len(a)))
    logb = np.full(len(b), -np.log(len(b)))
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    k = -cost / reg
    for _ in range(iterations):
        f = reg * (loga - logsumexp(k + g[None, :] / reg, axis=1))
        g = reg * (logb - logsumexp(k + f[:, None] / reg, axis=0))
    plan = np.exp(k + f[:, None] / reg + g[None, :] / reg)
    return float(np.sum(plan * cost))


def compute_metrics(generated: Sequence[np.ndarray], reference: Sequence[np.ndarray], resolution: int = 28, emd: bool = True, seed: int = 0) -> ShapeSetMetrics:
    gen = [normalize_points(g) for g in generated]
    ref = [normalize_points(r) for r in reference]
    j = jsd(gen, ref, resolution)
    mmd_cd, cov_cd = mmd_cov(gen, ref)
    if emd:
        mmd_e, cov_e = mmd_cov(gen, ref, lambda x, y: sinkhorn_emd_approx(x, y, seed=seed))
    else:
        mmd_e, cov_e = 0.0, 0.0
    return ShapeSetMetrics(j, mmd_cd, cov_cd, mmd_e, cov_e)


__all__ = [
    "ShapeSetMetrics",
    "compute_metrics",
    "distance_matrix",
    "jsd",
    "mmd_cov",
    "mmd_cov_from_matrix",
    "normalize_points",
    "occupancy_distribution",
    "sinkhorn_emd_approx",
]
