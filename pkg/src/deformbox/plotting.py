"""Report figures rendered to files (Agg backend, never opens a window)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

plt.rcParams.update({"font.size": 9, "axes.spines.top": False, "axes.spines.right": False, "savefig.dpi": 120})


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curves(history: Sequence[Mapping[str, float]], path, title: str = "training loss") -> Path:
    """One panel per loss term against iteration, log scale where positive."""
    keys = [k for k in ("total", "recon", "kl", "reg") if history and k in history[0]]
    it = np.array([h["iteration"] for h in history])
    fig, axes = plt.subplots(1, max(len(keys), 1), figsize=(3.0 * max(len(keys), 1), 2.6), squeeze=False)
    for ax, k in zip(axes[0], keys):
        y = np.array([h[k] for h in history])
        ax.plot(it, y, lw=0.8)
        if np.all(y > 0):
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_title(k)
    fig.suptitle(title)
    return _save(fig, path)


def plot_layout(before: tuple, after: Optional[tuple], path, names: Optional[Sequence[str]] = None, plane: tuple = (0, 1)) -> Path:
    """Part boxes projected onto a coordinate plane; refined boxes drawn over the originals.

    ``before`` and ``after`` are ``(centers, half_extents)`` arrays of shape (k, 3).
    """
    a, b = plane
    p0, q0 = (np.asarray(v, dtype=np.float64) for v in before)
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    cmap = plt.get_cmap("tab10")
    layouts = [(p0, q0, "--", 0.9)]
    if after is not None:
        layouts.append((np.asarray(after[0], dtype=np.float64), np.asarray(after[1], dtype=np.float64), "-", 1.4))
    for p, q, style, lw in layouts:
        for k in range(len(p)):
            ax.add_patch(Rectangle((p[k, a] - q[k, a], p[k, b] - q[k, b]), 2 * q[k, a], 2 * q[k, b], fill=False, ls=style, lw=lw, ec=cmap(k % 10)))
    for k in range(len(p0)):
        if names is not None:
            ax.annotate(names[k], (p0[k, a], p0[k, b]), fontsize=7, ha="center")
    pts = np.concatenate([p - q for p, q, *_ in layouts] + [p + q for p, q, *_ in layouts])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.05 * float((hi - lo).max() or 1.0)
    ax.set_xlim(lo[a] - pad, hi[a] + pad)
    ax.set_ylim(lo[b] - pad, hi[b] + pad)
    ax.set_aspect("equal")
    ax.set_xlabel("xyz"[a])
    ax.set_ylabel("xyz"[b])
    ax.set_title("layout (dashed: input, solid: refined)" if after is not None else "layout")
    return _save(fig, path)


def plot_distance_matrix(d: np.ndarray, path, title: str = "reference x generated distance") -> Path:
    fig, ax = plt.subplots(figsize=(4.0, 3.4))
    im = ax.imshow(np.asarray(d), cmap="viridis", aspect="auto")
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("generated")
    ax.set_ylabel("reference")
    ax.set_title(title)
    return _save(fig, path)


def plot_parts(meshes: Mapping[str, object], path, plane: tuple = (0, 1)) -> Path:
    """Scatter of every part's vertices projected onto a coordinate plane."""
    a, b = plane
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    for k, (lab, mesh) in enumerate(sorted(meshes.items())):
        v = mesh.vertices
        ax.scatter(v[:, a], v[:, b], s=1.5, label=lab, color=plt.get_cmap("tab10")(k % 10))
    ax.set_aspect("equal")
    if meshes:
        ax.legend(fontsize=6, markerscale=4, frameon=False)
    return _save(fig, path)


__all__ = ["plot_distance_matrix", "plot_layout", "plot_loss_curves", "plot_parts"]
