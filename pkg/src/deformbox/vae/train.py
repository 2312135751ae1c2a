"""Training, encoding and generation entry points for PartVAE and SP-VAE."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ..deform import DeformFeatures
from ..mesh import make_box_template
from ..structure import LATENT_DIM, Category, ShapeRecord, assemble_shape_vector, part_length
from .nn import SPVAE, VAE, LatentCode, PartVAE, vae_loss
from .optim import AdamState, adam_step
from .weights import load_weights, save_weights


@dataclass
class VaeConfig:
    lambda1: float = 1.0
    lambda2: float = 0.5
    reg_weight: float = 1e-5
    learning_rate: float = 1e-3
    decay_rate: float = 0.8
    decay_interval: int = 1000
    batch_size: int = 64
    iterations: int = 2000
    seed: int = 0
    latent_dim: Optional[int] = None
    kl_warmup: int = 0  # iterations over which the KL weight ramps linearly up to lambda2

    def __post_init__(self):
        if self.learning_rate <= 0 or self.decay_rate <= 0 or self.decay_interval <= 0:
            raise ValueError("learning rate, decay rate and decay interval must be positive")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if self.kl_warmup < 0:
            raise ValueError("kl_warmup must be >= 0")

    def kl_weight(self, iteration: int) -> float:
        if self.kl_warmup == 0:
            return self.lambda2
        return self.lambda2 * min(1.0, iteration / self.kl_warmup)

    @classmethod
    def full_scale_partvae(cls, **kw) -> "VaeConfig":
        return cls(**{"iterations": 20000, "batch_size": 512, **kw})

    @classmethod
    def full_scale_spvae(cls, **kw) -> "VaeConfig":
        return cls(**{"iterations": 120000, "batch_size": 512, **kw})

    @classmethod
    def from_json(cls, d: Mapping) -> "VaeConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown VaeConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "VaeConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class VaeParams:
    kind: str  # "part" or "shape"
    tensors: dict
    meta: dict = field(default_factory=dict)

    def model(self) -> VAE:
        if self.kind == "part":
            return _part_model(int(self.meta["template_m"]), int(self.meta["latent_dim"]), int(self.meta["hidden"]))
        if self.kind == "shape":
            return _shape_model(int(self.meta["input_dim"]), tuple(int(h) for h in self.meta["hidden"]), int(self.meta["latent_dim"]), float(self.meta["slope"]))
        raise ValueError(f"unknown VAE kind {self.kind!r}")

    def save(self, path) -> None:
        out = {"meta.kind": np.array(0.0 if self.kind == "part" else 1.0)}
        for k, v in self.meta.items():
            out[f"meta.{k}"] = np.asarray(v, dtype=np.float64)
        out.update(self.tensors)
        save_weights(path, out)

    @classmethod
    def load(cls, path) -> "VaeParams":
        raw = load_weights(path)
        kind = "part" if float(raw.pop("meta.kind")) == 0.0 else "shape"
        meta = {}
        for k in [k for k in raw if k.startswith("meta.")]:
            v = raw.pop(k)
            meta[k[5:]] = v.tolist()
        return cls(kind, raw, meta)


@lru_cache(maxsize=8)
def _part_model(m: int, latent: int, hidden: int) -> PartVAE:
    return PartVAE(make_box_template(m).mesh.adjacency, latent, hidden)


@lru_cache(maxsize=8)
def _shape_model(input_dim: int, hidden: tuple, latent: int, slope: float) -> SPVAE:
    return SPVAE(input_dim, hidden, latent, slope)


def init_partvae(template_m: int, seed: int = 0, latent_dim: int = LATENT_DIM, hidden: int = 32) -> VaeParams:
    model = _part_model(template_m, latent_dim, hidden)
    return VaeParams("part", model.init(np.random.default_rng(seed)), {"template_m": template_m, "latent_dim": latent_dim, "hidden": hidden})


def init_spvae(input_dim: int, seed: int = 0, hidden=(1024, 512, 256), latent_dim: int = 128, slope: float = 0.02) -> VaeParams:
    model = _shape_model(input_dim, tuple(hidden), latent_dim, slope)
    meta = {"input_dim": input_dim, "hidden": list(hidden), "latent_dim": latent_dim, "slope": slope}
    return VaeParams("shape", model.init(np.random.default_rng(seed)), meta)


# --------------------------------------------------------------------------
# forward passes


def partvae_forward(params: VaeParams, feats: DeformFeatures, rng: np.random.Generator) -> tuple[DeformFeatures, LatentCode]:
    model = params.model()
    x = model.check_input(feats.data)
    eps = rng.standard_normal((x.shape[0], model.latent_dim))
    out, lat, _ = model.forward(params.tensors, x, eps)
    return DeformFeatures(out[0]), LatentCode(lat.mean[0], lat.logvar[0], lat.z[0])


def spvae_forward(params: VaeParams, x: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, LatentCode]:
    model = params.model()
    xb = model.check_input(x)
    eps = rng.standard_normal((xb.shape[0], model.latent_dim))
    out, lat, _ = model.forward(params.tensors, xb, eps)
    if np.ndim(x) == 1:
        return out[0], LatentCode(lat.mean[0], lat.logvar[0], lat.z[0])
    return out, lat


def encode_mean(params: VaeParams, x: np.ndarray) -> np.ndarray:
    model = params.model()
    xb = model.check_input(x)
    mean, _, _ = model.encode(params.tensors, xb)
    return mean


def decode(params: VaeParams, z: np.ndarray) -> np.ndarray:
    model = params.model()
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return model.decode(params.tensors, z)


def reconstruction_error(params: VaeParams, data: np.ndarray) -> float:
    """Mean over samples of ||x - dec(mean(x))||^2 (no sampling noise)."""
    model = params.model()
    x = model.check_input(data)
    out = model.decode(params.tensors, model.encode(params.tensors, x)[0])
    return float(np.sum((x - out) ** 2) / x.shape[0])


# --------------------------------------------------------------------------
# training


def train(
    params: VaeParams,
    data: np.ndarray,
    cfg: VaeConfig,
    on_step: Optional[Callable[[dict], None]] = None,
) -> tuple[VaeParams, list[dict]]:
    model = params.model()
    data = model.check_input(data)
    n = data.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(cfg.seed + 1)
    tensors = {k: np.array(v, dtype=np.float64) for k, v in params.tensors.items()}
    state = AdamState.zeros_like(tensors)
    bsz = min(cfg.batch_size, n)
    history = []
    for t in range(1, cfg.iterations + 1):
        idx = rng.choice(n, size=bsz, replace=False) if bsz < n else np.arange(n)
        eps = rng.standard_normal((bsz, model.latent_dim))
        terms, grads = model.loss_and_grads(tensors, data[idx], eps, cfg.lambda1, cfg.kl_weight(t), cfg.reg_weight)
        tensors, state = adam_step(tensors, grads, state, t, cfg.learning_rate, cfg.decay_rate, cfg.decay_interval, inplace=True)
        rec = {"iteration": t, **terms.as_dict()}
        history.append(rec)
        if on_step:
            on_step(rec)
    return VaeParams(params.kind, tensors, dict(params.meta)), history


def _stack_features(dataset: Sequence[DeformFeatures] | np.ndarray) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        return dataset.reshape(len(dataset), -1, 9)
    return np.stack([f.data for f in dataset])


def train_partvae(
    dataset: Sequence[DeformFeatures] | np.ndarray,
    cfg: VaeConfig,
    template_m: Optional[int] = None,
    on_step=None,
) -> tuple[VaeParams, list[dict]]:
    """Train one PartVAE for a part type; the template resolution is inferred from V."""
    data = _stack_features(dataset)
    if len(data) == 0:
        raise ValueError("PartVAE dataset is empty")
    v = data.shape[1]
    if template_m is None:
        m = int(round(np.sqrt((v - 2) / 6)))
        if 6 * m * m + 2 != v:
            raise ValueError(f"{v} vertices is not a cube-template count 6m^2+2")
        template_m = m
    init = init_partvae(template_m, seed=cfg.seed, latent_dim=cfg.latent_dim or LATENT_DIM)
    return train(init, data, cfg, on_step)


def fill_latents(
    record: ShapeRecord,
    part_features: Mapping[int, DeformFeatures],
    partvaes: Mapping[str, VaeParams],
    category: Category,
) -> ShapeRecord:
    """Replace every present part's latent with its PartVAE posterior mean."""
    from ..structure import PartRecord

    parts = []
    for p in record.parts:
        if not p.exists:
            parts.append(p)
            continue
        ptype = category.part_types[category.labels[p.label_id]]
        if ptype not in partvaes:
            raise KeyError(f"no trained PartVAE for part type {ptype!r} (label {category.labels[p.label_id]!r})")
        mean = encode_mean(partvaes[ptype], part_features[p.label_id].data)[0]
        parts.append(PartRecord(p.label_id, True, p.supports, p.supported_by, p.center, p.has_symmetry, p.symmetry_plane, mean))
    return ShapeRecord(record.category, record.n, parts, record.symmetry_partner)


def shape_matrix(records: Sequence[ShapeRecord]) -> np.ndarray:
    return np.stack([assemble_shape_vector(r) for r in records])


def train_spvae(
    records: Sequence[ShapeRecord],
    partvaes: Mapping[str, VaeParams],
    cfg: VaeConfig,
    category: Category,
    part_features: Optional[Sequence[Mapping[int, DeformFeatures]]] = None,
    on_step=None,
) -> tuple[VaeParams, list[dict]]:
    """Train SP-VAE on flat shape vectors whose latents come from the trained PartVAEs."""
    if not records:
        raise ValueError("SP-VAE dataset is empty")
    for r in records:
        for i in r.present:
            ptype = category.part_types[category.labels[i]]
            if ptype not in partvaes:
                raise KeyError(f"no trained PartVAE for part type {ptype!r}")
    if part_features is not None:
        records = [fill_latents(r, f, partvaes, category) for r, f in zip(records, part_features)]
    x = shape_matrix(records)
    init = init_spvae(x.shape[1], seed=cfg.seed, latent_dim=cfg.latent_dim or 128)
    if x.shape[1] != category.n * part_length(category.n):
        raise ValueError("record length does not match the category")
    return train(init, x, cfg, on_step)


# --------------------------------------------------------------------------
# generation


def sample_shape(spvae: VaeParams, rng: np.random.Generator, count: int = 1) -> np.ndarray:
    model = spvae.model()
    z = rng.standard_normal((count, model.latent_dim))
    out = model.decode(spvae.tensors, z)
    return out[0] if count == 1 else out


def interpolate(spvae: VaeParams, x_a: np.ndarray, x_b: np.ndarray, steps: int) -> list[np.ndarray]:
    """Decode evenly spaced blends of the two inputs' latent means (both ends included)."""
    if steps < 2:
        raise ValueError("need at least two interpolation steps")
    za = encode_mean(spvae, x_a)[0]
    zb = encode_mean(spvae, x_b)[0]
    alphas = np.linspace(0.0, 1.0, steps)
    z = np.stack([(1.0 - a) * za + a * zb for a in alphas])
    z[0], z[-1] = za, zb
    return [decode(spvae, zk)[0] for zk in z]


__all__ = [
    "VaeConfig",
    "VaeParams",
    "partvae_forward",
    "spvae_forward",
    "vae_loss",
    "train",
    "train_partvae",
    "train_spvae",
    "fill_latents",
    "sample_shape",
    "interpolate",
    "encode_mean",
    "decode",
    "reconstruction_error",
    "init_partvae",
    "init_spvae",
]
