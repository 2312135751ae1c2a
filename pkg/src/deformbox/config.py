"""Run configuration shared by the command-line tools."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional

from .register import RegistrationConfig
from .structure import Category
from .vae import VaeConfig


def desk_partvae() -> VaeConfig:
    return VaeConfig(iterations=2000, batch_size=32)


def desk_spvae() -> VaeConfig:
    # KL warm-up keeps the 128-d code from collapsing onto the prior in a short run
    return VaeConfig(iterations=6000, batch_size=32, kl_warmup=2000)


@dataclass
class RunConfig:
    category: Optional[Category] = None
    dataset_dir: Optional[str] = None
    weights_dir: Optional[str] = None
    output_dir: Optional[str] = None
    partvae: VaeConfig = field(default_factory=desk_partvae)
    spvae: VaeConfig = field(default_factory=desk_spvae)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    template_m: int = 4
    alpha: float = 10.0
    eps: float = 0.1
    tau: float = 0.05
    contact_tol: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.template_m < 1:
            raise ValueError("template_m must be >= 1")
        if self.alpha <= 0 or not 0 < self.eps < 0.5:
            raise ValueError("alpha must be positive and eps in (0, 0.5)")

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        out = RunConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        out.seed = seed
        out.partvae = VaeConfig(**{**self.partvae.to_json(), "seed": seed})
        out.spvae = VaeConfig(**{**self.spvae.to_json(), "seed": seed})
        return out

    def to_json(self) -> dict:
        return {
            "category": self.category.to_json() if self.category else None,
            "dataset_dir": self.dataset_dir,
            "weights_dir": self.weights_dir,
            "output_dir": self.output_dir,
            "partvae": self.partvae.to_json(),
            "spvae": self.spvae.to_json(),
            "registration": {
                "levels": list(self.registration.levels),
                "weights": list(self.registration.weights),
                "max_iter": self.registration.max_iter,
                "tol": self.registration.tol,
            },
            "template_m": self.template_m,
            "alpha": self.alpha,
            "eps": self.eps,
            "tau": self.tau,
            "contact_tol": self.contact_tol,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: Mapping, base: Optional[Path] = None) -> "RunConfig":
        """Build from a dict; relative paths resolve against ``base`` and must exist."""
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown RunConfig fields: {sorted(unknown)}")
        kw = dict(d)
        base = Path(base) if base is not None else Path.cwd()

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        cat = kw.get("category")
        if isinstance(cat, str):
            path = resolve(cat)
            if not path.exists():
                raise FileNotFoundError(f"category file {path} does not exist")
            cat = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(cat, Mapping):
            if "n" in cat and int(cat["n"]) != len(cat["labels"]):
                raise ValueError(f"category n={cat['n']} does not match {len(cat['labels'])} labels")
            kw["category"] = Category.from_json(dict(cat))
        for key in ("dataset_dir", "weights_dir"):
            if kw.get(key) is not None:
                path = resolve(kw[key])
                if not path.exists():
                    raise FileNotFoundError(f"{key} {path} does not exist")
                kw[key] = str(path)
        if kw.get("output_dir") is not None:
            kw["output_dir"] = str(resolve(kw["output_dir"]))
        for key, default in (("partvae", desk_partvae), ("spvae", desk_spvae)):
            if key in kw:
                kw[key] = VaeConfig.from_json({**default().to_json(), **kw[key]})
        if "registration" in kw:
            kw["registration"] = RegistrationConfig(**kw["registration"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_json(json.loads(path.read_text(encoding="utf-8")), base=path.parent)


__all__ = ["RunConfig", "desk_partvae", "desk_spvae"]
