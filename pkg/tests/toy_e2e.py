"""Toy end-to-end run shared by the acceptance suite and the slow pipeline tests."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from deformbox.config import desk_partvae, desk_spvae
from deformbox.mesh import make_box_template
from deformbox.pipeline import decode_vector, encode_shape, features_by_type, shape_vectors, train_all_partvaes
from deformbox.synth import make_corpus, table_category
from deformbox.vae import init_partvae, init_spvae, interpolate, reconstruction_error, sample_shape, train


@dataclass
class ToyRun:
    shape_count: int
    part_counts: list
    partvae_reduction: dict  # part type -> 1 - final/initial reconstruction
    spvae_reduction: float
    decoded: list = field(default_factory=list)  # (kind, record, solution)
    seconds: float = 0.0
    variants: list = field(default_factory=list)
    models: tuple = ()


def run_toy(count: int = 240, m: int = 4, seed: int = 0, samples: int = 8, pairs: int = 4) -> ToyRun:
    start = time.perf_counter()
    category = table_category()
    template = make_box_template(m)
    corpus = make_corpus(count, seed=seed, m=m)
    encoded = [encode_shape(category, parts, template) for _, parts in corpus]

    pv_cfg = desk_partvae()
    partvaes, _ = train_all_partvaes(category, encoded, pv_cfg)
    pv_reduction = {}
    for ptype, data in features_by_type(category, encoded).items():
        e0 = reconstruction_error(init_partvae(m, seed=pv_cfg.seed), data)
        pv_reduction[ptype] = 1.0 - reconstruction_error(partvaes[ptype], data) / e0

    x = shape_vectors(category, encoded, partvaes)
    sp_cfg = desk_spvae()
    init = init_spvae(x.shape[1], seed=sp_cfg.seed)
    spvae, _ = train(init, x, sp_cfg)
    sp_reduction = 1.0 - reconstruction_error(spvae, x) / reconstruction_error(init, x)

    run = ToyRun(len(corpus), [len(parts) for _, parts in corpus], pv_reduction, sp_reduction, models=(category, template, partvaes, spvae, x))
    rng = np.random.default_rng(seed)
    vectors = [("sample", v) for v in sample_shape(spvae, rng, samples)]
    legs4 = [k for k, (name, parts) in enumerate(corpus) if "leg_fl" in parts]
    picks = legs4[: 2 * pairs]
    for a, b in zip(picks[0::2], picks[1::2]):
        vectors.append(("midpoint", interpolate(spvae, x[a], x[b], 3)[1]))
    for kind, v in vectors:
        record, _, sol = decode_vector(v, category, template, partvaes, refine=True)
        run.decoded.append((kind, record, sol))
    run.seconds = time.perf_counter() - start
    return run
