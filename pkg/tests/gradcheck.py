"""Central finite-difference gradient checking for the VAE models."""

from __future__ import annotations

import numpy as np

from deformbox.mesh import make_box_template
from deformbox.vae.nn import SPVAE, PartVAE

STEP = 1e-5


def small_models():
    """Tiny instances of both VAEs: every layer type, cheap enough to probe densely."""
    part = PartVAE(make_box_template(1).mesh.adjacency, latent_dim=3, hidden=4)
    shape = SPVAE(11, hidden=(7, 5), latent_dim=3)
    return part, shape


def numeric_vs_analytic(model, params, x, eps, lambda1, lambda2, reg_weight, probes_per_tensor, rng):
    """Largest relative error over probed entries, per parameter tensor."""
    _, grads = model.loss_and_grads(params, x, eps, lambda1, lambda2, reg_weight)
    worst = {}
    for name, value in params.items():
        flat = value.reshape(-1)
        idx = rng.choice(flat.size, size=min(probes_per_tensor, flat.size), replace=False)
        analytic = grads[name].reshape(-1)[idx]
        numeric = np.empty(len(idx))
        for k, j in enumerate(idx):
            old = flat[j]
            flat[j] = old + STEP
            up = model.loss_and_grads(params, x, eps, lambda1, lambda2, reg_weight, need_grads=False)[0].total
            flat[j] = old - STEP
            down = model.loss_and_grads(params, x, eps, lambda1, lambda2, reg_weight, need_grads=False)[0].total
            flat[j] = old
            numeric[k] = (up - down) / (2 * STEP)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        worst[name] = float(np.linalg.norm(analytic - numeric) / scale)
    return worst


# isolate each loss term, then all three together
LOSS_SETTINGS = {
    "reconstruction": (1.0, 0.0, 0.0),
    "kl": (0.0, 1.0, 0.0),
    "regularizer": (0.0, 0.0, 0.1),
    "combined": (1.0, 0.5, 0.1),
}


def check_model(model, seed, probes_per_tensor=6, batch=3):
    rng = np.random.default_rng(seed)
    params = {k: v * 1.0 for k, v in model.init(rng).items()}
    for k in params:
        if k.endswith(".b"):
            params[k] = rng.normal(scale=0.1, size=params[k].shape)
    x = rng.normal(scale=0.5, size=(batch,) + model.input_shape)
    eps = rng.standard_normal((batch, model.latent_dim))
    report = {}
    for term, (l1, l2, reg) in LOSS_SETTINGS.items():
        report[term] = numeric_vs_analytic(model, params, x, eps, l1, l2, reg, probes_per_tensor, rng)
    return report
