"""Adam with a stepwise exponential learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import daxpy


def _axpy(x: np.ndarray, y: np.ndarray, a: float) -> None:
    """y += a * x in place (both flat, contiguous float64)."""
    out = daxpy(x, y, a=a)
    if out is not y:  # BLAS wrapper copied; fall back to numpy
        y += a * x


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in tensor {name!r}")
        self.tensor = name


def learning_rate(t: int, base: float = 1e-3, decay: float = 0.8, interval: int = 1000) -> float:
    return base * decay ** (t // interval)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    t: int,
    base_lr: float = 1e-3,
    decay: float = 0.8,
    interval: int = 1000,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    inplace: bool = False,
) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update at step ``t`` (1-based); returns new params and state.

    With ``inplace`` the parameter and moment arrays are overwritten instead
    of copied, which the training loop uses to avoid large temporaries.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(k)
    for k in params:
        if k not in state.m or state.m[k].shape != np.shape(params[k]):
            raise ValueError(f"optimizer state does not match parameter {k!r}")
    lr = learning_rate(t, base_lr, decay, interval)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    if inplace:
        # bias corrections folded into two scalars: lr/c1 * m / (sqrt(v)/sqrt(c2) + eps)
        #   = (lr sqrt(c2)/c1) * m / (sqrt(v) + eps sqrt(c2))
        step = lr * np.sqrt(c2) / c1
        eps_hat = eps * np.sqrt(c2)
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                continue
            m, v = state.m[k].reshape(-1), state.v[k].reshape(-1)
            gf = np.ascontiguousarray(g).reshape(-1)
            m *= beta1
            _axpy(gf, m, a=1.0 - beta1)
            tmp = np.multiply(gf, gf)
            v *= beta2
            _axpy(tmp, v, a=1.0 - beta2)
            np.sqrt(v, out=tmp)
            tmp += eps_hat
            np.divide(m, tmp, out=tmp)
            _axpy(tmp, p.reshape(-1), a=-step)
        return params, AdamState(state.m, state.v, t)
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            new_p[k], new_m[k], new_v[k] = p, state.m[k], state.v[k]
            continue
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)
