"""Numpy layers with hand-written backward passes and the two VAE models.

Parameters live in a flat ``dict[str, ndarray]``; layers only hold structure
(names, shapes, fixed adjacency), so the same model object can evaluate any
parameter set.  All arrays are float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg.blas import daxpy

LEAKY_SLOPE = 0.02
DENSE_MEAN_MAX_VERTICES = 3000  # below this the neighbour-mean operator is stored densely


# activations: forward(x) -> y, derivative expressed via (x, y)
def _act(name: str, slope: float = LEAKY_SLOPE):
    if name == "linear":
        return (lambda x: x), (lambda x, y, g: g)
    if name == "tanh":
        return np.tanh, (lambda x, y, g: g * (1.0 - y * y))
    if name == "leaky_relu":
        return (lambda x: np.where(x > 0, x, slope * x)), (lambda x, y, g: np.where(x > 0, g, slope * g))
    raise ValueError(f"unknown activation {name!r}")


def glorot(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-lim, lim, size=(d_out, d_in))


class Dense:
    def __init__(self, name: str, d_in: int, d_out: int, act: str = "linear", slope: float = LEAKY_SLOPE):
        self.name, self.d_in, self.d_out, self.act_name = name, d_in, d_out, act
        self._f, self._df = _act(act, slope)

    @property
    def shapes(self) -> dict:
        return {f"{self.name}.W": (self.d_out, self.d_in), f"{self.name}.b": (self.d_out,)}

    def init(self, rng) -> dict:
        return {f"{self.name}.W": glorot(rng, self.d_out, self.d_in), f"{self.name}.b": np.zeros(self.d_out)}

    def forward(self, params, x):
        pre = x @ params[f"{self.name}.W"].T + params[f"{self.name}.b"]
        y = self._f(pre)
        return y, (x, pre, y)

    def backward(self, params, cache, g):
        x, pre, y = cache
        g = self._df(pre, y, g)
        grads = {f"{self.name}.W": g.T @ x, f"{self.name}.b": g.sum(axis=0)}
        return g @ params[f"{self.name}.W"], grads


class MeshConv:
    """f'_v = W_point f_v + W_neigh mean(f_u, u in N(v)) + b over a fixed mesh graph."""

    def __init__(self, name: str, adjacency: sp.spmatrix, d_in: int, d_out: int, act: str = "linear"):
        self.name, self.d_in, self.d_out, self.act_name = name, d_in, d_out, act
        a = sp.csr_matrix(adjacency, dtype=np.float64)
        deg = np.asarray(a.sum(axis=1)).ravel()
        deg[deg == 0] = 1.0
        mean_op = sp.diags(1.0 / deg) @ a
        self.n_vertices = a.shape[0]
        self.dense = self.n_vertices <= DENSE_MEAN_MAX_VERTICES
        if self.dense:
            self.mean_op = mean_op.toarray()
            self.mean_op_t = np.ascontiguousarray(self.mean_op.T)
        else:
            self.mean_op = mean_op.tocsr()
            self.mean_op_t = mean_op.T.tocsr()
        self._f, self._df = _act(act)

    @property
    def shapes(self) -> dict:
        return {
            f"{self.name}.W_point": (self.d_out, self.d_in),
            f"{self.name}.W_neigh": (self.d_out, self.d_in),
            f"{self.name}.b": (self.d_out,),
        }

    def init(self, rng) -> dict:
        return {
            f"{self.name}.W_point": glorot(rng, self.d_out, self.d_in),
            f"{self.name}.W_neigh": glorot(rng, self.d_out, self.d_in),
            f"{self.name}.b": np.zeros(self.d_out),
        }

    def _apply(self, op, x):
        if self.dense:
            return np.matmul(op, x)
        b, v, c = x.shape
        y = op @ x.transpose(1, 0, 2).reshape(v, b * c)
        return y.reshape(v, b, c).transpose(1, 0, 2)

    @staticmethod
    def _mix(x, w):
        # (B, V, d_in) x (d_out, d_in)^T as one 2-D product
        return (x.reshape(-1, x.shape[-1]) @ w.T).reshape(x.shape[:-1] + (w.shape[0],))

    def forward(self, params, x):
        nx = self._apply(self.mean_op, x)
        pre = self._mix(x, params[f"{self.name}.W_point"]) + self._mix(nx, params[f"{self.name}.W_neigh"]) + params[f"{self.name}.b"]
        y = self._f(pre)
        return y, (x, nx, pre, y)

    def backward(self, params, cache, g):
        x, nx, pre, y = cache
        g = self._df(pre, y, g)
        g2 = g.reshape(-1, self.d_out)
        grads = {
            f"{self.name}.W_point": g2.T @ x.reshape(-1, self.d_in),
            f"{self.name}.W_neigh": g2.T @ nx.reshape(-1, self.d_in),
            f"{self.name}.b": g2.sum(axis=0),
        }
        gx = self._mix(g, params[f"{self.name}.W_point"].T) + self._apply(self.mean_op_t, self._mix(g, params[f"{self.name}.W_neigh"].T))
        return gx, grads


class Reshape:
    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(shape)
        self.shapes = {}

    def init(self, rng):
        return {}

    def forward(self, params, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, params, cache, g):
        return g.reshape(cache), {}


def _run(layers, params, x):
    caches = []
    for layer in layers:
        x, c = layer.forward(params, x)
        caches.append(c)
    return x, caches


def _back(layers, params, caches, g, grads):
    for layer, c in zip(reversed(layers), reversed(caches)):
        g, gr = layer.backward(params, c, g)
        for k, v in gr.items():
            grads[k] = grads[k] + v if k in grads else v
    return g


@dataclass
class LatentCode:
    mean: np.ndarray
    logvar: np.ndarray
    z: np.ndarray


@dataclass
class LossTerms:
    total: float
    recon: float
    kl: float
    reg: float

    def as_dict(self) -> dict:
        return {"total": self.total, "recon": self.recon, "kl": self.kl, "reg": self.reg}


class VAE:
    """Encoder stack -> dense head (mean, logvar) -> reparameterize -> decoder stack."""

    kind = "generic"

    def __init__(self, encoder, head: Dense, decoder, input_shape: tuple, latent_dim: int):
        self.encoder = list(encoder)
        self.head = head
        self.decoder = list(decoder)
        self.input_shape = tuple(input_shape)
        self.latent_dim = latent_dim

    @property
    def layers(self):
        return self.encoder + [self.head] + self.decoder

    @property
    def shapes(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.shapes)
        return out

    def init(self, rng: np.random.Generator) -> dict:
        params = {}
        for layer in self.layers:
            params.update(layer.init(rng))
        return params

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            if x.shape == self.input_shape:
                return x[None]
            raise ValueError(f"input shape {x.shape} does not match model input {self.input_shape}")
        return x

    def encode(self, params, x):
        h, c_enc = _run(self.encoder, params, x)
        h2, c_head = self.head.forward(params, h)
        return h2[:, : self.latent_dim], h2[:, self.latent_dim :], (c_enc, c_head)

    def decode(self, params, z):
        return _run(self.decoder, params, z)[0]

    def forward(self, params, x, eps):
        x = self.check_input(x)
        mean, logvar, cenc = self.encode(params, x)
        z = mean + np.exp(0.5 * logvar) * eps
        out, cdec = _run(self.decoder, params, z)
        return out, LatentCode(mean, logvar, z), (cenc, cdec, eps)

    def loss_and_grads(self, params, x, eps, lambda1: float, lambda2: float, reg_weight: float, need_grads: bool = True):
        x = self.check_input(x)
        out, lat, (cenc, cdec, eps) = self.forward(params, x, eps)
        terms = vae_loss(x, out, lat, lambda1, lambda2, reg_weight, params)
        if not need_grads:
            return terms, None
        b = x.shape[0]
        grads: dict = {}
        g_out = lambda1 * 2.0 * (out - x) / b
        g_z = _back(self.decoder, params, cdec, g_out, grads)
        std = np.exp(0.5 * lat.logvar)
        g_mean = g_z + lambda2 * lat.mean / b
        g_logvar = g_z * eps * 0.5 * std + lambda2 * 0.5 * (np.exp(lat.logvar) - 1.0) / b
        c_enc, c_head = cenc
        g_h, gr = self.head.backward(params, c_head, np.concatenate([g_mean, g_logvar], axis=1))
        grads.update(gr)
        _back(self.encoder, params, c_enc, g_h, grads)
        if reg_weight:
            for k in params:
                if is_weight(k):
                    g = grads[k]
                    flat = g.reshape(-1)
                    if daxpy(params[k].reshape(-1), flat, a=2.0 * reg_weight) is not flat:
                        g += (2.0 * reg_weight) * params[k]
        return terms, grads


def is_weight(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("W")


def kl_divergence(mean: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """Per-sample KL(N(mean, exp(logvar)) || N(0, I))."""
    return 0.5 * np.sum(np.exp(logvar) + mean**2 - 1.0 - logvar, axis=-1)


def vae_loss(x, x_rec, latent: LatentCode, lambda1: float, lambda2: float, reg_weight: float, params: dict | None = None) -> LossTerms:
    b = x.shape[0]
    recon = float(np.sum((x - x_rec) ** 2) / b)
    kl = float(np.mean(kl_divergence(latent.mean, latent.logvar)))
    reg = 0.0
    if params is not None and reg_weight:
        reg = reg_weight * float(sum(np.vdot(v, v) for k, v in params.items() if is_weight(k)))
    return LossTerms(lambda1 * recon + lambda2 * kl + reg, recon, kl, reg)


class PartVAE(VAE):
    """Mesh-convolutional VAE over V x 9 deformation features."""

    kind = "part"

    def __init__(self, adjacency: sp.spmatrix, latent_dim: int = 64, hidden: int = 32, feat_dim: int = 9):
        v = adjacency.shape[0]
        self.n_vertices, self.hidden, self.feat_dim = v, hidden, feat_dim
        enc = [
            MeshConv("enc.conv1", adjacency, feat_dim, hidden, "tanh"),
            MeshConv("enc.conv2", adjacency, hidden, feat_dim, "linear"),
            Reshape((v * feat_dim,)),
        ]
        head = Dense("enc.fc", v * feat_dim, 2 * latent_dim)
        dec = [
            Dense("dec.fc", latent_dim, v * feat_dim, "tanh"),
            Reshape((v, feat_dim)),
            MeshConv("dec.conv1", adjacency, feat_dim, hidden, "tanh"),
            MeshConv("dec.conv2", adjacency, hidden, feat_dim, "linear"),
        ]
        super().__init__(enc, head, dec, (v, feat_dim), latent_dim)


class SPVAE(VAE):
    """Fully connected VAE over concatenated part vectors."""

    kind = "shape"

    def __init__(self, input_dim: int, hidden: Sequence[int] = (1024, 512, 256), latent_dim: int = 128, slope: float = LEAKY_SLOPE):
        self.hidden, self.slope = tuple(hidden), slope
        dims = [input_dim, *hidden]
        enc = [Dense(f"enc.fc{k + 1}", a, b, "leaky_relu", slope) for k, (a, b) in enumerate(zip(dims, dims[1:]))]
        head = Dense("enc.head", dims[-1], 2 * latent_dim)
        rdims = [latent_dim, *reversed(hidden)]
        dec = [Dense(f"dec.fc{k + 1}", a, b, "leaky_relu", slope) for k, (a, b) in enumerate(zip(rdims, rdims[1:]))]
        dec.append(Dense("dec.out", rdims[-1], input_dim, "linear"))
        super().__init__(enc, head, dec, (input_dim,), latent_dim)
