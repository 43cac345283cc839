"""Small dense-network toolkit: layers, backprop, Adam and the losses used in training.

Arrays are row-major batches (rows = samples). Training runs in float32;
pass ``dtype=np.float64`` for gradient checks.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LEAKY_SLOPE = 0.3
LOGVAR_CLAMP = 10.0
PE_FREQUENCIES = 2.0 ** np.arange(1, 11)
NET_FORMAT_VERSION = 1


class ContractError(ValueError):
    """Shapes or call order do not satisfy an operation's preconditions."""


def positional_encode(x: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Map (n, d) states to (n, 11 d) features ``[x, sin(2x), sin(4x), ..., sin(1024x)]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    feats = [x] + [np.sin(w * x) for w in PE_FREQUENCIES]
    return np.concatenate(feats, axis=1).astype(dtype, copy=False)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "leaky_relu":
        # valid for slopes below 1; much faster than np.where on unpredictable signs
        return np.maximum(z, z * z.dtype.type(LEAKY_SLOPE))
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name == "leaky_relu":
        slope = g.dtype.type(LEAKY_SLOPE)
        fac = (z >= 0).astype(g.dtype)
        fac *= 1 - slope
        fac += slope
        fac *= g
        return fac
    if name == "linear":
        return g
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1 - a * a)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseNet:
    """Stack of affine layers; ``activations[i]`` follows layer ``i``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    _cache: list | None = field(default=None, repr=False, compare=False)

    @classmethod
    def init(cls, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
             dtype=np.float32) -> "DenseNet":
        """Glorot-uniform weights, zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ContractError("need one activation per layer")
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype))
            bs.append(np.zeros(fan_out, dtype=dtype))
        return cls(ws, bs, list(activations))

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def astype(self, dtype) -> "DenseNet":
        return DenseNet([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases],
                        list(self.activations))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without keeping a cache."""
        a = self._check_input(x)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            a = _act(act, a @ w + b)
        return a

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Forward pass that caches activations for a following :meth:`backward`."""
        a = self._check_input(x)
        cache = []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = a @ w + b
            out = _act(act, z)
            cache.append((a, z, out))
            a = out
        self._cache = cache
        return a

    def backward(self, grad_out: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Reverse-mode pass through the cached forward; returns (input grad, param grads).

        Parameter grads are ordered like :meth:`params`. The cache is consumed.
        """
        if self._cache is None:
            raise ContractError("backward called without a cached forward pass")
        cache, self._cache = self._cache, None
        g = np.asarray(grad_out, dtype=self.dtype)
        if g.shape != cache[-1][2].shape:
            raise ContractError(f"upstream gradient shape {g.shape} != output shape {cache[-1][2].shape}")
        grads: list[np.ndarray] = []
        for (a_in, z, a_out), w, act in zip(reversed(cache), reversed(self.weights), reversed(self.activations)):
            gz = _act_grad(act, z, a_out, g)
            grads += [gz.sum(axis=0), a_in.T @ gz]
            g = gz @ w.T
        grads.reverse()
        return g, grads

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ContractError(f"expected input (batch, {self.in_dim}), got {x.shape}")
        return x

    def to_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out

    def meta(self) -> dict:
        return {"sizes": [self.in_dim] + [w.shape[1] for w in self.weights],
                "activations": self.activations, "dtype": np.dtype(self.dtype).name}

    @classmethod
    def from_arrays(cls, meta: dict, arrays, prefix: str = "") -> "DenseNet":
        n = len(meta["activations"])
        return cls([np.array(arrays[f"{prefix}W{i}"]) for i in range(n)],
                   [np.array(arrays[f"{prefix}b{i}"]) for i in range(n)],
                   list(meta["activations"]))


def save_net(net: DenseNet, path) -> None:
    meta = {"format": "chaosmeasure.densenet", "version": NET_FORMAT_VERSION, **net.meta()}
    np.savez(path, meta=np.array(json.dumps(meta)), **net.to_arrays())


def load_net(path) -> DenseNet:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != "chaosmeasure.densenet":
            raise ValueError(f"{path} is not a serialized DenseNet")
        if meta["version"] > NET_FORMAT_VERSION:
            raise ValueError(f"unsupported network format version {meta['version']}")
        return DenseNet.from_arrays(meta, z)


class Adam:
    """Adam with bias correction; updates the parameter arrays in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-7):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ContractError("gradient list does not match parameter list")
        for p, g in zip(self.params, grads):
            if p.shape != g.shape:
                raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)).astype(p.dtype, copy=False)


def split_posterior(out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an encoder output (n, 2k) into mean and clamped log-variance."""
    k = out.shape[1] // 2
    return out[:, :k], np.clip(out[:, k:], -LOGVAR_CLAMP, LOGVAR_CLAMP)


def gaussian_kl(mean: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """KL(N(mean, exp(logvar)) || N(0, 1)) per row, in nats."""
    return 0.5 * np.sum(mean * mean + np.exp(logvar) - 1.0 - logvar, axis=1)


def gaussian_kl_grad(mean: np.ndarray, logvar: np.ndarray, g_row: np.ndarray):
    """Gradients of ``sum(g_row * gaussian_kl)`` w.r.t. mean and logvar."""
    g = g_row[:, None]
    return g * mean, g * 0.5 * (np.exp(logvar) - 1.0)


def reparameterize(mean: np.ndarray, logvar: np.ndarray, noise: np.ndarray) -> np.ndarray:
    return mean + np.exp(0.5 * logvar) * noise


def reparameterize_grad(logvar: np.ndarray, noise: np.ndarray, g: np.ndarray):
    """Gradients of a loss w.r.t. (mean, logvar) given its gradient ``g`` w.r.t. the sample."""
    return g, g * 0.5 * np.exp(0.5 * logvar) * noise


def tempered_softmax(logits: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Softmax of ``logits / tau`` along the last axis; ``tau == 0`` gives a one-hot argmax."""
    if tau < 0:
        raise ValueError("temperature must be >= 0")
    logits = np.asarray(logits)
    if tau == 0:
        out = np.zeros_like(logits, dtype=np.result_type(logits.dtype, np.float32))
        idx = np.argmax(logits, axis=-1)
        np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
        return out
    z = logits / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_grad(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Backprop through a unit-temperature softmax with output ``p``."""
    return p * (g - np.sum(g * p, axis=-1, keepdims=True))


def infonce_loss(queries: np.ndarray, keys: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """InfoNCE with negative squared Euclidean distance as the score.

    Row ``i`` of ``keys`` is the positive for row ``i`` of ``queries``; all
    other rows are negatives. Returns (loss in nats, d loss/d queries,
    d loss/d keys).
    """
    if queries.shape != keys.shape or queries.ndim != 2:
        raise ContractError(f"queries {queries.shape} and keys {keys.shape} must be equal 2-D shapes")
    B = queries.shape[0]
    if B < 2:
        raise ContractError("InfoNCE needs a batch of at least 2")
    qq = np.sum(queries * queries, axis=1)
    kk = np.sum(keys * keys, axis=1)
    scores = -(qq[:, None] + kk[None, :] - 2.0 * (queries @ keys.T))
    smax = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - smax)
    denom = e.sum(axis=1, keepdims=True)
    lse = np.log(denom)[:, 0] + smax[:, 0]
    loss = float(np.mean(lse - np.diag(scores)))
    # dL/dscores = (P - I) / B ; score = -||q_i - k_j||^2
    G = e / denom
    G[np.diag_indices(B)] -= 1.0
    G /= B
    dq = 2.0 * (G @ keys - G.sum(axis=1, keepdims=True) * queries)
    dk = 2.0 * (G.T @ queries - G.sum(axis=0)[:, None] * keys)
    return loss, dq.astype(queries.dtype, copy=False), dk.astype(keys.dtype, copy=False)
