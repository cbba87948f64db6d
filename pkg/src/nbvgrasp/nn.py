"""Small numpy MLPs with manual backprop, and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class MLP:
    """Fully connected net; hidden layers use softplus, the last is linear.

    ``residual[i]`` adds the layer input to its activation, which needs
    matching widths. Parameters live in ``params`` as W0, b0, W1, b1, ...
    """

    sizes: tuple[int, ...]
    residual: tuple[bool, ...]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, sizes, residual=None, seed: int = 0, last_scale: float = 0.1) -> MLP:
        sizes = tuple(int(s) for s in sizes)
        n = len(sizes) - 1
        residual = tuple(residual) if residual is not None else (False,) * n
        rng = np.random.default_rng(seed)
        params = {}
        for i in range(n):
            scale = np.sqrt(2.0 / sizes[i]) * (last_scale if i == n - 1 else 1.0)
            if residual[i]:
                scale *= 0.5
            params[f"W{i}"] = rng.normal(0.0, scale, (sizes[i], sizes[i + 1]))
            params[f"b{i}"] = np.zeros(sizes[i + 1])
        return cls(sizes, residual, params)

    @classmethod
    def zeros(cls, sizes, residual=None) -> MLP:
        m = cls.init(sizes, residual)
        for v in m.params.values():
            v[...] = 0.0
        return m

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def check_input(self, x: np.ndarray):
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.sizes[0]}")

    def forward(self, x: np.ndarray, keep: bool = False):
        self.check_input(x)
        h = x
        cache = []
        for i in range(self.n_layers):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i == self.n_layers - 1:
                out = z
            else:
                out = softplus(z)
                if self.residual[i]:
                    out = out + h
            if keep:
                cache.append((h, z))
            h = out
        return (h, cache) if keep else h

    def backward(self, cache, grad_out: np.ndarray):
        """Returns (parameter gradients, input gradient)."""
        grads = {}
        g = grad_out
        for i in reversed(range(self.n_layers)):
            h, z = cache[i]
            if i == self.n_layers - 1:
                gz = g
            else:
                gz = g * sigmoid(z)
            grads[f"W{i}"] = h.T @ gz
            grads[f"b{i}"] = gz.sum(axis=0)
            gh = gz @ self.params[f"W{i}"].T
            if i != self.n_layers - 1 and self.residual[i]:
                gh = gh + g
            g = gh
        return grads, g

    def copy(self) -> MLP:
        return MLP(self.sizes, self.residual, {k: v.copy() for k, v in self.params.items()})


class Adam:
    def __init__(self, lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        if self.lr == 0:
            return
        b1t = 1 - self.beta1**self.t
        b2t = 1 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
