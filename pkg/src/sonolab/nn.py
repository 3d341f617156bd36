"""Small dense networks with hand-written backpropagation, and Adam."""
from __future__ import annotations

import numpy as np


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


class MLP:
    """Dense network: SiLU on every hidden layer, linear output.

    Parameters live in ``self.params`` as ``W0, b0, W1, b1, ...`` so an
    optimizer can update them by name.
    """

    def __init__(self, sizes, seed=0, params=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            return
        rng = np.random.default_rng(seed)
        self.params = {}
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.params[f"W{i}"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)
            self.params[f"b{i}"] = np.zeros(fan_out)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x, cache=False):
        h = np.asarray(x, dtype=np.float64)
        if h.shape[-1] != self.sizes[0]:
            raise ValueError(f"input dim {h.shape[-1]} != {self.sizes[0]}")
        acts = [h]
        pre = []
        for i in range(self.n_layers):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                pre.append(z)
                h = silu(z)
                acts.append(h)
            else:
                h = z
        if cache:
            return h, (acts, pre)
        return h

    def backward(self, grad_out, cache):
        """Return ``(param_grads, grad_input)`` for upstream gradient ``grad_out``."""
        acts, pre = cache
        grads = {}
        g = grad_out
        for i in reversed(range(self.n_layers)):
            grads[f"W{i}"] = acts[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
            if i > 0:
                g = g * silu_grad(pre[i - 1])
        return grads, g


class Adam:
    def __init__(self, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.lr:
                params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

