"""Feed-forward networks with hand-written reverse-mode gradients."""
from __future__ import annotations

import numpy as np


def geometric_sizes(first: int, last: int, layers: int) -> list[int]:
    """Hidden sizes decreasing geometrically from ``first`` to ``last``."""
    if layers == 1:
        return [first]
    ratio = (last / first) ** (1.0 / (layers - 1))
    return [int(round(first * ratio**i)) for i in range(layers)]


class Mlp:
    """ReLU hidden layers, linear output. Weights are stored as ``(fan_in, fan_out)``."""

    def __init__(self, sizes, rng=None, dtype=np.float64):
        if len(sizes) < 2:
            raise ValueError("need at least input and output size")
        self.sizes = tuple(int(s) for s in sizes)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(rng)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype))
            self.biases.append(rng.uniform(-bound, bound, fan_out).astype(self.dtype))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x):
        """Returns ``(y, cache)``; ``cache`` holds layer inputs and pre-activations."""
        h = np.asarray(x, dtype=self.dtype)
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            cache.append((h, z))
            h = z if i == last else np.maximum(z, 0)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out, params=True, inputs=None):
        """Gradients of ``sum(grad_out * y)`` w.r.t. parameters and input.

        Returns ``(param_grads, grad_input)`` with ``param_grads`` ordered like
        :attr:`params` (``None`` entries when ``params`` is false). The input
        gradient is computed when ``inputs`` is true (default: only when
        ``params`` is false) and is ``None`` otherwise.
        """
        inputs = (not params) if inputs is None else inputs
        g = np.asarray(grad_out, dtype=self.dtype)
        grads = [None] * (2 * len(self.weights))
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            h, z = cache[i]
            if i != last:
                g = np.where(z > 0, g, 0).astype(self.dtype, copy=False)
            if not params:
                pass
            elif g.ndim == 1:
                grads[2 * i] = np.outer(h, g)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = h.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            if i > 0 or inputs:
                g = g @ self.weights[i].T
        return grads, (g if inputs else None)

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes = self.sizes
        other.dtype = self.dtype
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec):
        vec = np.asarray(vec)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {vec.size}")
        i = 0
        for p in self.params:
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size

    def polyak_from(self, other: "Mlp", tau: float):
        """``self <- (1 - tau) * self + tau * other``."""
        for p, q in zip(self.params, other.params):
            p *= 1.0 - tau
            p += tau * q


def backward(net: Mlp, x, upstream):
    """Parameter gradients of ``sum(upstream * net(x))``."""
    _, cache = net.forward(x)
    y_shape = cache[-1][1].shape
    upstream = np.asarray(upstream)
    if upstream.shape != y_shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output {y_shape}")
    return net.backward(cache, upstream)[0]


class Adam:
    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        step = self.lr * np.sqrt(c2) / c1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= step * m / (np.sqrt(v) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state(self, state: dict):
        self.t = int(state["t"])
        for dst, src in zip(self.m, state["m"]):
            dst[...] = src
        for dst, src in zip(self.v, state["v"]):
            dst[...] = src
