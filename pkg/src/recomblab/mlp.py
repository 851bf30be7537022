"""Dense MLPs with hand-written backprop over a flat parameter vector.

Layer ``i`` maps ``h @ W_i + b_i`` (``W_i`` has shape ``(fan_in, fan_out)``),
followed by its activation. The weights are views into ``theta`` so a single
Adam state can drive the whole network.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "linear")


@dataclass
class MlpParams:
    sizes: tuple
    activations: tuple
    theta: np.ndarray

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.activations = tuple(self.activations)
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("need one activation per layer")
        if any(a not in ACTIVATIONS for a in self.activations):
            raise ValueError(f"activations must be among {ACTIVATIONS}")
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.n_params,):
            raise ValueError(f"theta has {self.theta.size} entries, expected {self.n_params}")

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def _slices(self):
        off = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(off, off + fan_in * fan_out)
            off += fan_in * fan_out
            b = slice(off, off + fan_out)
            off += fan_out
            yield fan_in, fan_out, w, b

    def layers(self, theta=None):
        theta = self.theta if theta is None else theta
        return [(theta[w].reshape(fi, fo), theta[b]) for fi, fo, w, b in self._slices()]

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, self.activations, self.theta.copy())

    def with_theta(self, theta) -> "MlpParams":
        return MlpParams(self.sizes, self.activations, theta)


def init_mlp(rng: np.random.Generator, sizes, activations=None) -> MlpParams:
    """He-scaled Gaussian weights and zero biases."""
    sizes = tuple(sizes)
    if activations is None:
        activations = ("relu",) * (len(sizes) - 2) + ("linear",)
    parts = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        parts.append(rng.standard_normal(fan_in * fan_out) * np.sqrt(2.0 / fan_in))
        parts.append(np.zeros(fan_out))
    return MlpParams(sizes, activations, np.concatenate(parts))


def zeros_like_mlp(sizes, activations=None) -> MlpParams:
    sizes = tuple(sizes)
    if activations is None:
        activations = ("relu",) * (len(sizes) - 2) + ("linear",)
    n = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    return MlpParams(sizes, activations, np.zeros(n))


def forward(params: MlpParams, x):
    """Returns ``(output, cache)``; ``x`` has shape ``(n, sizes[0])``."""
    h = np.asarray(x, dtype=np.float64)
    cache = [h]
    for (w, b), act in zip(params.layers(), params.activations):
        h = h @ w + b
        if act == "relu":
            h = np.maximum(h, 0.0)
        cache.append(h)
    return h, cache


def backward(params: MlpParams, cache, grad_out, need_input_grad: bool = False):
    """Backprop ``grad_out`` (d loss / d output) to ``(grad_theta, grad_input)``."""
    grad = np.zeros_like(params.theta)
    g = np.asarray(grad_out, dtype=np.float64)
    layers = params.layers()
    slices = list(params._slices())
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        if params.activations[i] == "relu":
            g = g * (cache[i + 1] > 0.0)
        _, _, ws, bs = slices[i]
        grad[ws] = (cache[i].T @ g).ravel()
        grad[bs] = g.sum(axis=0)
        if i > 0 or need_input_grad:
            g = g @ w.T
    return grad, (g if need_input_grad else None)
