"""Small fully connected network with tanh hidden layers, a linear output
layer, exact backpropagation, and a standard Adam optimizer."""

from __future__ import annotations

import numpy as np


class Mlp:
    """Affine + tanh chain with a linear final layer.

    Parameters are float64 throughout; ``forward`` caches enough to run an
    exact backward pass.
    """

    def __init__(self, sizes, rng: np.random.Generator, out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        n_layers = len(sizes) - 1
        for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = 1.0 / np.sqrt(fan_in)
            if layer == n_layers - 1:
                scale *= out_scale
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x: np.ndarray):
        """Returns (output, cache).  ``x`` is (batch, in) or (in,)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[1]} does not match "
                             f"layer 0 width {self.sizes[0]}")
        activations = [x]
        h = x
        last = len(self.weights) - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if layer == last else np.tanh(z)
            activations.append(h)
        out = h[0] if squeeze else h
        return out, activations

    def backward(self, activations, dout: np.ndarray):
        """Exact gradients for a cached forward pass.

        ``dout`` is the loss gradient at the network output; returns
        (grads, dx) with grads ordered like ``params``.
        """
        dout = np.asarray(dout, dtype=float)
        if dout.ndim == 1:
            dout = dout[None, :]
        grads = [None] * (2 * len(self.weights))
        delta = dout
        for layer in reversed(range(len(self.weights))):
            if layer != len(self.weights) - 1:
                # tanh' = 1 - tanh^2, using the cached post-activation
                delta = delta * (1.0 - activations[layer + 1] ** 2)
            x = activations[layer]
            grads[2 * layer] = x.T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[layer].T
        return grads, delta

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat_params(self, flat: np.ndarray):
        offset = 0
        for p in self.params:
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != flat.size:
            raise ValueError("flat parameter vector has the wrong length")


class AdamState:
    """First/second moment accumulators plus the step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0


def adam_update(params, grads, state: AdamState, learning_rate: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam step with bias correction, applied in place.

    Raises on non-finite gradients without touching the parameters.
    Returns (params, state) for chaining.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient: update skipped")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state
