"""Minimal dense feedforward networks with explicit backward passes.

The control schemes need two gradient flavours from the same forward pass:
derivatives with respect to the parameters (to train a controller) and
derivatives with respect to the inputs (to pass an error through a frozen
network that acts as extra, non-trainable layers). Both are exact
reverse-mode passes over the cached activations. There is no optimizer
state: updates are plain steepest descent, so two steps at rate r are two
separate steps, never one step at 2r.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ActivationKind(str, Enum):
    LINEAR = "linear"
    TANH = "tanh"


def _activate(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.TANH:
        return np.tanh(z)
    return z


def _activate_deriv(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


@dataclass
class Gradients:
    """Per-layer parameter gradients plus the gradient at the network input.

    Shapes mirror the owning network layer for layer.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_gradient: np.ndarray


@dataclass
class ForwardCache:
    """Intermediate values of one forward() call, consumed by the backward passes."""

    net: "Mlp"
    layer_inputs: list[np.ndarray]
    preactivations: list[np.ndarray]
    output: np.ndarray


class Mlp:
    """Fully connected feedforward network, float64 throughout.

    ``weights[i]`` has shape (out, in) and consecutive layers must chain:
    the output width of layer i equals the input width of layer i+1.
    """

    def __init__(self, weights, biases, activations):
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        self.activations = [ActivationKind(a) for a in activations]
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        if not self.weights:
            raise ValueError("network needs at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight/bias shapes {w.shape}/{b.shape} do not match")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: input width {w.shape[1]} does not chain with "
                    f"previous output width {self.weights[i - 1].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def forward(self, x) -> tuple[np.ndarray, ForwardCache]:
        """Evaluate the network, caching enough to run backward passes."""
        a = np.asarray(x, dtype=float).ravel()
        if a.shape[0] != self.input_dim:
            raise ValueError(f"expected input of length {self.input_dim}, got {a.shape[0]}")
        layer_inputs = []
        preacts = []
        for w, b, kind in zip(self.weights, self.biases, self.activations):
            layer_inputs.append(a)
            z = w @ a + b
            preacts.append(z)
            a = _activate(kind, z)
        return a, ForwardCache(self, layer_inputs, preacts, a)

    def predict(self, x) -> np.ndarray:
        """Forward pass without keeping the cache."""
        y, _ = self.forward(x)
        return y

    def backward_weights(self, cache: ForwardCache, dl_dy) -> Gradients:
        """Exact gradients of a scalar loss L w.r.t. all parameters.

        ``dl_dy`` seeds the pass with dL/dy at the network output; the input
        gradient comes out of the same sweep for free.
        """
        dws, dbs, dx = self._backprop(cache, dl_dy)
        return Gradients(dws, dbs, dx)

    def backward_inputs(self, cache: ForwardCache, dl_dy) -> np.ndarray:
        """Gradient of the loss w.r.t. the network inputs.

        The parameters are read but never touched, which is what lets a
        trained emulator serve as a frozen head over a trainable controller.
        """
        _, _, dx = self._backprop(cache, dl_dy)
        return dx

    def _backprop(self, cache: ForwardCache, dl_dy):
        if cache.net is not self:
            raise ValueError("cache was produced by a different network")
        g = np.asarray(dl_dy, dtype=float).ravel()
        if g.shape[0] != self.output_dim:
            raise ValueError(f"expected seed of length {self.output_dim}, got {g.shape[0]}")
        dws: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        dbs: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        for i in range(len(self.weights) - 1, -1, -1):
            delta = g * _activate_deriv(self.activations[i], cache.preactivations[i])
            dws[i] = np.outer(delta, cache.layer_inputs[i])
            dbs[i] = delta
            g = self.weights[i].T @ delta
        return dws, dbs, g

    def sgd_step(self, grads: Gradients, rate: float) -> None:
        """Steepest-descent update: every parameter decremented by rate * gradient."""
        if rate < 0.0:
            raise ValueError("learning rate must be >= 0")
        if len(grads.weights) != len(self.weights):
            raise ValueError("gradient layer count does not match network")
        for w, gw in zip(self.weights, grads.weights):
            if w.shape != np.shape(gw):
                raise ValueError(f"gradient shape {np.shape(gw)} does not match weight {w.shape}")
        for w, gw in zip(self.weights, grads.weights):
            w -= rate * gw
        for b, gb in zip(self.biases, grads.biases):
            if b.shape != np.shape(gb):
                raise ValueError(f"gradient shape {np.shape(gb)} does not match bias {b.shape}")
            b -= rate * gb

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights],
                   [b.copy() for b in self.biases],
                   list(self.activations))

    def param_hash(self) -> str:
        """SHA-256 over the raw parameter bytes; stable iff no parameter changed."""
        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(w.tobytes())
            h.update(b.tobytes())
        return h.hexdigest()


def mlp_new(layer_dims, activations, seed: int, weight_scale: float = 0.3) -> Mlp:
    """Build a network with uniform [-weight_scale, +weight_scale] weights, zero biases.

    Deterministic for a given seed: the same call twice yields bit-identical
    parameter sets.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ValueError(f"layer_dims must be >=2 positive integers, got {layer_dims}")
    acts = list(activations)
    if len(acts) != len(dims) - 1:
        raise ValueError(f"need {len(dims) - 1} activations for dims {dims}, got {len(acts)}")
    rng = np.random.default_rng(seed)
    weights = [rng.uniform(-weight_scale, weight_scale, size=(dims[i + 1], dims[i]))
               for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return Mlp(weights, biases, acts)


class TappedDelayLine:
    """Fixed-depth window of recent samples, read newest-first.

    Slots that have never been written read back ``fill_value``; once more
    than ``depth`` values were pushed the oldest is evicted.
    """

    def __init__(self, depth: int, fill_value: float = 0.0):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = int(depth)
        self.fill_value = float(fill_value)
        self._buf: deque[float] = deque(maxlen=self.depth)
        self.count = 0  # total pushes, not capped at depth

    def push(self, value: float) -> None:
        self._buf.appendleft(float(value))
        self.count += 1

    def vector(self) -> np.ndarray:
        out = np.full(self.depth, self.fill_value)
        if self._buf:
            out[: len(self._buf)] = list(self._buf)
        return out

    def copy(self) -> "TappedDelayLine":
        dup = TappedDelayLine(self.depth, self.fill_value)
        dup._buf = deque(self._buf, maxlen=self.depth)
        dup.count = self.count
        return dup
