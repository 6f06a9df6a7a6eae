"""Minimal dense feed-forward network engine with manual backpropagation.

ReLU between hidden layers; the output head is either the raw linear value
(critic) or a probability-normalizing softmax (actor). Everything operates on
float64 numpy arrays and supports batched inputs of shape (n, d_in).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HEAD_IDENTITY = "identity"
HEAD_SOFTMAX = "softmax"

CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[i]: (layer_sizes[i], layer_sizes[i+1])
    biases: list[np.ndarray]
    head: str = HEAD_IDENTITY

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class GradientSet:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_input: np.ndarray | None = None


@dataclass
class ForwardCache:
    x: np.ndarray                       # (n, d_in)
    pre: list[np.ndarray] = field(default_factory=list)   # pre-activations
    post: list[np.ndarray] = field(default_factory=list)  # post-ReLU / head
    output: np.ndarray | None = None


def mlp_init(layer_sizes, seed: int, head: str = HEAD_IDENTITY) -> Mlp:
    """Glorot-uniform initialized network, reproducible from the seed."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be >= 1, got {sizes}")
    if head not in (HEAD_IDENTITY, HEAD_SOFTMAX):
        raise ValueError(f"unknown head {head!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases, head)


def n_params(net: Mlp) -> int:
    return sum(w.size for w in net.weights) + sum(b.size for b in net.biases)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != d:
        raise ValueError(f"input width {x.shape[1]} != first layer size {d}")
    return x, single


def forward_cached(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    xb, single = _as_batch(x, net.n_inputs)
    cache = ForwardCache(x=xb)
    h = xb
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        cache.pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
        elif net.head == HEAD_SOFTMAX:
            h = _softmax(z)
        else:
            h = z
        cache.post.append(h)
    cache.output = h
    return (h[0] if single else h), cache


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    y, _ = forward_cached(net, x)
    return y


def backward_from_output(net: Mlp, cache: ForwardCache, grad_out: np.ndarray) -> GradientSet:
    """Gradients of sum_i <grad_out_i, output_i> wrt parameters and input.

    grad_out is the upstream gradient at the network OUTPUT (after the head);
    for a softmax head it is mapped through the softmax Jacobian first.
    """
    g = np.asarray(grad_out, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {cache.output.shape}")
    if net.head == HEAD_SOFTMAX:
        p = cache.output
        g = p * (g - (g * p).sum(axis=1, keepdims=True))
    return _backprop_linear(net, cache, g)


def backward_from_logits(net: Mlp, cache: ForwardCache, grad_logits: np.ndarray) -> GradientSet:
    """Like backward_from_output but the upstream gradient is wrt the final
    pre-head linear layer; avoids dividing by tiny softmax probabilities."""
    g = np.asarray(grad_logits, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    return _backprop_linear(net, cache, g)


def _backprop_linear(net: Mlp, cache: ForwardCache, delta: np.ndarray) -> GradientSet:
    d_w = [None] * len(net.weights)
    d_b = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        h_in = cache.x if i == 0 else cache.post[i - 1]
        d_w[i] = h_in.T @ delta
        d_b[i] = delta.sum(axis=0)
        delta = delta @ net.weights[i].T
        if i > 0:
            delta = delta * (cache.pre[i - 1] > 0.0)
    return GradientSet(d_w, d_b, d_input=delta)


def apply_update(net: Mlp, grads: GradientSet, eta: float) -> Mlp:
    """One plain gradient-descent step: parameters -= eta * grad. In place."""
    for g in grads.d_weights + grads.d_biases:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient entries")
    for w, dw in zip(net.weights, grads.d_weights):
        w -= eta * dw
    for b, db in zip(net.biases, grads.d_biases):
        b -= eta * db
    return net


def clip_gradients(grads: GradientSet, max_norm: float) -> GradientSet:
    """Rescale all parameter gradients if their global L2 norm exceeds
    max_norm; keeps updates stable against rare huge-error batches."""
    total = 0.0
    for g in grads.d_weights + grads.d_biases:
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.d_weights + grads.d_biases:
            g *= scale
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators for adaptive moment estimation."""
    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0


def adam_init(net: Mlp) -> AdamState:
    return AdamState(
        [np.zeros_like(w) for w in net.weights],
        [np.zeros_like(w) for w in net.weights],
        [np.zeros_like(b) for b in net.biases],
        [np.zeros_like(b) for b in net.biases],
    )


def adam_update(net: Mlp, grads: GradientSet, state: AdamState, eta: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Mlp:
    """One Adam step; gradients with mixed scales move at comparable rates,
    unlike plain SGD where large-error directions dominate."""
    for g in grads.d_weights + grads.d_biases:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient entries")
    state.step += 1
    correction = math.sqrt(1.0 - beta2 ** state.step) / (1.0 - beta1 ** state.step)
    groups = (
        (net.weights, grads.d_weights, state.m_weights, state.v_weights),
        (net.biases, grads.d_biases, state.m_biases, state.v_biases),
    )
    for params, gs, ms, vs in groups:
        for p, g, m, v in zip(params, gs, ms, vs):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p -= eta * correction * m / (np.sqrt(v) + eps)
    return net


def copy_into_target(source: Mlp, target: Mlp) -> Mlp:
    if source.layer_sizes != target.layer_sizes or source.head != target.head:
        raise ValueError("architecture mismatch between source and target")
    for tw, sw in zip(target.weights, source.weights):
        tw[...] = sw
    for tb, sb in zip(target.biases, source.biases):
        tb[...] = sb
    return target


def clone(net: Mlp) -> Mlp:
    return Mlp(
        net.layer_sizes,
        [w.copy() for w in net.weights],
        [b.copy() for b in net.biases],
        net.head,
    )


def checkpoint_arrays(net: Mlp, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten a network into named arrays for a .npz checkpoint."""
    out = {
        f"{prefix}sizes": np.asarray(net.layer_sizes, dtype=np.int64),
        f"{prefix}head": np.asarray(0 if net.head == HEAD_IDENTITY else 1, dtype=np.int64),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}W{i}"] = w
        out[f"{prefix}b{i}"] = b
    return out


def from_checkpoint_arrays(arrays, prefix: str = "") -> Mlp:
    sizes = tuple(int(s) for s in arrays[f"{prefix}sizes"])
    head = HEAD_IDENTITY if int(arrays[f"{prefix}head"]) == 0 else HEAD_SOFTMAX
    weights = [np.array(arrays[f"{prefix}W{i}"], dtype=float) for i in range(len(sizes) - 1)]
    biases = [np.array(arrays[f"{prefix}b{i}"], dtype=float) for i in range(len(sizes) - 1)]
    return Mlp(sizes, weights, biases, head)


def save_checkpoint(net: Mlp, path) -> None:
    arrays = checkpoint_arrays(net)
    arrays["version"] = np.asarray(CHECKPOINT_VERSION, dtype=np.int64)
    np.savez(path, **arrays)


def load_checkpoint(path) -> Mlp:
    with np.load(path) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
        return from_checkpoint_arrays(data)
