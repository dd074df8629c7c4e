"""Dense feed-forward networks with analytic gradients, weighted BCE and optimizers.

Everything here is plain numpy on float64. A network is a list of layers;
each layer is a weight matrix of shape (in_dim, out_dim), a bias vector and
an activation tag. Inputs are row-major (n, in_dim) matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-7

ACTIVATIONS = ("relu", "sigmoid", "identity")


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


@dataclass
class ParameterSet:
    layers: list[Layer]

    def __post_init__(self):
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.out_dim,):
                raise ShapeError(f"layer {k}: bias shape {layer.bias.shape} != ({layer.out_dim},)")
            if k and self.layers[k - 1].out_dim != layer.in_dim:
                raise ShapeError(
                    f"layer {k}: in_dim {layer.in_dim} does not chain with "
                    f"previous out_dim {self.layers[k - 1].out_dim}"
                )

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    def arrays(self):
        """Flat list [W0, b0, W1, b1, ...]; the order optimizers and gradients use."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self):
        return ParameterSet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def block_names(self):
        names = []
        for k in range(len(self.layers)):
            names.extend((f"layer {k} weight", f"layer {k} bias"))
        return names


@dataclass
class GradientSet:
    """Gradients in the same flat order as ``ParameterSet.arrays()``."""

    arrays: list[np.ndarray]

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays])


def init_params(dims, activations, rng):
    """Glorot-uniform weights, zero biases.

    ``dims`` is [in, h1, ..., out]; ``activations`` has one tag per layer.
    """
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return ParameterSet(layers)


def sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def forward_cache(params, inputs):
    """Run the network and keep every layer input and pre-activation.

    Returns (output, cache) where cache is a list of (layer_input, pre_activation).
    """
    a = np.asarray(inputs, dtype=float)
    if a.ndim != 2:
        raise ShapeError(f"inputs must be 2-D, got shape {a.shape}")
    cache = []
    for k, layer in enumerate(params.layers):
        if a.shape[1] != layer.in_dim:
            raise ShapeError(f"layer {k}: expected {layer.in_dim} input columns, got {a.shape[1]}")
        z = a @ layer.weight + layer.bias
        cache.append((a, z))
        a = _activate(z, layer.activation)
    return a, cache


def forward(params, inputs):
    """Scores in (0, 1), one per input row. The last layer must be sigmoid."""
    if params.layers[-1].activation != "sigmoid":
        raise ValueError("final activation must be sigmoid")
    if params.layers[-1].out_dim != 1:
        raise ShapeError(f"layer {len(params.layers) - 1}: output dim must be 1")
    out, _ = forward_cache(params, inputs)
    return out[:, 0]


def logits(params, inputs):
    """Pre-sigmoid output of the final layer."""
    _, cache = forward_cache(params, inputs)
    return cache[-1][1][:, 0]


def backprop(params, cache, grad_pre):
    """Backpropagate d(loss)/d(final pre-activation) through the network.

    ``grad_pre`` has shape (n,) or (n, out_dim).
    """
    delta = np.asarray(grad_pre, dtype=float)
    if delta.ndim == 1:
        delta = delta[:, None]
    grads = [None] * (2 * len(params.layers))
    for k in range(len(params.layers) - 1, -1, -1):
        a_in, _ = cache[k]
        grads[2 * k] = a_in.T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k == 0:
            break
        delta = delta @ params.layers[k].weight.T
        prev = params.layers[k - 1]
        prev_z = cache[k - 1][1]
        if prev.activation == "relu":
            delta = delta * (prev_z > 0)
        elif prev.activation == "sigmoid":
            s = sigmoid(prev_z)
            delta = delta * s * (1.0 - s)
    return GradientSet(grads)


def _check_weighted(scores, labels, weights):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (scores.shape == labels.shape == weights.shape):
        raise ShapeError(
            f"length mismatch: scores {scores.shape}, labels {labels.shape}, weights {weights.shape}"
        )
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    return scores, labels, weights


def bce_terms(scores, labels):
    """Per-example cross-entropy with the probability clamped to [EPS, 1-EPS]."""
    p = np.clip(np.asarray(scores, dtype=float), EPS, 1.0 - EPS)
    y = np.asarray(labels, dtype=float)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def weighted_bce(scores, labels, weights):
    """Weighted mean cross-entropy: sum(w * ce) / sum(w)."""
    scores, labels, weights = _check_weighted(scores, labels, weights)
    return float(np.sum(weights * bce_terms(scores, labels)) / np.sum(weights))


def backward(params, inputs, labels, weights):
    """Gradient of ``weighted_bce(forward(params, inputs), labels, weights)``."""
    out, cache = forward_cache(params, inputs)
    scores = out[:, 0]
    _, labels, weights = _check_weighted(scores, labels, weights)
    grad_pre = weights * (scores - labels) / np.sum(weights)
    return backprop(params, cache, grad_pre)


@dataclass
class OptimizerState:
    """Per-parameter accumulators for one player.

    kind is "sgd", "adagrad" or "adam".
    """

    kind: str
    lr: float
    slots: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    initial_accumulator: float = 0.1
    eps: float = 1e-7


def make_optimizer(params, kind="adagrad", lr=0.01, **kwargs):
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    state = OptimizerState(kind=kind, lr=float(lr), **kwargs)
    arrays = params.arrays()
    if kind == "adagrad":
        state.slots = [np.full_like(a, state.initial_accumulator) for a in arrays]
    elif kind == "adam":
        state.slots = [(np.zeros_like(a), np.zeros_like(a)) for a in arrays]
    elif kind != "sgd":
        raise ValueError(f"unknown optimizer {kind!r}")
    return state


def optimizer_step(params, grads, state):
    """Apply one descent step in place and return (params, state).

    To ascend, pass the gradient of the negated objective.
    """
    arrays = params.arrays()
    if len(arrays) != len(grads.arrays):
        raise ShapeError("gradient set does not match parameter set")
    for name, p, g in zip(params.block_names(), arrays, grads.arrays):
        if p.shape != g.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    state.step += 1
    lr = state.lr
    if state.kind == "sgd":
        for p, g in zip(arrays, grads.arrays):
            p -= lr * g
    elif state.kind == "adagrad":
        for p, g, acc in zip(arrays, grads.arrays, state.slots):
            acc += g * g
            p -= lr * g / (np.sqrt(acc) + state.eps)
    else:
        t = state.step
        c1 = 1.0 - state.beta1**t
        c2 = 1.0 - state.beta2**t
        for p, g, (m, v) in zip(arrays, grads.arrays, state.slots):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def finite_difference_grad(loss_fn, params, h=1e-5):
    """Central differences of ``loss_fn(params)`` w.r.t. every parameter entry."""
    out = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss_fn(params)
            arr[idx] = orig - h
            down = loss_fn(params)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return GradientSet(out)
