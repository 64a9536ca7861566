"""Dense feed-forward network with explicit forward and backward passes.

Everything is float64. Hidden layers use ReLU; the last layer is always the
linear classifier, so the input vector of that layer is the feature
representation of a sample. ``forward`` can run a sub-range of layers, which
lets callers blend a hidden activation and resume from there.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream

__all__ = [
    "LOG_FLOOR",
    "Layer",
    "MlpModel",
    "ForwardCache",
    "init_mlp",
    "forward",
    "backward",
    "softmax",
    "cross_entropy",
    "per_sample_cross_entropy",
    "one_hot",
    "zero_grads",
    "add_scaled_grads",
    "flat_params",
    "finite_difference_grads",
    "max_relative_error",
]

# Probabilities are clamped here before log() so losses stay finite on
# pathological logits without perturbing gradients in normal ranges.
LOG_FLOOR = 1e-300

_ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError("layer weight must be a 2-d (out, in) array")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias length must equal the weight's output size")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class MlpModel:
    """Ordered dense layers; the final layer is the linear classifier."""

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ValueError("model needs at least one layer")
        for i, (lo, hi) in enumerate(zip(layers, layers[1:])):
            if hi.weight.shape[1] != lo.weight.shape[0]:
                raise ValueError(
                    f"layer {i + 1} expects {hi.weight.shape[1]} inputs but layer "
                    f"{i} produces {lo.weight.shape[0]}"
                )
        if layers[-1].activation != "identity":
            raise ValueError("the classifier layer must use the identity activation")
        if any(l.activation == "identity" for l in layers[:-1]):
            raise ValueError("only the final classifier layer may be linear")
        self.layers = layers
        # Bumped on every parameter update; forward caches remember the value
        # they were built against so stale backward calls fail loudly.
        self.version = 0

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def classifier(self) -> Layer:
        return self.layers[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


def init_mlp(input_dim, hidden_sizes, num_classes, rng: RngStream) -> MlpModel:
    """He-initialised ReLU stack plus a linear classifier on top.

    Hidden biases start at a small positive constant so no unit sits exactly
    on the ReLU kink at initialisation (a row zeroed by one layer would
    otherwise pin every later pre-activation to exactly zero).
    """
    sizes = [int(input_dim), *(int(h) for h in hidden_sizes), int(num_classes)]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        last = i == len(sizes) - 2
        scale = np.sqrt((1.0 if last else 2.0) / fan_in)
        weight = rng.normal(size=(fan_out, fan_in), scale=scale)
        bias = np.zeros(fan_out) if last else np.full(fan_out, 0.01)
        layers.append(Layer(weight, bias, "identity" if last else "relu"))
    return MlpModel(layers)


@dataclass
class ForwardCache:
    """Activations of one forward pass over layers [first, first + len(zs))."""

    first: int
    x: np.ndarray
    zs: list = field(default_factory=list)
    hs: list = field(default_factory=list)
    version: int = 0

    @property
    def output(self) -> np.ndarray:
        return self.hs[-1] if self.hs else self.x

    @property
    def logits(self) -> np.ndarray:
        return self.output

    @property
    def features(self) -> np.ndarray:
        """Input of the last executed layer (the classifier on a full pass)."""
        return self.hs[-2] if len(self.hs) >= 2 else self.x

    def body(self) -> "ForwardCache":
        """The same pass minus its last layer, for backprop from the features."""
        return ForwardCache(self.first, self.x, self.zs[:-1], self.hs[:-1], self.version)


def forward(model: MlpModel, x, first: int = 0, last: int | None = None) -> ForwardCache:
    """Run layers [first, last) on x and cache activations for backward.

    A partial range supports mixing at a hidden layer: run the prefix, blend
    its output, then resume with another call starting at that layer.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a (batch, features) input, got shape {x.shape}")
    last = len(model.layers) if last is None else last
    if not 0 <= first <= last <= len(model.layers):
        raise ValueError(f"bad layer range [{first}, {last})")
    if first < last and x.shape[1] != model.layers[first].weight.shape[1]:
        raise ValueError(
            f"input has {x.shape[1]} columns but layer {first} expects "
            f"{model.layers[first].weight.shape[1]}"
        )
    cache = ForwardCache(first, x, version=model.version)
    h = x
    for layer in model.layers[first:last]:
        z = h @ layer.weight.T + layer.bias
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        cache.zs.append(z)
        cache.hs.append(h)
    return cache


def backward(model: MlpModel, cache: ForwardCache, d_output):
    """Backpropagate d_output (gradient at the cache's last post-activation).

    Returns ``(grads, d_input)``: grads is a full-length list of (dW, db)
    pairs with zeros for layers outside the cached range, d_input is the
    gradient with respect to the cache's input, so callers can stitch
    backprop across a mixing point.
    """
    if cache.version != model.version:
        raise RuntimeError("stale forward cache: parameters changed since forward()")
    grads = zero_grads(model)
    d_h = np.asarray(d_output, dtype=np.float64)
    for pos in range(len(cache.zs) - 1, -1, -1):
        layer = model.layers[cache.first + pos]
        if layer.activation == "relu":
            d_z = d_h * (cache.zs[pos] > 0.0)
        else:
            d_z = d_h
        below = cache.hs[pos - 1] if pos > 0 else cache.x
        g_w, g_b = grads[cache.first + pos]
        g_w += d_z.T @ below
        g_b += d_z.sum(axis=0)
        d_h = d_z @ layer.weight
    return grads, d_h


def softmax(z) -> np.ndarray:
    """Probabilities from logits along the last axis; max-shifted for stability."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p, label) -> float:
    """-log p[label] for one probability vector, clamped at LOG_FLOOR."""
    p = np.asarray(p, dtype=np.float64)
    return float(-np.log(max(float(p[int(label)]), LOG_FLOOR)))


def per_sample_cross_entropy(probs, labels) -> np.ndarray:
    """-log p[i, labels[i]] for a batch of probability rows."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(picked, LOG_FLOOR))


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def zero_grads(model: MlpModel):
    return [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]


def add_scaled_grads(acc, grads, scale: float = 1.0) -> None:
    for (aw, ab), (gw, gb) in zip(acc, grads):
        aw += scale * gw
        ab += scale * gb


def flat_params(model: MlpModel) -> np.ndarray:
    return np.concatenate(
        [l.weight.ravel() for l in model.layers] + [l.bias.ravel() for l in model.layers]
    )


def _param_arrays(model: MlpModel):
    for layer in model.layers:
        yield layer.weight
        yield layer.bias


def finite_difference_grads(model: MlpModel, loss_fn, h: float = 1e-5):
    """Central-difference gradients of ``loss_fn(model)`` for every parameter.

    Parameters are perturbed in place and restored exactly; loss_fn must be a
    pure function of the current parameters.
    """
    grads = []
    for array in _param_arrays(model):
        grad = np.zeros_like(array)
        flat = array.ravel()
        g = grad.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = loss_fn(model)
            flat[i] = original - h
            down = loss_fn(model)
            flat[i] = original
            g[i] = (up - down) / (2.0 * h)
        grads.append(grad)
    # Regroup to the (dW, db) per-layer convention.
    return [(grads[2 * i], grads[2 * i + 1]) for i in range(len(model.layers))]


def max_relative_error(grads_a, grads_b) -> float:
    """Largest per-tensor norm ratio ||a - b|| / max(||a||, ||b||, 1e-12)."""
    worst = 0.0
    for (aw, ab), (bw, bb) in zip(grads_a, grads_b):
        for a, b in ((aw, bw), (ab, bb)):
            denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
            worst = max(worst, np.linalg.norm(a - b) / denom)
    return float(worst)
