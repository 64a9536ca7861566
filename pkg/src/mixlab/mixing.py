"""Mixing mathematics: interpolation weights, intra-class feature synthesis,
inter-class mixing losses, and the combined objective weighting.

The intra branch synthesizes, per class, a random convex combination of the
feature representations (the vectors entering the classifier) of same-class
samples and asks the classifier to label it correctly. The inter branch pairs
the batch with a shuffled copy of itself and blends inputs (or a hidden
activation) together with the one-hot labels.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import nn
from .errors import ConfigError
from .nn import MlpModel, backward, cross_entropy, forward, one_hot, softmax
from .rng import RngStream

__all__ = [
    "INPUT_LAYER",
    "Variant",
    "MixSpec",
    "MixedTarget",
    "MixDraws",
    "interpolation_weights",
    "synthesize_class_feature",
    "mix",
    "intra_loss",
    "inter_loss_mixup",
    "inter_loss_manifold",
    "total_loss",
    "draw_mix_randomness",
    "intra_synthesis_loss",
    "mixed_pair_loss",
]

# Index 0 stands for the raw input in an eligible-layer set; index k > 0 is
# the post-activation output of layer k (1-based over the model's layers).
INPUT_LAYER = 0


class Variant(str, Enum):
    """Loss variants. RA = intra-class branch, ER = inter-class branch."""

    WO_RA_ER = "wo_ra_er"  # plain cross-entropy on the augmented rows
    W_ER_M = "w_er_m"  # input-level inter-class mixing only
    W_ER_MM = "w_er_mm"  # hidden-layer inter-class mixing only
    W_RA = "w_ra"  # intra branch (original features) + plain loss
    W_RA_AUG = "w_ra_aug"  # intra branch fed augmented features instead
    W_RA_ER_M = "w_ra_er_m"  # intra branch + input-level mixing
    W_RA_ER_MM = "w_ra_er_mm"  # intra branch + hidden-layer mixing

    @property
    def has_intra(self) -> bool:
        return self in (
            Variant.W_RA,
            Variant.W_RA_AUG,
            Variant.W_RA_ER_M,
            Variant.W_RA_ER_MM,
        )

    @property
    def has_inter(self) -> bool:
        return self in (
            Variant.W_ER_M,
            Variant.W_ER_MM,
            Variant.W_RA_ER_M,
            Variant.W_RA_ER_MM,
        )

    @property
    def manifold(self) -> bool:
        return self in (Variant.W_ER_MM, Variant.W_RA_ER_MM)

    @classmethod
    def from_string(cls, name: str) -> "Variant":
        try:
            return cls(name.strip().lower())
        except ValueError:
            known = ", ".join(v.value for v in cls)
            raise ConfigError(f"unknown variant {name!r}; expected one of: {known}")


@dataclass
class MixSpec:
    """Hyperparameters of the mixing objective.

    beta weighs the intra branch against the other branch, alpha parametrises
    the Beta distribution of the pair-mixing coefficient, p_interp is the
    number of synthesized features per class per batch, and eligible_layers
    is the set hidden-layer mixing draws from (0 = the input itself).
    """

    variant: Variant = Variant.W_RA_ER_M
    beta: float = 0.1
    alpha: float = 1.0
    p_interp: int = 1
    eligible_layers: tuple[int, ...] = (INPUT_LAYER,)

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = Variant.from_string(self.variant)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.p_interp < 1:
            raise ValueError(f"p_interp must be >= 1, got {self.p_interp}")
        layers = tuple(sorted({int(k) for k in self.eligible_layers}))
        if not layers:
            raise ValueError("eligible_layers must not be empty")
        if layers[0] < 0:
            raise ValueError("eligible layer indices must be >= 0")
        self.eligible_layers = layers


@dataclass
class MixedTarget:
    """A pair of one-hot labels blended by lam; the blend keeps unit mass."""

    y_a: np.ndarray
    y_b: np.ndarray
    lam: float

    def blended(self) -> np.ndarray:
        return mix(self.y_a, self.y_b, self.lam)


def interpolation_weights(rng, n: int) -> np.ndarray:
    """n nonnegative weights summing to one: uniform draws, sum-normalized."""
    if n < 1:
        raise ValueError(f"need at least one weight, got n={n}")
    r = rng.uniform(int(n))
    total = r.sum()
    if total == 0.0:  # measure-zero degenerate draw; keep the simplex contract
        return np.full(n, 1.0 / n)
    return r / total


def synthesize_class_feature(features, weights) -> np.ndarray:
    """One convex combination of same-class feature rows."""
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a (members, dims) matrix")
    if weights.shape != (features.shape[0],):
        raise ValueError(
            f"{features.shape[0]} feature rows need {features.shape[0]} weights, "
            f"got {weights.shape}"
        )
    return weights @ features


def mix(a, b, lam: float) -> np.ndarray:
    """lam * a + (1 - lam) * b for equal-shaped arrays, lam in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    return lam * a + (1.0 - lam) * b


def intra_loss(per_class_synth, classifier) -> float:
    """Mean cross-entropy of synthesized features pushed through the classifier.

    per_class_synth maps class index -> one feature vector or a (P, dims)
    stack; the mean runs over all class/feature entries.
    """
    if not per_class_synth:
        raise ValueError("per_class_synth is empty")
    total = 0.0
    count = 0
    for cls in sorted(per_class_synth):
        block = np.atleast_2d(np.asarray(per_class_synth[cls], dtype=np.float64))
        for f_syn in block:
            z = classifier.weight @ f_syn + classifier.bias
            total += cross_entropy(softmax(z), cls)
            count += 1
    return total / count


def total_loss(beta: float, l_intra: float, l_other: float) -> float:
    """beta-weighted blend of the intra loss with the other branch's loss."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    return beta * l_intra + (1.0 - beta) * l_other


@dataclass
class MixDraws:
    """All randomness of one batch objective, frozen so the loss becomes a
    deterministic function of the parameters (finite differences rely on it)."""

    intra_weights: dict | None = None  # class -> (P, members) weight rows
    perm: np.ndarray | None = None
    lams: np.ndarray | None = None
    mix_layer: int = INPUT_LAYER


def draw_mix_randomness(spec: MixSpec, labels, rng: RngStream) -> MixDraws:
    """Draw a batch's mixing randomness up front.

    Intra and inter draws come from derived substreams so neither branch can
    shift the other's sequence. Within the inter stream the mixing layer is
    drawn after the pairing, so an input-only eligible set consumes the same
    pairing draws as plain input mixing and reproduces it bit for bit.
    """
    labels = np.asarray(labels, dtype=np.int64)
    draws = MixDraws()
    if spec.variant.has_intra:
        r = rng.derive("intra")
        weights = {}
        for cls in sorted(np.unique(labels).tolist()):
            members = int((labels == cls).sum())
            weights[int(cls)] = np.stack(
                [interpolation_weights(r, members) for _ in range(spec.p_interp)]
            )
        draws.intra_weights = weights
    if spec.variant.has_inter:
        r = rng.derive("inter")
        n = len(labels)
        draws.perm = r.permutation(n)
        draws.lams = np.atleast_1d(r.beta(spec.alpha, n)).astype(np.float64)
        if spec.variant.manifold:
            options = spec.eligible_layers
            draws.mix_layer = int(options[int(r.integers(len(options)))])
    return draws


def intra_synthesis_loss(model: MlpModel, cache, labels, weights_by_class, want_grads=False):
    """Intra-class objective over a cached forward pass of the source images.

    For every class c with member rows idx and weight row w, the synthesized
    feature is w @ features[idx]; its classifier cross-entropy against c is
    averaged over all classes and repeats. Gradients flow through the
    classifier and back through the cached pass into every layer.

    Returns (loss, grads) with grads None unless requested.
    """
    labels = np.asarray(labels, dtype=np.int64)
    feats = cache.features
    classifier = model.classifier
    classes = sorted(weights_by_class)
    if not classes:
        raise ValueError("no classes to synthesize")
    count = sum(weights_by_class[c].shape[0] for c in classes)
    loss = 0.0
    d_feats = np.zeros_like(feats) if want_grads else None
    grads = nn.zero_grads(model) if want_grads else None
    for cls in classes:
        idx = np.flatnonzero(labels == cls)
        if idx.size < 2:
            raise RuntimeError(
                f"class {cls} reached synthesis with {idx.size} sample(s); "
                "the batch was not supplemented"
            )
        block = weights_by_class[cls]
        if block.shape[1] != idx.size:
            raise ValueError(
                f"class {cls}: {idx.size} members but weight rows of length "
                f"{block.shape[1]}"
            )
        for w_row in block:
            f_syn = w_row @ feats[idx]
            z = classifier.weight @ f_syn + classifier.bias
            p = softmax(z)
            loss += cross_entropy(p, cls)
            if want_grads:
                d_z = p.copy()
                d_z[cls] -= 1.0
                d_z /= count
                g_w, g_b = grads[-1]
                g_w += np.outer(d_z, f_syn)
                g_b += d_z
                d_feats[idx] += np.outer(w_row, classifier.weight.T @ d_z)
    loss /= count
    if want_grads:
        body_grads, _ = backward(model, cache.body(), d_feats)
        nn.add_scaled_grads(grads, body_grads)
    return loss, grads


def mixed_pair_loss(model: MlpModel, x, labels, perm, lams, mix_layer=INPUT_LAYER,
                    want_grads=False):
    """Mixed-pair cross-entropy, mixing at the given layer (0 = the inputs).

    Row i is paired with row perm[i]; the per-pair loss uses the two-term form
    lam * ce(p, y_i) + (1 - lam) * ce(p, y_perm[i]), identical to soft-target
    cross-entropy because the loss is linear in the target.

    Returns (loss, grads) with grads None unless requested.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    perm = np.asarray(perm, dtype=np.int64)
    lams = np.asarray(lams, dtype=np.float64).reshape(n)
    if not 0 <= mix_layer < len(model.layers):
        raise ValueError(
            f"mix layer {mix_layer} out of range for a {len(model.layers)}-layer model"
        )
    lam_col = lams[:, None]
    if mix_layer == INPUT_LAYER:
        prefix = None
        mixed = lam_col * x + (1.0 - lam_col) * x[perm]
    else:
        prefix = forward(model, x, first=0, last=mix_layer)
        h = prefix.output
        mixed = lam_col * h + (1.0 - lam_col) * h[perm]
    suffix = forward(model, mixed, first=mix_layer)
    probs = softmax(suffix.output)
    own = nn.per_sample_cross_entropy(probs, labels)
    partner = nn.per_sample_cross_entropy(probs, labels[perm])
    loss = float(np.mean(lams * own + (1.0 - lams) * partner))
    if not want_grads:
        return loss, None
    targets = lam_col * one_hot(labels, model.num_classes)
    targets += (1.0 - lam_col) * one_hot(labels[perm], model.num_classes)
    d_logits = (probs - targets) / n
    grads, d_mixed = backward(model, suffix, d_logits)
    if prefix is not None:
        d_h = lam_col * d_mixed
        np.add.at(d_h, perm, (1.0 - lam_col) * d_mixed)
        prefix_grads, _ = backward(model, prefix, d_h)
        nn.add_scaled_grads(grads, prefix_grads)
    return loss, grads


def inter_loss_mixup(model: MlpModel, batch_aug, labels, rng: RngStream,
                     alpha: float = 1.0) -> float:
    """Input-level mixed-pair loss with a fresh shuffle and per-pair Beta draws."""
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty batch")
    perm = rng.permutation(n)
    lams = np.atleast_1d(rng.beta(alpha, n))
    loss, _ = mixed_pair_loss(model, batch_aug, labels, perm, lams, INPUT_LAYER)
    return loss


def inter_loss_manifold(model: MlpModel, batch_aug, labels, rng: RngStream,
                        eligible_layers, alpha: float = 1.0) -> float:
    """Mixed-pair loss at one layer drawn uniformly from the eligible set.

    One layer serves the whole batch. The layer is drawn after the pairing,
    so when the eligible set is only the input this consumes the same pairing
    draws as ``inter_loss_mixup`` and produces the identical loss.
    """
    eligible = tuple(eligible_layers)
    if not eligible:
        raise ConfigError("eligible layer set is empty")
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty batch")
    perm = rng.permutation(n)
    lams = np.atleast_1d(rng.beta(alpha, n))
    layer = int(eligible[int(rng.integers(len(eligible)))])
    loss, _ = mixed_pair_loss(model, batch_aug, labels, perm, lams, layer)
    return loss
