"""Quantitative checks of side claims: how often shuffle pairing lands inside
a class, how the averaged synthesis gradient term's variance decays with the
number of interpolations, and scatter-based cohesion metrics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import softmax
from .rng import RngStream

__all__ = [
    "PairingModel",
    "CohesionReport",
    "intra_pair_fraction_analytic",
    "intra_pair_fraction_montecarlo",
    "grad_term_variance",
    "cohesion_report",
]

SAMPLING_MODES = ("equal_counts", "iid_uniform")


@dataclass
class PairingModel:
    """Batch-composition model for the pairing study.

    equal_counts fills the batch with exactly N/K samples per class (K must
    divide N); iid_uniform draws each sample's class independently and
    uniformly. The shuffle is a uniform permutation and self-pairs count as
    intra-class, matching the pairing the mixing losses actually use.
    """

    num_classes: int
    batch_size: int
    sampling: str = "equal_counts"
    trials: int = 100_000

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if self.sampling == "equal_counts" and self.batch_size % self.num_classes:
            raise ValueError("equal_counts requires num_classes to divide batch_size")
        if self.trials < 1:
            raise ValueError("trials must be positive")


def intra_pair_fraction_analytic(num_classes: int, batch_size: int,
                                 sampling: str = "equal_counts") -> float:
    """Expected fraction of positions whose shuffle partner shares their class.

    For a uniform permutation the partner of any position is uniform over all
    N slots (self included), so with class counts n_c the expected fraction is
    E[sum_c n_c^2] / N^2.

      equal_counts: n_c = N/K exactly, giving sum_c n_c^2 / N^2 = 1/K.
      iid_uniform:  n_c ~ Binomial(N, 1/K), so E[n_c^2] = N(K-1)/K^2 + (N/K)^2
                    and the fraction is (N + K - 1) / (N*K).

    The iid value exceeds 1/K because composition fluctuations favour classes
    that happen to be overrepresented; at K=16, N=32 it is 47/512 (about 9.2%)
    and at K=N=128 it is 255/16384 (about 1.6%).
    """
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if sampling == "equal_counts":
        if batch_size % num_classes:
            raise ValueError("equal_counts requires num_classes to divide batch_size")
        return 1.0 / num_classes
    if sampling == "iid_uniform":
        return (batch_size + num_classes - 1) / (batch_size * num_classes)
    raise ValueError(f"sampling must be one of {SAMPLING_MODES}")


def intra_pair_fraction_montecarlo(model: PairingModel, rng: RngStream,
                                   chunk: int = 20_000):
    """(estimate, standard_error) of the intra-pair fraction over shuffles."""
    if model.trials < 1000:
        raise ValueError("need at least 1000 trials for a stable standard error")
    k, n = model.num_classes, model.batch_size
    fractions = np.empty(model.trials)
    done = 0
    while done < model.trials:
        rows = min(chunk, model.trials - done)
        if model.sampling == "equal_counts":
            labels = np.tile(np.repeat(np.arange(k), n // k), (rows, 1))
        else:
            labels = rng.integers(0, k, size=(rows, n))
        perms = np.argsort(rng.uniform((rows, n)), axis=1)
        partners = np.take_along_axis(labels, perms, axis=1)
        fractions[done : done + rows] = (partners == labels).mean(axis=1)
        done += rows
    estimate = float(fractions.mean())
    std_error = float(fractions.std(ddof=1) / np.sqrt(model.trials))
    return estimate, std_error


def grad_term_variance(features, classifier, p_values, trials: int,
                       rng: RngStream, class_index: int = 0) -> dict:
    """Mean per-coordinate variance of the P-averaged gradient term.

    Each draw synthesizes P feature rows from fresh interpolation weights over
    the given same-class rows and evaluates the classifier-weight gradient
    contribution (softmax(W f + b) - onehot(c)) outer f, averaged over the P
    rows. Averaging P independent draws scales the variance by 1/P, which is
    the decay this measures.

    Returns {P: mean coordinate variance}.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("need a (members, dims) matrix with at least two rows")
    p_values = [int(p) for p in p_values]
    if not p_values or any(p < 1 for p in p_values):
        raise ValueError("p_values must be positive integers")
    if p_values != sorted(p_values):
        raise ValueError("p_values must be sorted ascending")
    if trials < 2:
        raise ValueError("need at least two trials to estimate a variance")
    members = features.shape[0]
    weight = np.asarray(classifier.weight, dtype=np.float64)
    bias = np.asarray(classifier.bias, dtype=np.float64)
    if not 0 <= class_index < weight.shape[0]:
        raise ValueError("class_index out of range for the classifier")
    out = {}
    for p in p_values:
        raw = rng.uniform((trials * p, members))
        sums = raw.sum(axis=1, keepdims=True)
        sums[sums == 0.0] = 1.0
        omega = raw / sums
        synth = omega @ features  # (trials*p, dims)
        probs = softmax(synth @ weight.T + bias)
        probs[:, class_index] -= 1.0
        terms = probs[:, :, None] * synth[:, None, :]  # (trials*p, classes, dims)
        averaged = terms.reshape(trials, p, -1).mean(axis=1)
        out[p] = float(averaged.var(axis=0, ddof=1).mean())
    return out


@dataclass
class CohesionReport:
    """Scatter summary of a labelled feature cloud.

    within_class_variance is the mean over classes of the mean squared
    distance to the class centroid; between_within_ratio is the trace of the
    between-class scatter over the trace of the within-class scatter.
    """

    within_class_variance: float
    between_within_ratio: float
    centroids: dict


def cohesion_report(features, labels) -> CohesionReport:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ValueError("features must be (samples, dims) aligned with labels")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    grand_mean = features.mean(axis=0)
    centroids = {}
    within_trace = 0.0
    between_trace = 0.0
    per_class_variance = []
    for cls in classes.tolist():
        rows = features[labels == cls]
        if rows.shape[0] < 2:
            raise ValueError(f"class {cls} has fewer than two samples")
        centroid = rows.mean(axis=0)
        centroids[int(cls)] = centroid
        sq = ((rows - centroid) ** 2).sum()
        within_trace += sq
        per_class_variance.append(sq / rows.shape[0])
        between_trace += rows.shape[0] * float(((centroid - grand_mean) ** 2).sum())
    if within_trace == 0.0:
        raise ValueError("within-class scatter is zero; the ratio is undefined")
    return CohesionReport(
        within_class_variance=float(np.mean(per_class_variance)),
        between_within_ratio=between_trace / within_trace,
        centroids=centroids,
    )
