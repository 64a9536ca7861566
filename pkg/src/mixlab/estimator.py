"""Scikit-learn style interface to the mixing trainer, so the algorithm
drops into pipelines, grid searches, and cross-validation unchanged."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import AugmentPolicy, Dataset
from .mixing import MixSpec, Variant
from .nn import forward, softmax
from .rng import RngStream
from .training import OptimConfig, run_experiment

__all__ = ["MixupMLPClassifier"]


class MixupMLPClassifier(ClassifierMixin, BaseEstimator):
    """MLP classifier trained with intra-class and/or inter-class mixing.

    Parameters
    ----------
    variant : str
        Which loss to train with: "wo_ra_er" (plain), "w_er_m" / "w_er_mm"
        (inter-class mixing at the input / a sampled hidden layer), "w_ra" /
        "w_ra_aug" (intra-class feature synthesis from original / augmented
        rows), or the combinations "w_ra_er_m" / "w_ra_er_mm".
    beta : float
        Weight of the intra branch against the other branch.
    alpha : float
        Beta-distribution parameter for the pair-mixing coefficient.
    p_interp : int
        Synthesized features per class per mini-batch.
    eligible_layers : tuple of int
        Layers hidden-layer mixing may choose from (0 is the input).
    noise_sigma : float
        Additive gaussian noise used to build the augmented view of each
        mini-batch (plain vector data).
    random_state : int
        Seed for every stochastic choice in the run.
    """

    def __init__(self, variant="w_ra_er_m", beta=0.1, alpha=1.0, p_interp=1,
                 eligible_layers=(0, 1), hidden_sizes=(64, 32), lr=0.1,
                 momentum=0.9, weight_decay=5e-4, step_size=10, gamma=0.5,
                 epochs=30, batch_size=32, noise_sigma=0.1, random_state=0):
        self.variant = variant
        self.beta = beta
        self.alpha = alpha
        self.p_interp = p_interp
        self.eligible_layers = eligible_layers
        self.hidden_sizes = hidden_sizes
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.step_size = step_size
        self.gamma = gamma
        self.epochs = epochs
        self.batch_size = batch_size
        self.noise_sigma = noise_sigma
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        counts = np.bincount(encoded)
        if counts.min() < 2:
            thin = self.classes_[int(np.argmin(counts))]
            raise ValueError(
                f"class {thin!r} has fewer than two samples; mixing needs pairs"
            )
        dataset = Dataset(np.asarray(X, dtype=np.float64), encoded)
        spec = MixSpec(
            variant=Variant.from_string(self.variant),
            beta=self.beta,
            alpha=self.alpha,
            p_interp=self.p_interp,
            eligible_layers=tuple(self.eligible_layers),
        )
        optim = OptimConfig(
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            step_size=self.step_size,
            gamma=self.gamma,
            epochs=self.epochs,
        )
        result = run_experiment(
            dataset, spec, optim, RngStream(self.random_state),
            batch_size=min(self.batch_size, len(dataset)),
            hidden_sizes=tuple(self.hidden_sizes),
            augment_policy=AugmentPolicy(noise_sigma=self.noise_sigma),
        )
        self.model_ = result.model
        self.history_ = result.records
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features but the model was fit with "
                f"{self.n_features_in_}"
            )
        return forward(self.model_, X).logits

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
