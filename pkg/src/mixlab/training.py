"""SGD training over the loss-variant matrix, the stepwise LR schedule,
beta sweeps with a stratified validation split, and small experiment presets.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .analysis import cohesion_report
from .data import (
    AugmentPolicy,
    Dataset,
    DualBatch,
    epoch_batches,
    make_blobs,
    make_dual_batch,
    stratified_split,
)
from .errors import ConfigError, DivergenceError
from .mixing import (
    MixDraws,
    MixSpec,
    Variant,
    draw_mix_randomness,
    intra_synthesis_loss,
    mixed_pair_loss,
    total_loss,
)
from .nn import MlpModel, forward, init_mlp, one_hot, softmax
from .rng import RngStream

__all__ = [
    "OptimConfig",
    "OptimState",
    "LossParts",
    "RunRecord",
    "RunResult",
    "SweepResult",
    "DEFAULT_BETA_GRIDS",
    "DEFAULT_HIDDEN",
    "DEFAULT_ELIGIBLE_LAYERS",
    "PRESET_BATCH_SIZE",
    "PRESET_AUGMENT_NOISE",
    "PRESET_BETAS",
    "lr_at",
    "init_optim",
    "sgd_step",
    "batch_objective",
    "train_step",
    "accuracy",
    "model_features",
    "run_experiment",
    "sweep_beta",
    "blobs_preset",
    "preset_experiment",
]

DEFAULT_HIDDEN = (64, 32)
# Input plus the first hidden layer's output, so hidden-layer mixing has a
# genuine non-input option.
DEFAULT_ELIGIBLE_LAYERS = (0, 1)

DEFAULT_BETA_GRIDS = {
    Variant.W_RA: (0.2, 0.4, 0.5, 0.7),
    Variant.W_RA_AUG: (0.2, 0.4, 0.5, 0.7),
    Variant.W_RA_ER_M: (0.05, 0.1, 0.2, 0.4),
    Variant.W_RA_ER_MM: (0.05, 0.1, 0.2, 0.4),
}

# Blobs-preset settings. The batch size keeps per-class counts at one or two
# samples, the regime supplementation exists for and where synthesized
# features range over whole chords of a class cloud instead of hugging its
# centroid. The fixed betas are used when no sweep is requested; the small
# intra weight for the feature-synthesis variants keeps the plain-loss
# pressure comparable to the no-mixing baseline, which matters for the raw
# within-class variance comparison on this unnormalized toy model.
PRESET_BATCH_SIZE = 6
PRESET_AUGMENT_NOISE = 0.1
PRESET_BETAS = {
    Variant.W_RA: 0.05,
    Variant.W_RA_AUG: 0.05,
    Variant.W_RA_ER_M: 0.1,
    Variant.W_RA_ER_MM: 0.1,
}


@dataclass
class OptimConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    step_size: int = 10
    gamma: float = 0.5
    epochs: int = 30

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.step_size < 1:
            raise ValueError("step_size must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


def lr_at(config: OptimConfig, epoch: int) -> float:
    """Stepwise decay: lr * gamma ** floor(epoch / step_size)."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return config.lr * config.gamma ** (epoch // config.step_size)


@dataclass
class OptimState:
    """SGD-with-momentum state: v <- m*v + lr*(g + wd*theta); theta <- theta - v."""

    config: OptimConfig
    velocity: list = field(default_factory=list)
    lr: float = 0.0

    @classmethod
    def for_model(cls, model: MlpModel, config: OptimConfig) -> "OptimState":
        state = cls(config=config, lr=config.lr)
        state.velocity = nn.zero_grads(model)
        return state


def init_optim(model: MlpModel, config: OptimConfig) -> OptimState:
    return OptimState.for_model(model, config)


def sgd_step(model: MlpModel, grads, state: OptimState) -> None:
    cfg = state.config
    for layer, (g_w, g_b), (v_w, v_b) in zip(model.layers, grads, state.velocity):
        v_w *= cfg.momentum
        v_w += state.lr * (g_w + cfg.weight_decay * layer.weight)
        v_b *= cfg.momentum
        v_b += state.lr * (g_b + cfg.weight_decay * layer.bias)
        layer.weight -= v_w
        layer.bias -= v_b
    model.version += 1


@dataclass
class LossParts:
    """Per-batch loss components: the intra branch, the other branch (mixed
    or plain loss on the augmented rows), and their beta-weighted total."""

    intra: float
    other: float
    total: float


def _plain_loss(model: MlpModel, x, labels, want_grads: bool):
    cache = forward(model, x)
    probs = softmax(cache.logits)
    loss = float(np.mean(nn.per_sample_cross_entropy(probs, labels)))
    if not want_grads:
        return loss, None
    d_logits = (probs - one_hot(labels, model.num_classes)) / len(labels)
    grads, _ = nn.backward(model, cache, d_logits)
    return loss, grads


def batch_objective(model: MlpModel, batch: DualBatch, spec: MixSpec,
                    draws: MixDraws, want_grads: bool = True):
    """Losses (and parameter gradients) of one supplemented dual batch.

    The intra branch reads features of the original rows (augmented rows for
    the augmented-synthesis variant); the other branch is the mixed-pair loss
    for inter-class variants and the plain loss on augmented rows otherwise.
    Branch gradients are accumulated with their beta weights; a branch whose
    weight is exactly zero is skipped, so degenerate settings reproduce the
    single-branch variants bit for bit.
    """
    variant = spec.variant
    w_intra = spec.beta if variant.has_intra else 0.0
    w_other = 1.0 - spec.beta if variant.has_intra else 1.0
    grads = nn.zero_grads(model) if want_grads else None

    l_intra = 0.0
    if variant.has_intra:
        source = batch.augmented if variant is Variant.W_RA_AUG else batch.originals
        cache = forward(model, source)
        l_intra, intra_grads = intra_synthesis_loss(
            model, cache, batch.labels, draws.intra_weights,
            want_grads=want_grads and w_intra != 0.0,
        )
        if want_grads and w_intra != 0.0:
            nn.add_scaled_grads(grads, intra_grads, w_intra)

    need_other = want_grads and w_other != 0.0
    if variant.has_inter:
        l_other, other_grads = mixed_pair_loss(
            model, batch.augmented, batch.labels, draws.perm, draws.lams,
            draws.mix_layer, want_grads=need_other,
        )
    else:
        l_other, other_grads = _plain_loss(
            model, batch.augmented, batch.labels, want_grads=need_other
        )
    if need_other:
        nn.add_scaled_grads(grads, other_grads, w_other)

    beta = spec.beta if variant.has_intra else 0.0
    parts = LossParts(intra=l_intra, other=l_other,
                      total=total_loss(beta, l_intra, l_other))
    return parts, grads


def train_step(model: MlpModel, batch: DualBatch, spec: MixSpec,
               optim_state: OptimState, rng: RngStream) -> LossParts:
    """One objective evaluation plus one SGD update on the shared parameters."""
    draws = draw_mix_randomness(spec, batch.labels, rng)
    parts, grads = batch_objective(model, batch, spec, draws, want_grads=True)
    if not np.isfinite(parts.total):
        raise DivergenceError(f"non-finite loss {parts.total}")
    sgd_step(model, grads, optim_state)
    return parts


def accuracy(model: MlpModel, features, labels) -> float:
    logits = forward(model, features).logits
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def model_features(model: MlpModel, x) -> np.ndarray:
    """The vectors entering the classifier for the given rows."""
    return forward(model, x).features


@dataclass
class RunRecord:
    """One epoch of training: loss components, accuracies, cluster scores."""

    epoch: int
    loss_intra: float
    loss_inter: float
    loss_total: float
    val_acc: float | None
    test_acc: float | None
    cohesion: float | None
    separability: float | None
    lr: float
    wall_ms: float

    def row(self) -> dict:
        """Stable-order mapping of the deterministic fields (timing excluded,
        so re-runs from a config snapshot write byte-identical records)."""
        return {
            "epoch": self.epoch,
            "loss_intra": _jsonable(self.loss_intra),
            "loss_inter": _jsonable(self.loss_inter),
            "loss_total": _jsonable(self.loss_total),
            "val_acc": _jsonable(self.val_acc),
            "test_acc": _jsonable(self.test_acc),
            "cohesion": _jsonable(self.cohesion),
            "separability": _jsonable(self.separability),
            "lr": _jsonable(self.lr),
        }


def _jsonable(value):
    if value is None:
        return None
    value = float(value)
    if not np.isfinite(value):
        return repr(value)  # 'inf', '-inf', or 'nan' as strings, valid JSON
    return value


@dataclass
class RunResult:
    records: list
    summary: dict | None
    model: MlpModel
    diverged: bool = False


def _epoch_metrics(model, val, test):
    val_acc = accuracy(model, val.features, val.labels) if val is not None else None
    test_acc = None
    cohesion = separability = None
    if test is not None:
        test_acc = accuracy(model, test.features, test.labels)
        feats = model_features(model, test.features)
        try:
            report = cohesion_report(feats, test.labels)
            cohesion = report.within_class_variance
            separability = report.between_within_ratio
        except ValueError:
            pass  # degenerate geometry; leave the scores unset
    return val_acc, test_acc, cohesion, separability


def run_experiment(train: Dataset, spec: MixSpec, optim: OptimConfig,
                   rng: RngStream, *, test: Dataset | None = None,
                   val: Dataset | None = None, batch_size: int = 32,
                   hidden_sizes=DEFAULT_HIDDEN,
                   augment_policy: AugmentPolicy | None = None,
                   avg_window: int = 5, sink=None) -> RunResult:
    """Train one model; one record per epoch, summary over the last epochs.

    The summary averages test accuracy over the final ``avg_window`` epochs.
    A non-finite loss aborts the run with a diagnostic record and a summary
    flagged as diverged.
    """
    if augment_policy is None:
        augment_policy = AugmentPolicy()
    model = init_mlp(train.dim, hidden_sizes, train.num_classes, rng.derive("init"))
    for k in spec.eligible_layers:
        if k >= len(model.layers):
            raise ConfigError(
                f"eligible layer {k} does not exist in a {len(model.layers)}-layer model"
            )
    state = init_optim(model, optim)
    records: list[RunRecord] = []
    total_wall = 0.0
    for epoch in range(optim.epochs):
        started = time.perf_counter()
        state.lr = lr_at(optim, epoch)
        sums = np.zeros(3)
        steps = 0
        diverged = False
        for b, idx in enumerate(epoch_batches(len(train), rng.derive("order", epoch),
                                              batch_size)):
            batch_rng = rng.derive("batch", epoch, b)
            batch = make_dual_batch(train, idx, batch_rng, augment_policy)
            try:
                parts = train_step(model, batch, spec, state, batch_rng.derive("mix"))
            except DivergenceError:
                diverged = True
                parts = LossParts(np.nan, np.nan, np.inf)
            sums += (parts.intra, parts.other, parts.total)
            steps += 1
            if diverged:
                break
        wall_ms = (time.perf_counter() - started) * 1000.0
        total_wall += wall_ms
        if diverged:  # the model is non-finite; metrics would be meaningless
            val_acc = test_acc = cohesion = separability = None
        else:
            val_acc, test_acc, cohesion, separability = _epoch_metrics(model, val, test)
        record = RunRecord(
            epoch=epoch,
            loss_intra=sums[0] / steps,
            loss_inter=sums[1] / steps,
            loss_total=sums[2] / steps,
            val_acc=val_acc,
            test_acc=test_acc,
            cohesion=cohesion,
            separability=separability,
            lr=state.lr,
            wall_ms=wall_ms,
        )
        records.append(record)
        if sink is not None:
            sink(record)
        if diverged:
            summary = _summarize(spec, rng.seed, records, avg_window, total_wall,
                                 diverged=True)
            return RunResult(records, summary, model, diverged=True)
    summary = None
    if records:
        summary = _summarize(spec, rng.seed, records, avg_window, total_wall,
                             diverged=False)
    return RunResult(records, summary, model, diverged=False)


def _tail_mean(values, window):
    values = [v for v in values if v is not None]
    if not values:
        return None
    tail = values[-window:] if window > 0 else values
    return float(np.mean(tail))


def _summarize(spec, seed, records, avg_window, total_wall, diverged):
    last = records[-1]
    return {
        "variant": spec.variant.value,
        "beta": spec.beta,
        "seed": seed,
        "epochs": len(records),
        "final_test_acc": _tail_mean([r.test_acc for r in records], avg_window),
        "final_val_acc": _tail_mean([r.val_acc for r in records], avg_window),
        "cohesion": _jsonable(last.cohesion),
        "separability": _jsonable(last.separability),
        "wall_s": total_wall / 1000.0,
        "diverged": diverged,
    }


@dataclass
class SweepResult:
    best_beta: float
    val_scores: dict  # beta -> validation accuracy used for selection
    final: RunResult


def sweep_beta(train: Dataset, spec: MixSpec, optim: OptimConfig, rng: RngStream, *,
               grid=None, test: Dataset | None = None, val_fraction: float = 0.1,
               batch_size: int = 32, hidden_sizes=DEFAULT_HIDDEN,
               augment_policy: AugmentPolicy | None = None,
               avg_window: int = 5) -> SweepResult:
    """Pick beta on a stratified validation split, then retrain on all data.

    One run per grid entry trains on the 90% split; the beta with the best
    validation accuracy wins (ties go to the smaller beta) and a final run on
    the full training split reports test metrics.
    """
    if not spec.variant.has_intra:
        raise ConfigError(f"variant {spec.variant.value} has no beta to sweep")
    if grid is None:
        grid = DEFAULT_BETA_GRIDS[spec.variant]
    grid = tuple(float(b) for b in grid)
    if not grid:
        raise ConfigError("beta grid is empty")
    for b in grid:
        if not 0.0 <= b <= 1.0:
            raise ConfigError(f"beta grid entry {b} outside [0, 1]")
    fit_split, val_split = stratified_split(train, val_fraction, rng.derive("split"))
    val_scores: dict[float, float] = {}
    for i, beta in enumerate(grid):
        result = run_experiment(
            fit_split, replace(spec, beta=beta), optim, rng.derive("grid", i),
            test=None, val=val_split, batch_size=batch_size,
            hidden_sizes=hidden_sizes, augment_policy=augment_policy,
            avg_window=avg_window,
        )
        score = -np.inf if result.diverged else _tail_mean(
            [r.val_acc for r in result.records], avg_window
        )
        val_scores[beta] = float(score) if score is not None else -np.inf
    best_beta = min(grid)
    best_score = -np.inf
    for beta in sorted(grid):
        if val_scores[beta] > best_score:
            best_beta, best_score = beta, val_scores[beta]
    final = run_experiment(
        train, replace(spec, beta=best_beta), optim, rng.derive("final"),
        test=test, val=None, batch_size=batch_size, hidden_sizes=hidden_sizes,
        augment_policy=augment_policy, avg_window=avg_window,
    )
    return SweepResult(best_beta=best_beta, val_scores=val_scores, final=final)


def blobs_preset(seed: int, *, classes: int = 3, dim: int = 2, sigma: float = 1.2,
                 per_class: int = 375, test_fraction: float = 0.2,
                 spread: float = 2.0):
    """Overlapping-blobs task where cohesion effects show in tens of epochs.

    Returns (train, test): a stratified holdout of ``test_fraction`` leaves
    per_class * (1 - test_fraction) training rows per class.
    """
    rng = RngStream(seed).derive("blobs")
    full = make_blobs(classes, dim, sigma, per_class, rng.derive("draw"), spread=spread)
    return stratified_split(full, test_fraction, rng.derive("split"))


def preset_experiment(variant: Variant, seed: int, *, beta: float | None = None,
                      sweep: bool = False, epochs: int = 30):
    """One blobs-preset run (or beta sweep) for the given variant and seed.

    Returns the run's summary (the sweep's final retrained run when sweeping).
    """
    train, test = blobs_preset(seed)
    if beta is None:
        beta = PRESET_BETAS.get(variant, 0.0)
    spec = MixSpec(variant=variant, beta=beta,
                   eligible_layers=DEFAULT_ELIGIBLE_LAYERS)
    optim = OptimConfig(epochs=epochs)
    policy = AugmentPolicy(noise_sigma=PRESET_AUGMENT_NOISE)
    rng = RngStream(seed)
    if sweep:
        if variant not in DEFAULT_BETA_GRIDS:
            raise ConfigError(f"variant {variant.value} has no beta to sweep")
        result = sweep_beta(train, spec, optim, rng, test=test,
                            batch_size=PRESET_BATCH_SIZE, augment_policy=policy)
        return result.final.summary
    return run_experiment(train, spec, optim, rng, test=test,
                          batch_size=PRESET_BATCH_SIZE,
                          augment_policy=policy).summary
