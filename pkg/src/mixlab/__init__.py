"""mixlab: a desk-scale training lab for intra-class feature mixing,
inter-class mixup, and their beta-weighted combination, plus analysis tools
for pairing probabilities, gradient variance, and feature-space cohesion."""

from .analysis import (
    CohesionReport,
    PairingModel,
    cohesion_report,
    grad_term_variance,
    intra_pair_fraction_analytic,
    intra_pair_fraction_montecarlo,
)
from .config import ExperimentConfig, parse_config, resolve_datasets, serialize_config
from .data import (
    AugmentPolicy,
    Dataset,
    DualBatch,
    augment,
    epoch_batches,
    load_dataset,
    make_blobs,
    make_dual_batch,
    sample_batch,
    stratified_split,
    supplement,
)
from .errors import ConfigError, DataError, DivergenceError, ParseError
from .estimator import MixupMLPClassifier
from .mixing import (
    MixDraws,
    MixSpec,
    MixedTarget,
    Variant,
    draw_mix_randomness,
    inter_loss_manifold,
    inter_loss_mixup,
    interpolation_weights,
    intra_loss,
    mix,
    synthesize_class_feature,
    total_loss,
)
from .nn import (
    Layer,
    MlpModel,
    backward,
    cross_entropy,
    finite_difference_grads,
    forward,
    init_mlp,
    max_relative_error,
    softmax,
)
from .rng import RngStream
from .training import (
    OptimConfig,
    RunRecord,
    RunResult,
    SweepResult,
    accuracy,
    batch_objective,
    blobs_preset,
    lr_at,
    run_experiment,
    sweep_beta,
    train_step,
)

__version__ = "0.1.0"
