"""Command-line surface tying the modules into reproducible experiments.

Subcommands: train (one run), sweep (beta grid with validation selection),
analyze-prob (pairing-probability tables), grad-variance (interpolation-count
variance study), grad-check (finite-difference audit of every variant), and
compare (variant matrix on the built-in blobs task).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import ExperimentConfig, parse_config, resolve_datasets, serialize_config
from .data import DualBatch
from .errors import ConfigError, DataError, DivergenceError, ParseError
from .mixing import MixSpec, Variant, draw_mix_randomness
from .nn import Layer, finite_difference_grads, init_mlp, max_relative_error
from .rng import RngStream
from .training import (
    DEFAULT_BETA_GRIDS,
    batch_objective,
    preset_experiment,
    run_experiment,
    sweep_beta,
)

GRAD_TOLERANCE = 1e-5


def _load_config(args) -> ExperimentConfig:
    text = Path(args.config).read_text(encoding="utf-8")
    config = parse_config(text)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "variant", None):
        config = dataclasses.replace(
            config, mix=dataclasses.replace(config.mix,
                                            variant=Variant.from_string(args.variant))
        )
    if getattr(args, "beta", None) is not None:
        config = dataclasses.replace(
            config, mix=dataclasses.replace(config.mix, beta=args.beta)
        )
    if getattr(args, "out", None):
        config.out = args.out
    return config


def _prepare_run_dir(config: ExperimentConfig, force: bool) -> Path:
    if not config.out:
        raise ConfigError("no output directory: pass --out or set [run] out")
    out = Path(config.out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"{out} already has contents; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot").write_text(serialize_config(config), encoding="utf-8")
    return out


class _RecordWriter:
    """Append-only line-delimited records with stable field order."""

    def __init__(self, path: Path):
        self._fh = open(path, "w", encoding="utf-8")

    def __call__(self, record) -> None:
        self._fh.write(json.dumps(record.row()) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _write_summary(out: Path, summary) -> None:
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, default=float) + "\n", encoding="utf-8"
    )


def _cmd_train(args) -> int:
    config = _load_config(args)
    out = _prepare_run_dir(config, args.force)
    train, test = resolve_datasets(config)
    writer = _RecordWriter(out / "records.jsonl")
    try:
        result = run_experiment(
            train, config.mix, config.optim, RngStream(config.seed), test=test,
            batch_size=config.batch_size, hidden_sizes=config.hidden,
            augment_policy=config.augment, avg_window=config.avg_window,
            sink=writer,
        )
    finally:
        writer.close()
    _write_summary(out, result.summary or {"epochs": 0})
    if result.diverged:
        print(f"run diverged; diagnostics in {out}")
        return 1
    if result.summary:
        print(
            f"{config.mix.variant.value} beta={config.mix.beta} seed={config.seed} "
            f"final_test_acc={result.summary['final_test_acc']}"
        )
    print(f"records written to {out}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    out = _prepare_run_dir(config, args.force)
    train, test = resolve_datasets(config)
    result = sweep_beta(
        train, config.mix, config.optim, RngStream(config.seed),
        grid=config.sweep_grid, test=test, val_fraction=config.val_fraction,
        batch_size=config.batch_size, hidden_sizes=config.hidden,
        augment_policy=config.augment, avg_window=config.avg_window,
    )
    writer = _RecordWriter(out / "records.jsonl")
    try:
        for record in result.final.records:
            writer(record)
    finally:
        writer.close()
    summary = {
        "best_beta": result.best_beta,
        "val_scores": {repr(k): v for k, v in sorted(result.val_scores.items())},
        "final": result.final.summary,
    }
    _write_summary(out, summary)
    print(f"best beta {result.best_beta}; final metrics in {out}")
    return 0


def _cmd_analyze_prob(args) -> int:
    samplings = (
        ("equal_counts", "iid_uniform") if args.sampling == "both" else (args.sampling,)
    )
    rng = RngStream(args.seed)
    lines = ["classes,batch_size,sampling,analytic,mc_estimate,mc_std_error,trials"]
    for sampling in samplings:
        model = analysis.PairingModel(args.classes, args.batch, sampling, args.trials)
        expected = analysis.intra_pair_fraction_analytic(
            args.classes, args.batch, sampling
        )
        estimate, err = analysis.intra_pair_fraction_montecarlo(
            model, rng.derive(sampling)
        )
        lines.append(
            f"{args.classes},{args.batch},{sampling},{expected!r},{estimate!r},"
            f"{err!r},{args.trials}"
        )
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(table, end="")
    return 0


def _cmd_grad_variance(args) -> int:
    rng = RngStream(args.seed)
    features = rng.derive("features").normal(size=(args.members, args.dim))
    classifier = Layer(
        rng.derive("weights").normal(size=(args.classes, args.dim), scale=0.5),
        rng.derive("bias").normal(size=args.classes, scale=0.1),
        "identity",
    )
    p_values = sorted(int(p) for p in args.p.split(","))
    variances = analysis.grad_term_variance(
        features, classifier, p_values, args.trials, rng.derive("trials")
    )
    lines = ["p,mean_variance"]
    for p in p_values:
        lines.append(f"{p},{variances[p]!r}")
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(table, end="")
    return 0


def _audit_batch(rng: RngStream, num_classes: int = 3, dim: int = 4):
    """Small supplemented-shaped dual batch with every class at >= 2 rows."""
    labels = np.repeat(np.arange(num_classes), 2)
    originals = rng.derive("orig").normal(size=(len(labels), dim))
    augmented = originals + rng.derive("aug").normal(size=originals.shape, scale=0.1)
    return DualBatch(originals, augmented, labels, supplemented_count=0)


def gradient_audit(seed: int, variants=None, beta: float = 0.3) -> dict:
    """Max relative error between analytic and central-difference gradients
    of each variant's full objective on a seeded two-hidden-layer model."""
    variants = list(variants or Variant)
    rng = RngStream(seed)
    batch = _audit_batch(rng.derive("batch"))
    out = {}
    for variant in variants:
        spec = MixSpec(variant=variant, beta=beta, eligible_layers=(0, 1, 2))
        model = init_mlp(4, (6, 5), 3, rng.derive("init", variant.value))
        draws = draw_mix_randomness(spec, batch.labels,
                                    rng.derive("mix", variant.value))
        _, analytic = batch_objective(model, batch, spec, draws, want_grads=True)

        def loss_of(m):
            parts, _ = batch_objective(m, batch, spec, draws, want_grads=False)
            return parts.total

        numeric = finite_difference_grads(model, loss_of, h=1e-5)
        out[variant] = max_relative_error(analytic, numeric)
    return out


def _cmd_grad_check(args) -> int:
    variants = None if args.variant == "all" else [Variant.from_string(args.variant)]
    errors = gradient_audit(args.seed, variants)
    worst = max(errors.values())
    for variant, err in errors.items():
        status = "ok" if err < GRAD_TOLERANCE else "FAIL"
        print(f"{variant.value:12s} max_rel_error={err:.3e} {status}")
    print(f"worst max_rel_error={worst:.3e} (tolerance {GRAD_TOLERANCE:g})")
    return 0 if worst < GRAD_TOLERANCE else 1


def _cmd_compare(args) -> int:
    variant_names = args.variants.split(",") if args.variants else [
        "wo_ra_er", "w_ra", "w_er_m", "w_er_mm", "w_ra_er_m", "w_ra_er_mm",
    ]
    variants = [Variant.from_string(name) for name in variant_names]
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for variant in variants:
        accs, cohesions, separabilities, betas = [], [], [], []
        sweepable = variant in DEFAULT_BETA_GRIDS
        for seed in seeds:
            summary = preset_experiment(
                variant, seed, sweep=args.sweep and sweepable, epochs=args.epochs
            )
            accs.append(summary["final_test_acc"])
            cohesions.append(summary["cohesion"])
            separabilities.append(summary["separability"])
            betas.append(summary["beta"])
        rows.append({
            "variant": variant.value,
            "beta": betas[0] if sweepable and not args.sweep else None,
            "swept_betas": betas if sweepable and args.sweep else None,
            "test_acc_mean": float(np.mean(accs)),
            "test_acc_std": float(np.std(accs)),
            "cohesion_median": float(np.median(cohesions)),
            "separability_median": float(np.median(separabilities)),
        })
    header = f"{'variant':12s} {'beta':>5s} {'test_acc':>16s} {'cohesion':>9s} {'separab.':>9s}"
    print(header)
    for row in rows:
        beta = "-" if row["beta"] is None else f"{row['beta']:.2f}"
        print(
            f"{row['variant']:12s} {beta:>5s} "
            f"{row['test_acc_mean']:.4f} +/- {row['test_acc_std']:.4f} "
            f"{row['cohesion_median']:9.4f} {row['separability_median']:9.4f}"
        )
    if args.out:
        Path(args.out).write_text(
            "\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8"
        )
        print(f"wrote {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixlab",
        description="Training lab for intra-class feature mixing and inter-class mixup.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="run directory")
        p.add_argument("--variant", default=None, help="override [mix] variant")
        p.add_argument("--beta", type=float, default=None, help="override [mix] beta")
        p.add_argument("--force", action="store_true",
                       help="overwrite an existing run directory")

    train_p = sub.add_parser("train", help="run one training experiment")
    add_run_flags(train_p)
    train_p.set_defaults(func=_cmd_train)

    sweep_p = sub.add_parser("sweep", help="beta grid with validation selection")
    add_run_flags(sweep_p)
    sweep_p.set_defaults(func=_cmd_sweep)

    prob_p = sub.add_parser("analyze-prob",
                            help="intra-class pairing probability table")
    prob_p.add_argument("--classes", type=int, required=True)
    prob_p.add_argument("--batch", type=int, required=True)
    prob_p.add_argument("--sampling", default="both",
                        choices=["equal_counts", "iid_uniform", "both"])
    prob_p.add_argument("--trials", type=int, default=100_000)
    prob_p.add_argument("--seed", type=int, default=0)
    prob_p.add_argument("--out", default=None, help="write csv here instead of stdout")
    prob_p.set_defaults(func=_cmd_analyze_prob)

    var_p = sub.add_parser("grad-variance",
                           help="variance of the averaged synthesis gradient term")
    var_p.add_argument("--p", default="1,2,3,5", help="comma-separated counts")
    var_p.add_argument("--trials", type=int, default=10_000)
    var_p.add_argument("--members", type=int, default=6)
    var_p.add_argument("--dim", type=int, default=3)
    var_p.add_argument("--classes", type=int, default=3)
    var_p.add_argument("--seed", type=int, default=0)
    var_p.add_argument("--out", default=None, help="write csv here instead of stdout")
    var_p.set_defaults(func=_cmd_grad_variance)

    check_p = sub.add_parser("grad-check",
                             help="finite-difference audit of every variant")
    check_p.add_argument("--seed", type=int, default=1)
    check_p.add_argument("--variant", default="all")
    check_p.set_defaults(func=_cmd_grad_check)

    cmp_p = sub.add_parser("compare", help="variant matrix on the blobs preset")
    cmp_p.add_argument("--seeds", default="1,2,3")
    cmp_p.add_argument("--epochs", type=int, default=30)
    cmp_p.add_argument("--variants", default=None,
                       help="comma-separated subset (default: the six headline variants)")
    cmp_p.add_argument("--sweep", action="store_true",
                       help="sweep beta instead of using the fixed defaults")
    cmp_p.add_argument("--out", default=None, help="write summary rows here")
    cmp_p.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, ParseError, DivergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
