"""Experiment configuration: a sectioned key=value text format that
round-trips losslessly, plus the dataset resolution helpers built on it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .data import AugmentPolicy, load_dataset, stratified_split
from .errors import ConfigError
from .mixing import INPUT_LAYER, MixSpec, Variant
from .rng import RngStream
from .training import DEFAULT_ELIGIBLE_LAYERS, DEFAULT_HIDDEN, OptimConfig

__all__ = ["DatasetConfig", "ExperimentConfig", "parse_config", "serialize_config",
           "resolve_datasets"]


@dataclass
class DatasetConfig:
    format: str = "synthetic"
    source: str = ""
    test_source: str = ""  # optional explicit test set (same format)
    test_fraction: float = 0.2  # stratified holdout used when test_source is empty

    def __post_init__(self):
        if self.format not in ("csv", "idx", "synthetic"):
            raise ConfigError(f"unknown dataset format {self.format!r}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in [0, 1)")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    mix: MixSpec = field(default_factory=lambda: MixSpec(
        eligible_layers=DEFAULT_ELIGIBLE_LAYERS))
    augment: AugmentPolicy = field(default_factory=lambda: AugmentPolicy(
        noise_sigma=0.1))
    optim: OptimConfig = field(default_factory=OptimConfig)
    batch_size: int = 32
    seed: int = 0
    avg_window: int = 5
    out: str = ""
    sweep_grid: tuple[float, ...] | None = None
    val_fraction: float = 0.1


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.replace(",", " ").split())


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.replace(",", " ").split())


def _parse_layers(raw: str) -> tuple[int, ...]:
    out = []
    for tok in raw.replace(",", " ").split():
        if tok.lower() == "input":
            out.append(INPUT_LAYER)
        else:
            out.append(int(tok))
    return tuple(out)


# section -> key -> (target attribute path, parser)
_SCHEMA = {
    "dataset": {
        "format": ("dataset.format", str),
        "source": ("dataset.source", str),
        "test_source": ("dataset.test_source", str),
        "test_fraction": ("dataset.test_fraction", float),
    },
    "model": {
        "hidden": ("hidden", _parse_int_list),
    },
    "mix": {
        "variant": ("mix.variant", Variant.from_string),
        "beta": ("mix.beta", float),
        "alpha": ("mix.alpha", float),
        "p_interp": ("mix.p_interp", int),
        "eligible_layers": ("mix.eligible_layers", _parse_layers),
    },
    "augment": {
        "noise_sigma": ("augment.noise_sigma", float),
        "crop_pad": ("augment.crop_pad", int),
        "flip": ("augment.flip", _parse_bool),
        "cutout": ("augment.cutout", int),
    },
    "optim": {
        "lr": ("optim.lr", float),
        "momentum": ("optim.momentum", float),
        "weight_decay": ("optim.weight_decay", float),
        "step_size": ("optim.step_size", int),
        "gamma": ("optim.gamma", float),
        "epochs": ("optim.epochs", int),
        "batch_size": ("batch_size", int),
    },
    "run": {
        "seed": ("seed", int),
        "avg_window": ("avg_window", int),
        "out": ("out", str),
    },
    "sweep": {
        "grid": ("sweep_grid", _parse_float_list),
        "val_fraction": ("val_fraction", float),
    },
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse the sectioned key=value format.

    Unknown sections or keys, malformed lines, and constraint violations all
    raise ConfigError naming the offending key and line.
    """
    raw: dict[str, dict[str, tuple[str, int]]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or stripped.startswith(";"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            raw.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if key in raw[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{section}]")
        raw[section][key] = (value.strip(), lineno)

    values: dict[str, object] = {}
    for section, entries in raw.items():
        for key, (text_value, lineno) in entries.items():
            target, parser = _SCHEMA[section][key]
            try:
                values[target] = parser(text_value)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}")

    def pick(target, default):
        return values.get(target, default)

    try:
        dataset = DatasetConfig(
            format=pick("dataset.format", "synthetic"),
            source=pick("dataset.source", ""),
            test_source=pick("dataset.test_source", ""),
            test_fraction=pick("dataset.test_fraction", 0.2),
        )
        mix = MixSpec(
            variant=pick("mix.variant", Variant.W_RA_ER_M),
            beta=pick("mix.beta", 0.1),
            alpha=pick("mix.alpha", 1.0),
            p_interp=pick("mix.p_interp", 1),
            eligible_layers=pick("mix.eligible_layers", DEFAULT_ELIGIBLE_LAYERS),
        )
        augment = AugmentPolicy(
            noise_sigma=pick("augment.noise_sigma", 0.1),
            crop_pad=pick("augment.crop_pad", 0),
            flip=pick("augment.flip", False),
            cutout=pick("augment.cutout", 0),
        )
        optim = OptimConfig(
            lr=pick("optim.lr", 0.1),
            momentum=pick("optim.momentum", 0.9),
            weight_decay=pick("optim.weight_decay", 5e-4),
            step_size=pick("optim.step_size", 10),
            gamma=pick("optim.gamma", 0.5),
            epochs=pick("optim.epochs", 30),
        )
    except ValueError as exc:
        raise _located_error(raw, str(exc))

    config = ExperimentConfig(
        dataset=dataset,
        hidden=pick("hidden", DEFAULT_HIDDEN),
        mix=mix,
        augment=augment,
        optim=optim,
        batch_size=pick("batch_size", 32),
        seed=pick("seed", 0),
        avg_window=pick("avg_window", 5),
        out=pick("out", ""),
        sweep_grid=pick("sweep_grid", None),
        val_fraction=pick("val_fraction", 0.1),
    )
    if not config.dataset.source:
        raise ConfigError("the [dataset] section must set 'source'")
    if config.batch_size < 1:
        raise ConfigError("batch_size must be positive")
    if config.avg_window < 1:
        raise ConfigError("avg_window must be positive")
    if not 0.0 < config.val_fraction < 1.0:
        raise ConfigError("val_fraction must be in (0, 1)")
    if config.sweep_grid is not None:
        for b in config.sweep_grid:
            if not 0.0 <= b <= 1.0:
                raise ConfigError(f"sweep grid entry {b} outside [0, 1] (key 'grid')")
    return config


def _located_error(raw, message) -> ConfigError:
    """Attach the offending line when a dataclass validation names a key."""
    for section, entries in raw.items():
        for key, (_, lineno) in entries.items():
            if key in message or key.replace("_", " ") in message:
                return ConfigError(f"line {lineno}: {message} (key {key!r})")
    return ConfigError(message)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(c)) == c."""
    layers = ",".join(
        "input" if k == INPUT_LAYER else str(k) for k in config.mix.eligible_layers
    )
    lines = [
        "[dataset]",
        f"format = {config.dataset.format}",
        f"source = {config.dataset.source}",
    ]
    if config.dataset.test_source:
        lines.append(f"test_source = {config.dataset.test_source}")
    lines += [
        f"test_fraction = {_format_value(config.dataset.test_fraction)}",
        "",
        "[model]",
        "hidden = " + ",".join(str(h) for h in config.hidden),
        "",
        "[mix]",
        f"variant = {config.mix.variant.value}",
        f"beta = {_format_value(config.mix.beta)}",
        f"alpha = {_format_value(config.mix.alpha)}",
        f"p_interp = {config.mix.p_interp}",
        f"eligible_layers = {layers}",
        "",
        "[augment]",
        f"noise_sigma = {_format_value(config.augment.noise_sigma)}",
        f"crop_pad = {config.augment.crop_pad}",
        f"flip = {_format_value(config.augment.flip)}",
        f"cutout = {config.augment.cutout}",
        "",
        "[optim]",
        f"lr = {_format_value(config.optim.lr)}",
        f"momentum = {_format_value(config.optim.momentum)}",
        f"weight_decay = {_format_value(config.optim.weight_decay)}",
        f"step_size = {config.optim.step_size}",
        f"gamma = {_format_value(config.optim.gamma)}",
        f"epochs = {config.optim.epochs}",
        f"batch_size = {config.batch_size}",
        "",
        "[run]",
        f"seed = {config.seed}",
        f"avg_window = {config.avg_window}",
    ]
    if config.out:
        lines.append(f"out = {config.out}")
    lines += ["", "[sweep]"]
    if config.sweep_grid is not None:
        lines.append("grid = " + ",".join(repr(b) for b in config.sweep_grid))
    lines.append(f"val_fraction = {_format_value(config.val_fraction)}")
    return "\n".join(lines) + "\n"


def resolve_datasets(config: ExperimentConfig):
    """(train, test) per the dataset section.

    An explicit test_source loads a second dataset; otherwise a stratified
    test_fraction holdout is carved from the loaded data (no holdout when the
    fraction is zero).
    """
    base = load_dataset(config.dataset.source, config.dataset.format)
    if config.dataset.test_source:
        test = load_dataset(config.dataset.test_source, config.dataset.format)
        if test.dim != base.dim:
            raise ConfigError("train and test sets have different widths")
        return base, test
    if config.dataset.test_fraction == 0.0:
        return base, None
    split_rng = RngStream(config.seed).derive("test-split")
    return stratified_split(base, config.dataset.test_fraction, split_rng)
