"""Dataset ingestion, mini-batch sampling, class supplementation, and the
dual original/augmented view construction."""
from __future__ import annotations

import csv
import gzip
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .rng import RngStream

__all__ = [
    "Dataset",
    "DualBatch",
    "AugmentPolicy",
    "sample_batch",
    "epoch_batches",
    "supplement",
    "augment",
    "make_dual_batch",
    "stratified_split",
    "make_blobs",
    "load_dataset",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature matrix plus integer labels; image rows carry their geometry."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    image_shape: tuple[int, int, int] | None = None  # (H, W, C) if rows are images
    num_classes: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d (samples, dims) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels must align with feature rows")
        if len(self.labels) and self.labels.min() < 0:
            raise DataError("labels must be nonnegative")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        elif len(self.labels) and self.labels.max() >= self.num_classes:
            raise DataError("label exceeds num_classes")
        if self.image_shape is not None:
            h, w, c = self.image_shape
            if h * w * c != self.features.shape[1]:
                raise DataError("image_shape does not match the feature width")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_indices(self) -> dict[int, np.ndarray]:
        return {int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels)}

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx], self.labels[idx], self.image_shape, self.num_classes
        )


@dataclass
class DualBatch:
    """Aligned original and augmented views of one supplemented mini-batch."""

    originals: np.ndarray
    augmented: np.ndarray
    labels: np.ndarray
    supplemented_count: int = 0

    def __len__(self) -> int:
        return self.originals.shape[0]


@dataclass
class AugmentPolicy:
    """Which augmentations to apply; the empty policy is the identity.

    Image rows get zero-pad-then-random-crop, horizontal flip with
    probability one half, and a fully contained square cutout zeroed, in that
    order. Plain vector rows get additive gaussian noise.
    """

    noise_sigma: float = 0.0
    crop_pad: int = 0
    flip: bool = False
    cutout: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.crop_pad < 0 or self.cutout < 0:
            raise ConfigError("augmentation sizes must be nonnegative")

    @property
    def wants_image(self) -> bool:
        return self.crop_pad > 0 or self.flip or self.cutout > 0


def sample_batch(dataset: Dataset, rng: RngStream, batch_size: int) -> np.ndarray:
    """batch_size distinct indices drawn uniformly without replacement."""
    n = len(dataset)
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size {batch_size} not in [1, {n}]")
    return rng.permutation(n)[:batch_size]


def epoch_batches(n: int, rng: RngStream, batch_size: int):
    """One shuffled pass over all n indices in chunks (the last may be short)."""
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def supplement(batch_indices, dataset: Dataset, rng: RngStream) -> np.ndarray:
    """Extend a batch so every class present has at least two members.

    Each singleton class gains one same-class sample drawn uniformly from
    outside the batch. Originals keep their order; additions follow them.
    Classes already at two or more members are untouched.
    """
    batch = np.asarray(batch_indices, dtype=np.int64)
    labels = dataset.labels[batch]
    additions = []
    for cls in sorted(np.unique(labels).tolist()):
        if int((labels == cls).sum()) != 1:
            continue
        pool = np.flatnonzero(dataset.labels == cls)
        outside = np.setdiff1d(pool, batch, assume_unique=False)
        if outside.size == 0:
            raise DataError(
                f"class {cls} appears once in the batch and has no sample left "
                "outside it to supplement with"
            )
        additions.append(int(outside[int(rng.integers(outside.size))]))
    if not additions:
        return batch.copy()
    return np.concatenate([batch, np.asarray(additions, dtype=np.int64)])


def augment(originals, rng: RngStream, policy: AugmentPolicy,
            image_shape=None) -> np.ndarray:
    """Augmented copies of the rows; shapes are preserved.

    Image operations require image geometry and run in the order crop, flip,
    cutout; gaussian noise applies to any geometry afterwards.
    """
    x = np.array(originals, dtype=np.float64, copy=True)
    if x.ndim != 2:
        raise ValueError("originals must be a 2-d (samples, dims) matrix")
    m = x.shape[0]
    if policy.wants_image:
        if image_shape is None:
            raise ConfigError("image augmentations require image geometry")
        h, w, c = image_shape
        imgs = x.reshape(m, h, w, c)
        if policy.crop_pad > 0:
            pad = policy.crop_pad
            padded = np.pad(imgs, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
            tops = rng.integers(0, 2 * pad + 1, size=m)
            lefts = rng.integers(0, 2 * pad + 1, size=m)
            imgs = np.stack(
                [padded[i, t : t + h, l : l + w] for i, (t, l) in enumerate(zip(tops, lefts))]
            )
        if policy.flip:
            flips = rng.uniform(m) < 0.5
            imgs[flips] = imgs[flips, :, ::-1, :]
        if policy.cutout > 0:
            s = policy.cutout
            if s > min(h, w):
                raise ConfigError(f"cutout size {s} exceeds the {h}x{w} image")
            tops = rng.integers(0, h - s + 1, size=m)
            lefts = rng.integers(0, w - s + 1, size=m)
            for i in range(m):
                imgs[i, tops[i] : tops[i] + s, lefts[i] : lefts[i] + s, :] = 0.0
        x = imgs.reshape(m, -1)
    if policy.noise_sigma > 0:
        x = x + rng.normal(size=x.shape, scale=policy.noise_sigma)
    return x


def make_dual_batch(dataset: Dataset, batch_indices, rng: RngStream,
                    policy: AugmentPolicy) -> DualBatch:
    """Supplement the batch, then build aligned original and augmented views.

    Augmentation runs after supplementation so added samples get an augmented
    view of their own.
    """
    full = supplement(batch_indices, dataset, rng.derive("supplement"))
    originals = dataset.features[full]
    augmented = augment(originals, rng.derive("augment"), policy, dataset.image_shape)
    return DualBatch(
        originals=originals,
        augmented=augmented,
        labels=dataset.labels[full],
        supplemented_count=len(full) - len(batch_indices),
    )


def stratified_split(dataset: Dataset, fraction: float, rng: RngStream):
    """(rest, held) split: per class, round(fraction * n_c) rows are held out."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    held_parts, rest_parts = [], []
    for cls, idx in sorted(dataset.class_indices().items()):
        take = int(round(fraction * idx.size))
        order = idx[rng.permutation(idx.size)]
        held_parts.append(order[:take])
        rest_parts.append(order[take:])
    held = np.sort(np.concatenate(held_parts))
    rest = np.sort(np.concatenate(rest_parts))
    return dataset.subset(rest), dataset.subset(held)


def _standardize(features: np.ndarray) -> np.ndarray:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return (features - mean) / std


def make_blobs(classes: int, dim: int, sigma: float, per_class: int,
               rng: RngStream, spread: float = 2.0) -> Dataset:
    """Isotropic gaussian blobs with deterministic means, standardized.

    Means sit evenly on a circle of radius ``spread`` in the first two
    dimensions (on a line for 1-d data), so class overlap is controlled by
    sigma alone.
    """
    if classes < 1 or dim < 1 or per_class < 1:
        raise ValueError("classes, dim, and per_class must be positive")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    means = np.zeros((classes, dim))
    if dim == 1:
        means[:, 0] = np.linspace(-spread, spread, classes) if classes > 1 else 0.0
    else:
        angles = 2.0 * np.pi * np.arange(classes) / classes
        means[:, 0] = spread * np.cos(angles)
        means[:, 1] = spread * np.sin(angles)
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal(size=(classes * per_class, dim), scale=sigma)
    features = _standardize(means[labels] + noise)
    return Dataset(features, labels, num_classes=classes)


def _parse_synthetic_spec(source: str) -> dict:
    """Inline blob spec: whitespace- or comma-separated key=value pairs."""
    known = {
        "classes": int,
        "dim": int,
        "sigma": float,
        "per_class": int,
        "seed": int,
        "spread": float,
    }
    values = {"classes": 3, "dim": 2, "sigma": 0.5, "per_class": 300, "seed": 7,
              "spread": 2.0}
    text = source.replace(",", " ")
    for token in text.split():
        key, sep, raw = token.partition("=")
        if not sep:
            raise ParseError(f"synthetic spec entry {token!r} is not key=value")
        key = key.strip()
        if key not in known:
            raise ParseError(f"unknown synthetic spec key {key!r}")
        try:
            values[key] = known[key](raw.strip())
        except ValueError:
            raise ParseError(f"synthetic spec key {key!r} has a bad value {raw!r}")
    return values


def _load_csv(path: str) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in header]
    if not header or header[-1] != "label":
        raise ParseError(f"{path}:1: last header column must be 'label'")
    width = len(header)
    if width < 2:
        raise ParseError(f"{path}:1: need at least one feature column")
    rows, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width:
            raise ParseError(
                f"{path}:{lineno}: expected {width} fields, got {len(row)}"
            )
        try:
            rows.append([float(v) for v in row[:-1]])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric feature value")
        try:
            labels.append(int(row[-1]))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: label must be an integer")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    features = _standardize(np.asarray(rows, dtype=np.float64))
    return Dataset(features, _check_contiguous_labels(np.asarray(labels)))


def _check_contiguous_labels(labels: np.ndarray) -> np.ndarray:
    present = np.unique(labels)
    if present.min() != 0 or present.max() != len(present) - 1:
        expected = set(range(int(present.max()) + 1))
        missing = sorted(expected - set(present.tolist()))
        raise DataError(f"labels must be 0-based and contiguous; missing {missing}")
    return labels


def _open_maybe_gzip(path: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path: str, magic: int, ndim: int) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise ParseError(f"{path}: offset 0: truncated magic")
        (got,) = struct.unpack(">I", head)
        if got != magic:
            raise ParseError(
                f"{path}: offset 0: bad magic 0x{got:08x}, expected 0x{magic:08x}"
            )
        raw_dims = fh.read(4 * ndim)
        if len(raw_dims) < 4 * ndim:
            raise ParseError(f"{path}: offset 4: truncated dimension header")
        dims = struct.unpack(f">{ndim}I", raw_dims)
        payload = fh.read()
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise ParseError(
            f"{path}: offset {4 + 4 * ndim}: expected {expected} payload bytes, "
            f"got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def _labels_path_for(images_path: str) -> str:
    name = str(images_path)
    candidate = name.replace("images", "labels").replace("idx3", "idx1")
    if candidate == name or not Path(candidate).exists():
        raise DataError(
            f"cannot find a labels file next to {images_path}; expected a "
            "sibling with 'images'->'labels' (and 'idx3'->'idx1') in its name"
        )
    return candidate


def _load_idx(path: str) -> Dataset:
    images = _read_idx(path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(_labels_path_for(path), IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    n, h, w = images.shape
    features = images.reshape(n, h * w).astype(np.float64) / 255.0
    return Dataset(
        features,
        _check_contiguous_labels(labels.astype(np.int64)),
        image_shape=(h, w, 1),
    )


def load_dataset(source: str, format: str) -> Dataset:
    """Load a dataset from a csv file, an idx image file, or an inline
    synthetic blob spec such as ``classes=3 dim=2 sigma=0.5 per_class=300 seed=7``.
    """
    if format == "csv":
        return _load_csv(source)
    if format == "idx":
        return _load_idx(source)
    if format in ("synthetic", "synthetic-spec"):
        spec = _parse_synthetic_spec(source)
        rng = RngStream(spec["seed"]).derive("blobs")
        return make_blobs(
            spec["classes"], spec["dim"], spec["sigma"], spec["per_class"], rng,
            spread=spec["spread"],
        )
    raise ConfigError(f"unknown dataset format {format!r}")
