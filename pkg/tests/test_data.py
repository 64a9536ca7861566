import struct

import numpy as np
import pytest
from scipy import stats

from mixlab.data import (
    AugmentPolicy,
    Dataset,
    augment,
    epoch_batches,
    load_dataset,
    make_blobs,
    make_dual_batch,
    sample_batch,
    stratified_split,
    supplement,
)
from mixlab.errors import ConfigError, DataError, ParseError
from mixlab.rng import RngStream


def _toy_dataset(per_class=4, classes=3, dim=2, seed=0):
    rng = RngStream(seed)
    labels = np.repeat(np.arange(classes), per_class)
    features = rng.normal(size=(len(labels), dim))
    return Dataset(features, labels)


def test_sample_batch_full_size_is_permutation():
    ds = _toy_dataset()
    idx = sample_batch(ds, RngStream(1), len(ds))
    assert sorted(idx.tolist()) == list(range(len(ds)))


def test_sample_batch_deterministic():
    ds = _toy_dataset()
    a = sample_batch(ds, RngStream(7), 5)
    b = sample_batch(ds, RngStream(7), 5)
    assert np.array_equal(a, b)
    assert len(set(a.tolist())) == 5


def test_sample_batch_too_large():
    ds = _toy_dataset()
    with pytest.raises(ValueError):
        sample_batch(ds, RngStream(0), len(ds) + 1)


def test_sample_batch_inclusion_uniform_chi_square():
    # frequency-count oracle: inclusion counts over many draws are uniform
    ds = _toy_dataset(per_class=5, classes=4)  # n = 20
    n, batch, epochs = len(ds), 5, 10_000
    rng = RngStream(3)
    counts = np.zeros(n)
    for _ in range(epochs):
        counts[sample_batch(ds, rng, batch)] += 1
    expected = epochs * batch / n
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    p_value = stats.chi2.sf(chi2, df=n - 1)
    assert p_value > 0.01


def test_epoch_batches_cover_everything_once():
    order = np.concatenate(list(epoch_batches(10, RngStream(0), 3)))
    assert sorted(order.tolist()) == list(range(10))


def test_supplement_untouched_when_all_classes_paired():
    ds = _toy_dataset()
    batch = np.array([0, 1, 4, 5])  # classes 0 and 1, two samples each
    out = supplement(batch, ds, RngStream(0))
    assert np.array_equal(out, batch)


def test_supplement_adds_one_for_singleton():
    ds = _toy_dataset()
    batch = np.array([0, 1, 4, 8])  # class 1 and 2 are singletons
    out = supplement(batch, ds, RngStream(0))
    assert len(out) == 6
    assert np.array_equal(out[:4], batch)  # originals first, in order
    labels = ds.labels[out]
    for cls in np.unique(labels):
        assert (labels == cls).sum() >= 2
    # additions come from outside the original batch
    assert not set(out[4:].tolist()) & set(batch.tolist())


def test_supplement_all_singletons_doubles():
    ds = _toy_dataset()
    batch = np.array([0, 4, 8])  # one sample of each class
    out = supplement(batch, ds, RngStream(1))
    assert len(out) == 6


def test_supplement_idempotent():
    ds = _toy_dataset()
    rng = RngStream(5)
    for _ in range(20):
        batch = sample_batch(ds, rng, int(rng.integers(1, len(ds) + 1)))
        once = supplement(batch, ds, rng)
        twice = supplement(once, ds, rng)
        assert np.array_equal(once, twice)


def test_supplement_error_names_class():
    features = np.zeros((3, 2))
    labels = np.array([0, 0, 1])  # class 1 has a single sample overall
    ds = Dataset(features, labels)
    with pytest.raises(DataError, match="class 1"):
        supplement(np.array([2]), ds, RngStream(0))


def test_augment_empty_policy_is_identity():
    x = RngStream(0).normal(size=(3, 8))
    out = augment(x, RngStream(1), AugmentPolicy())
    assert np.array_equal(out, x)
    assert out is not x


def test_augment_noise_changes_vectors():
    x = np.zeros((4, 5))
    out = augment(x, RngStream(2), AugmentPolicy(noise_sigma=0.5))
    assert out.shape == x.shape
    assert np.all(out != 0.0)


def test_augment_flip_is_involution_under_same_draw():
    shape = (4, 4, 1)
    x = RngStream(3).uniform((2, 16))
    once = augment(x, RngStream(9), AugmentPolicy(flip=True), shape)
    back = augment(once, RngStream(9), AugmentPolicy(flip=True), shape)
    assert np.array_equal(back, x)


def test_augment_cutout_zero_count():
    h = w = 6
    s = 3
    x = np.ones((5, h * w))
    out = augment(x, RngStream(4), AugmentPolicy(cutout=s), (h, w, 1))
    zeros_per_row = (out == 0.0).sum(axis=1)
    assert np.all(zeros_per_row == s * s)


def test_augment_crop_preserves_shape():
    x = RngStream(5).uniform((3, 25))
    out = augment(x, RngStream(6), AugmentPolicy(crop_pad=2), (5, 5, 1))
    assert out.shape == x.shape


def test_augment_image_op_on_vector_data():
    with pytest.raises(ConfigError):
        augment(np.zeros((2, 4)), RngStream(0), AugmentPolicy(flip=True))


def test_make_dual_batch_alignment():
    ds = _toy_dataset()
    batch = np.array([0, 4, 8])
    dual = make_dual_batch(ds, batch, RngStream(2), AugmentPolicy(noise_sigma=0.1))
    assert len(dual) == 6  # all singletons doubled
    assert dual.supplemented_count == 3
    assert dual.originals.shape == dual.augmented.shape
    assert np.array_equal(dual.labels[:3], ds.labels[batch])
    for cls in np.unique(dual.labels):
        assert (dual.labels == cls).sum() >= 2


def test_load_synthetic_spec():
    ds = load_dataset("classes=3 dim=2 sigma=0.5 per_class=300 seed=7", "synthetic")
    assert len(ds) == 900
    assert ds.dim == 2
    assert set(np.unique(ds.labels)) == {0, 1, 2}
    # standardized features
    assert np.allclose(ds.features.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(ds.features.std(axis=0), 1.0, atol=1e-9)


def test_load_synthetic_bad_key():
    with pytest.raises(ParseError, match="nope"):
        load_dataset("nope=3", "synthetic")


def test_blobs_deterministic():
    a = make_blobs(3, 2, 0.5, 10, RngStream(1).derive("blobs"))
    b = make_blobs(3, 2, 0.5, 10, RngStream(1).derive("blobs"))
    assert np.array_equal(a.features, b.features)


def test_load_csv_roundtrip(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("f0,f1,label\n1.0,2.0,0\n3.0,4.0,1\n-1.0,0.5,0\n2.0,2.0,1\n")
    ds = load_dataset(str(path), "csv")
    assert len(ds) == 4
    assert ds.num_classes == 2
    assert np.allclose(ds.features.mean(axis=0), 0.0, atol=1e-12)


def test_load_csv_row_width_mismatch(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,f1,label\n1.0,2.0,0\n3.0,1\n")
    with pytest.raises(ParseError, match="3"):
        load_dataset(str(path), "csv")


def test_load_csv_label_gap(tmp_path):
    path = tmp_path / "gap.csv"
    path.write_text("f0,label\n1.0,0\n2.0,2\n")
    with pytest.raises(DataError, match="missing"):
        load_dataset(str(path), "csv")


def _write_idx_pair(tmp_path):
    # hand-built 2-image file, 2x2 pixels each
    pixels = bytes([0, 64, 128, 255, 10, 20, 30, 40])
    images = struct.pack(">IIII", 0x00000803, 2, 2, 2) + pixels
    labels = struct.pack(">II", 0x00000801, 2) + bytes([1, 0])
    images_path = tmp_path / "t10k-images-idx3-ubyte"
    labels_path = tmp_path / "t10k-labels-idx1-ubyte"
    images_path.write_bytes(images)
    labels_path.write_bytes(labels)
    return images_path, pixels


def test_load_idx_matches_header_decode_oracle(tmp_path):
    images_path, pixels = _write_idx_pair(tmp_path)
    ds = load_dataset(str(images_path), "idx")
    assert len(ds) == 2
    assert ds.image_shape == (2, 2, 1)
    expected = np.frombuffer(pixels, dtype=np.uint8).reshape(2, 4) / 255.0
    assert np.allclose(ds.features, expected, atol=0, rtol=0)
    assert np.array_equal(ds.labels, [1, 0])


def test_load_idx_bad_magic(tmp_path):
    path = tmp_path / "bad-images-idx3-ubyte"
    path.write_bytes(struct.pack(">IIII", 0x12345678, 1, 2, 2) + bytes(4))
    with pytest.raises(ParseError, match="magic"):
        load_dataset(str(path), "idx")


def test_stratified_split_proportions():
    ds = make_blobs(4, 2, 0.5, 50, RngStream(2))
    rest, held = stratified_split(ds, 0.1, RngStream(3))
    assert len(held) == 20 and len(rest) == 180
    for cls, idx in held.class_indices().items():
        assert abs(len(idx) - 5) <= 1
    # no overlap and full coverage
    assert len(rest) + len(held) == len(ds)


def test_dataset_subset_keeps_num_classes():
    ds = _toy_dataset()
    sub = ds.subset(np.array([0, 1]))
    assert sub.num_classes == ds.num_classes


def test_load_idx_gzipped(tmp_path):
    import gzip

    pixels = bytes([0, 64, 128, 255, 10, 20, 30, 40])
    images = struct.pack(">IIII", 0x00000803, 2, 2, 2) + pixels
    labels = struct.pack(">II", 0x00000801, 2) + bytes([1, 0])
    (tmp_path / "train-images-idx3-ubyte.gz").write_bytes(gzip.compress(images))
    (tmp_path / "train-labels-idx1-ubyte.gz").write_bytes(gzip.compress(labels))
    ds = load_dataset(str(tmp_path / "train-images-idx3-ubyte.gz"), "idx")
    assert len(ds) == 2 and ds.image_shape == (2, 2, 1)


def test_load_dataset_synthetic_spec_alias():
    ds = load_dataset("classes=2 dim=2 sigma=0.3 per_class=5 seed=1", "synthetic-spec")
    assert len(ds) == 10
