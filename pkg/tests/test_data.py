"""Dataset container, binary file round-trips, and the synthetic generator."""

import numpy as np
import pytest

from ntklab.data import (
    CIFAR_RECORD_BYTES,
    Dataset,
    load_cifar_binary,
    synthetic_dataset,
    write_cifar_binary,
)
from ntklab.errors import ConfigError, DataError


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 5)), np.zeros(2, dtype=int), 2, (1, 2, 2))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 4)), np.zeros(3, dtype=int), 2, (1, 2, 2))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 4)), np.array([0, 5]), 2, (1, 2, 2))
    with pytest.raises(DataError):
        Dataset(np.full((2, 4), 1.5), np.zeros(2, dtype=int), 2, (1, 2, 2))


def test_dataset_images_read_only():
    ds = Dataset(np.zeros((2, 4)), np.zeros(2, dtype=int), 2, (1, 2, 2))
    with pytest.raises(ValueError):
        ds.images[0, 0] = 1.0
    with pytest.raises(ValueError):
        ds.labels[0] = 1


def test_subset_and_restrict():
    ds = Dataset(
        np.arange(12, dtype=float).reshape(6, 2) / 11.0,
        np.array([0, 1, 2, 0, 1, 2]),
        3,
        (1, 1, 2),
    )
    sub = ds.subset([1, 3])
    np.testing.assert_array_equal(sub.labels, [1, 0])
    r = ds.restrict_to_classes({0, 2})
    np.testing.assert_array_equal(r.labels, [0, 2, 0, 2])
    assert r.num_classes == 3  # class ids keep their meaning


def test_images_nchw_layout():
    flat = np.arange(8, dtype=float).reshape(1, 8) / 7.0
    ds = Dataset(flat, np.zeros(1, dtype=int), 1, (2, 2, 2))
    np.testing.assert_array_equal(ds.images_nchw()[0], flat.reshape(2, 2, 2))


# --- CIFAR binary format -----------------------------------------------------


def test_cifar_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(5, 3072)).astype(np.float64) / 255.0
    labels = rng.integers(0, 10, size=5)
    ds = Dataset(images, labels, 10, (3, 32, 32))
    path = tmp_path / "batch.bin"
    write_cifar_binary(ds, path)
    assert path.stat().st_size == 5 * CIFAR_RECORD_BYTES
    back = load_cifar_binary(path)
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_cifar_known_bytes(tmp_path):
    path = tmp_path / "one.bin"
    record = bytes([7]) + bytes([0] * 3071) + bytes([255])
    path.write_bytes(record)
    ds = load_cifar_binary(path)
    assert len(ds) == 1
    assert ds.labels[0] == 7
    assert ds.images[0, 0] == 0.0
    assert ds.images[0, -1] == 1.0


def test_cifar_truncated_file_reports_offset(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(bytes(CIFAR_RECORD_BYTES + 100))
    with pytest.raises(DataError, match=str(CIFAR_RECORD_BYTES)):
        load_cifar_binary(path)


def test_write_rejects_wrong_shape(tmp_path):
    ds = Dataset(np.zeros((1, 4)), np.zeros(1, dtype=int), 2, (1, 2, 2))
    with pytest.raises(DataError):
        write_cifar_binary(ds, tmp_path / "x.bin")


# --- synthetic generator -----------------------------------------------------


def test_synthetic_shapes_and_range():
    ds = synthetic_dataset(classes=4, per_class=3, seed=5)
    assert len(ds) == 12
    assert ds.image_shape == (1, 8, 8)
    np.testing.assert_array_equal(ds.labels, np.repeat(np.arange(4), 3))
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_synthetic_quantized_to_255_grid():
    ds = synthetic_dataset(classes=3, per_class=4, seed=1)
    steps = ds.images * 255.0
    np.testing.assert_allclose(steps, np.rint(steps), atol=1e-9)


def test_synthetic_deterministic_and_seed_sensitive():
    a = synthetic_dataset(classes=3, per_class=4, seed=2)
    b = synthetic_dataset(classes=3, per_class=4, seed=2)
    c = synthetic_dataset(classes=3, per_class=4, seed=3)
    np.testing.assert_array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)


def test_synthetic_splits_share_means_not_noise():
    train = synthetic_dataset(classes=3, per_class=50, seed=4, split="train")
    test = synthetic_dataset(classes=3, per_class=50, seed=4, split="test")
    assert not np.array_equal(train.images, test.images)
    # per-class means agree up to noise shrinkage ~ noise/sqrt(50)
    for c in range(3):
        mu_train = train.images[train.labels == c].mean(axis=0)
        mu_test = test.images[test.labels == c].mean(axis=0)
        assert np.abs(mu_train - mu_test).mean() < 0.05


def test_synthetic_classes_are_separable():
    ds = synthetic_dataset(classes=5, per_class=20, seed=6)
    means = np.stack([ds.images[ds.labels == c].mean(axis=0) for c in range(5)])
    # nearest-mean classification on training data should be near perfect
    d2 = ((ds.images[:, None, :] - means[None]) ** 2).sum(axis=2)
    pred = d2.argmin(axis=1)
    assert np.mean(pred == ds.labels) > 0.95


def test_synthetic_round_trips_through_cifar_binary(tmp_path):
    ds = synthetic_dataset(classes=2, per_class=3, image_shape=(3, 32, 32), seed=7)
    path = tmp_path / "synth.bin"
    write_cifar_binary(ds, path)
    back = load_cifar_binary(path, num_classes=2)
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_synthetic_validation():
    with pytest.raises(ConfigError):
        synthetic_dataset(classes=1, per_class=3)
    with pytest.raises(ConfigError):
        synthetic_dataset(classes=3, per_class=0)
    with pytest.raises(ConfigError):
        synthetic_dataset(classes=3, per_class=3, split="val")
