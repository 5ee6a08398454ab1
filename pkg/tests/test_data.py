import gzip
import io
import pickle
import tarfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import linear_classifier
from srdefense import data
from srdefense.data import LabeledImageSet, load_dataset, select_correct_subset
from srdefense.errors import ConfigError, IntegrityError, SizeError


def write_fake_cifar(path, per_batch=4):
    rng = np.random.default_rng(0)
    with tarfile.open(path, "w:gz") as tar:
        for name in [f"data_batch_{i}" for i in range(1, 6)] + ["test_batch"]:
            body = pickle.dumps({b"data": rng.integers(0, 256, (per_batch, 3072), dtype=np.uint8), b"labels": list(rng.integers(0, 10, per_batch))})
            info = tarfile.TarInfo(f"cifar-10-batches-py/{name}")
            info.size = len(body)
            tar.addfile(info, io.BytesIO(body))


def write_idx(path, array):
    header = bytes([0, 0, 8, array.ndim]) + b"".join(int(d).to_bytes(4, "big") for d in array.shape)
    with gzip.open(path, "wb") as fh:
        fh.write(header + array.astype(np.uint8).tobytes())


def test_fake_cifar_layout(tmp_path):
    write_fake_cifar(tmp_path / data.CIFAR10_ARCHIVE)
    train = load_dataset("cifar10", "train", tmp_path, verify=False, download=False)
    test = load_dataset("cifar10", "test", tmp_path, verify=False, download=False)
    assert train.images.shape == (20, 32, 32, 3) and len(test) == 4
    assert train.num_classes == 10
    assert 0 <= train.images.min() and train.images.max() <= 1


def test_cifar_channel_order(tmp_path):
    # the archive stores each image as 1024 R then 1024 G then 1024 B bytes
    row = np.concatenate([np.full(1024, 10), np.full(1024, 20), np.full(1024, 30)]).astype(np.uint8)
    with tarfile.open(tmp_path / data.CIFAR10_ARCHIVE, "w:gz") as tar:
        body = pickle.dumps({b"data": row[None], b"labels": [3]})
        info = tarfile.TarInfo("cifar-10-batches-py/test_batch")
        info.size = len(body)
        tar.addfile(info, io.BytesIO(body))
    img = load_dataset("cifar10", "test", tmp_path, verify=False, download=False).images[0]
    np.testing.assert_array_equal(img[5, 7], np.array([10, 20, 30]) / 255)


def test_checksum_mismatch(tmp_path):
    write_fake_cifar(tmp_path / data.CIFAR10_ARCHIVE)
    with pytest.raises(IntegrityError):
        load_dataset("cifar10", "test", tmp_path, download=False)


def test_missing_archive_without_download(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset("cifar10", "test", tmp_path, download=False)


def test_fake_mnist(tmp_path):
    rng = np.random.default_rng(0)
    for (split, kind), (filename, _) in data.MNIST_FILES.items():
        n = 6 if split == "train" else 3
        write_idx(tmp_path / filename, rng.integers(0, 256, (n, 28, 28)) if kind == "images" else rng.integers(0, 10, n))
    train = load_dataset("mnist", "train", tmp_path, verify=False, download=False)
    assert train.images.shape == (6, 28, 28, 1)
    assert train.images.max() <= 1


def test_unknown_name_and_split():
    with pytest.raises(ConfigError):
        load_dataset("imagenet")
    with pytest.raises(ConfigError):
        load_dataset("synthetic", "val")


def test_cache_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(data.CACHE_ENV, str(tmp_path))
    assert data.default_cache_dir() == tmp_path


def test_synthetic_set_shape_and_range():
    ds = load_dataset("synthetic", "test")
    assert ds.images.shape == (1000, 32, 32, 3)
    assert set(np.unique(ds.labels)) == set(range(10))
    assert 0 <= ds.images.min() and ds.images.max() <= 1
    np.testing.assert_array_equal(ds.images, load_dataset("synthetic", "test").images)


def test_labeled_set_invariants():
    with pytest.raises(SizeError):
        LabeledImageSet(np.zeros((3, 4, 4, 3)), [0, 1], 10)
    with pytest.raises(ConfigError):
        LabeledImageSet(np.zeros((2, 4, 4, 3)), [0, 10], 10)


def make_grid():
    rng = np.random.default_rng(5)
    images = rng.uniform(0, 1, (60, 4, 4, 3))
    clf = linear_classifier(rng.normal(size=(10, 48)), rng.normal(size=10))
    preds = clf.predict(images)
    labels = np.where(np.arange(60) % 3 == 0, (preds + 1) % 10, preds)  # every third image wrong
    return clf, LabeledImageSet(images, labels, 10, "grid", "test")


@pytest.fixture
def labelled_grid():
    return make_grid()


def test_perfect_classifier_selects_whole_set(labelled_grid):
    clf, ds = labelled_grid
    perfect = LabeledImageSet(ds.images, clf.predict(ds.images), 10)
    assert select_correct_subset(clf, perfect, len(perfect)).digest() == perfect.digest()


def test_subset_errors(labelled_grid):
    clf, ds = labelled_grid
    with pytest.raises(SizeError):
        select_correct_subset(clf, ds, 0)
    with pytest.raises(SizeError):
        select_correct_subset(clf, ds, 41)


GRID = make_grid()


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 40), st.integers(0, 1000), st.booleans())
def test_subset_properties(n, seed, shuffle):
    clf, ds = GRID
    sub = select_correct_subset(clf, ds, n, seed, shuffle)
    assert len(sub) == n
    assert clf.accuracy(sub.images, sub.labels) == 1.0
    assert sub.digest() == select_correct_subset(clf, ds, n, seed, shuffle).digest()
    assert select_correct_subset(clf, sub, n).digest() == sub.digest()


def test_first_n_order(labelled_grid):
    clf, ds = labelled_grid
    sub = select_correct_subset(clf, ds, 5)
    np.testing.assert_array_equal(sub.images, ds.images[[1, 2, 4, 5, 7]])
