"""Dataset ingestion and evaluation-subset selection."""

import gzip
import hashlib
import os
import pickle
import tarfile
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, IntegrityError, SizeError

CACHE_ENV = "SRDEFENSE_DATA"

CIFAR10_ARCHIVE = "cifar-10-python.tar.gz"
CIFAR10_MD5 = "c58f30108f718f92721af3b95e74349a"
CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"

MNIST_FILES = {
    ("train", "images"): ("train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
    ("train", "labels"): ("train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"),
    ("test", "images"): ("t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"),
    ("test", "labels"): ("t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"),
}
MNIST_URL = "https://ossci-datasets.s3.amazonaws.com/mnist/"

CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (N, H, W, C) float in [0, 1]
    labels: np.ndarray  # (N,) int
    num_classes: int
    name: str = ""
    split: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise SizeError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, index, split=None):
        index = np.asarray(index, dtype=np.int64)
        return LabeledImageSet(self.images[index], self.labels[index], self.num_classes, self.name, split or self.split)

    def digest(self):
        """Content hash used to tie evaluation tables to one exact image subset."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype=np.float32).tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]


def default_cache_dir():
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "srdefense"))


def md5sum(path, chunk=1 << 20):
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


def _fetch(url, dest):
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = dest.with_suffix(dest.suffix + ".part")
    try:
        with urllib.request.urlopen(url, timeout=30) as resp, open(tmp, "wb") as fh:
            while block := resp.read(1 << 20):
                fh.write(block)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise FileNotFoundError(
            f"{dest.name} is not in {dest.parent} and could not be downloaded from {url} ({exc}); "
            f"place the archive there or point ${CACHE_ENV} at a directory holding it"
        ) from exc
    tmp.replace(dest)


def _archive(cache_dir, filename, md5, url, verify, download):
    path = Path(cache_dir) / filename
    if not path.exists():
        if not download:
            raise FileNotFoundError(f"{path} not found")
        _fetch(url, path)
    if verify and md5sum(path) != md5:
        raise IntegrityError(f"{path}: checksum mismatch (expected md5 {md5})")
    return path


def _load_cifar10(split, cache_dir, verify, download):
    path = _archive(cache_dir, CIFAR10_ARCHIVE, CIFAR10_MD5, CIFAR10_URL, verify, download)
    members = [f"data_batch_{i}" for i in range(1, 6)] if split == "train" else ["test_batch"]
    images, labels = [], []
    with tarfile.open(path, "r:gz") as tar:
        for member in members:
            fh = tar.extractfile(f"cifar-10-batches-py/{member}")
            batch = pickle.load(fh, encoding="bytes")
            images.append(np.asarray(batch[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
            labels.extend(batch[b"labels"])
    return np.concatenate(images), np.asarray(labels)


def _read_idx(path):
    with gzip.open(path, "rb") as fh:
        raw = fh.read()
    ndim = raw[3]
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    return np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims)


def _load_mnist(split, cache_dir, verify, download):
    arrays = {}
    for kind in ("images", "labels"):
        filename, md5 = MNIST_FILES[(split, kind)]
        arrays[kind] = _read_idx(_archive(cache_dir, filename, md5, MNIST_URL + filename, verify, download))
    return arrays["images"][..., None], arrays["labels"]


def synthetic_shapes(n, seed=0, size=32, num_classes=10):
    """Procedural 10-class image set: one shape per class on a shaded background.

    Stands in for a natural-image dataset when none is available. Position,
    size and colours are random, so only geometry carries the label.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    labels = rng.integers(0, num_classes, n)
    images = np.empty((n, size, size, 3))
    for i, label in enumerate(labels):
        cy, cx = rng.uniform(0.38, 0.62, 2)
        r = rng.uniform(0.22, 0.32)
        dy, dx = yy - cy, xx - cx
        dist = np.hypot(dy, dx)
        box = np.maximum(np.abs(dx), np.abs(dy))
        period = r * 0.5
        mask = {
            0: dist < r,
            1: box < r * 0.85,
            2: (dy < r * 0.6) & (dy > -r * 0.9 + 1.8 * np.abs(dx)),
            3: ((np.abs(dx) < r * 0.22) | (np.abs(dy) < r * 0.22)) & (box < r),
            4: np.abs(dist - r * 0.8) < r * 0.2,
            5: (np.sin(dx * np.pi / period) > 0) & (dist < r),
            6: (np.abs(dx) < r * 1.1) & (np.abs(dy) < r * 0.3),
            7: (np.sin(dx * np.pi / period) * np.sin(dy * np.pi / period) > 0) & (box < r),
            8: ((np.abs(dx - dy) < r * 0.3) | (np.abs(dx + dy) < r * 0.3)) & (box < r),
            9: (np.sin(dy * np.pi / period) > 0) & (dist < r),
        }[int(label) % 10]
        bg0, bg1, fg = rng.uniform(0, 1, (3, 3))
        while np.abs(fg - (bg0 + bg1) / 2).sum() < 0.6:
            fg = rng.uniform(0, 1, 3)
        theta = rng.uniform(0, 2 * np.pi)
        shade = (xx * np.cos(theta) + yy * np.sin(theta) + 1.5) / 3.0
        img = np.where(mask[..., None], fg, bg0 + (bg1 - bg0) * shade[..., None])
        images[i] = img + rng.normal(0, 0.02, img.shape)
    return np.clip(images, 0, 1), labels


def load_dataset(name, split="test", cache_dir=None, verify=True, download=True):
    """Load ``cifar10``, ``mnist`` or ``synthetic`` as a LabeledImageSet in [0, 1]."""
    if split not in ("train", "test"):
        raise ConfigError(f"split must be train or test, got {split!r}")
    cache_dir = Path(cache_dir) if cache_dir else default_cache_dir()
    if name == "cifar10":
        raw, labels = _load_cifar10(split, cache_dir, verify, download)
    elif name == "mnist":
        raw, labels = _load_mnist(split, cache_dir, verify, download)
    elif name == "synthetic":
        images, labels = synthetic_shapes(5000 if split == "train" else 1000, seed=0 if split == "train" else 1)
        return LabeledImageSet(images, labels, 10, name, split)
    else:
        raise ConfigError(f"unknown dataset {name!r}")
    return LabeledImageSet(raw.astype(np.float64) / 255.0, labels, 10, name, split)


def select_correct_subset(classifier, dataset, n, seed=0, shuffle=False):
    """First ``n`` images (dataset order, or a seeded permutation) that ``classifier`` gets right."""
    if n <= 0:
        raise SizeError("subset size must be positive")
    order = np.random.default_rng(seed).permutation(len(dataset)) if shuffle else np.arange(len(dataset))
    correct = order[classifier.predict(dataset.images[order]) == dataset.labels[order]]
    if len(correct) < n:
        raise SizeError(f"only {len(correct)} correctly classified images, {n} requested")
    return dataset.subset(np.sort(correct[:n]) if not shuffle else correct[:n], split=f"{dataset.split}-correct")
