"""IDX reading/writing, unit-norm normalization and small synthetic datasets."""

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, DomainError, FormatError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class TruncatedFileError(FormatError):
    pass


@dataclass
class DatasetBundle:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    unlabeled_x: np.ndarray = None
    normalization: dict = field(default_factory=dict)

    @property
    def input_shape(self):
        return self.train_x.shape[1:]

    @property
    def n_classes(self):
        return int(max(self.train_y.max(), self.test_y.max())) + 1


# ---------------------------------------------------------------- normalization


def normalize_unit(X):
    """Scale every sample (first axis) to unit Euclidean norm; zero samples are rejected."""
    X = np.asarray(X, dtype=float)
    flat = X.reshape(X.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0):
        raise DomainError(f"sample {int(np.argmin(norms))} is all zeros and has no unit-norm version")
    return (flat / norms[:, None]).reshape(X.shape)


def normalize_pixels(raw):
    """Bytes to ``[0, 1]``, then unit norm per image."""
    return normalize_unit(np.asarray(raw, dtype=float) / 255.0)


# ---------------------------------------------------------------- IDX


def _open(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_idx(data, expected_magic, path):
    if len(data) < 8:
        raise TruncatedFileError(f"{path}: {len(data)} bytes is too short for an IDX header")
    (magic,) = struct.unpack(">i", data[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: magic {magic} (0x{magic:08x}), expected {expected_magic}")
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedFileError(f"{path}: header needs {header} bytes, file has {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    need = header + int(np.prod(dims))
    if len(data) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes for dims {dims}, file has {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, count=int(np.prod(dims)), offset=header).reshape(dims)


def read_idx_images(path):
    raw = _parse_idx(_open(path), IMAGE_MAGIC, path)
    if raw.ndim != 3:
        raise FormatError(f"{path}: image file must have 3 dimensions, got {raw.ndim}")
    return raw[:, None, :, :]


def read_idx_labels(path):
    raw = _parse_idx(_open(path), LABEL_MAGIC, path)
    if raw.ndim != 1:
        raise FormatError(f"{path}: label file must have 1 dimension, got {raw.ndim}")
    return raw.astype(np.int64)


def write_idx(path, array, magic):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    head = struct.pack(">i", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = head + array.tobytes()
    if str(path).endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    with open(path, "wb") as fh:
        fh.write(payload)


def load_mnist_idx(images_path, labels_path, normalize=True):
    """``(inputs (n, 1, rows, cols), labels)``; pixels scaled to ``[0, 1]`` then unit-normalized."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = normalize_pixels(images) if normalize else images.astype(float) / 255.0
    return X, labels


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
    "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
}


def load_mnist_dir(root, n_train=None, n_test=None):
    tx, ty = load_mnist_idx(*(os.path.join(root, f) for f in MNIST_FILES["train"]))
    vx, vy = load_mnist_idx(*(os.path.join(root, f) for f in MNIST_FILES["test"]))
    return DatasetBundle(tx[:n_train], ty[:n_train], vx[:n_test], vy[:n_test], normalization={"pixels": "x/255", "sample": "unit_l2"})


def split_labeled(y, n_labeled, seed=0):
    """Class-balanced choice of ``n_labeled`` indices; returns ``(labeled_idx, rest_idx)``."""
    y = np.asarray(y)
    classes = np.unique(y)
    rng = np.random.default_rng(seed)
    per = n_labeled // classes.size
    extra = n_labeled - per * classes.size
    picked = []
    for i, c in enumerate(classes):
        idx = rng.permutation(np.flatnonzero(y == c))
        picked.append(idx[: per + (1 if i < extra else 0)])
    lab = np.sort(np.concatenate(picked))
    rest = np.setdiff1d(np.arange(y.size), lab)
    return lab, rest


# ---------------------------------------------------------------- synthetic


def gen_two_gaussians(n_per_class, separation, seed=0, dim=2, noise=1.0, n_test_per_class=None):
    """Two isotropic Gaussians with means ``+-separation/2`` on the first axis, unit-normalized."""
    if n_per_class < 1:
        raise DomainError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    n_test_per_class = n_per_class if n_test_per_class is None else n_test_per_class
    mean = np.zeros(dim)
    mean[0] = separation / 2.0

    def draw(n):
        X = np.concatenate([rng.standard_normal((n, dim)) * noise - mean, rng.standard_normal((n, dim)) * noise + mean])
        return normalize_unit(X), np.repeat([0, 1], n)

    tx, ty = draw(n_per_class)
    vx, vy = draw(n_test_per_class)
    return DatasetBundle(tx, ty, vx, vy, normalization={"sample": "unit_l2", "separation": separation, "seed": seed})


def _square_image(size, n_edges, rng):
    img = np.zeros((size, size))
    lo = int(rng.integers(1, size // 3 + 1))
    hi = int(rng.integers(2 * size // 3, size - 1))
    span = slice(lo, hi + 1)
    for k in rng.permutation(4)[:n_edges]:
        if k == 0:
            img[lo, span] = 1.0
        elif k == 1:
            img[hi, span] = 1.0
        elif k == 2:
            img[span, lo] = 1.0
        else:
            img[span, hi] = 1.0
    return np.rot90(img, int(rng.integers(4)))


def gen_square_edges(n_per_class, seed=0, size=8, noise=0.05, n_test_per_class=None):
    """Class 1: full square outline; class 0: the same outline with one edge missing."""
    if n_per_class < 1:
        raise DomainError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    n_test_per_class = n_per_class if n_test_per_class is None else n_test_per_class

    def draw(n):
        imgs, ys = [], []
        for c, edges in ((0, 3), (1, 4)):
            for _ in range(n):
                imgs.append(_square_image(size, edges, rng) + noise * rng.random((size, size)))
                ys.append(c)
        return normalize_unit(np.array(imgs)[:, None]), np.array(ys)

    tx, ty = draw(n_per_class)
    vx, vy = draw(n_test_per_class)
    return DatasetBundle(tx, ty, vx, vy, normalization={"sample": "unit_l2", "seed": seed})
