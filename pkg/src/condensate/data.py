"""Regression targets, sampled datasets, and the MNIST IDX reader."""

import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .rng import STREAM_DATA, Stream

PIECEWISE_RELU4 = "piecewise_relu4"
TANH_TARGET = "tanh"
SIN_TARGET = "sin"
CUSTOM_TARGET = "custom"

EVEN = "even"
UNIFORM = "uniform"


def _relu(z):
    return np.maximum(z, 0.0)


def piecewise_relu4(x):
    """-r(x) + r(2(x+0.3)) - r(1.5(x-0.4)) + r(0.5(x-0.8)), r = ReLU."""
    x = np.asarray(x, dtype=np.float64)
    return -_relu(x) + _relu(2.0 * (x + 0.3)) - _relu(1.5 * (x - 0.4)) + _relu(0.5 * (x - 0.8))


@dataclass(frozen=True)
class TargetSpec:
    kind: str = PIECEWISE_RELU4
    domain: tuple = (-1.0, 1.0)
    n_samples: int = 1000
    sampling: str = EVEN
    seed: int = 0
    table: Optional[tuple] = None  # ((x0, y0), (x1, y1), ...) for custom targets

    def __post_init__(self):
        lo, hi = self.domain
        if not hi > lo:
            raise ValueError(f"empty domain {self.domain}")
        if self.sampling not in (EVEN, UNIFORM):
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if self.sampling == EVEN and self.n_samples < 2:
            raise ValueError("even sampling needs at least 2 points")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")

    def function(self) -> Callable:
        if self.kind == PIECEWISE_RELU4:
            return piecewise_relu4
        if self.kind == TANH_TARGET:
            return np.tanh
        if self.kind == SIN_TARGET:
            return np.sin
        if self.kind == CUSTOM_TARGET:
            if not self.table:
                raise ValueError("custom target needs a table of (x, y) pairs")
            xs, ys = np.array(self.table, dtype=np.float64).T
            order = np.argsort(xs)
            return lambda x: np.interp(x, xs[order], ys[order])
        raise ValueError(f"unknown target {self.kind!r}")

    def to_dict(self):
        d = {"kind": self.kind, "domain": list(self.domain), "n_samples": self.n_samples,
             "sampling": self.sampling}
        if self.sampling == UNIFORM:
            d["seed"] = self.seed
        return d


def even_grid(lo, hi, n):
    """n endpoint-inclusive points; the grid is mirror-symmetric about the midpoint."""
    i = np.arange(n, dtype=np.float64)
    j = (n - 1) - i
    # lo*j/(n-1) + hi*i/(n-1) swaps exactly under (lo, hi) -> (-hi, -lo)
    x = (lo * j + hi * i) / (n - 1)
    x[0], x[-1] = lo, hi
    return x


def generate_regression_data(spec: TargetSpec):
    """Returns (x, y) with x of shape (n, 1) and y of shape (n, 1)."""
    lo, hi = spec.domain
    if spec.sampling == EVEN:
        x = even_grid(lo, hi, spec.n_samples)
    else:
        x = lo + (hi - lo) * Stream(spec.seed, STREAM_DATA).uniform(spec.n_samples)
    y = spec.function()(x)
    return x[:, None], y[:, None]


# ---------------------------------------------------------------------------
# MNIST

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"

# MD5 of the gzip-compressed files as distributed by the common mirrors.
# Uncompressed copies cannot be checked against these; their digests are
# reported instead (see ``file_digests``).
MNIST_GZ_MD5 = {
    TRAIN_IMAGES: "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    TRAIN_LABELS: "d53e105ee54ea40749a09fcbcd1e9432",
    TEST_IMAGES: "9fb629c4189551a2d022fa330f9573f3",
    TEST_LABELS: "ec29112dd5afa0611ce80d1b7f02629c",
}


class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountError(IdxFormatError):
    pass


class ChecksumError(IdxFormatError):
    pass


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx_images(path) -> np.ndarray:
    """uint8 array (n, rows, cols) from an idx3-ubyte file (optionally gzipped)."""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise IdxTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise IdxMagicError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise IdxTruncatedError(f"{path}: expected {need} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise IdxTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise IdxMagicError(f"{path}: bad magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
    if len(raw) < 8 + n:
        raise IdxTruncatedError(f"{path}: expected {8 + n} bytes, found {len(raw)}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)
    if labels.size and labels.max() > 9:
        raise IdxFormatError(f"{path}: label {labels.max()} out of range 0..9")
    return labels


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes())


@dataclass
class MnistDataset:
    train_images: np.ndarray  # float64 in [0, 1], (n, 28, 28)
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    def combined_images(self):
        return np.concatenate([self.train_images, self.test_images])


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = directory / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{directory}: missing {stem}[.gz]")


def load_mnist(path, verify_checksums: bool = True, expected_counts=(60000, 10000)) -> MnistDataset:
    """Load the four IDX files from a directory; pixels scaled to [0, 1].

    Pass ``expected_counts=None`` (and ``verify_checksums=False``) for fixtures.
    """
    directory = Path(path)
    parts = {}
    for stem in (TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS):
        p = _find(directory, stem)
        if verify_checksums and p.suffix == ".gz":
            digest = hashlib.md5(p.read_bytes()).hexdigest()
            if digest != MNIST_GZ_MD5[stem]:
                raise ChecksumError(f"{p}: md5 {digest} does not match the published archive")
        parts[stem] = p
    tri = read_idx_images(parts[TRAIN_IMAGES])
    trl = read_idx_labels(parts[TRAIN_LABELS])
    tei = read_idx_images(parts[TEST_IMAGES])
    tel = read_idx_labels(parts[TEST_LABELS])
    if tri.shape[0] != trl.shape[0]:
        raise IdxCountError(f"{parts[TRAIN_IMAGES]}: {tri.shape[0]} images but {trl.shape[0]} labels")
    if tei.shape[0] != tel.shape[0]:
        raise IdxCountError(f"{parts[TEST_IMAGES]}: {tei.shape[0]} images but {tel.shape[0]} labels")
    if expected_counts is not None and (tri.shape[0], tei.shape[0]) != tuple(expected_counts):
        raise IdxCountError(f"{directory}: found {tri.shape[0]}/{tei.shape[0]} samples, "
                            f"expected {expected_counts[0]}/{expected_counts[1]}")
    return MnistDataset(tri / 255.0, trl.astype(np.int64), tei / 255.0, tel.astype(np.int64))


def file_digests(path) -> dict:
    """sha256 of each MNIST file found in ``path`` (recorded in run manifests)."""
    directory = Path(path)
    out = {}
    for stem in (TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS):
        p = _find(directory, stem)
        out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out
