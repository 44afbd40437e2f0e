"""Datasets: IDX (MNIST) parsing, normalization, subsetting, synthetic clusters."""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cumlr.errors import ConfigError, DataError, IdxFormatError

IDX_UBYTE = 0x08

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "eval_images": "t10k-images-idx3-ubyte",
    "eval_labels": "t10k-labels-idx1-ubyte",
}

MNIST_FETCH_HINT = """\
MNIST IDX files not found in {path}.
Download the four files below (e.g. from https://yann.lecun.com/exdb/mnist/ or a mirror),
place them in that directory (gzip-compressed .gz copies are accepted as-is),
or point CUMLR_DATA_DIR / dataset.path at a directory that has them:
  {files}"""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    train_inputs: np.ndarray
    train_labels: np.ndarray
    eval_inputs: np.ndarray
    eval_labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        for attr, dtype in (("train_inputs", np.float64), ("eval_inputs", np.float64),
                            ("train_labels", np.int64), ("eval_labels", np.int64)):
            given = getattr(self, attr)
            arr = np.ascontiguousarray(given, dtype=dtype)
            # callers may keep mutating what they passed in; keep a private copy
            if arr.flags.writeable and np.may_share_memory(arr, given):
                arr = arr.copy()
            if arr.flags.writeable:
                _frozen(arr)
            object.__setattr__(self, attr, arr)
        self._validate()

    def _validate(self):
        for split in ("train", "eval"):
            x = getattr(self, f"{split}_inputs")
            y = getattr(self, f"{split}_labels")
            if x.ndim != 2:
                raise DataError(f"{split} inputs must be 2-D, got shape {x.shape}")
            if y.shape != (x.shape[0],):
                raise DataError(f"{split}: {x.shape[0]} rows but {y.shape} labels")
            if x.size and (x.min() < -1.0 or x.max() > 1.0 or not np.all(np.isfinite(x))):
                raise DataError(f"{split} features must lie in [-1, 1]")
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise DataError(f"{split} labels must lie in [0, {self.num_classes})")
        if self.train_inputs.shape[1] != self.eval_inputs.shape[1]:
            raise DataError("train and eval splits differ in feature dimension")

    @property
    def feature_dim(self) -> int:
        return self.train_inputs.shape[1]

    @property
    def train_size(self) -> int:
        return self.train_inputs.shape[0]

    @property
    def eval_size(self) -> int:
        return self.eval_inputs.shape[0]


def parse_idx(content: bytes) -> tuple[list[int], np.ndarray]:
    """Decode an IDX container holding unsigned bytes.

    Returns the dimension list and the flat ``uint8`` payload.
    """
    if len(content) < 4:
        raise IdxFormatError(f"file is {len(content)} bytes, shorter than the 4-byte magic", 0)
    if content[0] != 0 or content[1] != 0:
        raise IdxFormatError("bad magic: first two bytes must be zero", 0)
    if content[2] != IDX_UBYTE:
        raise IdxFormatError(f"unsupported type code 0x{content[2]:02x} (need 0x08, unsigned byte)", 2)
    ndim = content[3]
    header_end = 4 + 4 * ndim
    if len(content) < header_end:
        raise IdxFormatError(f"header declares {ndim} dimensions but the file ends", len(content))
    dims = list(struct.unpack(f">{ndim}I", content[4:header_end]))
    expected = math.prod(dims)
    payload = content[header_end:]
    if len(payload) < expected:
        raise IdxFormatError(
            f"payload truncated: need {expected} bytes for dims {dims}, have {len(payload)}",
            header_end + len(payload))
    if len(payload) > expected:
        raise IdxFormatError(f"{len(payload) - expected} trailing bytes after payload", header_end + expected)
    return dims, np.frombuffer(payload, dtype=np.uint8)


def serialize_idx(dims, payload) -> bytes:
    payload = np.asarray(payload, dtype=np.uint8).ravel()
    if payload.size != math.prod(dims):
        raise DataError(f"payload has {payload.size} bytes, dims {list(dims)} need {math.prod(dims)}")
    return bytes([0, 0, IDX_UBYTE, len(dims)]) + struct.pack(f">{len(dims)}I", *dims) + payload.tobytes()


def normalize(raw) -> np.ndarray:
    """Map byte intensities 0..255 onto [-1, 1]: ``v / 127.5 - 1``."""
    return np.asarray(raw, dtype=np.float64) / 127.5 - 1.0


def take_subset(dataset: Dataset, n: int) -> Dataset:
    """First ``n`` training examples in stored order; eval split untouched."""
    if int(n) != n or not 1 <= n <= dataset.train_size:
        raise ConfigError(f"subset size must be in [1, {dataset.train_size}], got {n}")
    if n == dataset.train_size:
        return dataset
    return Dataset(f"{dataset.name}[:{n}]", dataset.train_inputs[:n], dataset.train_labels[:n],
                   dataset.eval_inputs, dataset.eval_labels, dataset.num_classes)


def _read_maybe_gz(path: Path) -> bytes:
    if path.exists():
        return path.read_bytes()
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gzip.decompress(gz.read_bytes())
    raise FileNotFoundError(path)


def mnist_missing(directory) -> list[str]:
    d = Path(directory)
    return [name for name in MNIST_FILES.values()
            if not (d / name).exists() and not (d / (name + ".gz")).exists()]


def resolve_data_dir(path=None) -> Path:
    if path:
        return Path(path)
    return Path(os.environ.get("CUMLR_DATA_DIR", "data/mnist"))


def load_mnist(directory=None) -> Dataset:
    """Load the standard 60000/10000 MNIST split from IDX files."""
    d = resolve_data_dir(directory)
    missing = mnist_missing(d)
    if missing:
        raise FileNotFoundError(MNIST_FETCH_HINT.format(path=d, files="\n  ".join(missing)))
    arrays = {}
    for key, name in MNIST_FILES.items():
        dims, payload = parse_idx(_read_maybe_gz(d / name))
        if key.endswith("images"):
            if len(dims) != 3:
                raise DataError(f"{name}: image file needs 3 dims, has {dims}")
            arrays[key] = normalize(payload).reshape(dims[0], dims[1] * dims[2])
        else:
            if len(dims) != 1:
                raise DataError(f"{name}: label file needs 1 dim, has {dims}")
            arrays[key] = payload.astype(np.int64)
    return Dataset("mnist", arrays["train_images"], arrays["train_labels"],
                   arrays["eval_images"], arrays["eval_labels"], num_classes=10)


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    per_class_count: int = 640
    feature_dim: int = 16
    cluster_separation: float = 1.0
    noise_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("synthetic data needs at least 2 classes")
        if self.per_class_count < 1 or self.feature_dim < 1:
            raise ConfigError("per_class_count and feature_dim must be positive")
        if self.cluster_separation < 0 or self.noise_scale < 0:
            raise ConfigError("separation and noise scale must be non-negative")


def class_mean(spec: SyntheticSpec, c: int) -> np.ndarray:
    """Mean of class ``c``: a random direction scaled to norm ``cluster_separation``."""
    rng = np.random.default_rng([spec.seed, 1, c])
    direction = rng.standard_normal(spec.feature_dim)
    return spec.cluster_separation * direction / np.linalg.norm(direction)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Gaussian clusters, clipped to [-1, 1].

    Examples are generated class-interleaved (``0, 1, ..., C-1, 0, 1, ...``);
    every fifth one goes to the eval split.
    """
    C, per, d = spec.num_classes, spec.per_class_count, spec.feature_dim
    means = np.stack([class_mean(spec, c) for c in range(C)])
    noise = np.random.default_rng([spec.seed, 2]).standard_normal((per, C, d))
    x = np.clip(means[None, :, :] + spec.noise_scale * noise, -1.0, 1.0).reshape(per * C, d)
    y = np.tile(np.arange(C, dtype=np.int64), per)
    is_eval = np.arange(per * C) % 5 == 4
    return Dataset(f"synthetic(seed={spec.seed})", x[~is_eval], y[~is_eval], x[is_eval], y[is_eval], C)
