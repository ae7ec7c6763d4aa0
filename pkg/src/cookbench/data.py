"""Datasets, the DCD1 container and the synthetic blob corpus."""

from __future__ import annotations

import io
import math
import struct
import warnings
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ShapeError
from .tensor import Rng, derive_seed, rng_gaussian

DATASET_MAGIC = b"DCD1"
DATASET_VERSION = 1
_TEST_BIT = 0x80


class ProvenanceKind(IntEnum):
    RAW = 0
    COOKED = 1
    NOISE = 2
    PERTURBATION = 3


@dataclass(frozen=True)
class Provenance:
    """Where a dataset came from.

    ``fingerprint`` is the cooked-data fingerprint for cooked sets and the
    IEEE-754 bit pattern of sigma for noise sets, so both survive a round
    trip through the single u64 header field.
    """

    kind: ProvenanceKind = ProvenanceKind.RAW
    fingerprint: int = 0

    @classmethod
    def raw(cls) -> "Provenance":
        return cls(ProvenanceKind.RAW, 0)

    @classmethod
    def cooked(cls, fingerprint: int) -> "Provenance":
        return cls(ProvenanceKind.COOKED, fingerprint)

    @classmethod
    def noise(cls, sigma: float) -> "Provenance":
        return cls(ProvenanceKind.NOISE, struct.unpack("<Q", struct.pack("<d", sigma))[0])

    @classmethod
    def perturbation(cls) -> "Provenance":
        return cls(ProvenanceKind.PERTURBATION, 0)

    @property
    def sigma(self) -> float | None:
        if self.kind is not ProvenanceKind.NOISE:
            return None
        return struct.unpack("<d", struct.pack("<Q", self.fingerprint))[0]


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    provenance: Provenance = field(default_factory=Provenance.raw)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.split not in ("train", "test"):
            raise ParameterError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.images.ndim < 2:
            raise ShapeError("images need a leading sample axis plus at least one spatial axis")
        n = self.images.shape[0]
        if n < 1:
            raise ParameterError("a dataset needs at least one sample")
        if self.labels.shape != (n,):
            raise ShapeError(f"{n} images but labels of shape {self.labels.shape}")
        if self.num_classes < 1 or self.num_classes > 0xFFFF:
            raise ParameterError(f"num_classes out of range: {self.num_classes}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ParameterError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.images)):
            raise ParameterError("images contain NaN or Inf")
        # Perturbation sets are re-centred on 0.5 and may leave [0, 1].
        if self.provenance.kind is not ProvenanceKind.PERTURBATION:
            if self.images.min() < 0.0 or self.images.max() > 1.0:
                raise ParameterError("image values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.images.shape[1:]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.split, self.provenance)


def dataset_to_bytes(ds: Dataset) -> bytes:
    dims = ds.sample_shape
    if len(dims) > 255:
        raise ShapeError("too many sample dimensions")
    code = int(ds.provenance.kind) | (_TEST_BIT if ds.split == "test" else 0)
    out = io.BytesIO()
    out.write(DATASET_MAGIC)
    out.write(struct.pack("<BBQIB", DATASET_VERSION, code, ds.provenance.fingerprint, len(ds), len(dims)))
    out.write(struct.pack(f"<{len(dims)}I", *dims))
    out.write(struct.pack("<I", ds.num_classes))
    out.write(ds.labels.astype("<u2").tobytes())
    out.write(ds.images.astype("<f8", copy=False).tobytes())
    return out.getvalue()


def _take(fh: io.BytesIO, n: int, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(blob)}")
    return blob


def dataset_from_bytes(blob: bytes) -> Dataset:
    fh = io.BytesIO(blob)
    if _take(fh, 4, "magic") != DATASET_MAGIC:
        raise FormatError("bad dataset magic")
    version, code, fp, n, ndim = struct.unpack("<BBQIB", _take(fh, struct.calcsize("<BBQIB"), "header"))
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if n == 0 or ndim == 0:
        raise FormatError("dataset declares no samples or no dimensions")
    try:
        kind = ProvenanceKind(code & ~_TEST_BIT)
    except ValueError:
        raise FormatError(f"unknown provenance code {code}")
    dims = struct.unpack(f"<{ndim}I", _take(fh, 4 * ndim, "dimensions"))
    if any(d == 0 for d in dims):
        raise FormatError(f"zero dimension in {dims}")
    (num_classes,) = struct.unpack("<I", _take(fh, 4, "class count"))
    labels = np.frombuffer(_take(fh, 2 * n, "labels"), dtype="<u2").astype(np.int64)
    if num_classes == 0 or labels.max() >= num_classes:
        raise FormatError(f"label {labels.max()} outside [0, {num_classes})")
    count = n * math.prod(dims)
    images = np.frombuffer(_take(fh, 8 * count, "image payload"), dtype="<f8").astype(np.float64)
    if fh.read(1):
        raise FormatError("trailing bytes after image payload")
    split = "test" if code & _TEST_BIT else "train"
    try:
        return Dataset(images.reshape((n,) + dims), labels, num_classes, split, Provenance(kind, fp))
    except ParameterError as exc:
        raise FormatError(str(exc)) from exc


def save_dataset(path: str | Path, ds: Dataset) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path: str | Path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# Synthetic corpus


@dataclass(frozen=True)
class SynthRecipe:
    """Gaussian blobs at class-specific positions on a square canvas.

    Class ``c``'s blob centre sits on a circle around the canvas centre at
    angle ``2*pi*c/k``, with radius ``separation * side / 4``. Each sample's
    centre is jittered, its amplitude varies, and pixel noise is added.
    """

    classes: int = 2
    per_class_train: int = 1000
    per_class_test: int = 250
    side: int = 16
    separation: float = 0.5
    blob_sigma: float = 2.0
    amplitude: float = 0.6
    amplitude_jitter: float = 0.1
    background: float = 0.2
    center_jitter: float = 0.5
    noise: float = 0.05

    def __post_init__(self):
        if self.classes < 2:
            raise ParameterError("a synthetic recipe needs at least 2 classes")
        if self.side < 4:
            raise ParameterError("canvas side must be >= 4")
        if self.per_class_train < 1 or self.per_class_test < 1:
            raise ParameterError("per-class counts must be positive")
        if self.blob_sigma <= 0 or self.noise < 0 or self.center_jitter < 0:
            raise ParameterError("blob_sigma must be positive; noise and jitter non-negative")


def _render(recipe: SynthRecipe, labels: np.ndarray, rng: Rng) -> np.ndarray:
    n, s = len(labels), recipe.side
    centre = (s - 1) / 2.0
    radius = recipe.separation * s / 4.0
    angles = 2.0 * np.pi * labels / recipe.classes
    jitter = rng_gaussian(rng, [n, 2], recipe.center_jitter)
    cy = centre + radius * np.sin(angles) + jitter[:, 0]
    cx = centre + radius * np.cos(angles) + jitter[:, 1]
    amp = recipe.amplitude + rng_gaussian(rng, [n], recipe.amplitude_jitter)
    grid = np.arange(s, dtype=np.float64)
    dy = (grid[None, :] - cy[:, None]) ** 2
    dx = (grid[None, :] - cx[:, None]) ** 2
    blob = np.exp(-(dy[:, :, None] + dx[:, None, :]) / (2.0 * recipe.blob_sigma**2))
    img = recipe.background + amp[:, None, None] * blob
    img = img + rng_gaussian(rng, [n, s, s], recipe.noise)
    return np.clip(img, 0.0, 1.0)


def one_nn_accuracy(train: Dataset, test: Dataset) -> float:
    """Test accuracy of a Euclidean 1-nearest-neighbour classifier."""
    a = train.images.reshape(len(train), -1)
    b = test.images.reshape(len(test), -1)
    d = (b * b).sum(1)[:, None] - 2.0 * b @ a.T + (a * a).sum(1)[None, :]
    pred = train.labels[np.argmin(d, axis=1)]
    return float(np.mean(pred == test.labels))


def synth_dataset(recipe: SynthRecipe, seed: int) -> tuple[Dataset, Dataset]:
    """Balanced train/test splits drawn from ``recipe``; deterministic per seed.

    Warns (``UserWarning``) when a 1-NN classifier scores below 90 % on the
    test split, which signals heavily overlapping classes.
    """
    splits = []
    for idx, (split, per_class) in enumerate((("train", recipe.per_class_train), ("test", recipe.per_class_test))):
        rng = Rng(derive_seed(seed, 0x5EED, idx))
        labels = np.repeat(np.arange(recipe.classes), per_class)
        labels = labels[rng.permutation(len(labels))]
        splits.append(Dataset(_render(recipe, labels, rng), labels, recipe.classes, split))
    train, test = splits
    acc = one_nn_accuracy(train, test)
    if acc < 0.9:
        warnings.warn(f"synthetic recipe is hard to separate: 1-NN test accuracy {acc:.3f} < 0.90", stacklevel=2)
    return train, test
