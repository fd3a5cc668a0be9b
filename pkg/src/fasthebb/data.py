"""Dataset ingestion: CIFAR-10 binary reader, seeded synthetic generators,
sample-efficiency regime splitting, and the FHDS dump format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    BadCovariance,
    BadLabel,
    BadMagic,
    CorruptFile,
    TruncatedFile,
    VersionMismatch,
)
from .tensor import Tensor

__all__ = [
    "Dataset",
    "Regime",
    "REGIME_FRACTIONS",
    "load_cifar10",
    "synth_gaussian",
    "synth_clusters",
    "split_regime",
    "train_val_split",
    "save_dataset",
    "load_dataset",
]

CIFAR_RECORD = 3073  # 1 label byte + 3*32*32 pixel bytes
CIFAR_CLASSES = 10
REGIME_FRACTIONS = (1, 2, 3, 4, 5, 10, 25, 100)

FHDS_MAGIC = b"FHDS"
FHDS_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Immutable image/feature dataset.

    ``images`` is B x C x H x W float64; pixel data is scaled to [0,1],
    synthetic feature data lives in C=H=1 with W = dims and is unbounded.
    """

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "images", np.ascontiguousarray(self.images, dtype=np.float64))
        object.__setattr__(self, "labels", np.ascontiguousarray(self.labels, dtype=np.int64))
        if self.images.ndim != 4:
            raise ValueError(f"images must be BxCxHxW, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError("label count does not match image count")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.class_count
        ):
            raise BadLabel("labels outside [0, class_count)")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def feature_dim(self) -> int:
        return int(np.prod(self.images.shape[1:]))

    def tensor(self) -> Tensor:
        return Tensor(self.images)

    def subset(self, indices: np.ndarray, split: Optional[str] = None) -> "Dataset":
        return Dataset(
            self.images[indices],
            self.labels[indices],
            self.class_count,
            split or self.split,
        )


@dataclass(frozen=True)
class Regime:
    """s% sample-efficiency regime: only s% of the train set keeps labels."""

    labeled_fraction: int
    seed: int = 0

    def __post_init__(self):
        if self.labeled_fraction not in REGIME_FRACTIONS:
            raise ValueError(
                f"labeled_fraction must be one of {REGIME_FRACTIONS}, "
                f"got {self.labeled_fraction}"
            )


def load_cifar10(path, split: str = "train") -> Dataset:
    """Read one CIFAR-10 binary file (whole 3073-byte records).

    Record layout: 1 label byte, then 3072 pixel bytes plane-major R,G,B,
    row-major within each plane.  Pixels are scaled to [0,1].
    """
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
        raise TruncatedFile(
            f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) >= CIFAR_CLASSES:
        raise BadLabel(f"{path}: label byte {labels.max()} exceeds 9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels, CIFAR_CLASSES, split)


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise BadCovariance(f"covariance is not positive definite: {exc}") from exc


def synth_gaussian(num: int, dims: int, covariance_spec, seed: int) -> Dataset:
    """Zero-mean Gaussian samples with the given covariance (matrix, diagonal
    vector, or scalar), reproducible from the seed.  Labels are all zero."""
    cov = np.asarray(covariance_spec, dtype=np.float64)
    if cov.ndim == 0:
        cov = np.eye(dims) * float(cov)
    elif cov.ndim == 1:
        if len(cov) != dims:
            raise BadCovariance(f"diagonal has {len(cov)} entries, expected {dims}")
        cov = np.diag(cov)
    elif cov.shape != (dims, dims):
        raise BadCovariance(f"covariance shape {cov.shape} != ({dims},{dims})")
    chol = _cholesky(cov)
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal((num, dims)) @ chol.T
    return Dataset(
        samples.reshape(num, 1, 1, dims), np.zeros(num, dtype=np.int64), 1
    )


def synth_clusters(
    k: int,
    num: int,
    dims: int,
    separation: float,
    seed: int,
    noise_std: float = 1.0,
    centroid_seed: Optional[int] = None,
) -> tuple[Dataset, np.ndarray]:
    """``num`` samples around ``k`` centroids with pairwise distance
    ``separation`` (in units of ``noise_std``); returns the ground-truth
    centroids alongside.  Requires k <= dims.

    ``centroid_seed`` (default: ``seed``) fixes centroid placement
    independently of the sampling seed, so disjoint train/test draws can
    share the same ground truth.
    """
    if k > dims:
        raise ValueError(f"need k <= dims to place {k} equidistant centroids")
    rng_c = np.random.default_rng(seed if centroid_seed is None else centroid_seed)
    rng = np.random.default_rng(seed)
    # orthonormal directions scaled so pairwise centroid distance == separation
    basis, _ = np.linalg.qr(rng_c.standard_normal((dims, dims)))
    centroids = basis[:, :k].T * (separation * noise_std / np.sqrt(2.0))
    labels = rng.integers(0, k, size=num)
    samples = centroids[labels] + rng.standard_normal((num, dims)) * noise_std
    ds = Dataset(samples.reshape(num, 1, 1, dims), labels, k)
    return ds, centroids


def _stratified_counts(labels: np.ndarray, class_count: int, total: int, rng) -> np.ndarray:
    """Per-class labeled counts, equal within +-1, deterministic given rng."""
    base = total // class_count
    counts = np.full(class_count, base, dtype=np.int64)
    extra = total - base * class_count
    if extra:
        order = rng.permutation(class_count)
        counts[order[:extra]] += 1
    # never ask for more than a class has
    for cls in range(class_count):
        counts[cls] = min(counts[cls], int(np.sum(labels == cls)))
    return counts


def split_regime(dataset: Dataset, regime: Regime) -> tuple[Dataset, Dataset]:
    """Split into (labeled, unlabeled), stratified by class, seeded."""
    rng = np.random.default_rng(regime.seed)
    total = round(regime.labeled_fraction / 100.0 * len(dataset))
    counts = _stratified_counts(dataset.labels, dataset.class_count, total, rng)
    labeled_idx = []
    for cls in range(dataset.class_count):
        members = np.flatnonzero(dataset.labels == cls)
        picked = rng.permutation(members)[: counts[cls]]
        labeled_idx.append(picked)
    labeled_idx = np.sort(np.concatenate(labeled_idx)) if labeled_idx else np.array([], dtype=np.int64)
    mask = np.zeros(len(dataset), dtype=bool)
    mask[labeled_idx] = True
    return dataset.subset(labeled_idx), dataset.subset(np.flatnonzero(~mask))


def train_val_split(
    dataset: Dataset, val_fraction: float = 0.2, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """Seeded train/validation split (default 80/20)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_val = int(round(val_fraction * len(dataset)))
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    return dataset.subset(train_idx, "train"), dataset.subset(val_idx, "val")


def save_dataset(path, dataset: Dataset) -> None:
    """Dump to the FHDS format: magic, u32 version, u32 ndim, u32 extents,
    little-endian f64 image data, then u32 class count and u32 labels."""
    with open(path, "wb") as fh:
        fh.write(FHDS_MAGIC)
        fh.write(struct.pack("<I", FHDS_VERSION))
        fh.write(struct.pack("<I", dataset.images.ndim))
        for extent in dataset.images.shape:
            fh.write(struct.pack("<I", extent))
        fh.write(dataset.images.astype("<f8").tobytes())
        fh.write(struct.pack("<I", dataset.class_count))
        fh.write(dataset.labels.astype("<u4").tobytes())


def load_dataset(path, split: str = "train") -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != FHDS_MAGIC:
        raise BadMagic(f"{path}: expected FHDS magic, got {raw[:4]!r}")
    try:
        version = struct.unpack_from("<I", raw, 4)[0]
        if version != FHDS_VERSION:
            raise VersionMismatch(f"{path}: unsupported FHDS version {version}")
        ndim = struct.unpack_from("<I", raw, 8)[0]
        shape = struct.unpack_from(f"<{ndim}I", raw, 12)
        offset = 12 + 4 * ndim
        count = int(np.prod(shape))
        images = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        class_count = struct.unpack_from("<I", raw, offset)[0]
        offset += 4
        labels = np.frombuffer(raw, dtype="<u4", count=shape[0], offset=offset)
    except (struct.error, ValueError) as exc:
        raise CorruptFile(f"{path}: truncated FHDS file") from exc
    return Dataset(
        images.reshape(shape).copy(), labels.astype(np.int64), class_count, split
    )
