"""Dataset ingestion, client partitioning, and noise injection.

Provides a synthetic Gaussian-blob generator (so the test suite needs no
downloads), an IDX image/label reader for MNIST-style files, deterministic
IID / non-IID client partitioning, and label / pattern noise injection.
"""

from __future__ import annotations

import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConsistencyError, FormatError
from .rng import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class NoiseKind(str, Enum):
    NONE = "none"
    LABEL = "label"
    PATTERN = "pattern"


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix in [0,1] plus integer labels; sample order is immutable."""

    features: np.ndarray  # (n_samples, dim) float64
    labels: np.ndarray    # (n_samples,) int64 in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labs = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError(
                f"labels shape {labs.shape} does not match {feats.shape[0]} samples"
            )
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labs.size and (labs.min() < 0 or labs.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        feats.flags.writeable = False
        labs.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> LabeledDataset:
        """New dataset holding the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx].copy(), self.labels[idx].copy(), self.num_classes)

    def prefix(self, count: int) -> LabeledDataset:
        """First `count` samples in stored order."""
        if not 0 <= count <= len(self):
            raise ValueError(f"prefix length {count} out of range for {len(self)} samples")
        return self.subset(np.arange(count))


@dataclass(frozen=True)
class ClientPartition:
    """One client's slice of the source dataset, with noise bookkeeping."""

    client_id: int
    dataset: LabeledDataset
    source_indices: np.ndarray = field(repr=False)
    noisy: bool = False
    noise_kind: NoiseKind = NoiseKind.NONE

    def __post_init__(self):
        idx = np.ascontiguousarray(self.source_indices, dtype=np.int64)
        idx.flags.writeable = False
        object.__setattr__(self, "source_indices", idx)
        if len(self.dataset) < 1:
            raise ValueError("client dataset must be non-empty")
        if idx.shape[0] != len(self.dataset):
            raise ValueError("source_indices must cover every sample")
        if self.noisy != (self.noise_kind is not NoiseKind.NONE):
            raise ValueError("noisy flag must agree with noise_kind")


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across clients.

    classes_per_client=None assigns every class (the IID setting); an integer
    restricts each client to that many classes (non-IID).
    """

    n_clients: int
    classes_per_client: int | None
    samples_per_client: int
    seed: int

    def __post_init__(self):
        if self.n_clients < 2:
            raise ValueError("n_clients must be at least 2")
        if self.samples_per_client < 1:
            raise ValueError("samples_per_client must be positive")
        if self.classes_per_client is not None and self.classes_per_client < 1:
            raise ValueError("classes_per_client must be positive or None")


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind
    client_fraction: float
    sample_fraction: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.kind is NoiseKind.NONE:
            raise ValueError("noise kind must be 'label' or 'pattern'")
        for name in ("client_fraction", "sample_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def generate_synthetic(
    classes: int, per_class: int, dim: int, spread: float, seed: int
) -> LabeledDataset:
    """Balanced Gaussian blobs with one random mean per class.

    Class means are drawn uniformly inside the unit cube (kept away from the
    walls so clipping stays inactive for small spreads). Samples are stored
    class-interleaved, so any prefix of length k*classes is itself balanced.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1:
        raise ValueError("per_class must be positive")
    if dim < 2:
        raise ValueError("dim must be at least 2")
    rng = RngStream(seed)
    means = rng.uniform(0.15, 0.85, size=(classes, dim))
    raw = means[:, None, :] + spread * rng.normal(size=(classes, per_class, dim))
    # (class, copy, dim) -> copy-major so class index cycles fastest
    features = np.clip(raw.transpose(1, 0, 2).reshape(classes * per_class, dim), 0.0, 1.0)
    labels = np.tile(np.arange(classes, dtype=np.int64), per_class)
    return LabeledDataset(features, labels, classes)


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, path: Path) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"{path}: truncated, expected {count} more bytes, got {len(data)}")
    return data


def load_idx(images_path: str | Path, labels_path: str | Path) -> LabeledDataset:
    """Read a big-endian IDX image/label file pair (gzip accepted).

    Pixels are scaled to [0,1] by /255 and flattened row-major.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    with _open_maybe_gzip(images_path) as fh:
        magic, n_images, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        pixels = np.frombuffer(_read_exact(fh, n_images * rows * cols, images_path), dtype=np.uint8)
    with _open_maybe_gzip(labels_path) as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        labels = np.frombuffer(_read_exact(fh, n_labels, labels_path), dtype=np.uint8)
    if n_images != n_labels:
        raise ConsistencyError(
            f"image count {n_images} ({images_path}) != label count {n_labels} ({labels_path})"
        )
    features = pixels.reshape(n_images, rows * cols).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    num_classes = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset(features, labels, num_classes)


def partition(data: LabeledDataset, spec: PartitionSpec) -> list[ClientPartition]:
    """Split a dataset across clients; every sample is assigned at most once.

    Each client receives samples_per_client samples, split equally over its
    assigned classes. Non-IID class assignment walks round-robin over a seeded
    class shuffle so the union of client supports covers every class. The
    sample order inside a client is shuffled once at assignment and then fixed.
    """
    n_classes = data.num_classes
    cpc = n_classes if spec.classes_per_client is None else spec.classes_per_client
    if not 1 <= cpc <= n_classes:
        raise ValueError(f"classes_per_client must lie in [1, {n_classes}], got {cpc}")
    if spec.samples_per_client % cpc != 0:
        raise ValueError(
            f"samples_per_client ({spec.samples_per_client}) must be divisible by the "
            f"{cpc} classes each client holds"
        )
    per_label = spec.samples_per_client // cpc

    rng = RngStream(spec.seed)
    pools = [rng.permutation(np.flatnonzero(data.labels == c)) for c in range(n_classes)]
    if spec.classes_per_client is None:
        assigned = [list(range(n_classes)) for _ in range(spec.n_clients)]
    else:
        class_order = rng.permutation(n_classes)
        assigned = [
            [int(class_order[(i * cpc + j) % n_classes]) for j in range(cpc)]
            for i in range(spec.n_clients)
        ]

    demand = np.zeros(n_classes, dtype=np.int64)
    for labels in assigned:
        for c in labels:
            demand[c] += per_label
    deficits = [
        f"class {c}: need {demand[c]}, have {len(pools[c])}"
        for c in range(n_classes)
        if demand[c] > len(pools[c])
    ]
    if deficits:
        raise CapacityError("not enough samples to partition: " + "; ".join(deficits))

    cursors = [0] * n_classes
    partitions = []
    for client_id in range(spec.n_clients):
        taken = []
        for c in assigned[client_id]:
            taken.append(pools[c][cursors[c] : cursors[c] + per_label])
            cursors[c] += per_label
        indices = np.concatenate(taken)
        indices = indices[rng.permutation(len(indices))]
        partitions.append(ClientPartition(client_id, data.subset(indices), indices))
    return partitions


def _pattern_positions(dim: int, block: int) -> np.ndarray:
    """Indices of a block x block patch: bottom-right corner for square images,
    otherwise the trailing block**2 feature positions."""
    side = math.isqrt(dim)
    if side * side == dim and side >= block:
        rows = np.arange(side - block, side)
        return (rows[:, None] * side + rows[None, :]).ravel()
    return np.arange(max(0, dim - block * block), dim)


def default_pattern_block(dim: int) -> int:
    return max(2, math.ceil(math.sqrt(dim)) // 7)


def inject_noise(
    partitions: list[ClientPartition], spec: NoiseSpec, pattern_block: int | None = None
) -> list[ClientPartition]:
    """Corrupt a seeded selection of clients.

    Label noise relabels y -> (y + 1 + u) mod C with a per-client offset u in
    [0, C-1), so a changed label never equals the original. Pattern noise
    overwrites a white pixel block (labels untouched). A client is flagged
    noisy only when at least one of its samples was modified.
    """
    rng = RngStream(spec.seed)
    n = len(partitions)
    n_noisy = _round_half_up(spec.client_fraction * n)
    selected = set(int(i) for i in rng.choice(n, size=n_noisy, replace=False)) if n_noisy else set()

    out = []
    for part in partitions:
        if part.client_id not in selected:
            out.append(part)
            continue
        size = len(part.dataset)
        n_mod = _round_half_up(spec.sample_fraction * size)
        rows = np.sort(rng.choice(size, size=n_mod, replace=False)) if n_mod else np.empty(0, np.int64)
        if spec.kind is NoiseKind.LABEL:
            offset = int(rng.integers(0, part.dataset.num_classes - 1))
        if n_mod == 0:
            out.append(part)
            continue
        features = part.dataset.features.copy()
        labels = part.dataset.labels.copy()
        if spec.kind is NoiseKind.LABEL:
            labels[rows] = (labels[rows] + 1 + offset) % part.dataset.num_classes
        else:
            block = default_pattern_block(part.dataset.dim) if pattern_block is None else pattern_block
            features[np.ix_(rows, _pattern_positions(part.dataset.dim, block))] = 1.0
        noisy_data = LabeledDataset(features, labels, part.dataset.num_classes)
        out.append(
            ClientPartition(part.client_id, noisy_data, part.source_indices, True, spec.kind)
        )
    return out


def export_partition_manifest(partitions: list[ClientPartition], path: str | Path) -> Path:
    """Audit manifest: which source rows each client holds and its noise flags."""
    path = Path(path)
    manifest = [
        {
            "client_id": p.client_id,
            "indices": [int(i) for i in p.source_indices],
            "noisy": p.noisy,
            "noise_kind": p.noise_kind.value,
        }
        for p in partitions
    ]
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path
