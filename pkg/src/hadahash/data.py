"""Feature/label ingestion, synthetic blob generation, and the split protocol."""

from dataclasses import dataclass

import numpy as np

from .io import (expect_magic, expect_version, read_array, read_u32,
                 write_array, write_u32)
from .rng import make_rng, standard_normal

FEATURES_MAGIC = b"HCFS"
LABELS_MAGIC = b"HCLS"
FORMAT_VERSION = 1

_TEXT_EXTENSIONS = (".csv", ".txt")


@dataclass(frozen=True)
class FeatureSet:
    """N x D real feature matrix, 32-bit, all values finite."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("features contain non-finite values")

    @property
    def num_items(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabelSet:
    """N x C binary label matrix; every row carries at least one class."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {self.values.shape}")
        if not np.all((self.values == 0) | (self.values == 1)):
            raise ValueError("label entries must be 0 or 1")
        if np.any(self.values.sum(axis=1) == 0):
            raise ValueError("every item needs at least one positive label")

    @property
    def num_items(self) -> int:
        return self.values.shape[0]

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]

    def class_indices(self) -> np.ndarray:
        """Single class index per row; rejects multi-label rows."""
        if np.any(self.values.sum(axis=1) != 1):
            raise ValueError("label matrix is multi-label, no single class per row")
        return np.argmax(self.values, axis=1).astype(np.int64)


@dataclass(frozen=True)
class Split:
    """Disjoint query/train index lists plus the database (all non-query items)."""

    query: np.ndarray
    train: np.ndarray
    database: np.ndarray


def _is_text(path) -> bool:
    return str(path).lower().endswith(_TEXT_EXTENSIONS)


def save_features(features: FeatureSet, path) -> None:
    if _is_text(path):
        np.savetxt(path, features.values, delimiter=",", fmt="%.9g")
        return
    with open(path, "wb") as f:
        f.write(FEATURES_MAGIC)
        write_u32(f, FORMAT_VERSION)
        write_u32(f, features.num_items)
        write_u32(f, features.dim)
        write_array(f, features.values, "<f4")


def load_features(path) -> FeatureSet:
    if _is_text(path):
        values = np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)
        return FeatureSet(values=values)
    with open(path, "rb") as f:
        expect_magic(f, FEATURES_MAGIC, path)
        expect_version(f, FORMAT_VERSION, path)
        n = read_u32(f, "item count")
        d = read_u32(f, "feature dim")
        values = read_array(f, "<f4", n * d, "feature payload")
    return FeatureSet(values=values.reshape(n, d))


def save_labels(labels: LabelSet, path) -> None:
    if _is_text(path):
        np.savetxt(path, labels.values, delimiter=",", fmt="%d")
        return
    with open(path, "wb") as f:
        f.write(LABELS_MAGIC)
        write_u32(f, FORMAT_VERSION)
        write_u32(f, labels.num_items)
        write_u32(f, labels.num_classes)
        write_array(f, labels.values, np.uint8)


def load_labels(path) -> LabelSet:
    if _is_text(path):
        values = np.loadtxt(path, delimiter=",", dtype=np.uint8, ndmin=2)
        return LabelSet(values=values)
    with open(path, "rb") as f:
        expect_magic(f, LABELS_MAGIC, path)
        expect_version(f, FORMAT_VERSION, path)
        n = read_u32(f, "item count")
        c = read_u32(f, "class count")
        values = read_array(f, np.uint8, n * c, "label payload")
    return LabelSet(values=values.reshape(n, c))


def make_synthetic_blobs(num_classes: int, per_class: int, dim: int,
                         spread: float, seed: int):
    """Well-separated Gaussian blobs with one-hot labels.

    Class centers are random directions on a sphere scaled so the closest
    pair of centers sits 8 * spread apart, which keeps nearest-center
    classification essentially exact. Samples are center plus isotropic
    noise of scale `spread`; rows are laid out class-major.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if dim < 2:
        raise ValueError(f"need dim >= 2, got {dim}")
    if per_class < 1:
        raise ValueError(f"need per_class >= 1, got {per_class}")
    if spread <= 0:
        raise ValueError(f"spread must be positive, got {spread}")

    rng = make_rng(seed)
    while True:
        directions = standard_normal(rng, (num_classes, dim))
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        if np.all(norms > 0):
            directions /= norms
            diffs = directions[:, None, :] - directions[None, :, :]
            dists = np.linalg.norm(diffs, axis=2)
            min_dist = dists[~np.eye(num_classes, dtype=bool)].min()
            if min_dist > 0:
                break
    centers = directions * (8.0 * spread / min_dist)

    n = num_classes * per_class
    noise = standard_normal(rng, (n, dim)) * spread
    features = np.repeat(centers, per_class, axis=0) + noise
    labels = np.zeros((n, num_classes), dtype=np.uint8)
    labels[np.arange(n), np.repeat(np.arange(num_classes), per_class)] = 1
    return FeatureSet(values=features.astype(np.float32)), LabelSet(values=labels)


def split_protocol(labels: LabelSet, n_query_per_class: int,
                   n_train_per_class: int, seed: int) -> Split:
    """Per-class quota split into query and train sets; database is the rest.

    Items are scanned in a seeded random order. An item joins the query set
    if any of its classes still has an unfilled query quota, counting toward
    every class it carries; the train pass works the same way over the
    remaining items. The database is every non-query item, so training items
    stay inside it.
    """
    if n_query_per_class < 0 or n_train_per_class < 0:
        raise ValueError("per-class quotas must be non-negative")
    y = labels.values
    n, c = y.shape
    rng = make_rng(seed)
    order = rng.permutation(n)

    def fill(quota_per_class, candidates):
        remaining = np.full(c, quota_per_class, dtype=np.int64)
        chosen = []
        for idx in candidates:
            classes = np.flatnonzero(y[idx])
            if np.any(remaining[classes] > 0):
                chosen.append(idx)
                remaining[classes] -= 1
                np.maximum(remaining, 0, out=remaining)
        unfilled = np.flatnonzero(remaining > 0)
        if unfilled.size > 0:
            short = unfilled[0]
            raise ValueError(
                f"class {short} has too few items: {remaining[short]} more "
                f"needed for a quota of {quota_per_class}")
        return np.array(sorted(chosen), dtype=np.int64)

    query = fill(n_query_per_class, order)
    in_query = np.zeros(n, dtype=bool)
    in_query[query] = True
    train = fill(n_train_per_class, [i for i in order if not in_query[i]])
    database = np.flatnonzero(~in_query).astype(np.int64)
    return Split(query=query, train=train, database=database)


def save_split(split: Split, path) -> None:
    with open(path, "w") as f:
        for name, indices in (("query", split.query), ("train", split.train),
                              ("database", split.database)):
            f.write(name + ": " + " ".join(str(int(i)) for i in indices) + "\n")


def load_split(path) -> Split:
    sections = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            name, _, rest = line.partition(":")
            name = name.strip()
            if name not in ("query", "train", "database"):
                raise ValueError(f"{path}: unknown split section {name!r}")
            sections[name] = np.array(
                [int(tok) for tok in rest.split()], dtype=np.int64)
    missing = {"query", "train", "database"} - sections.keys()
    if missing:
        raise ValueError(f"{path}: missing split sections {sorted(missing)}")
    return Split(query=sections["query"], train=sections["train"],
                 database=sections["database"])


def standardize(features: FeatureSet, train_indices: np.ndarray):
    """Per-dimension z-scoring with statistics from the training rows only.

    Returns the standardized features plus the (mean, std) used, so the
    same transform can be replayed on new data. Off by default everywhere;
    raw features are the normal path.
    """
    train_rows = features.values[train_indices]
    mean = train_rows.mean(axis=0)
    std = train_rows.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    scaled = (features.values - mean) / std
    return FeatureSet(values=scaled.astype(np.float32)), mean, std
