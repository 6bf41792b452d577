"""Shared domain types, validation, and the deterministic RNG contract.

All value types are immutable after construction (arrays are marked
read-only), so they can be shared freely across worker processes/threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ClassId",
    "RngSeed",
    "ValidationError",
    "CountVector",
    "ExpectedCounts",
    "ProbMatrix",
    "PresenceVector",
    "AssignmentMatrix",
    "Bag",
    "BagDataset",
    "validate_bag",
    "rng_stream",
    "STREAM_DATAGEN",
    "STREAM_CENTERS",
    "STREAM_INIT",
    "STREAM_SHUFFLE",
    "STREAM_POOL",
]

# Class labels are plain ints in [0, K); seeds are unsigned 64-bit ints.
ClassId = int
RngSeed = int

ROW_SUM_TOL = 1e-9

# Stream purposes. Each pipeline stage derives its generator from
# (seed, purpose, *key) so that changing e.g. the shuffling never
# perturbs dataset generation.
STREAM_DATAGEN = 1
STREAM_CENTERS = 2
STREAM_INIT = 3
STREAM_SHUFFLE = 4
STREAM_POOL = 5


class ValidationError(ValueError):
    """A domain type invariant was violated."""


def rng_stream(seed: RngSeed, purpose: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, purpose, key...).

    Two streams with any differing component are statistically independent;
    identical components give bit-identical streams.
    """
    if seed < 0:
        raise ValidationError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, purpose, *key])))


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CountVector:
    """Per-class non-negative integer counts for one bag.

    Lives on the integer simplex: entries sum to the bag size.
    """

    counts: np.ndarray
    bag_size: int = field(default=-1)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size == 0:
            raise ValidationError("counts must be a non-empty 1-d array")
        if not np.issubdtype(counts.dtype, np.integer):
            rounded = np.rint(counts)
            if not np.array_equal(rounded, counts):
                raise ValidationError("counts must be integers")
            counts = rounded
        counts = counts.astype(np.int64)
        if (counts < 0).any():
            raise ValidationError(f"counts must be non-negative, got {counts.tolist()}")
        total = int(counts.sum())
        declared = self.bag_size
        if declared == -1:
            declared = total
        elif declared != total:
            raise ValidationError(f"label sum mismatch: counts sum to {total}, bag_size is {declared}")
        object.__setattr__(self, "counts", _freeze(counts))
        object.__setattr__(self, "bag_size", declared)

    @property
    def n_classes(self) -> int:
        return self.counts.size

    def sparsity(self) -> float:
        """Fraction of classes with zero instances in the bag."""
        return float(np.count_nonzero(self.counts == 0)) / self.n_classes


@dataclass(frozen=True)
class ExpectedCounts:
    """Real-valued expected instances per class (column sums of a ProbMatrix)."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise ValidationError("lambdas must be a non-empty 1-d array")
        if not np.isfinite(lam).all():
            raise ValidationError("lambdas must be finite")
        if (lam < 0).any():
            raise ValidationError("lambdas must be non-negative")
        object.__setattr__(self, "lambdas", _freeze(lam))

    @property
    def n_classes(self) -> int:
        return self.lambdas.size


@dataclass(frozen=True)
class ProbMatrix:
    """Row-stochastic matrix of instance class probabilities, one row per instance."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.size == 0:
            raise ValidationError("values must be a non-empty 2-d array")
        if (vals < 0).any():
            raise ValidationError("probabilities must be non-negative")
        row_sums = vals.sum(axis=1)
        bad = np.abs(row_sums - 1.0) > ROW_SUM_TOL
        if bad.any():
            i = int(np.argmax(bad))
            raise ValidationError(f"row {i} sums to {row_sums[i]!r}, expected 1 within {ROW_SUM_TOL}")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def n_instances(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]

    def column_sums(self) -> ExpectedCounts:
        return ExpectedCounts(self.values.sum(axis=0))

    def column_means(self) -> np.ndarray:
        return self.values.mean(axis=0)


@dataclass(frozen=True)
class PresenceVector:
    """Per-class probability that the class is present (count > 0) in the bag."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise ValidationError("values must be a non-empty 1-d array")
        if ((vals < 0) | (vals > 1)).any():
            raise ValidationError("presence scores must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def n_classes(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class AssignmentMatrix:
    """Binary instance-to-class assignment: unit row sums, column sums fixed by a CountVector."""

    values: np.ndarray
    counts: CountVector

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise ValidationError("values must be 2-d")
        if not np.isin(vals, (0, 1)).all():
            raise ValidationError("assignment entries must be binary")
        vals = vals.astype(np.int64)
        if (vals.sum(axis=1) != 1).any():
            raise ValidationError("every instance must be assigned exactly one class")
        if not np.array_equal(vals.sum(axis=0), self.counts.counts):
            raise ValidationError("column sums do not match the count vector")
        object.__setattr__(self, "values", _freeze(vals))

    @classmethod
    def from_labels(cls, labels: Sequence[ClassId], counts: CountVector) -> "AssignmentMatrix":
        labels = np.asarray(labels, dtype=np.int64)
        mat = np.zeros((labels.size, counts.n_classes), dtype=np.int64)
        mat[np.arange(labels.size), labels] = 1
        return cls(mat, counts)

    def to_labels(self) -> np.ndarray:
        return self.values.argmax(axis=1)


@dataclass(frozen=True)
class Bag:
    """Instance feature vectors plus the bag's count label.

    ``true_instance_labels`` are held out for evaluation only; when present
    their per-class histogram must equal the count label.
    """

    bag_id: int
    features: np.ndarray
    label: CountVector
    true_instance_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValidationError("features must be a 2-d (n_instances, dim) array")
        object.__setattr__(self, "features", _freeze(feats))
        if self.true_instance_labels is not None:
            labels = np.asarray(self.true_instance_labels, dtype=np.int64)
            object.__setattr__(self, "true_instance_labels", _freeze(labels))

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def validate_bag(bag: Bag, n_classes: int) -> Bag:
    """Check all Bag invariants against the dataset's class count; returns the bag unchanged."""
    if bag.label.n_classes != n_classes:
        raise ValidationError(
            f"bag {bag.bag_id}: dimension mismatch, label has {bag.label.n_classes} classes, expected {n_classes}"
        )
    if bag.label.bag_size != bag.n_instances:
        raise ValidationError(
            f"bag {bag.bag_id}: label sum mismatch, counts sum to {bag.label.bag_size} "
            f"but bag has {bag.n_instances} instances"
        )
    if bag.true_instance_labels is not None:
        labels = bag.true_instance_labels
        if labels.shape != (bag.n_instances,):
            raise ValidationError(f"bag {bag.bag_id}: true label length != number of instances")
        if ((labels < 0) | (labels >= n_classes)).any():
            raise ValidationError(f"bag {bag.bag_id}: true labels outside [0, {n_classes})")
        hist = np.bincount(labels, minlength=n_classes)
        if not np.array_equal(hist, bag.label.counts):
            raise ValidationError(
                f"bag {bag.bag_id}: histogram mismatch, true labels give {hist.tolist()}, "
                f"label says {bag.label.counts.tolist()}"
            )
    return bag


@dataclass(frozen=True)
class BagDataset:
    """Train/test bag collections with shared dimensions."""

    train: tuple
    test: tuple
    n_classes: int
    bag_size: int
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        if not self.train and not self.test:
            raise ValidationError("dataset has no bags")
        for bag in (*self.train, *self.test):
            validate_bag(bag, self.n_classes)
            if bag.feature_dim != self.feature_dim:
                raise ValidationError(f"bag {bag.bag_id}: feature dim {bag.feature_dim} != {self.feature_dim}")
            if bag.n_instances != self.bag_size:
                raise ValidationError(f"bag {bag.bag_id}: bag size {bag.n_instances} != {self.bag_size}")

    def split(self, name: str) -> tuple:
        if name == "train":
            return self.train
        if name == "test":
            return self.test
        raise ValidationError(f"unknown split {name!r}, expected 'train' or 'test'")
