"""Synthetic bag datasets: count labels from a chosen distribution plus
Gaussian-cluster instance features.

Count labels follow the repeated draw protocol: pick a class uniformly
among those not yet drawn this round (a fresh round starts when all classes
have been consumed), draw a count from the configured distribution,
truncate it to the remaining capacity, and repeat until the bag is full.
Features for an instance of class k are that class's cluster center plus
unit isotropic noise; centers are placed deterministically from the seed
with a minimum pairwise distance.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    Bag,
    BagDataset,
    CountVector,
    STREAM_CENTERS,
    STREAM_DATAGEN,
    STREAM_POOL,
    ValidationError,
    rng_stream,
)
from .ioutil import atomic_write_text, read_jsonl, stable_json, write_jsonl

__all__ = [
    "DISTRIBUTIONS",
    "DatasetConfig",
    "DatasetStats",
    "sample_bag_label",
    "cluster_centers",
    "synthesize_features",
    "generate_dataset",
    "write_dataset",
    "load_dataset",
]

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("poisson", "exponential", "uniform")
MANIFEST_VERSION = 1
# draw attempts per bag before the label is force-filled uniformly
FILL_ITERATION_FACTOR = 64


@dataclass(frozen=True)
class DatasetConfig:
    distribution: str
    bag_size: int
    lam: float = 1.0
    n_train_bags: int = 1
    n_test_bags: int = 1
    n_classes: int = 10
    feature_dim: int = 16
    cluster_separation: float = 6.0
    reuse_cap: int = 2
    pool_per_class: Optional[int] = None
    seed: int = 0
    dataset_id: str = "dataset"

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValidationError(f"unknown distribution {self.distribution!r}")
        if self.bag_size < 1:
            raise ValidationError("bag_size must be >= 1")
        if self.n_train_bags < 1 or self.n_test_bags < 1:
            raise ValidationError("bag counts must be >= 1")
        if self.n_classes < 1:
            raise ValidationError("n_classes must be >= 1")
        if self.feature_dim < 1:
            raise ValidationError("feature_dim must be >= 1")
        if self.distribution != "uniform" and self.lam <= 0:
            raise ValidationError("lam must be positive for poisson/exponential draws")
        if self.cluster_separation < 0:
            raise ValidationError("cluster_separation must be >= 0")
        if self.reuse_cap < 1:
            raise ValidationError("reuse_cap must be >= 1")
        if self.pool_per_class is not None and self.pool_per_class < 1:
            raise ValidationError("pool_per_class must be >= 1 when set")


@dataclass(frozen=True)
class DatasetStats:
    avg_count: float
    avg_sparsity: float
    std_sparsity: float

    def __post_init__(self):
        if not (0.0 <= self.avg_sparsity <= 1.0):
            raise ValidationError("sparsity must lie in [0, 1]")


def _sample_label_array(config: DatasetConfig, rng: np.random.Generator):
    k, bag_size = config.n_classes, config.bag_size
    if config.distribution == "uniform":
        draws = rng.integers(0, k, size=bag_size)
        return np.bincount(draws, minlength=k).astype(np.int64), False

    counts = np.zeros(k, dtype=np.int64)
    total = 0
    cap = FILL_ITERATION_FACTOR * bag_size
    queue: list = []
    for _ in range(cap):
        if total == bag_size:
            break
        if not queue:
            queue = list(rng.permutation(k))
        cls = int(queue.pop())
        if config.distribution == "poisson":
            n = int(rng.poisson(config.lam))
        else:
            # lam is a rate; continuous draws are floored to integers
            n = int(math.floor(rng.exponential(1.0 / config.lam)))
        n = min(n, bag_size, bag_size - total)
        counts[cls] += n
        total += n
    if total < bag_size:
        fill = rng.integers(0, k, size=bag_size - total)
        counts += np.bincount(fill, minlength=k)
        log.warning("bag label force-filled after %d draws (lam=%g)", cap, config.lam)
        return counts, True
    return counts, False


def sample_bag_label(config: DatasetConfig, rng: np.random.Generator) -> CountVector:
    """One bag's count label from the configured distribution."""
    counts, _ = _sample_label_array(config, rng)
    return CountVector(counts, bag_size=config.bag_size)


@lru_cache(maxsize=64)
def cluster_centers(config: DatasetConfig) -> np.ndarray:
    """Fixed class centers whose typical pairwise distance is cluster_separation.

    Standard normal draws are rescaled so the mean pairwise distance equals
    the separation; the closest pair then lands somewhat under it, which is
    what leaves the class posteriors non-degenerate at moderate separations.
    Separation 0 collapses all centers to the origin.
    """
    rng = rng_stream(config.seed, STREAM_CENTERS)
    raw = rng.standard_normal((config.n_classes, config.feature_dim))
    if config.n_classes == 1:
        centers = raw if config.cluster_separation > 0 else np.zeros_like(raw)
    else:
        diffs = raw[:, None, :] - raw[None, :, :]
        dists = np.sqrt((diffs**2).sum(axis=-1))
        mean_dist = dists[np.triu_indices(config.n_classes, k=1)].mean()
        centers = raw * (config.cluster_separation / mean_dist)
    centers.flags.writeable = False
    return centers


def synthesize_features(label: CountVector, config: DatasetConfig, rng: np.random.Generator, bag_id: int = 0) -> Bag:
    """Instances for a count label: class center plus unit isotropic noise."""
    if label.n_classes != config.n_classes:
        raise ValidationError("label class count does not match the config")
    centers = cluster_centers(config)
    labels = np.repeat(np.arange(config.n_classes), label.counts)
    noise = rng.standard_normal((label.bag_size, config.feature_dim))
    return Bag(
        bag_id=bag_id,
        features=centers[labels] + noise,
        label=label,
        true_instance_labels=labels,
    )


def _build_pool(config: DatasetConfig) -> np.ndarray:
    centers = cluster_centers(config)
    rng = rng_stream(config.seed, STREAM_POOL)
    noise = rng.standard_normal((config.n_classes, config.pool_per_class, config.feature_dim))
    return centers[:, None, :] + noise


def _pool_bag(label: CountVector, config: DatasetConfig, rng, pool, usage, bag_id: int) -> Bag:
    labels = np.repeat(np.arange(config.n_classes), label.counts)
    rows = np.empty((label.bag_size, config.feature_dim))
    for i, cls in enumerate(labels):
        available = np.flatnonzero(usage[cls] < config.reuse_cap)
        if available.size == 0:
            raise ValidationError(
                f"instance pool exhausted for class {int(cls)} under reuse cap {config.reuse_cap}"
            )
        pick = int(available[rng.integers(0, available.size)])
        usage[cls, pick] += 1
        rows[i] = pool[cls, pick]
    return Bag(bag_id=bag_id, features=rows, label=label, true_instance_labels=labels)


def _dataset_stats(bags) -> DatasetStats:
    sparsities = np.array([bag.label.sparsity() for bag in bags])
    per_bag_avg_count = np.array(
        [bag.label.bag_size / np.count_nonzero(bag.label.counts) for bag in bags]
    )
    return DatasetStats(
        avg_count=float(per_bag_avg_count.mean()),
        avg_sparsity=float(sparsities.mean()),
        std_sparsity=float(sparsities.std()),
    )


def generate_dataset(config: DatasetConfig):
    """All bags for a config plus training-split statistics.

    Returns (dataset, stats, report) where report carries generator
    diagnostics (currently the number of force-filled bag labels).
    """
    n_total = config.n_train_bags + config.n_test_bags
    pool = usage = None
    if config.pool_per_class is not None:
        pool = _build_pool(config)
        usage = np.zeros((config.n_classes, config.pool_per_class), dtype=np.int64)

    bags = []
    force_fills = 0
    for bag_id in range(n_total):
        rng = rng_stream(config.seed, STREAM_DATAGEN, bag_id)
        counts, forced = _sample_label_array(config, rng)
        force_fills += forced
        label = CountVector(counts, bag_size=config.bag_size)
        if pool is None:
            bags.append(synthesize_features(label, config, rng, bag_id=bag_id))
        else:
            bags.append(_pool_bag(label, config, rng, pool, usage, bag_id))

    dataset = BagDataset(
        train=tuple(bags[: config.n_train_bags]),
        test=tuple(bags[config.n_train_bags :]),
        n_classes=config.n_classes,
        bag_size=config.bag_size,
        feature_dim=config.feature_dim,
    )
    stats = _dataset_stats(dataset.train)
    return dataset, stats, {"force_fill_bags": int(force_fills)}


def _bag_record(bag: Bag) -> dict:
    return {
        "bag_id": bag.bag_id,
        "counts": bag.label.counts.tolist(),
        "features": bag.features.tolist(),
        "labels": None if bag.true_instance_labels is None else bag.true_instance_labels.tolist(),
    }


def write_dataset(dataset: BagDataset, stats: DatasetStats, config: DatasetConfig, out_dir, report=None) -> None:
    out = Path(out_dir)
    write_jsonl(out / "train.jsonl", (_bag_record(b) for b in dataset.train))
    write_jsonl(out / "test.jsonl", (_bag_record(b) for b in dataset.test))
    manifest = {
        "format_version": MANIFEST_VERSION,
        "config": asdict(config),
        "stats": asdict(stats),
        "generator": report or {},
    }
    atomic_write_text(out / "manifest.json", stable_json(manifest) + "\n")


def _bag_from_record(rec: dict) -> Bag:
    return Bag(
        bag_id=int(rec["bag_id"]),
        features=np.array(rec["features"], dtype=np.float64),
        label=CountVector(np.array(rec["counts"], dtype=np.int64)),
        true_instance_labels=None if rec.get("labels") is None else np.array(rec["labels"], dtype=np.int64),
    )


def load_dataset(path):
    """Read a dataset directory back into (BagDataset, manifest dict)."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    config = DatasetConfig(**manifest["config"])
    train = [_bag_from_record(r) for r in read_jsonl(root / "train.jsonl")]
    test = [_bag_from_record(r) for r in read_jsonl(root / "test.jsonl")]
    dataset = BagDataset(
        train=tuple(train),
        test=tuple(test),
        n_classes=config.n_classes,
        bag_size=config.bag_size,
        feature_dim=config.feature_dim,
    )
    return dataset, manifest
