"""Instance-level and bag-level precision metrics plus the prediction pipeline.

Precision is macro-averaged over classes. A class that is never predicted
contributes 1.0 when it also never occurs, and is excluded from the macro
mean when it does occur (its precision is undefined); excluded classes show
up as NaN in the per-class vectors. Micro-averaged instance precision is
reported alongside for transparency.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import greedy_count_fill
from .assignment import assign_array
from .core import Bag, ValidationError
from .count_decoder import LAMBDA_FLOOR

__all__ = [
    "Metrics",
    "instance_precision",
    "bag_precision",
    "predict_instance_labels",
    "evaluate_bags",
    "compute_metrics",
]


@dataclass(frozen=True)
class Metrics:
    bag_precision_macro: float
    instance_precision_macro: float
    instance_precision_micro: float
    per_class_bag_precision: np.ndarray
    per_class_instance_precision: np.ndarray
    n_bags: int
    n_instances: int

    def to_dict(self) -> dict:
        def clean(arr):
            return [None if np.isnan(v) else float(v) for v in arr]

        return {
            "bag_precision_macro": float(self.bag_precision_macro),
            "instance_precision_macro": float(self.instance_precision_macro),
            "instance_precision_micro": float(self.instance_precision_micro),
            "per_class_bag_precision": clean(self.per_class_bag_precision),
            "per_class_instance_precision": clean(self.per_class_instance_precision),
            "n_bags": self.n_bags,
            "n_instances": self.n_instances,
        }


def _macro_from_counts(tp: np.ndarray, pred_pos: np.ndarray, true_pos: np.ndarray):
    """Per-class precision with the zero-denominator policy; NaN marks excluded classes."""
    per_class = np.full(tp.shape, np.nan)
    defined = pred_pos > 0
    per_class[defined] = tp[defined] / pred_pos[defined]
    vacuous = (pred_pos == 0) & (true_pos == 0)
    per_class[vacuous] = 1.0
    if np.isnan(per_class).all():
        raise ValidationError("macro precision undefined: no class has a defined precision")
    macro = float(np.nanmean(per_class))
    return macro, per_class


def instance_precision(predicted, truth, n_classes: int):
    """(macro, micro, per_class) precision of instance label predictions."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise ValidationError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise ValidationError("no instances to score")
    tp = np.zeros(n_classes)
    pred_pos = np.zeros(n_classes)
    true_pos = np.zeros(n_classes)
    np.add.at(pred_pos, predicted, 1.0)
    np.add.at(true_pos, truth, 1.0)
    np.add.at(tp, predicted[predicted == truth], 1.0)
    macro, per_class = _macro_from_counts(tp, pred_pos, true_pos)
    micro = float((predicted == truth).mean())
    return macro, micro, per_class


def bag_precision(predicted_labels_per_bag: Sequence[np.ndarray], true_counts_per_bag, n_classes: int):
    """(macro, per_class) precision of per-bag class presence.

    A bag is predicted positive for a class when at least one instance is
    predicted with it, and truly positive when the bag's count is nonzero.
    """
    if len(predicted_labels_per_bag) != len(true_counts_per_bag):
        raise ValidationError("bag alignment mismatch")
    tp = np.zeros(n_classes)
    pred_pos = np.zeros(n_classes)
    true_pos = np.zeros(n_classes)
    for labels, counts in zip(predicted_labels_per_bag, true_counts_per_bag):
        pred = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes) > 0
        true = np.asarray(counts) > 0
        pred_pos += pred
        true_pos += true
        tp += pred & true
    macro, per_class = _macro_from_counts(tp, pred_pos, true_pos)
    return macro, per_class


def predict_instance_labels(
    prob_values: np.ndarray, use_decoder: bool = True, literal: bool = False
) -> np.ndarray:
    """Instance labels for one bag from its probability rows.

    With the decoder on, expected counts are decoded to exact counts and
    instances are matched to class slots; off, each row takes its argmax.
    """
    prob_values = np.asarray(prob_values, dtype=np.float64)
    if not use_decoder:
        return prob_values.argmax(axis=1).astype(np.int64)
    lam = np.maximum(prob_values.sum(axis=0), LAMBDA_FLOOR)
    counts = greedy_count_fill(lam, prob_values.shape[0], literal)
    return assign_array(prob_values, counts)


def compute_metrics(predicted_labels_per_bag, bags: Sequence[Bag], n_classes: int) -> Metrics:
    """Score per-bag predicted instance labels against held-out truth."""
    truths = []
    for bag in bags:
        if bag.true_instance_labels is None:
            raise ValidationError(f"bag {bag.bag_id} has no held-out instance labels to score against")
        truths.append(bag.true_instance_labels)
    pred_flat = np.concatenate([np.asarray(p) for p in predicted_labels_per_bag])
    true_flat = np.concatenate(truths)
    inst_macro, inst_micro, inst_per_class = instance_precision(pred_flat, true_flat, n_classes)
    bag_macro, bag_per_class = bag_precision(
        predicted_labels_per_bag, [bag.label.counts for bag in bags], n_classes
    )
    return Metrics(
        bag_precision_macro=bag_macro,
        instance_precision_macro=inst_macro,
        instance_precision_micro=inst_micro,
        per_class_bag_precision=bag_per_class,
        per_class_instance_precision=inst_per_class,
        n_bags=len(bags),
        n_instances=int(pred_flat.size),
    )


def evaluate_bags(
    prob_values_per_bag: Sequence[np.ndarray],
    bags: Sequence[Bag],
    n_classes: int,
    use_decoder: bool = True,
    literal: bool = False,
) -> Metrics:
    """Run the prediction pipeline over bags and score it."""
    predicted = [
        predict_instance_labels(pv, use_decoder=use_decoder, literal=literal)
        for pv in prob_values_per_bag
    ]
    return compute_metrics(predicted, bags, n_classes)
