"""Bag-level losses on expected counts, proportions, and presence scores.

Array-level functions operate on the trailing class axis and broadcast over
leading batch axes; the typed wrappers below them validate domain types and
are the public per-bag API. Gradients are with respect to the real-valued
estimate (expected counts / pooled proportions / presence scores), matching
what the training loop chains through the network.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CountVector, ExpectedCounts, PresenceVector, ProbMatrix, ValidationError

__all__ = [
    "REG_KINDS",
    "LossBreakdown",
    "poisson_loss",
    "poisson_grad",
    "kl_proportion_loss",
    "presence_bce_loss",
    "l1_regularizer",
    "combined_loss",
    "poisson_nll",
    "poisson_nll_grad",
    "kl_proportion",
    "kl_proportion_grad_pbar",
    "presence_bce",
    "presence_bce_grad",
    "count_l1_distance",
    "count_l1_distance_grad",
    "sqrt_sparsity",
    "sqrt_sparsity_grad",
    "presence_from_lambda",
    "combined_grad_lambda",
]

LAMBDA_FLOOR = 1e-12
PROPORTION_FLOOR = 1e-12
PRESENCE_FLOOR = 1e-7
PBAR_NORMALIZATION_TOL = 1e-6

REG_KINDS = ("poisson", "kl", "l1_distance")


# ---------------------------------------------------------------------------
# Array-level forms (class axis last, leading axes broadcast).

def poisson_nll(y, lam):
    lam_c = np.maximum(lam, LAMBDA_FLOOR)
    return (lam - y * np.log(lam_c)).sum(axis=-1)


def poisson_nll_grad(y, lam):
    return 1.0 - y / np.maximum(lam, LAMBDA_FLOOR)


def kl_proportion(y, p_bar, bag_size):
    p = np.asarray(y, dtype=np.float64) / bag_size
    ratio = np.maximum(p, PROPORTION_FLOOR) / np.maximum(p_bar, PROPORTION_FLOOR)
    terms = np.where(p > 0, p * np.log(ratio), 0.0)
    return terms.sum(axis=-1)


def kl_proportion_grad_pbar(y, p_bar, bag_size):
    p = np.asarray(y, dtype=np.float64) / bag_size
    grad = -p / np.maximum(p_bar, PROPORTION_FLOOR)
    return np.where((p > 0) & (p_bar > PROPORTION_FLOOR), grad, 0.0)


def presence_bce(y, scores):
    t = (np.asarray(y) > 0).astype(np.float64)
    s = np.clip(scores, PRESENCE_FLOOR, 1.0 - PRESENCE_FLOOR)
    return -(t * np.log(s) + (1.0 - t) * np.log(1.0 - s)).mean(axis=-1)


def presence_bce_grad(y, scores):
    """Gradient w.r.t. the raw scores; zero where the clamp is active."""
    t = (np.asarray(y) > 0).astype(np.float64)
    s = np.clip(scores, PRESENCE_FLOOR, 1.0 - PRESENCE_FLOOR)
    k = np.shape(scores)[-1]
    inside = (scores > PRESENCE_FLOOR) & (scores < 1.0 - PRESENCE_FLOOR)
    grad = (-t / s + (1.0 - t) / (1.0 - s)) / k
    return np.where(inside, grad, 0.0)


def count_l1_distance(y, lam):
    return np.abs(lam - y).sum(axis=-1)


def count_l1_distance_grad(y, lam):
    return np.sign(lam - y)


def sqrt_sparsity(p_bar):
    """Sum of square roots of the pooled proportions; minimal on one-hot vectors."""
    return np.sqrt(p_bar).sum(axis=-1)


def sqrt_sparsity_grad(p_bar):
    return 0.5 / np.sqrt(np.maximum(p_bar, PROPORTION_FLOOR))


def presence_from_lambda(lam):
    """Probability of at least one occurrence under a Poisson rate."""
    return 1.0 - np.exp(-lam)


# ---------------------------------------------------------------------------
# Typed per-bag API.

@dataclass(frozen=True)
class LossBreakdown:
    reg: float
    cls: float
    l1: float
    total: float
    beta: float

    def __post_init__(self):
        if abs(self.total - (self.reg + self.cls + self.beta * self.l1)) > 1e-9:
            raise ValidationError("total is not the sum of its parts")


def _check_k(y: CountVector, other_k: int) -> None:
    if y.n_classes != other_k:
        raise ValidationError(f"dimension mismatch: {y.n_classes} vs {other_k} classes")


def poisson_loss(y: CountVector, lambda_hat: ExpectedCounts) -> float:
    """Poisson negative log-likelihood of the counts, constant term dropped."""
    _check_k(y, lambda_hat.n_classes)
    return float(poisson_nll(y.counts, lambda_hat.lambdas))


def poisson_grad(y: CountVector, lambda_hat: ExpectedCounts) -> np.ndarray:
    """d/d(lambda) of poisson_loss: 1 - y/lambda, zero exactly where lambda == y."""
    _check_k(y, lambda_hat.n_classes)
    return poisson_nll_grad(y.counts, lambda_hat.lambdas)


def kl_proportion_loss(y: CountVector, p_bar: np.ndarray) -> float:
    """KL divergence from the bag's true class proportions to the pooled prediction."""
    p_bar = np.asarray(p_bar, dtype=np.float64)
    _check_k(y, p_bar.shape[-1])
    if abs(p_bar.sum() - 1.0) > PBAR_NORMALIZATION_TOL:
        raise ValidationError(f"p_bar sums to {p_bar.sum()!r}, expected 1 within {PBAR_NORMALIZATION_TOL}")
    return float(kl_proportion(y.counts, p_bar, y.bag_size))


def presence_bce_loss(y: CountVector, presence: PresenceVector) -> float:
    """Mean binary cross-entropy of per-class presence against count > 0."""
    _check_k(y, presence.n_classes)
    return float(presence_bce(y.counts, presence.values))


def l1_regularizer(probs: ProbMatrix) -> float:
    """Sparsity surrogate on the pooled proportion vector."""
    return float(sqrt_sparsity(probs.column_means()))


def combined_loss(
    y: CountVector,
    probs: ProbMatrix,
    presence: PresenceVector,
    beta: float,
    reg_kind: str,
    use_reg: bool = True,
    use_cls: bool = True,
) -> LossBreakdown:
    """Count-regression loss plus presence classification plus weighted sparsity."""
    if reg_kind not in REG_KINDS:
        raise ValidationError(f"unknown reg_kind {reg_kind!r}, expected one of {REG_KINDS}")
    _check_k(y, probs.n_classes)
    if y.bag_size != probs.n_instances:
        raise ValidationError(f"counts sum to {y.bag_size} but there are {probs.n_instances} instances")

    reg = 0.0
    if use_reg:
        if reg_kind == "poisson":
            reg = float(poisson_nll(y.counts, probs.values.sum(axis=0)))
        elif reg_kind == "kl":
            reg = kl_proportion_loss(y, probs.column_means())
        else:
            reg = float(count_l1_distance(y.counts, probs.values.sum(axis=0)))
    cls = presence_bce_loss(y, presence) if use_cls else 0.0
    l1 = l1_regularizer(probs)
    return LossBreakdown(reg=reg, cls=cls, l1=l1, total=reg + cls + beta * l1, beta=beta)


def combined_grad_lambda(y, lam, bag_size, beta, reg_kind, use_reg=True, use_cls=True):
    """Gradient of the combined loss w.r.t. expected counts (class axis last).

    The pooled proportion is lam / bag_size and the presence score is
    1 - exp(-lam), so every term chains back to lam; this is the only
    quantity the network backward pass needs per bag.
    """
    if reg_kind not in REG_KINDS:
        raise ValidationError(f"unknown reg_kind {reg_kind!r}, expected one of {REG_KINDS}")
    lam = np.asarray(lam, dtype=np.float64)
    grad = np.zeros_like(lam)
    if use_reg:
        if reg_kind == "poisson":
            grad += poisson_nll_grad(y, lam)
        elif reg_kind == "kl":
            grad += kl_proportion_grad_pbar(y, lam / bag_size, bag_size) / bag_size
        else:
            grad += count_l1_distance_grad(y, lam)
    if use_cls:
        grad += presence_bce_grad(y, presence_from_lambda(lam)) * np.exp(-lam)
    if beta != 0.0:
        grad += beta * sqrt_sparsity_grad(lam / bag_size) / bag_size
    return grad
