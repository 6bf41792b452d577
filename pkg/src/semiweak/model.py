"""Trainable network mapping instance features to class probabilities.

A small fully-connected extractor feeds a linear head; softmax rows are
sum-pooled into expected per-class counts and squashed into presence scores
via 1 - exp(-count). Training is plain SGD with a step-decay schedule and
decoupled L2 weight decay, deterministic for a fixed seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import evaluation
from .core import (
    Bag,
    BagDataset,
    ExpectedCounts,
    PresenceVector,
    ProbMatrix,
    STREAM_INIT,
    STREAM_SHUFFLE,
    ValidationError,
    rng_stream,
)
from .ioutil import atomic_write_text, stable_json, write_jsonl
from .losses import (
    REG_KINDS,
    combined_grad_lambda,
    count_l1_distance,
    kl_proportion,
    poisson_nll,
    presence_bce,
    presence_from_lambda,
    sqrt_sparsity,
)

__all__ = [
    "LinearLayer",
    "ModelParams",
    "TrainConfig",
    "ForwardOutput",
    "EpochRecord",
    "TrainResult",
    "DivergenceError",
    "init_params",
    "forward",
    "backward",
    "loss_value",
    "predict_probs",
    "train",
    "lr_for_epoch",
    "save_checkpoint",
    "load_checkpoint",
    "params_to_vector",
    "vector_to_params",
]

ACTIVATIONS = ("relu", "tanh", "identity")
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class LinearLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ValidationError(f"layer shape mismatch: weight {w.shape}, bias {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValidationError("layer parameters must be finite")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class ModelParams:
    extractor: tuple
    head: LinearLayer

    def __post_init__(self):
        object.__setattr__(self, "extractor", tuple(self.extractor))
        for prev, nxt in zip(self.extractor, list(self.extractor[1:]) + [self.head]):
            if prev.fan_out != nxt.fan_in:
                raise ValidationError(f"layer dims do not chain: {prev.fan_out} -> {nxt.fan_in}")

    @property
    def feature_dim(self) -> int:
        return self.extractor[0].fan_in if self.extractor else self.head.fan_in

    @property
    def n_classes(self) -> int:
        return self.head.fan_out

    def layers(self) -> tuple:
        return (*self.extractor, self.head)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    epochs: int = 100
    lr_milestones: tuple = (30, 50)
    lr_decay: float = 0.1
    weight_decay: float = 5e-4
    batch_bags: int = 16
    beta: float = 0.01
    reg_kind: str = "poisson"
    seed: int = 0
    use_reg: bool = True
    use_cls: bool = True
    momentum: float = 0.0
    hidden: tuple = (64,)
    activation: str = "relu"
    select_by: str = "decoded"

    def __post_init__(self):
        object.__setattr__(self, "lr_milestones", tuple(self.lr_milestones))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.lr0 <= 0:
            raise ValidationError("lr0 must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if list(self.lr_milestones) != sorted(set(self.lr_milestones)):
            raise ValidationError("lr_milestones must be strictly increasing")
        if self.reg_kind not in REG_KINDS:
            raise ValidationError(f"unknown reg_kind {self.reg_kind!r}")
        if self.select_by not in ("decoded", "argmax"):
            raise ValidationError("select_by must be 'decoded' or 'argmax'")
        if self.batch_bags < 1:
            raise ValidationError("batch_bags must be >= 1")


@dataclass(frozen=True)
class ForwardOutput:
    probs: ProbMatrix
    expected: ExpectedCounts
    presence: PresenceVector

    def __post_init__(self):
        if not np.allclose(self.expected.lambdas, self.probs.values.sum(axis=0), atol=1e-9):
            raise ValidationError("expected counts are not the probability column sums")
        if not np.allclose(self.presence.values, presence_from_lambda(self.expected.lambdas), atol=1e-9):
            raise ValidationError("presence scores are not 1 - exp(-expected)")


def lr_for_epoch(config: TrainConfig, epoch: int) -> float:
    """Step-decay schedule: the rate is multiplied by lr_decay at each milestone epoch."""
    passed = sum(1 for m in config.lr_milestones if epoch >= m)
    return config.lr0 * config.lr_decay**passed


def init_params(
    feature_dim: int,
    n_classes: int,
    hidden: Sequence[int] = (64,),
    activation: str = "relu",
    seed: int = 0,
) -> ModelParams:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from the init stream."""
    rng = rng_stream(seed, STREAM_INIT)
    dims = [feature_dim, *hidden, n_classes]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((w, b))
    extractor = tuple(
        LinearLayer(w, b, activation) for w, b in layers[:-1]
    )
    head = LinearLayer(*layers[-1], activation="identity")
    return ModelParams(extractor=extractor, head=head)


def _apply_activation(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(pre: np.ndarray, post: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - post**2
    return np.ones_like(pre)


def _forward_instances(params: ModelParams, x: np.ndarray):
    """Softmax probabilities for a flat (n_instances, dim) block, with caches."""
    acts = [x]
    pres = []
    h = x
    for layer in params.extractor:
        z = h @ layer.weight + layer.bias
        h = _apply_activation(z, layer.activation)
        pres.append(z)
        acts.append(h)
    logits = h @ params.head.weight + params.head.bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    return probs, acts, pres


def forward(params: ModelParams, bag: Bag) -> ForwardOutput:
    """Instance probabilities, pooled expected counts, and presence scores for one bag."""
    if bag.feature_dim != params.feature_dim:
        raise ValidationError(
            f"bag {bag.bag_id}: feature dim {bag.feature_dim} != model dim {params.feature_dim}"
        )
    probs, _, _ = _forward_instances(params, bag.features)
    if not np.isfinite(probs).all():
        raise ValidationError(f"bag {bag.bag_id}: non-finite activation")
    lam = probs.sum(axis=0)
    return ForwardOutput(
        probs=ProbMatrix(probs),
        expected=ExpectedCounts(lam),
        presence=PresenceVector(presence_from_lambda(lam)),
    )


def _bag_losses(counts: np.ndarray, probs_bags: np.ndarray, beta, reg_kind, use_reg, use_cls):
    """Per-bag loss components for a (n_bags, bag_size, k) probability block."""
    bag_size = probs_bags.shape[1]
    lam = probs_bags.sum(axis=1)
    if not use_reg:
        reg = np.zeros(lam.shape[0])
    elif reg_kind == "poisson":
        reg = poisson_nll(counts, lam)
    elif reg_kind == "kl":
        reg = kl_proportion(counts, lam / bag_size, bag_size)
    else:
        reg = count_l1_distance(counts, lam)
    cls = presence_bce(counts, presence_from_lambda(lam)) if use_cls else np.zeros(lam.shape[0])
    l1 = sqrt_sparsity(lam / bag_size)
    return reg, cls, l1, reg + cls + beta * l1


def _batch_gradients(
    params: ModelParams, feats: np.ndarray, counts: np.ndarray, cfg: TrainConfig, check: bool = False
):
    """Mean loss parts and parameter gradients over a (n_bags, bag_size, dim) batch."""
    n_bags, bag_size, dim = feats.shape
    x = feats.reshape(n_bags * bag_size, dim)
    probs, acts, pres = _forward_instances(params, x)
    if check and np.isfinite(probs).all():
        # spot-check the pooling invariants on sampled batches
        assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-9
        assert np.abs(probs.reshape(n_bags, bag_size, -1).sum(axis=1).sum(-1) - bag_size).max() <= 1e-6
    probs_bags = probs.reshape(n_bags, bag_size, -1)
    reg, cls, l1, total = _bag_losses(counts, probs_bags, cfg.beta, cfg.reg_kind, cfg.use_reg, cfg.use_cls)

    lam = probs_bags.sum(axis=1)
    dlam = combined_grad_lambda(
        counts, lam, bag_size, cfg.beta, cfg.reg_kind, use_reg=cfg.use_reg, use_cls=cfg.use_cls
    ) / n_bags
    # expected counts are column sums, so every instance row shares the bag's gradient
    dprobs = np.repeat(dlam, bag_size, axis=0)
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=1, keepdims=True))

    grads = []
    h = acts[-1]
    d_head_w = h.T @ dlogits
    d_head_b = dlogits.sum(axis=0)
    upstream = dlogits @ params.head.weight.T
    for idx in range(len(params.extractor) - 1, -1, -1):
        layer = params.extractor[idx]
        dz = upstream * _activation_grad(pres[idx], acts[idx + 1], layer.activation)
        grads.append((acts[idx].T @ dz, dz.sum(axis=0)))
        upstream = dz @ layer.weight.T
    grads.reverse()
    grads.append((d_head_w, d_head_b))
    parts = {
        "reg": float(reg.mean()),
        "cls": float(cls.mean()),
        "l1": float(l1.mean()),
        "total": float(total.mean()),
    }
    return parts, grads


def backward(params: ModelParams, bag: Bag, cfg: TrainConfig):
    """Exact gradients of the combined loss for one bag, one (dW, db) pair per layer."""
    _, grads = _batch_gradients(
        params, bag.features[None, :, :], bag.label.counts[None, :], cfg
    )
    return grads


def loss_value(params: ModelParams, bag: Bag, cfg: TrainConfig) -> float:
    """Combined loss of one bag; the quantity backward differentiates."""
    probs, _, _ = _forward_instances(params, bag.features)
    _, _, _, total = _bag_losses(
        bag.label.counts[None, :], probs[None, :, :], cfg.beta, cfg.reg_kind, cfg.use_reg, cfg.use_cls
    )
    return float(total[0])


def params_to_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in params.layers()])


def vector_to_params(vec: np.ndarray, template: ModelParams) -> ModelParams:
    layers = []
    offset = 0
    for layer in template.layers():
        n_w = layer.weight.size
        w = vec[offset : offset + n_w].reshape(layer.weight.shape)
        offset += n_w
        b = vec[offset : offset + layer.fan_out]
        offset += layer.fan_out
        layers.append(LinearLayer(w, b, layer.activation))
    return ModelParams(extractor=tuple(layers[:-1]), head=layers[-1])


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train: dict
    val: Optional[dict]

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "lr": self.lr, "train": self.train, "val": self.val}


@dataclass(frozen=True)
class TrainResult:
    params: ModelParams
    best_epoch: int
    history: tuple
    best_by_pipeline: dict

    def history_records(self):
        return [rec.to_dict() for rec in self.history]


def _stack_split(bags) -> tuple:
    feats = np.stack([bag.features for bag in bags])
    counts = np.stack([bag.label.counts for bag in bags])
    return feats, counts


def predict_probs(params: ModelParams, bags) -> np.ndarray:
    """Stacked (n_bags, bag_size, n_classes) probability blocks for same-size bags."""
    feats, _ = _stack_split(bags)
    n_bags, bag_size, dim = feats.shape
    if dim != params.feature_dim:
        raise ValidationError(f"bags have feature dim {dim}, model expects {params.feature_dim}")
    probs, _, _ = _forward_instances(params, feats.reshape(n_bags * bag_size, dim))
    return probs.reshape(n_bags, bag_size, -1)


def _val_metrics(params: ModelParams, bags, n_classes: int, literal_decode: bool = False) -> dict:
    probs_bags = predict_probs(params, bags)
    out = {}
    for name, use_decoder in (("decoded", True), ("argmax", False)):
        metrics = evaluation.evaluate_bags(
            probs_bags, bags, n_classes, use_decoder=use_decoder, literal=literal_decode
        )
        out[name] = metrics.to_dict()
    return out


def train(dataset: BagDataset, config: TrainConfig, literal_decode: bool = False) -> TrainResult:
    """SGD over shuffled bag mini-batches; keeps the epoch with the best
    validation instance precision under the configured prediction pipeline."""
    if not dataset.train:
        raise ValidationError("dataset has no training bags")
    params = init_params(
        dataset.feature_dim,
        dataset.n_classes,
        hidden=config.hidden,
        activation=config.activation,
        seed=config.seed,
    )
    feats, counts = _stack_split(dataset.train)
    n_train = feats.shape[0]
    shuffle_rng = rng_stream(config.seed, STREAM_SHUFFLE)
    velocity = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.layers()]

    history = []
    best = {"decoded": (-1.0, -1, params), "argmax": (-1.0, -1, params)}
    for epoch in range(config.epochs):
        lr = lr_for_epoch(config, epoch)
        order = shuffle_rng.permutation(n_train)
        epoch_parts = np.zeros(4)
        for start in range(0, n_train, config.batch_bags):
            idx = order[start : start + config.batch_bags]
            with np.errstate(over="ignore", invalid="ignore"):
                parts, grads = _batch_gradients(
                    params, feats[idx], counts[idx], config, check=start == 0
                )
            if not np.isfinite(parts["total"]):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, bags {sorted(int(i) for i in idx)[:8]}"
                )
            epoch_parts += np.array([parts["reg"], parts["cls"], parts["l1"], parts["total"]]) * idx.size
            new_layers = []
            for (w_g, b_g), (v_w, v_b), layer in zip(grads, velocity, params.layers()):
                w_g = w_g + config.weight_decay * layer.weight
                if config.momentum > 0:
                    v_w *= config.momentum
                    v_w += w_g
                    v_b *= config.momentum
                    v_b += b_g
                    w_step, b_step = v_w, v_b
                else:
                    w_step, b_step = w_g, b_g
                with np.errstate(over="ignore", invalid="ignore"):
                    new_w = layer.weight - lr * w_step
                    new_b = layer.bias - lr * b_step
                if not (np.isfinite(new_w).all() and np.isfinite(new_b).all()):
                    raise DivergenceError(f"non-finite parameters after update at epoch {epoch}")
                new_layers.append(LinearLayer(new_w, new_b, layer.activation))
            params = ModelParams(extractor=tuple(new_layers[:-1]), head=new_layers[-1])
        train_parts = dict(zip(("reg", "cls", "l1", "total"), (epoch_parts / n_train).tolist()))

        val = None
        if dataset.test:
            val = _val_metrics(params, dataset.test, dataset.n_classes, literal_decode=literal_decode)
            for pipeline in ("decoded", "argmax"):
                score = val[pipeline]["instance_precision_macro"]
                if score > best[pipeline][0]:
                    best[pipeline] = (score, epoch, params)
        history.append(EpochRecord(epoch=epoch, lr=lr, train=train_parts, val=val))

    if dataset.test:
        _, best_epoch, best_params = best[config.select_by]
    else:
        best_epoch, best_params = config.epochs - 1, params
    return TrainResult(
        params=best_params,
        best_epoch=best_epoch,
        history=tuple(history),
        best_by_pipeline={k: (v[1], v[2]) for k, v in best.items()},
    )


def save_checkpoint(params: ModelParams, path) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "feature_dim": params.feature_dim,
        "n_classes": params.n_classes,
        "layers": [
            {
                "fan_in": layer.fan_in,
                "fan_out": layer.fan_out,
                "activation": layer.activation,
                "weight": layer.weight.ravel(order="C").tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in params.layers()
        ],
    }
    atomic_write_text(Path(path), stable_json(doc) + "\n")


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version!r}")
    layers = [
        LinearLayer(
            np.array(entry["weight"], dtype=np.float64).reshape(entry["fan_in"], entry["fan_out"]),
            np.array(entry["bias"], dtype=np.float64),
            entry["activation"],
        )
        for entry in doc["layers"]
    ]
    return ModelParams(extractor=tuple(layers[:-1]), head=layers[-1])


def write_metrics_log(result: TrainResult, path) -> None:
    write_jsonl(Path(path), result.history_records())
