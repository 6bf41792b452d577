import json

import numpy as np
import pytest

from semiweak.core import Bag, BagDataset, CountVector, ValidationError
from semiweak.datagen import DatasetConfig, generate_dataset
from semiweak.model import (
    DivergenceError,
    LinearLayer,
    ModelParams,
    TrainConfig,
    backward,
    forward,
    init_params,
    load_checkpoint,
    loss_value,
    lr_for_epoch,
    params_to_vector,
    save_checkpoint,
    train,
    vector_to_params,
    write_metrics_log,
)

RNG = np.random.default_rng(1234)


def random_bag(n, k, d, rng=RNG, bag_id=0):
    labels = rng.integers(0, k, size=n)
    feats = rng.standard_normal((n, d))
    return Bag(
        bag_id=bag_id,
        features=feats,
        label=CountVector(np.bincount(labels, minlength=k)),
        true_instance_labels=labels,
    )


def tiny_dataset(n_train=12, n_test=6, k=3, nb=4, d=8, seed=5):
    config = DatasetConfig(
        distribution="uniform",
        bag_size=nb,
        n_train_bags=n_train,
        n_test_bags=n_test,
        n_classes=k,
        feature_dim=d,
        cluster_separation=4.0,
        seed=seed,
    )
    dataset, _, _ = generate_dataset(config)
    return dataset


# --- forward ------------------------------------------------------------------

def test_forward_zero_head_gives_uniform_probs():
    d, k, n = 6, 4, 5
    extractor = (LinearLayer(np.zeros((d, 8)), np.zeros(8), "relu"),)
    head = LinearLayer(np.zeros((8, k)), np.zeros(k))
    params = ModelParams(extractor=extractor, head=head)
    bag = random_bag(n, k, d)
    out = forward(params, bag)
    assert np.allclose(out.probs.values, 1.0 / k)
    assert np.allclose(out.expected.lambdas, n / k)


def test_forward_single_instance_pooling_identity():
    params = init_params(4, 3, hidden=(8,), seed=0)
    bag = random_bag(1, 3, 4)
    out = forward(params, bag)
    assert np.allclose(out.expected.lambdas, out.probs.values[0])


def test_forward_expected_counts_sum_to_bag_size():
    params = init_params(5, 4, hidden=(16,), seed=1)
    for n in (1, 3, 9):
        bag = random_bag(n, 4, 5)
        out = forward(params, bag)
        assert out.expected.lambdas.sum() == pytest.approx(n, abs=1e-9)
        assert np.allclose(out.presence.values, 1.0 - np.exp(-out.expected.lambdas))


def test_forward_rejects_dim_mismatch():
    params = init_params(4, 3, seed=0)
    bag = random_bag(2, 3, 7)
    with pytest.raises(ValidationError, match="feature dim"):
        forward(params, bag)


def test_init_is_deterministic_and_bounded():
    a = init_params(6, 3, hidden=(10,), seed=9)
    b = init_params(6, 3, hidden=(10,), seed=9)
    assert np.array_equal(a.extractor[0].weight, b.extractor[0].weight)
    assert np.abs(a.extractor[0].weight).max() <= 1.0 / np.sqrt(6)
    c = init_params(6, 3, hidden=(10,), seed=10)
    assert not np.array_equal(a.extractor[0].weight, c.extractor[0].weight)


# --- gradients ----------------------------------------------------------------

def fd_param_grad(params, bag, cfg, h=1e-5):
    vec = params_to_vector(params)
    grad = np.zeros_like(vec)
    for i in range(vec.size):
        up = vec.copy()
        up[i] += h
        dn = vec.copy()
        dn[i] -= h
        grad[i] = (
            loss_value(vector_to_params(up, params), bag, cfg)
            - loss_value(vector_to_params(dn, params), bag, cfg)
        ) / (2 * h)
    return grad


def grads_to_vector(grads):
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in grads])


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


GRAD_CONFIGS = [
    TrainConfig(reg_kind="poisson", beta=0.1),
    TrainConfig(reg_kind="kl", beta=0.1),
    TrainConfig(reg_kind="l1_distance", beta=0.1),
    TrainConfig(reg_kind="poisson", beta=0.0, use_reg=False, use_cls=True),
    TrainConfig(reg_kind="poisson", beta=1.0, use_reg=False, use_cls=False),
]


@pytest.mark.parametrize("cfg", GRAD_CONFIGS, ids=["poisson", "kl", "l1_distance", "cls_only", "l1_only"])
def test_backward_matches_finite_differences(cfg):
    for trial in range(12):
        rng = np.random.default_rng(100 + trial)
        params = init_params(8, 3, hidden=(6,), seed=trial)
        bag = random_bag(4, 3, 8, rng=rng, bag_id=trial)
        analytic = grads_to_vector(backward(params, bag, cfg))
        numeric = fd_param_grad(params, bag, cfg)
        assert rel_err(analytic, numeric) <= 1e-4, trial


def test_backward_zero_reg_gradient_at_exact_match():
    # probabilities exactly matching y/N_B per column zero out the count term
    k, n = 2, 4
    params = init_params(2, k, hidden=(), seed=0)
    # zero weights give uniform probs = 0.5, column sums = 2 = y
    params = ModelParams(extractor=(), head=LinearLayer(np.zeros((2, k)), np.zeros(k)))
    bag = Bag(
        bag_id=0,
        features=np.ones((n, 2)),
        label=CountVector(np.array([2, 2])),
        true_instance_labels=np.array([0, 0, 1, 1]),
    )
    cfg = TrainConfig(reg_kind="poisson", beta=0.0, use_cls=False)
    grads = backward(params, bag, cfg)
    for w, b in grads:
        assert np.allclose(w, 0.0, atol=1e-12)
        assert np.allclose(b, 0.0, atol=1e-12)


def test_weight_decay_gradient_is_linear_in_weights():
    cfg = TrainConfig(weight_decay=0.01)
    params = init_params(4, 3, hidden=(5,), seed=2)
    for layer in params.layers():
        assert np.allclose(cfg.weight_decay * layer.weight, 0.01 * layer.weight)


# --- schedule and training -----------------------------------------------------

def test_lr_schedule_steps_at_milestones():
    cfg = TrainConfig(lr0=0.01, lr_milestones=(30, 50), lr_decay=0.1, epochs=100)
    assert lr_for_epoch(cfg, 0) == pytest.approx(0.01)
    assert lr_for_epoch(cfg, 29) == pytest.approx(0.01)
    assert lr_for_epoch(cfg, 30) == pytest.approx(0.001)
    assert lr_for_epoch(cfg, 49) == pytest.approx(0.001)
    assert lr_for_epoch(cfg, 50) == pytest.approx(0.0001)
    assert lr_for_epoch(cfg, 99) == pytest.approx(0.0001)


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(lr0=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)
    with pytest.raises(ValidationError):
        TrainConfig(lr_milestones=(50, 30))
    with pytest.raises(ValidationError):
        TrainConfig(reg_kind="huber")


def test_single_bag_loss_decreases_mostly():
    labels = np.array([0, 0, 1, 2])
    rng = np.random.default_rng(7)
    feats = np.concatenate([rng.standard_normal((1, 4)) + 3 * lab for lab in labels])
    bag = Bag(bag_id=0, features=feats, label=CountVector(np.bincount(labels, minlength=3)),
              true_instance_labels=labels)
    dataset = BagDataset(train=(bag,), test=(), n_classes=3, bag_size=4, feature_dim=4)
    cfg = TrainConfig(lr0=0.01, epochs=80, lr_milestones=(), batch_bags=1, beta=0.0, seed=3)
    result = train(dataset, cfg)
    losses = [rec.train["total"] for rec in result.history]
    drops = sum(1 for a, b in zip(losses[5:], losses[6:]) if b <= a + 1e-12)
    assert drops / (len(losses) - 6) >= 0.9
    assert losses[-1] < losses[0]


def test_training_is_bit_deterministic():
    dataset = tiny_dataset()
    cfg = TrainConfig(epochs=3, batch_bags=4, lr_milestones=(), seed=11)
    r1 = train(dataset, cfg)
    r2 = train(dataset, cfg)
    assert json.dumps(r1.history_records()) == json.dumps(r2.history_records())
    assert np.array_equal(params_to_vector(r1.params), params_to_vector(r2.params))


def test_train_selects_best_validation_epoch():
    dataset = tiny_dataset(n_train=30, n_test=10)
    cfg = TrainConfig(epochs=5, batch_bags=8, lr_milestones=(), lr0=0.05, seed=2)
    result = train(dataset, cfg)
    scores = [rec.val["decoded"]["instance_precision_macro"] for rec in result.history]
    assert result.best_epoch == int(np.argmax(scores))
    assert "argmax" in result.best_by_pipeline


def test_train_divergence_aborts_with_diagnostic():
    # a step this large overflows float64 activations on the second batch
    dataset = tiny_dataset()
    cfg = TrainConfig(lr0=1e200, epochs=5, batch_bags=4, lr_milestones=(), seed=0)
    with pytest.raises(DivergenceError, match="epoch"):
        train(dataset, cfg)


def test_momentum_changes_trajectory_but_stays_deterministic():
    dataset = tiny_dataset()
    plain = train(dataset, TrainConfig(epochs=2, batch_bags=4, lr_milestones=(), seed=1))
    mom = train(dataset, TrainConfig(epochs=2, batch_bags=4, lr_milestones=(), seed=1, momentum=0.9))
    assert not np.array_equal(params_to_vector(plain.params), params_to_vector(mom.params))
    mom2 = train(dataset, TrainConfig(epochs=2, batch_bags=4, lr_milestones=(), seed=1, momentum=0.9))
    assert np.array_equal(params_to_vector(mom.params), params_to_vector(mom2.params))


def test_baseline_toggle_equivalences():
    dataset = tiny_dataset()
    # proportion-matching baseline: kl + beta 0 + no cls
    llp = TrainConfig(epochs=2, batch_bags=4, lr_milestones=(), seed=4,
                      reg_kind="kl", beta=0.0, use_cls=False)
    r = train(dataset, llp)
    assert all(rec.train["cls"] == 0.0 for rec in r.history)
    # presence-only baseline: reg off
    weak = TrainConfig(epochs=2, batch_bags=4, lr_milestones=(), seed=4, use_reg=False)
    r = train(dataset, weak)
    assert all(rec.train["reg"] == 0.0 for rec in r.history)


# --- checkpoints ---------------------------------------------------------------

def test_checkpoint_roundtrip_is_exact(tmp_path):
    params = init_params(7, 4, hidden=(9,), seed=13)
    path = tmp_path / "model.json"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert np.array_equal(params_to_vector(params), params_to_vector(loaded))
    assert loaded.extractor[0].activation == "relu"


def test_checkpoint_rejects_unknown_version(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"format_version": 99, "layers": []}))
    with pytest.raises(ValidationError, match="version"):
        load_checkpoint(path)


def test_metrics_log_roundtrip(tmp_path):
    dataset = tiny_dataset()
    result = train(dataset, TrainConfig(epochs=2, batch_bags=4, lr_milestones=(), seed=1))
    path = tmp_path / "log.jsonl"
    write_metrics_log(result, path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == 2
    assert lines[0]["epoch"] == 0
    assert "decoded" in lines[0]["val"]
