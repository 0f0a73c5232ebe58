import math

import numpy as np
import pytest

from gradtree.data import titanic20
from gradtree.optim import (
    SWA,
    AdamState,
    ConfigurationError,
    LossConfig,
    TrainConfig,
    adam_step,
    adamw_step,
    cross_entropy_loss,
    lr_scale,
    swa_update,
    train_tree,
    validation_split,
)
from gradtree.tree import softmax


def test_loss_examples():
    loss, _ = cross_entropy_loss(np.array([[0.5, 0.5]]), np.array([0]), wrt="probs")
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    loss, _ = cross_entropy_loss(np.array([[1.0, 0.0]]), np.array([0]), wrt="probs")
    assert loss == pytest.approx(0.0, abs=1e-12)
    loss, _ = cross_entropy_loss(np.array([[0.5, 0.5]]), np.array([0]), LossConfig(3.0), wrt="probs")
    assert loss == pytest.approx(0.5**3 * math.log(2), abs=1e-15)
    assert loss == pytest.approx(0.0866, abs=1e-4)
    # clipping keeps a zero probability finite
    loss, _ = cross_entropy_loss(np.array([[0.0, 1.0]]), np.array([0]), wrt="probs")
    assert loss == pytest.approx(-math.log(1e-12))


def test_focal_zero_equals_cross_entropy():
    rng = np.random.default_rng(0)
    p = softmax(rng.normal(size=(9, 3)), axis=1)
    y = rng.integers(0, 3, size=9)
    w = np.array([1.0, 2.0, 0.5])
    plain = -np.mean(w[y] * np.log(p[np.arange(9), y]))
    loss, _ = cross_entropy_loss(p, y, LossConfig(0.0, w), wrt="probs")
    assert abs(loss - plain) < 1e-12


@pytest.mark.parametrize("gamma", [0.0, 0.5, 2.0])
def test_loss_gradients(gamma):
    rng = np.random.default_rng(1)
    z = rng.normal(size=(5, 3))
    y = rng.integers(0, 3, size=5)
    cfg = LossConfig(gamma, np.array([1.0, 1.5, 0.7]))
    _, gz = cross_entropy_loss(softmax(z, axis=1), y, cfg)
    p = softmax(z, axis=1)
    _, gp = cross_entropy_loss(p, y, cfg, wrt="probs")
    h = 1e-6
    num_z, num_p = np.zeros_like(z), np.zeros_like(p)
    for i in range(5):
        for k in range(3):
            e = np.zeros_like(z)
            e[i, k] = h
            num_z[i, k] = (cross_entropy_loss(softmax(z + e, axis=1), y, cfg)[0]
                           - cross_entropy_loss(softmax(z - e, axis=1), y, cfg)[0]) / (2 * h)
            num_p[i, k] = (cross_entropy_loss(p + e, y, cfg, wrt="probs")[0]
                           - cross_entropy_loss(p - e, y, cfg, wrt="probs")[0]) / (2 * h)
    assert np.allclose(gz, num_z, atol=1e-8)
    assert np.allclose(gp, num_p, atol=1e-8)


def test_loss_rejects_bad_input():
    with pytest.raises(ValueError):
        cross_entropy_loss(np.array([[0.5, 0.5]]), np.array([2]))
    with pytest.raises(ConfigurationError):
        LossConfig(-1.0)


def fresh(lr=0.1, wd=0.0):
    return AdamState(lr={"a": lr}, weight_decay=wd)


def test_first_adam_step_is_lr_times_sign():
    rng = np.random.default_rng(2)
    g = rng.choice([-1, 1], size=50) * 10 ** rng.uniform(-3, 2, size=50)
    theta = {"a": np.zeros(50)}
    adam_step(fresh(0.1), theta, {"a": g})
    assert np.all(np.abs(theta["a"] + 0.1 * np.sign(g)) < 1e-6)


def test_adam_examples():
    theta = {"a": np.array([0.0])}
    adam_step(fresh(0.1), theta, {"a": np.array([1.0])})
    assert theta["a"][0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)

    theta = {"a": np.array([0.3])}
    adam_step(fresh(), theta, {"a": np.array([0.0])})
    assert theta["a"][0] == 0.3

    st = fresh()
    theta = {"a": np.array([0.0])}
    adam_step(st, theta, {"a": np.array([1.0])})
    before = theta["a"][0]
    adam_step(st, theta, {"a": np.array([1.0])})
    assert before - theta["a"][0] == pytest.approx(0.1, abs=1e-6)


def test_adamw_examples():
    theta = {"a": np.array([1.0])}
    adamw_step(fresh(0.1, 0.1), theta, {"a": np.array([0.0])})
    assert theta["a"][0] == 1.0 * (1 - 0.1 * 0.1)
    assert theta["a"][0] == pytest.approx(0.99, abs=1e-15)

    theta = {"a": np.array([1.0])}
    adamw_step(fresh(0.1, 0.1), theta, {"a": np.array([1.0])})
    assert theta["a"][0] == pytest.approx(0.89, abs=1e-7)


def test_adamw_without_decay_equals_adam():
    rng = np.random.default_rng(3)
    a, b = {"a": rng.normal(size=6)}, None
    b = {"a": a["a"].copy()}
    sa, sb = fresh(0.05, 0.0), fresh(0.05, 0.0)
    for _ in range(5):
        g = rng.normal(size=6)
        adamw_step(sa, a, {"a": g})
        adam_step(sb, b, {"a": g})
    assert np.array_equal(a["a"], b["a"])


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(FloatingPointError):
        adam_step(fresh(), {"a": np.zeros(1)}, {"a": np.array([np.nan])})


def test_swa_examples():
    snap = {"a": np.array([1.5, -2.0])}
    assert np.array_equal(swa_update([snap] * 5)["a"], snap["a"])
    assert swa_update([np.array(0.0), np.array(2.0)]) == 1.0
    snaps = [np.array(float(i)) for i in range(6)]
    assert swa_update(snaps, 5) == np.mean([1, 2, 3, 4, 5])
    ring = SWA(5)
    for i in range(6):
        ring.push({"a": np.array([float(i)])})
    assert ring.average()["a"][0] == 3.0
    with pytest.raises(ValueError):
        swa_update([])


def test_lr_schedule():
    assert lr_scale(10, "constant") == 1.0
    assert lr_scale(0, "cosine", 100) == 1.0
    assert lr_scale(50, "cosine", 100) == pytest.approx(0.5)
    assert lr_scale(500, "cosine", 100) == pytest.approx(0.0)
    assert lr_scale(0, "cosine", 100, warmup_steps=4) == 0.25


def test_validation_split_is_stratified():
    y = np.array([0] * 50 + [1] * 50)
    tr, va = validation_split(y, 0.2, np.random.default_rng(0))
    assert len(va) == 20 and len(np.intersect1d(tr, va)) == 0
    assert np.sum(y[va]) == 10
    tr, va = validation_split(y, 0.0, np.random.default_rng(0))
    assert np.array_equal(tr, va)


@pytest.fixture(scope="module")
def titanic():
    ds = titanic20("numeric")
    X = (ds.X - ds.X.mean(axis=0)) / ds.X.std(axis=0)
    return X, ds.y


def test_training_is_deterministic(titanic):
    X, y = titanic
    cfg = dict(epochs=30, restarts=2, patience=10)
    t1, r1 = train_tree(X, y, TrainConfig(**cfg))
    t2, r2 = train_tree(X, y, TrainConfig(**cfg, threads=2))
    for k in ("I", "T", "L"):
        assert np.array_equal(getattr(t1, k), getattr(t2, k))
    assert r1.history == r2.history


def test_selected_restart_has_lowest_validation_loss(titanic):
    X, y = titanic
    _, rep = train_tree(X, y, TrainConfig(epochs=40, restarts=4))
    losses = [r["valid_loss"] for r in rep.restarts]
    assert losses[rep.chosen_restart] == min(losses)


def test_early_stopping_respects_patience(titanic):
    X, y = titanic
    _, rep = train_tree(X, y, TrainConfig(epochs=2000, restarts=1, patience=5))
    best = min(range(len(rep.history)), key=lambda i: rep.history[i]["valid_loss"])
    assert len(rep.history) < 2000
    assert len(rep.history) - 1 - rep.restarts[0]["best_epoch"] == 5
    assert best <= rep.restarts[0]["best_epoch"] + 5


def test_zero_epochs_returns_initial_tree(titanic):
    X, y = titanic
    tree, rep = train_tree(X, y, TrainConfig(epochs=0))
    assert rep.history == [] and rep.restarts == []
    again, _ = train_tree(X, y, TrainConfig(epochs=0))
    assert np.array_equal(tree.I, again.I)


def test_single_class_rejected():
    with pytest.raises(ConfigurationError):
        train_tree(np.zeros((5, 2)), np.zeros(5, dtype=int), TrainConfig(epochs=1))


@pytest.mark.parametrize("bad", [dict(depth=0), dict(restarts=0), dict(lr_leaf=0.0),
                                 dict(validation_fraction=1.0), dict(schedule="step"),
                                 dict(activation="relu")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad).validate()
