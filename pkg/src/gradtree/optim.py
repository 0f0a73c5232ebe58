"""Losses, Adam/AdamW, weight averaging and the minibatch training loop."""
from __future__ import annotations

import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .backward import backward
from .tree import DenseTree, ForwardMode, SplitActivation, init_tree, tree_forward

logger = logging.getLogger(__name__)

PROB_CLIP = 1e-12


class ConfigurationError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# --- loss ------------------------------------------------------------------


@dataclass
class LossConfig:
    focal_factor: float = 0.0
    class_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.focal_factor < 0:
            raise ConfigurationError("focal_factor must be >= 0")
        if self.class_weights is not None:
            self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
            if np.any(self.class_weights <= 0):
                raise ConfigurationError("class weights must be positive")


def cross_entropy_loss(pred, y, cfg: LossConfig | None = None, wrt="logits"):
    """Mean (focal, class-weighted) cross-entropy.

    Returns ``(loss, grad)`` where ``grad`` is taken w.r.t. the pre-softmax
    logits (``wrt="logits"``) or w.r.t. the probabilities (``wrt="probs"``).
    """
    cfg = cfg or LossConfig()
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y)
    if pred.ndim != 2 or y.shape != (pred.shape[0],):
        raise ValueError(f"shape mismatch: pred{pred.shape} y{y.shape}")
    if y.size and (y.min() < 0 or y.max() >= pred.shape[1]):
        raise ValueError("labels out of range")
    m, c = pred.shape
    rows = np.arange(m)
    w = np.ones(m) if cfg.class_weights is None else cfg.class_weights[y]
    gamma = float(cfg.focal_factor)

    py = np.maximum(pred[rows, y], PROB_CLIP)
    logp = np.log(py)
    if gamma == 0.0:
        per = -w * logp
        dpy = -w / py
    else:
        q = 1.0 - py
        per = -w * q**gamma * logp
        dpy = w * (gamma * q ** (gamma - 1.0) * logp - q**gamma / py)
    loss = float(per.mean())
    dpy /= m

    if wrt == "probs":
        grad = np.zeros_like(pred)
        grad[rows, y] = dpy
        return loss, grad
    onehot = np.zeros_like(pred)
    onehot[rows, y] = 1.0
    # d p_y / d z_k = p_y (delta_yk - p_k)
    grad = (dpy * py)[:, None] * (onehot - pred)
    return loss, grad


# --- Adam / AdamW ----------------------------------------------------------


@dataclass
class AdamState:
    lr: dict
    weight_decay: dict | float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    mu: dict = field(default_factory=dict)
    nu: dict = field(default_factory=dict)

    def decay_for(self, name):
        if isinstance(self.weight_decay, dict):
            return self.weight_decay.get(name, 0.0)
        return self.weight_decay


def adamw_step(state: AdamState, params: dict, grads: dict, lr_scale=1.0):
    """One AdamW update in place; returns ``params``.

    With zero weight decay this is plain Adam.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        theta = params[name]
        mu = state.mu.get(name)
        if mu is None:
            mu = state.mu[name] = np.zeros_like(theta)
            state.nu[name] = np.zeros_like(theta)
        nu = state.nu[name]
        mu *= b1
        mu += (1.0 - b1) * g
        nu *= b2
        nu += (1.0 - b2) * g * g
        mu_hat = mu / (1.0 - b1**t)
        nu_hat = nu / (1.0 - b2**t)
        eta = state.lr[name] * lr_scale
        lam = state.decay_for(name)
        # decoupled decay first, so a zero gradient scales θ by exactly (1 - ηλ)
        if lam:
            theta *= 1.0 - eta * lam
        theta -= eta * (mu_hat / (np.sqrt(nu_hat) + state.eps))
    return params


def adam_step(state: AdamState, params: dict, grads: dict, lr_scale=1.0):
    saved = state.weight_decay
    state.weight_decay = 0.0
    try:
        return adamw_step(state, params, grads, lr_scale)
    finally:
        state.weight_decay = saved


# --- weight averaging and schedules ---------------------------------------


class SWA:
    """Mean of the ``k`` most recent parameter snapshots."""

    def __init__(self, k=5):
        self.ring = deque(maxlen=k)

    def push(self, params: dict):
        self.ring.append({name: np.array(v, copy=True) for name, v in params.items()})

    def average(self) -> dict:
        if not self.ring:
            raise ValueError("no snapshots")
        return swa_update(list(self.ring), self.ring.maxlen)


def _mean(arrays):
    # offset from the first snapshot: identical snapshots average to themselves exactly
    base = np.asarray(arrays[0], dtype=np.float64)
    return base + np.mean(np.stack([np.asarray(a, dtype=np.float64) - base for a in arrays]), axis=0)


def swa_update(ring, k=5):
    snaps = list(ring)[-k:]
    if not snaps:
        raise ValueError("swa_update needs at least one snapshot")
    if not isinstance(snaps[0], dict):
        return _mean(snaps)
    return {name: _mean([s[name] for s in snaps]) for name in snaps[0]}


def lr_scale(step, schedule="constant", decay_steps=1000, warmup_steps=0):
    """Multiplier on the base learning rates for optimizer step ``step`` (0-based)."""
    if schedule == "constant":
        return 1.0
    if schedule != "cosine":
        raise ConfigurationError(f"unknown schedule {schedule!r}")
    if warmup_steps and step < warmup_steps:
        return (step + 1) / warmup_steps
    progress = min(1.0, (step - warmup_steps) / max(1, decay_steps))
    return 0.5 * (1.0 + math.cos(math.pi * progress))


# --- training loop ---------------------------------------------------------


@dataclass
class TrainConfig:
    depth: int = 3
    epochs: int = 1000
    batch_size: int = 64
    patience: int = 200
    restarts: int = 3
    lr_index: float = 0.01
    lr_values: float = 0.01
    lr_leaf: float = 0.05
    activation: str = "sigmoid"
    swa_checkpoints: int = 5
    schedule: str = "constant"
    decay_steps: int = 1000
    warmup_steps: int = 0
    validation_fraction: float = 0.2
    weight_decay: float = 0.0
    focal_factor: float = 0.0
    class_weights: list | None = None
    min_delta: float = 1e-6
    seed: int = 42
    threads: int = 1

    def validate(self):
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigurationError("epochs >= 0, batch_size >= 1, patience >= 1 required")
        if self.restarts < 1:
            raise ConfigurationError("restarts must be >= 1")
        for name in ("lr_index", "lr_values", "lr_leaf"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must be in [0, 1)")
        SplitActivation(self.activation)
        if self.schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")

    def learning_rates(self):
        return {"I": self.lr_index, "T": self.lr_values, "L": self.lr_leaf}

    def loss_config(self):
        return LossConfig(self.focal_factor, self.class_weights)

    def to_dict(self):
        return asdict(self)


@dataclass
class RestartResult:
    seed: int
    params: dict | None
    valid_loss: float
    best_epoch: int
    history: list
    failed: bool = False


@dataclass
class TrainingReport:
    history: list
    chosen_restart: int
    restarts: list
    results: list = field(default_factory=list, repr=False)

    def records(self):
        """Per-epoch JSON-serializable records of the chosen restart."""
        return list(self.history)


def validation_split(y, fraction, rng):
    """Stratified index split; ``fraction == 0`` reuses the training rows."""
    m = len(y)
    idx = np.arange(m)
    if fraction == 0.0:
        return idx, idx
    valid = []
    for label in np.unique(y):
        members = rng.permutation(idx[y == label])
        take = int(round(fraction * len(members)))
        if len(members) > 1:
            take = min(max(take, 1), len(members) - 1)
        else:
            take = 0
        valid.extend(members[:take].tolist())
    valid = np.sort(np.array(valid, dtype=int))
    train = np.setdiff1d(idx, valid)
    if len(valid) == 0:
        return train, train
    return train, valid


def run_training(
    init_fn: Callable[[np.random.Generator], dict],
    grad_fn: Callable[[dict, np.ndarray, np.random.Generator], tuple],
    eval_fn: Callable[[dict, np.ndarray], float],
    n_samples: int,
    cfg: TrainConfig,
    learning_rates: dict,
    labels: np.ndarray,
    seed_seq: np.random.SeedSequence,
) -> RestartResult:
    """One restart: init, minibatch AdamW epochs, SWA, early stopping.

    ``grad_fn(params, batch_idx, rng)`` returns ``(loss, grads)``;
    ``eval_fn(params, idx)`` returns the loss on rows ``idx``.
    """
    rng = np.random.default_rng(seed_seq)
    params = init_fn(rng)
    train_idx, valid_idx = validation_split(labels, cfg.validation_fraction, rng)
    state = AdamState(lr=dict(learning_rates), weight_decay=cfg.weight_decay)
    swa = SWA(cfg.swa_checkpoints)
    best = {name: v.copy() for name, v in params.items()}
    best_loss = math.inf
    best_epoch = -1
    stale = 0
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = grad_fn(params, batch, rng)
            if not math.isfinite(loss):
                return RestartResult(seed_seq.entropy, None, math.inf, best_epoch, history, True)
            scale = lr_scale(step, cfg.schedule, cfg.decay_steps, cfg.warmup_steps)
            adamw_step(state, params, grads, lr_scale=scale)
            step += 1
            total += loss * len(batch)
        swa.push(params)
        averaged = swa.average()
        valid_loss = eval_fn(averaged, valid_idx)
        if not math.isfinite(valid_loss):
            return RestartResult(seed_seq.entropy, None, math.inf, best_epoch, history, True)
        history.append({
            "epoch": epoch,
            "train_loss": total / len(order),
            "valid_loss": valid_loss,
            "lr": {k: v * scale for k, v in learning_rates.items()},
        })
        if valid_loss < best_loss - cfg.min_delta:
            best_loss, best_epoch, best, stale = valid_loss, epoch, averaged, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_epoch < 0:
        best_loss = eval_fn(best, valid_idx) if cfg.epochs else math.inf
    return RestartResult(seed_seq.entropy, best, best_loss, best_epoch, history)


def run_restarts(make_restart, cfg: TrainConfig):
    """Run ``cfg.restarts`` seeded restarts and keep the lowest validation loss."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    if cfg.threads > 1 and cfg.restarts > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(make_restart, seeds))
    else:
        results = [make_restart(s) for s in seeds]
    completed = [i for i, r in enumerate(results) if not r.failed]
    if not completed:
        raise TrainingError("all restarts failed")
    chosen = min(completed, key=lambda i: results[i].valid_loss)
    return results, chosen


def _check_labels(y):
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise ConfigurationError("labels must be a non-empty vector")
    if len(np.unique(y)) < 2:
        raise ConfigurationError("training data contains a single class")
    return y.astype(int)


def train_tree(X, y, cfg: TrainConfig | None = None, n_classes=None):
    """Fit a dense tree by gradient descent; returns ``(tree, report)``."""
    cfg = cfg or TrainConfig()
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    n = X.shape[1]
    c = int(n_classes or y.max() + 1)
    act = SplitActivation(cfg.activation)
    loss_cfg = cfg.loss_config()

    if cfg.epochs == 0:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
        tree = init_tree(cfg.depth, n, c, rng)
        return tree, TrainingReport([], 0, [])

    def to_tree(p):
        return DenseTree(cfg.depth, n, c, p["I"], p["T"], p["L"])

    def init_fn(rng):
        return init_tree(cfg.depth, n, c, rng).params()

    def grad_fn(p, idx, rng):
        tree = to_tree(p)
        probs, trace = tree_forward(tree, X[idx], act, ForwardMode.HARD)
        loss, g = cross_entropy_loss(probs, y[idx], loss_cfg)
        return loss, backward(trace, tree, g).as_dict()

    def eval_fn(p, idx):
        probs, _ = tree_forward(to_tree(p), X[idx], act, ForwardMode.HARD)
        return cross_entropy_loss(probs, y[idx], loss_cfg)[0]

    def one(seed_seq):
        return run_training(init_fn, grad_fn, eval_fn, len(y), cfg,
                            cfg.learning_rates(), y, seed_seq)

    results, chosen = run_restarts(one, cfg)
    best = results[chosen]
    logger.info("chose restart %d with validation loss %.5f", chosen, best.valid_loss)
    report = TrainingReport(best.history, chosen, [
        {"restart": i, "valid_loss": r.valid_loss, "best_epoch": r.best_epoch,
         "epochs_run": len(r.history), "failed": r.failed}
        for i, r in enumerate(results)
    ], results)
    return to_tree(best.params), report
