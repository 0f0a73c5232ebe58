"""GRANDE: jointly trained ensembles of dense trees with per-leaf weights.

Each sample picks, in every tree, the weight of the leaf it lands in; the
tree predictions are averaged with the softmax of those picked weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backward import backward, softmax_backward
from .optim import (
    ConfigurationError,
    TrainConfig,
    TrainingReport,
    _check_labels,
    cross_entropy_loss,
    run_restarts,
    run_training,
)
from .tree import DenseTree, ForwardMode, SplitActivation, init_tree, tree_forward


@dataclass
class Ensemble:
    I: np.ndarray  # (E, nodes, n)
    T: np.ndarray  # (E, nodes, n)
    L: np.ndarray  # (E, leaves, c)
    W: np.ndarray  # (E, leaves)
    feature_masks: np.ndarray  # (E, n) bool

    def __post_init__(self):
        self.I = np.asarray(self.I, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.float64)
        self.L = np.asarray(self.L, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        self.feature_masks = np.asarray(self.feature_masks, dtype=bool)
        E, nodes, n = self.I.shape
        leaves = self.L.shape[1]
        if leaves != nodes + 1 or leaves & (leaves - 1):
            raise ValueError("trees must be complete binary trees")
        if self.T.shape != self.I.shape or self.W.shape != (E, leaves) \
                or self.L.shape[0] != E or self.feature_masks.shape != (E, n):
            raise ValueError("ensemble parameter shapes disagree")
        if not self.feature_masks.any(axis=1).all():
            raise ValueError("every estimator needs at least one feature")

    @property
    def n_estimators(self):
        return self.I.shape[0]

    @property
    def depth(self):
        return int(round(math.log2(self.L.shape[1])))

    @property
    def n_features(self):
        return self.I.shape[2]

    @property
    def n_classes(self):
        return self.L.shape[2]

    def tree(self, e) -> DenseTree:
        return DenseTree(self.depth, self.n_features, self.n_classes,
                         self.I[e], self.T[e], self.L[e])

    def params(self):
        return {"I": self.I, "T": self.T, "L": self.L, "W": self.W}

    @classmethod
    def from_params(cls, params, feature_masks):
        return cls(params["I"], params["T"], params["L"], params["W"], feature_masks)


@dataclass
class EnsembleTrace:
    traces: list
    tree_probs: np.ndarray  # (batch, E, c)
    picked: np.ndarray  # (batch, E) pre-softmax leaf weights
    weights: np.ndarray  # (batch, E) post-softmax, 0 for inactive
    active: np.ndarray  # (batch, E) bool
    probs: np.ndarray  # (batch, c)


def _active_rows(active, batch, E):
    if active is None:
        return np.ones((batch, E), dtype=bool)
    active = np.asarray(active, dtype=bool)
    if active.shape == (E,):
        active = np.broadcast_to(active, (batch, E))
    if active.shape != (batch, E):
        raise ValueError(f"active mask has shape {active.shape}, expected ({batch}, {E})")
    if not active.any(axis=1).all():
        raise ValueError("every sample needs at least one active estimator")
    return active


def masked_softmax(w, active):
    shifted = np.where(active, w, -np.inf)
    top = shifted.max(axis=1, keepdims=True)
    e = np.where(active, np.exp(w - top), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def ensemble_pass(ens: Ensemble, X, act=SplitActivation.SOFTSIGN, mode=ForwardMode.HARD,
                  active=None) -> EnsembleTrace:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != ens.n_features:
        raise ValueError(f"X has shape {X.shape}, expected (batch, {ens.n_features})")
    E = ens.n_estimators
    act_rows = _active_rows(active, X.shape[0], E)
    traces, probs, picked = [], [], []
    for e in range(E):
        p, trace = tree_forward(ens.tree(e), X, act, mode, ens.feature_masks[e])
        traces.append(trace)
        probs.append(p)
        picked.append(trace.indicator @ ens.W[e])
    tree_probs = np.stack(probs, axis=1)
    picked = np.stack(picked, axis=1)
    weights = masked_softmax(picked, act_rows)
    out = (weights[:, :, None] * tree_probs).sum(axis=1)
    return EnsembleTrace(traces, tree_probs, picked, weights, act_rows, out)


def ensemble_forward(ens: Ensemble, X, act=SplitActivation.SOFTSIGN, mode=ForwardMode.HARD,
                     active=None):
    """Return ``(probabilities, post-softmax estimator weights)`` per sample."""
    tr = ensemble_pass(ens, X, act, mode, active)
    return tr.probs, tr.weights


def ensemble_backward(trace: EnsembleTrace, ens: Ensemble, grad_out) -> dict:
    """Gradients for I, T, L, W given the gradient w.r.t. the output probabilities."""
    G = np.asarray(grad_out, dtype=np.float64)
    a = trace.weights
    d_tree_probs = a[:, :, None] * G[:, None, :]
    da = (trace.tree_probs * G[:, None, :]).sum(axis=2)
    dw = a * (da - (a * da).sum(axis=1, keepdims=True))
    grads = {k: np.zeros_like(v) for k, v in ens.params().items()}
    for e, tr in enumerate(trace.traces):
        d_logits = softmax_backward(trace.tree_probs[:, e], d_tree_probs[:, e])
        d_ind = dw[:, e:e + 1] * ens.W[e][None, :]
        g = backward(tr, ens.tree(e), d_logits, d_ind)
        grads["I"][e], grads["T"][e], grads["L"][e] = g.dI, g.dT, g.dL
        grads["W"][e] = tr.indicator.T @ dw[:, e]
    return grads


def predict_top_estimators(ens: Ensemble, X, k=3, act=SplitActivation.SOFTSIGN):
    """Per sample, the ``k`` largest estimator weights as (index, leaf, weight)."""
    tr = ensemble_pass(ens, X, act)
    out = []
    for b in range(tr.weights.shape[0]):
        order = np.argsort(-tr.weights[b], kind="stable")[:k]
        out.append([
            {"estimator": int(e), "leaf": int(np.argmax(tr.traces[e].indicator[b])),
             "weight": float(tr.weights[b, e])}
            for e in order
        ])
    return out


# --- regularization --------------------------------------------------------


def n_active(n_estimators, fraction):
    if not 0.0 <= fraction < 1.0:
        raise ValueError("dropout fraction must be in [0, 1)")
    keep = math.ceil(round((1.0 - fraction) * n_estimators, 9))
    return max(1, keep)


def apply_dropout(n_estimators, fraction, rng) -> np.ndarray:
    """Boolean mask of the estimators kept for one optimizer step."""
    keep = n_active(n_estimators, fraction)
    mask = np.zeros(n_estimators, dtype=bool)
    if keep == n_estimators:
        mask[:] = True
    else:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        mask[rng.choice(n_estimators, size=keep, replace=False)] = True
    return mask


def subsample(m, n, feature_fraction=1.0, sample_fraction=1.0, with_replacement=False,
              seed=42, estimator=0):
    """Row indices and feature mask for one estimator, fixed by ``(seed, estimator)``."""
    for name, f in (("feature_fraction", feature_fraction), ("sample_fraction", sample_fraction)):
        if not 0.0 < f <= 1.0:
            raise ValueError(f"{name} must be in (0, 1]")
    rng = np.random.default_rng([seed, estimator])
    mask = np.ones(n, dtype=bool)
    if feature_fraction < 1.0:
        k = max(1, int(round(feature_fraction * n)))
        mask[:] = False
        mask[rng.choice(n, size=k, replace=False)] = True
    if sample_fraction == 1.0 and not with_replacement:
        rows = np.arange(m)
    else:
        size = max(1, int(round(sample_fraction * m)))
        rows = np.sort(rng.choice(m, size=size, replace=with_replacement))
    return rows, mask


# --- training --------------------------------------------------------------


@dataclass
class GrandeConfig(TrainConfig):
    n_estimators: int = 16
    activation: str = "softsign"
    patience: int = 25
    lr_index: float = 0.05
    lr_values: float = 0.05
    lr_leaf: float = 0.1
    lr_weights: float = 0.01
    dropout: float = 0.0
    feature_fraction: float = 1.0
    sample_fraction: float = 1.0
    bootstrap: bool = False

    def validate(self):
        super().validate()
        if self.n_estimators < 1:
            raise ConfigurationError("n_estimators must be >= 1")
        if self.lr_weights <= 0:
            raise ConfigurationError("lr_weights must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")
        for name in ("feature_fraction", "sample_fraction"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1]")

    def learning_rates(self):
        rates = super().learning_rates()
        rates["W"] = self.lr_weights
        return rates


def train_ensemble(X, y, cfg: GrandeConfig | None = None, n_classes=None):
    """Fit an :class:`Ensemble`; returns ``(ensemble, report)``."""
    cfg = cfg or GrandeConfig()
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    m, n = X.shape
    c = int(n_classes or y.max() + 1)
    E = cfg.n_estimators
    act = SplitActivation(cfg.activation)
    loss_cfg = cfg.loss_config()

    member = np.zeros((m, E), dtype=bool)
    masks = np.zeros((E, n), dtype=bool)
    for e in range(E):
        rows, masks[e] = subsample(m, n, cfg.feature_fraction, cfg.sample_fraction,
                                   cfg.bootstrap, cfg.seed, e)
        member[rows, e] = True

    def init_fn(rng):
        trees = [init_tree(cfg.depth, n, c, rng) for _ in range(E)]
        return {
            "I": np.stack([t.I for t in trees]),
            "T": np.stack([t.T for t in trees]),
            "L": np.stack([t.L for t in trees]),
            "W": np.zeros((E, 2**cfg.depth)),
        }

    def grad_fn(p, idx, rng):
        ens = Ensemble.from_params(p, masks)
        active = member[idx]
        if cfg.dropout > 0:
            active = active & apply_dropout(E, cfg.dropout, rng)[None, :]
        empty = ~active.any(axis=1)
        if empty.any():
            active[empty] = True
        tr = ensemble_pass(ens, X[idx], act, ForwardMode.HARD, active)
        loss, g = cross_entropy_loss(tr.probs, y[idx], loss_cfg, wrt="probs")
        return loss, ensemble_backward(tr, ens, g)

    def eval_fn(p, idx):
        probs, _ = ensemble_forward(Ensemble.from_params(p, masks), X[idx], act)
        return cross_entropy_loss(probs, y[idx], loss_cfg)[0]

    if cfg.epochs == 0:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
        return Ensemble.from_params(init_fn(rng), masks), TrainingReport([], 0, [])

    def one(seed_seq):
        return run_training(init_fn, grad_fn, eval_fn, m, cfg, cfg.learning_rates(), y, seed_seq)

    results, chosen = run_restarts(one, cfg)
    best = results[chosen]
    report = TrainingReport(best.history, chosen, [
        {"restart": i, "valid_loss": r.valid_loss, "best_epoch": r.best_epoch,
         "epochs_run": len(r.history), "failed": r.failed}
        for i, r in enumerate(results)
    ], results)
    return Ensemble.from_params(best.params, masks), report
