"""Dense axis-aligned decision trees and their batched forward pass.

A tree of depth ``d`` over ``n`` features and ``c`` classes is stored as three
matrices: index logits ``I`` and per-feature thresholds ``T`` (one row per
internal node, breadth-first order) and leaf logits ``L`` (one row per leaf).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

ENTMAX_ALPHA = 1.5
_BISECT_ITERS = 80
_BISECT_TOL = 1e-12

# Index logits of masked features are replaced by this before entmax.
MASK_SENTINEL = -1e9


class SplitActivation(str, Enum):
    SIGMOID = "sigmoid"
    SOFTSIGN = "softsign"
    ENTMOID = "entmoid"


class ForwardMode(str, Enum):
    HARD = "hard"
    SOFT = "soft"


@dataclass
class DenseTree:
    depth: int
    n_features: int
    n_classes: int
    I: np.ndarray
    T: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        if self.depth < 1 or self.n_features < 1 or self.n_classes < 2:
            raise ValueError(
                f"invalid tree dims d={self.depth} n={self.n_features} c={self.n_classes}"
            )
        self.I = np.asarray(self.I, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.float64)
        self.L = np.asarray(self.L, dtype=np.float64)
        nodes, leaves = self.n_nodes, self.n_leaves
        for name, arr, shape in (
            ("I", self.I, (nodes, self.n_features)),
            ("T", self.T, (nodes, self.n_features)),
            ("L", self.L, (leaves, self.n_classes)),
        ):
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    @property
    def n_nodes(self) -> int:
        return 2**self.depth - 1

    @property
    def n_leaves(self) -> int:
        return 2**self.depth

    @classmethod
    def zeros(cls, depth, n_features, n_classes):
        nodes, leaves = 2**depth - 1, 2**depth
        return cls(
            depth,
            n_features,
            n_classes,
            np.zeros((nodes, n_features)),
            np.zeros((nodes, n_features)),
            np.zeros((leaves, n_classes)),
        )

    def copy(self) -> "DenseTree":
        return DenseTree(
            self.depth, self.n_features, self.n_classes,
            self.I.copy(), self.T.copy(), self.L.copy(),
        )

    def params(self):
        return {"I": self.I, "T": self.T, "L": self.L}

    def check_finite(self):
        for name, arr in self.params().items():
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite entries in {name}")


def _check_level(l, j, d):
    if d < 1:
        raise ValueError(f"depth must be >= 1, got {d}")
    if not 0 <= l < 2**d:
        raise ValueError(f"leaf index {l} out of range for depth {d}")
    if not 0 <= j < d:
        raise ValueError(f"level {j} out of range for depth {d}")


def internal_index(l: int, j: int, d: int) -> int:
    """Breadth-first index of the level-``j`` ancestor of leaf ``l``."""
    _check_level(l, j, d)
    return 2**j + l // 2 ** (d - j) - 1


def path_side(l: int, j: int, d: int) -> int:
    """0 if leaf ``l`` lies in the left (condition true) subtree of its
    level-``j`` ancestor, 1 otherwise."""
    _check_level(l, j, d)
    return (l // 2 ** (d - (j + 1))) % 2


def path_tables(d: int):
    """Ancestor indices and branch sides for every (leaf, level), shape (2^d, d)."""
    leaves = np.arange(2**d)[:, None]
    levels = np.arange(d)[None, :]
    nodes = 2**levels + leaves // 2 ** (d - levels) - 1
    sides = (leaves // 2 ** (d - (levels + 1))) % 2
    return nodes, sides


# --- split activations -----------------------------------------------------


def activation(z, kind: SplitActivation):
    z = np.asarray(z, dtype=np.float64)
    kind = SplitActivation(kind)
    if kind is SplitActivation.SIGMOID:
        # split by sign to avoid overflow in exp
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if kind is SplitActivation.SOFTSIGN:
        return 0.5 * (z / (1.0 + np.abs(z)) + 1.0)
    # two-class 1.5-entmax over [z, 0], closed form
    zc = np.clip(z, -2.0, 2.0)
    root = np.sqrt(np.maximum(8.0 - zc * zc, 0.0))
    return ((zc + root) / 4.0) ** 2


def activation_grad(z, kind: SplitActivation):
    z = np.asarray(z, dtype=np.float64)
    kind = SplitActivation(kind)
    if kind is SplitActivation.SIGMOID:
        s = activation(z, kind)
        return s * (1.0 - s)
    if kind is SplitActivation.SOFTSIGN:
        return 0.5 / (1.0 + np.abs(z)) ** 2
    inside = np.abs(z) < 2.0
    zc = np.where(inside, z, 0.0)
    root = np.sqrt(8.0 - zc * zc)
    return np.where(inside, (zc + root) / 8.0 * (1.0 - zc / root), 0.0)


def split_soft(x, i_row, t_row, act=SplitActivation.SIGMOID) -> float:
    x, i_row, t_row = (np.asarray(a, dtype=np.float64) for a in (x, i_row, t_row))
    if not (x.shape == i_row.shape == t_row.shape) or x.ndim != 1:
        raise ValueError(
            f"shape mismatch: x{x.shape} i_row{i_row.shape} t_row{t_row.shape}"
        )
    return float(activation(i_row @ x - i_row @ t_row, act))


def split_hard(value):
    """Round a soft split value; a tie at 0.5 goes to 1 (Heaviside ``>=``)."""
    return (np.asarray(value) >= 0.5).astype(np.float64)


# --- entmax / hardmax ------------------------------------------------------


def entmax15(z, axis=-1):
    """1.5-entmax along ``axis`` by bisection on the threshold."""
    z = np.asarray(z, dtype=np.float64)
    z = np.moveaxis(z, axis, -1)
    n = z.shape[-1]
    a = z * (ENTMAX_ALPHA - 1.0)
    top = a.max(axis=-1, keepdims=True)
    lo = top - 1.0
    hi = top - (1.0 / n) ** (ENTMAX_ALPHA - 1.0)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        mass = (np.maximum(a - mid, 0.0) ** 2).sum(axis=-1, keepdims=True)
        above = mass >= 1.0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.max(hi - lo) < _BISECT_TOL:
            break
    p = np.maximum(a - lo, 0.0) ** 2
    p /= p.sum(axis=-1, keepdims=True)
    return np.moveaxis(p, -1, axis)


def entmax_row(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("entmax_row expects a vector")
    return entmax15(z)


def hardmax(p, axis=-1):
    """One-hot at the arg-max; ties go to the lowest index."""
    p = np.asarray(p)
    idx = np.argmax(p, axis=axis)
    out = np.zeros(p.shape, dtype=np.float64)
    np.put_along_axis(out, np.expand_dims(idx, axis), 1.0, axis=axis)
    return out


hardmax_st = hardmax


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# --- forward pass ----------------------------------------------------------


@dataclass
class ForwardTrace:
    X: np.ndarray
    mode: ForwardMode
    act: SplitActivation
    selector_probs: np.ndarray  # entmax rows, (nodes, n)
    selector: np.ndarray  # rows actually used: one-hot (hard) or entmax (soft)
    preact: np.ndarray  # (batch, nodes)
    split_soft: np.ndarray  # (batch, nodes)
    split_used: np.ndarray  # (batch, nodes)
    terms: np.ndarray  # (batch, leaves, depth)
    indicator: np.ndarray  # (batch, leaves)
    logits: np.ndarray  # (batch, c)
    probs: np.ndarray  # (batch, c)
    feature_mask: np.ndarray | None = None


def selector_logits(I, feature_mask=None):
    if feature_mask is None:
        return I
    feature_mask = np.asarray(feature_mask, dtype=bool)
    return np.where(feature_mask[None, :], I, MASK_SENTINEL)


def tree_forward(
    tree: DenseTree,
    X,
    act=SplitActivation.SIGMOID,
    mode=ForwardMode.HARD,
    feature_mask=None,
):
    """Class probabilities for a batch, plus the trace needed for backward."""
    act, mode = SplitActivation(act), ForwardMode(mode)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != tree.n_features:
        raise ValueError(f"X has shape {X.shape}, expected (batch, {tree.n_features})")
    tree.check_finite()

    probs_sel = entmax15(selector_logits(tree.I, feature_mask), axis=1)
    if mode is ForwardMode.HARD:
        sel = hardmax(probs_sel, axis=1)
    else:
        sel = probs_sel
    z = X @ sel.T - (sel * tree.T).sum(axis=1)[None, :]
    s_soft = activation(z, act)
    if mode is ForwardMode.HARD:
        # z >= 0 is round(act(z)) with the tie sent to 1, without the
        # float saturation of act near 0.5
        s_used = (z >= 0).astype(np.float64)
    else:
        s_used = s_soft

    nodes, sides = path_tables(tree.depth)
    s_path = s_used[:, nodes]  # (batch, leaves, depth)
    terms = np.where(sides[None], 1.0 - s_path, s_path)
    indicator = terms.prod(axis=2)
    logits = indicator @ tree.L
    probs = softmax(logits, axis=1)
    trace = ForwardTrace(
        X=X, mode=mode, act=act, selector_probs=probs_sel, selector=sel,
        preact=z, split_soft=s_soft, split_used=s_used, terms=terms,
        indicator=indicator, logits=logits, probs=probs,
        feature_mask=None if feature_mask is None else np.asarray(feature_mask, bool),
    )
    return probs, trace


def leaf_assignment(tree: DenseTree, X, feature_mask=None):
    """Hard-mode leaf index per sample (scalar for a single vector)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    _, trace = tree_forward(tree, np.atleast_2d(X), mode=ForwardMode.HARD,
                            feature_mask=feature_mask)
    leaves = np.argmax(trace.indicator, axis=1)
    return int(leaves[0]) if single else leaves


def split_features(tree: DenseTree, feature_mask=None):
    """Hardmax-selected feature index and its threshold per internal node."""
    probs = entmax15(selector_logits(tree.I, feature_mask), axis=1)
    feat = np.argmax(probs, axis=1)
    return feat, tree.T[np.arange(tree.n_nodes), feat]


def init_tree(depth, n_features, n_classes, rng) -> DenseTree:
    """Uniform initialization with Glorot-style ranges over the tree dims."""
    nodes, leaves = 2**depth - 1, 2**depth
    lim_split = np.sqrt(6.0 / (2 ** (2 * depth - 1) + n_features))
    lim_leaf = np.sqrt(6.0 / (2 ** (2 * depth) + n_classes))
    I = rng.uniform(-lim_split, lim_split, size=(nodes, n_features))
    T = rng.uniform(-lim_split, lim_split, size=(nodes, n_features))
    L = rng.uniform(-lim_leaf, lim_leaf, size=(leaves, n_classes))
    return DenseTree(depth, n_features, n_classes, I, T, L)
