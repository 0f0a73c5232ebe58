"""Greedy CART induction on numeric matrices (Gini or entropy criterion)."""
from __future__ import annotations

import numpy as np

from .vanilla import Leaf, Split

_GAIN_EPS = 1e-12


def _as_counts(counts):
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or np.any(counts < 0):
        raise ValueError(f"invalid class counts {counts}")
    return counts


def gini_impurity(counts) -> float:
    counts = _as_counts(counts)
    total = counts.sum()
    if total <= 0:
        raise ValueError("impurity of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def entropy(counts) -> float:
    """Shannon entropy in bits."""
    counts = _as_counts(counts)
    total = counts.sum()
    if total <= 0:
        raise ValueError("entropy of an empty node is undefined")
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


def _decrease(impurity, parent, left, right):
    parent, left, right = (_as_counts(c) for c in (parent, left, right))
    if not (parent.shape == left.shape == right.shape) or not np.allclose(left + right, parent):
        raise ValueError("left and right counts must add up to the parent counts")
    m = parent.sum()
    out = impurity(parent)
    for child in (left, right):
        if child.sum() > 0:
            out -= child.sum() / m * impurity(child)
    return float(out)


def gini_decrease(parent, left, right) -> float:
    return _decrease(gini_impurity, parent, left, right)


def entropy_gain(parent, left, right) -> float:
    return _decrease(entropy, parent, left, right)


CRITERIA = {"gini": gini_impurity, "entropy": entropy}


def class_counts(y, n_classes):
    return np.bincount(np.asarray(y, dtype=np.int64), minlength=n_classes).astype(np.float64)


def candidate_thresholds(values):
    """Midpoints between consecutive distinct sorted values."""
    u = np.unique(values)
    return (u[:-1] + u[1:]) / 2.0


def split_gain(x, y, threshold, n_classes, criterion="gini"):
    """Impurity decrease of ``x >= threshold`` at a node holding ``(x, y)``."""
    mask = np.asarray(x) >= threshold
    parent = class_counts(y, n_classes)
    left = class_counts(np.asarray(y)[mask], n_classes)
    return _decrease(CRITERIA[criterion], parent, left, parent - left)


def best_split(X, y, n_classes, criterion="gini"):
    """(gain, feature, threshold) of the best candidate, or None.

    Ties go to the lower feature index, then the lower threshold.
    """
    impurity = CRITERIA[criterion]
    parent = class_counts(y, n_classes)
    base = impurity(parent)
    m = len(y)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        onehot = np.eye(n_classes)[ys]
        below = np.cumsum(onehot, axis=0)  # counts of rows strictly left in order
        boundaries = np.flatnonzero(xs[1:] > xs[:-1])
        for b in boundaries:
            right = below[b]  # x < threshold
            left = parent - right  # x >= threshold
            threshold = (xs[b] + xs[b + 1]) / 2.0
            gain = base
            for child in (left, right):
                gain -= child.sum() / m * impurity(child)
            if best is None or gain > best[0] + _GAIN_EPS:
                best = (gain, j, threshold)
    return best


def _leaf(y, n_classes):
    counts = class_counts(y, n_classes)
    return Leaf(counts / counts.sum(), int(np.argmax(counts)), counts)


def cart_fit(X, y, max_depth=3, criterion="gini", min_samples=2, n_classes=None,
             feature_names=None):
    """Grow a tree greedily; returns the root :class:`Leaf` or :class:`Split`."""
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] < 1:
        raise ValueError("need at least one sample")
    c = int(n_classes or y.max() + 1)

    def grow(idx, level):
        ys = y[idx]
        if level >= max_depth or len(idx) < min_samples or len(np.unique(ys)) == 1:
            return _leaf(ys, c)
        found = best_split(X[idx], ys, c, criterion)
        if found is None or found[0] <= _GAIN_EPS:
            return _leaf(ys, c)
        _, j, threshold = found
        go_left = X[idx, j] >= threshold
        name = feature_names[j] if feature_names is not None else None
        return Split(j, float(threshold), grow(idx[go_left], level + 1),
                     grow(idx[~go_left], level + 1), name)

    return grow(np.arange(X.shape[0]), 0)
