"""Recursive (vanilla) binary trees shared by converted GradTrees and CART.

A sample goes left when ``x[feature] >= threshold``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Leaf:
    probs: np.ndarray
    label: int = field(default=-1)
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.label < 0:
            self.label = int(np.argmax(self.probs))


@dataclass
class Split:
    feature: int
    threshold: float
    left: "Leaf | Split"
    right: "Leaf | Split"
    name: str | None = None


Node = Leaf | Split


def predict_node(node: Node, x) -> Leaf:
    while isinstance(node, Split):
        node = node.left if x[node.feature] >= node.threshold else node.right
    return node


def predict_proba(node: Node, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.array([predict_node(node, x).probs for x in X])


def predict(node: Node, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.array([predict_node(node, x).label for x in X], dtype=np.int64)


def count_internal(node: Node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + count_internal(node.left) + count_internal(node.right)


def count_leaves(node: Node) -> int:
    if isinstance(node, Leaf):
        return 1
    return count_leaves(node.left) + count_leaves(node.right)


def count_nodes(node: Node) -> int:
    return count_internal(node) + count_leaves(node)


def depth(node: Node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(depth(node.left), depth(node.right))


def iter_splits(node: Node):
    if isinstance(node, Split):
        yield node
        yield from iter_splits(node.left)
        yield from iter_splits(node.right)
