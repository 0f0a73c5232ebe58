"""Hand-derived reverse pass through :func:`gradtree.tree.tree_forward`.

Hardmax and rounding are treated as identity in the backward direction
(straight-through); every other step uses its exact derivative evaluated at
the cached forward values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import DenseTree, ForwardTrace, activation_grad, path_tables


@dataclass
class TreeGradients:
    dI: np.ndarray
    dT: np.ndarray
    dL: np.ndarray

    def __add__(self, other):
        return TreeGradients(self.dI + other.dI, self.dT + other.dT, self.dL + other.dL)

    def as_dict(self):
        return {"I": self.dI, "T": self.dT, "L": self.dL}


def entmax_jvp(p, v, axis=-1):
    """Jacobian-vector product of 1.5-entmax at output ``p``.

    The Jacobian is symmetric, so this is also the vector-Jacobian product.
    """
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    g = np.sqrt(p)
    gv = g * v
    q = gv.sum(axis=axis, keepdims=True) / g.sum(axis=axis, keepdims=True)
    return gv - q * g


entmax_jacobian_vector_product = entmax_jvp


def softmax_backward(p, grad_p):
    """Gradient w.r.t. logits given the gradient w.r.t. softmax output ``p``."""
    return p * (grad_p - (p * grad_p).sum(axis=-1, keepdims=True))


def _exclusive_products(terms):
    """prod over the last axis excluding each position, without division."""
    d = terms.shape[-1]
    left = np.ones_like(terms)
    right = np.ones_like(terms)
    for j in range(1, d):
        left[..., j] = left[..., j - 1] * terms[..., j - 1]
        right[..., d - 1 - j] = right[..., d - j] * terms[..., d - j]
    return left * right


def backward(
    trace: ForwardTrace,
    tree: DenseTree,
    grad_logits,
    grad_indicator=None,
) -> TreeGradients:
    """Gradients w.r.t. (I, T, L).

    ``grad_logits`` is the upstream gradient w.r.t. the pre-softmax leaf sum,
    shape (batch, c). ``grad_indicator`` optionally adds a direct upstream
    gradient w.r.t. the leaf indicators (used by ensemble leaf weights).
    """
    G = np.asarray(grad_logits, dtype=np.float64)
    batch = trace.X.shape[0]
    if G.shape != (batch, tree.n_classes):
        raise ValueError(f"grad_logits has shape {G.shape}, expected {(batch, tree.n_classes)}")
    if trace.selector.shape != tree.I.shape or trace.indicator.shape[1] != tree.n_leaves:
        raise ValueError("trace does not belong to this tree")

    dL = trace.indicator.T @ G
    d_ind = G @ tree.L.T
    if grad_indicator is not None:
        d_ind = d_ind + grad_indicator

    nodes, sides = path_tables(tree.depth)
    d_terms = d_ind[:, :, None] * _exclusive_products(trace.terms)
    d_terms = np.where(sides[None], -d_terms, d_terms)
    d_split = np.zeros((batch, tree.n_nodes))
    for j in range(tree.depth):
        np.add.at(d_split, (slice(None), nodes[:, j]), d_terms[:, :, j])

    # straight-through: rounding passes the gradient to the soft activation
    dz = d_split * activation_grad(trace.preact, trace.act)
    dz_sum = dz.sum(axis=0)  # (nodes,)
    # z[b,k] = sum_i sel[k,i] * (x[b,i] - T[k,i])
    d_sel = dz.T @ trace.X - dz_sum[:, None] * tree.T
    # thresholds get the gradient of the entmax-weighted product: with the
    # hardmax treated as identity, every supported column moves, not only
    # the selected one
    dT = -dz_sum[:, None] * trace.selector_probs
    # straight-through: hardmax passes the gradient to the entmax output
    dI = entmax_jvp(trace.selector_probs, d_sel, axis=1)
    if trace.feature_mask is not None:
        dI = np.where(trace.feature_mask[None, :], dI, 0.0)
    return TreeGradients(dI=dI, dT=dT, dL=dL)
