"""Shared oracles for the test suite."""
import numpy as np

from gradtree.backward import backward
from gradtree.ensemble import Ensemble, ensemble_backward, ensemble_pass
from gradtree.optim import cross_entropy_loss
from gradtree.tree import DenseTree, ForwardMode, SplitActivation, init_tree, tree_forward

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-8


def grad_error(analytic, numeric):
    """Largest violation ratio of |a - f| <= max(REL_TOL * max(|a|, |f|), ABS_FLOOR).

    Values <= 1 pass.
    """
    a, f = np.ravel(analytic), np.ravel(numeric)
    allowed = np.maximum(REL_TOL * np.maximum(np.abs(a), np.abs(f)), ABS_FLOOR)
    return float(np.max(np.abs(a - f) / allowed)) if a.size else 0.0


def central_difference(loss_fn, params, name):
    out = np.zeros_like(params[name])
    it = np.nditer(params[name], flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = params[name][idx]
        params[name][idx] = orig + FD_STEP
        up = loss_fn(params)
        params[name][idx] = orig - FD_STEP
        down = loss_fn(params)
        params[name][idx] = orig
        out[idx] = (up - down) / (2 * FD_STEP)
    return out


def random_soft_case(rng, d_max=3, n_max=5, c_max=3, batch_max=8):
    d = int(rng.integers(1, d_max + 1))
    n = int(rng.integers(1, n_max + 1))
    c = int(rng.integers(2, c_max + 1))
    b = int(rng.integers(1, batch_max + 1))
    tree = init_tree(d, n, c, rng)
    # spread the index logits so several entmax supports are partial
    tree.I *= rng.uniform(1, 8)
    X = rng.normal(size=(b, n))
    y = rng.integers(0, c, size=b)
    act = SplitActivation(rng.choice([a.value for a in SplitActivation]))
    return tree, X, y, act


def tree_fd_check(tree, X, y, act, loss_cfg=None):
    """Max violation ratio per parameter group for the Soft-mode loss."""
    d, n, c = tree.depth, tree.n_features, tree.n_classes

    def loss_fn(p):
        t = DenseTree(d, n, c, p["I"], p["T"], p["L"])
        probs, _ = tree_forward(t, X, act, ForwardMode.SOFT)
        return cross_entropy_loss(probs, y, loss_cfg)[0]

    probs, trace = tree_forward(tree, X, act, ForwardMode.SOFT)
    _, g = cross_entropy_loss(probs, y, loss_cfg)
    grads = backward(trace, tree, g).as_dict()
    params = {k: v.copy() for k, v in tree.params().items()}
    return {k: grad_error(grads[k], central_difference(loss_fn, params, k)) for k in params}


def ensemble_fd_check(ens, X, y, act, active=None):
    masks = ens.feature_masks

    def loss_fn(p):
        e = Ensemble(p["I"], p["T"], p["L"], p["W"], masks)
        tr = ensemble_pass(e, X, act, ForwardMode.SOFT, active)
        return cross_entropy_loss(tr.probs, y, wrt="probs")[0]

    tr = ensemble_pass(ens, X, act, ForwardMode.SOFT, active)
    _, g = cross_entropy_loss(tr.probs, y, wrt="probs")
    grads = ensemble_backward(tr, ens, g)
    params = {k: v.copy() for k, v in ens.params().items()}
    return {k: grad_error(grads[k], central_difference(loss_fn, params, k)) for k in params}
