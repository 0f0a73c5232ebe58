"""Greedy versus gradient-trained trees on the fixed 20-row Titanic table."""
from __future__ import annotations

import numpy as np

from .cart import cart_fit, split_gain
from .data import TabularPreprocessor, titanic20
from .ensemble import GrandeConfig, ensemble_forward, train_ensemble
from .model_io import prune_unvisited, to_vanilla
from .optim import TrainConfig, train_tree
from .reference import ROOT_SPLITS
from .tree import DenseTree, leaf_assignment, tree_forward
from .vanilla import Leaf, count_internal
from .vanilla import predict_proba as vanilla_proba


def titanic_inputs():
    """``(dataset, raw matrix for CART, quantile matrix, preprocessor)``."""
    ds = titanic20()
    X_raw = TabularPreprocessor(ds.columns, quantile=False).fit_transform(ds.X, ds.y)
    pre = TabularPreprocessor(ds.columns)
    Xq = pre.fit_transform(ds.X, ds.y)
    return ds, X_raw, Xq, pre


def accuracy(probs, y):
    return float(np.mean(np.argmax(probs, axis=1) == y))


def gini_table(ds):
    rows = []
    for label, feature, threshold, ref_gini, ref_info in ROOT_SPLITS:
        g = round(split_gain(ds.X[:, feature], ds.y, threshold, ds.c, "gini"), 3)
        h = round(split_gain(ds.X[:, feature], ds.y, threshold, ds.c, "entropy"), 3)
        rows.append({"split": label, "gini_gain": g, "reference": ref_gini,
                     "diff": round(g - ref_gini, 3), "info_gain": h,
                     "info_reference": ref_info, "info_diff": round(h - ref_info, 3)})
    return rows


def cart_runs(ds, X_raw, names):
    rows = []
    for criterion in ("gini", "entropy"):
        root = cart_fit(X_raw, ds.y, 3, criterion, n_classes=ds.c, feature_names=names)
        rows.append({
            "learner": f"CART ({criterion}, d=3)",
            "train_accuracy": accuracy(vanilla_proba(root, X_raw), ds.y),
            "internal_nodes": count_internal(root),
            "root": None if isinstance(root, Leaf) else f"{root.name} >= {root.threshold:g}",
            "tree": root,
        })
    return rows


def gradtree_restarts(ds, Xq, names, seed=42, restarts=10, threads=1):
    """Train-set accuracy and pruned size of every restart.

    Validation reuses the training rows: holding out part of 20 rows makes a
    perfect training fit depend on which rows were held out.
    """
    cfg = TrainConfig(depth=3, restarts=restarts, validation_fraction=0.0, seed=seed,
                      threads=threads)
    tree, report = train_tree(Xq, ds.y, cfg, ds.c)
    accs, sizes, pruned = [], [], []
    for r in report.results:
        t = DenseTree(3, tree.n_features, ds.c, r.params["I"], r.params["T"], r.params["L"])
        accs.append(accuracy(tree_forward(t, Xq, cfg.activation)[0], ds.y))
        counts = np.bincount(leaf_assignment(t, Xq), minlength=t.n_leaves)
        node = prune_unvisited(to_vanilla(t, feature_names=names), counts)
        pruned.append(node)
        sizes.append(count_internal(node))
    # best restart: highest accuracy, ties to the lower validation loss
    best = min(range(len(accs)), key=lambda i: (-accs[i], report.results[i].valid_loss))
    return {"accuracy": accs, "internal_nodes": sizes, "selected": report.chosen_restart,
            "best": best, "pruned": pruned, "tree": tree}


def run(seed=42, restarts=10, estimators=8, threads=1):
    ds, X_raw, Xq, pre = titanic_inputs()
    names = list(pre.get_feature_names_out())
    rows = cart_runs(ds, X_raw, names)
    gt = gradtree_restarts(ds, Xq, names, seed, restarts, threads)
    accs, sizes = gt["accuracy"], gt["internal_nodes"]
    rows.append({"learner": f"GradTree (d=3, selected of {restarts} restarts)",
                 "train_accuracy": accs[gt["selected"]],
                 "internal_nodes": sizes[gt["selected"]], "root": None})
    rows.append({"learner": f"GradTree (d=3, best of {restarts} restarts)",
                 "train_accuracy": accs[gt["best"]], "internal_nodes": sizes[gt["best"]],
                 "root": None})
    rows.append({"learner": f"GradTree (d=3, median of {restarts} restarts)",
                 "train_accuracy": float(np.median(accs)), "internal_nodes": None, "root": None})

    gcfg = GrandeConfig(depth=3, n_estimators=estimators, validation_fraction=0.0, seed=seed,
                        threads=threads)
    ens, _ = train_ensemble(Xq, ds.y, gcfg, ds.c)
    rows.append({"learner": f"GRANDE (E={estimators}, d=3)",
                 "train_accuracy": accuracy(ensemble_forward(ens, Xq, gcfg.activation)[0], ds.y),
                 "internal_nodes": None, "root": None})
    for r in rows:
        r.pop("tree", None)
    return {"seed": seed, "learners": rows, "gradtree_restart_accuracy": accs,
            "gradtree_restart_internal_nodes": sizes,
            "gradtree_selected_restart": gt["selected"], "gradtree_best_restart": gt["best"],
            "root_splits": gini_table(ds)}


def render(result):
    lines = [f"{'learner':<42} {'train acc':>9} {'splits':>6}  root"]
    for r in result["learners"]:
        nodes = "" if r["internal_nodes"] is None else str(r["internal_nodes"])
        lines.append(f"{r['learner']:<42} {r['train_accuracy']:>9.2f} {nodes:>6}  {r['root'] or ''}")
    lines += ["", f"{'root split':<16} {'gini':>6} {'ref':>6} {'diff':>6} {'info':>6} {'ref':>6} {'diff':>6}"]
    for r in result["root_splits"]:
        lines.append(f"{r['split']:<16} {r['gini_gain']:>6.3f} {r['reference']:>6.3f} {r['diff']:>6.3f}"
                     f" {r['info_gain']:>6.3f} {r['info_reference']:>6.3f} {r['info_diff']:>6.3f}")
    return "\n".join(lines) + "\n"
