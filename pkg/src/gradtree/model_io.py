"""Dense-to-vanilla conversion, post-hoc pruning, DOT export and JSON models."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tree import DenseTree, softmax, split_features
from .vanilla import Leaf, Node, Split

FORMAT = "gradtree-v1"
KINDS = ("dense", "vanilla", "ensemble")


class ModelFormatError(ValueError):
    pass


# --- conversion and pruning ------------------------------------------------


def to_vanilla(tree: DenseTree, feature_mask=None, feature_names=None) -> Node:
    """Equivalent recursive tree: hardmax feature, its threshold, softmax leaves."""
    feats, thresholds = split_features(tree, feature_mask)
    leaf_probs = softmax(tree.L, axis=1)
    first_leaf = tree.n_nodes

    def build(k):
        if k >= first_leaf:
            return Leaf(leaf_probs[k - first_leaf])
        j = int(feats[k])
        name = feature_names[j] if feature_names is not None else None
        return Split(j, float(thresholds[k]), build(2 * k + 1), build(2 * k + 2), name)

    return build(0)


def prune(node: Node, X_train) -> Node:
    """Splice out every subtree that receives no training sample."""
    X_train = np.atleast_2d(np.asarray(X_train, dtype=np.float64))
    if X_train.shape[0] == 0:
        raise ValueError("pruning needs at least one training sample")

    def walk(nd, X):
        if isinstance(nd, Leaf):
            return nd
        go_left = X[:, nd.feature] >= nd.threshold
        if not go_left.any():
            return walk(nd.right, X)
        if go_left.all():
            return walk(nd.left, X)
        return Split(nd.feature, nd.threshold, walk(nd.left, X[go_left]),
                     walk(nd.right, X[~go_left]), nd.name)

    return walk(node, X_train)


def prune_unvisited(node: Node, leaf_counts) -> Node:
    """Same result as :func:`prune`, from training counts per leaf (left to right)."""
    counts = iter(np.asarray(leaf_counts).tolist())

    def walk(nd):
        # returns (pruned subtree, samples reaching it)
        if isinstance(nd, Leaf):
            try:
                return nd, next(counts)
            except StopIteration:
                raise ValueError("fewer leaf counts than leaves") from None
        left, n_left = walk(nd.left)
        right, n_right = walk(nd.right)
        if n_left == 0:
            return right, n_right
        if n_right == 0:
            return left, n_left
        return Split(nd.feature, nd.threshold, left, right, nd.name), n_left + n_right

    out, total = walk(node)
    if next(counts, None) is not None:
        raise ValueError("more leaf counts than leaves")
    if total == 0:
        raise ValueError("pruning needs at least one training sample")
    return out


# --- DOT -------------------------------------------------------------------


def _quote(text):
    return '"' + str(text).replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(node: Node, feature_names=None, class_names=None, threshold_display=None,
               graph_name="tree") -> str:
    """Graphviz digraph; internal nodes read "name ≥ τ", True edges go left."""
    lines = [f"digraph {graph_name} {{", "  node [shape=box];"]
    counter = [0]

    def fname(nd):
        if nd.name is not None:
            return nd.name
        if feature_names is not None:
            return feature_names[nd.feature]
        return f"x{nd.feature}"

    def visit(nd):
        ident = f"n{counter[0]}"
        counter[0] += 1
        if isinstance(nd, Leaf):
            label = class_names[nd.label] if class_names is not None else str(nd.label)
            prob = nd.probs[nd.label]
            lines.append(f"  {ident} [label={_quote(f'{label} (p={prob:.3f})')}, shape=ellipse];")
            return ident
        tau = nd.threshold if threshold_display is None else threshold_display(nd.feature, nd.threshold)
        lines.append(f"  {ident} [label={_quote(f'{fname(nd)} ≥ {tau:.4g}')}];")
        left = visit(nd.left)
        lines.append(f'  {ident} -> {left} [label="True"];')
        right = visit(nd.right)
        lines.append(f'  {ident} -> {right} [label="False"];')
        return ident

    visit(node)
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- JSON ------------------------------------------------------------------


def node_to_dict(node: Node):
    if isinstance(node, Leaf):
        out = {"probs": node.probs.tolist(), "label": int(node.label)}
        if node.counts is not None:
            out["counts"] = np.asarray(node.counts).tolist()
        return out
    return {"feature": int(node.feature), "threshold": float(node.threshold), "name": node.name,
            "left": node_to_dict(node.left), "right": node_to_dict(node.right)}


def node_from_dict(d) -> Node:
    if "probs" in d:
        probs = _finite_array(d["probs"], "leaf probs")
        counts = d.get("counts")
        return Leaf(probs, int(d["label"]), None if counts is None else np.asarray(counts, float))
    return Split(int(d["feature"]), _finite_float(d["threshold"]),
                 node_from_dict(d["left"]), node_from_dict(d["right"]), d.get("name"))


def _finite_float(v):
    v = float(v)
    if not math.isfinite(v):
        raise ModelFormatError("non-finite value in model file")
    return v


def _finite_array(v, what, shape=None):
    try:
        arr = np.asarray(v, dtype=np.float64)
    except (TypeError, ValueError):
        raise ModelFormatError(f"{what}: not a numeric array") from None
    if shape is not None and arr.shape != tuple(shape):
        raise ModelFormatError(f"{what}: shape {arr.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"{what}: non-finite values")
    return arr


@dataclass
class SavedModel:
    kind: str
    model: object
    preprocessor: dict | None = None
    metadata: dict = field(default_factory=dict)


def _encode(kind, model):
    from .ensemble import Ensemble

    if kind == "dense":
        dims = {"depth": model.depth, "n_features": model.n_features, "n_classes": model.n_classes}
        params = {"I": model.I.tolist(), "T": model.T.tolist(), "L": model.L.tolist()}
    elif kind == "vanilla":
        dims = {}
        params = {"root": node_to_dict(model)}
    else:
        assert isinstance(model, Ensemble)
        dims = {"n_estimators": model.n_estimators, "depth": model.depth,
                "n_features": model.n_features, "n_classes": model.n_classes}
        params = {"I": model.I.tolist(), "T": model.T.tolist(), "L": model.L.tolist(),
                  "W": model.W.tolist(), "feature_masks": model.feature_masks.astype(int).tolist()}
    return dims, params


def _kind_of(model):
    from .ensemble import Ensemble

    if isinstance(model, DenseTree):
        return "dense"
    if isinstance(model, Ensemble):
        return "ensemble"
    if isinstance(model, (Leaf, Split)):
        return "vanilla"
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_to_json(model, preprocessor=None, metadata=None) -> str:
    kind = _kind_of(model)
    dims, params = _encode(kind, model)
    doc = {
        "format": FORMAT,
        "kind": kind,
        "dims": dims,
        "parameters": params,
        "preprocessor": preprocessor,
        "metadata": metadata or {},
    }
    # repr-based float output is the shortest string that reads back bit-exact
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_model(path, model, preprocessor=None, metadata=None):
    Path(path).write_text(model_to_json(model, preprocessor, metadata), encoding="utf-8")


def model_from_json(text) -> SavedModel:
    from .ensemble import Ensemble

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ModelFormatError(f"unsupported model format {doc.get('format') if isinstance(doc, dict) else doc!r}")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    try:
        dims, params = doc["dims"], doc["parameters"]
        if kind == "dense":
            d, n, c = dims["depth"], dims["n_features"], dims["n_classes"]
            model = DenseTree(
                d, n, c,
                _finite_array(params["I"], "I", (2**d - 1, n)),
                _finite_array(params["T"], "T", (2**d - 1, n)),
                _finite_array(params["L"], "L", (2**d, c)),
            )
        elif kind == "vanilla":
            model = node_from_dict(params["root"])
        else:
            E, d, n, c = dims["n_estimators"], dims["depth"], dims["n_features"], dims["n_classes"]
            model = Ensemble(
                I=_finite_array(params["I"], "I", (E, 2**d - 1, n)),
                T=_finite_array(params["T"], "T", (E, 2**d - 1, n)),
                L=_finite_array(params["L"], "L", (E, 2**d, c)),
                W=_finite_array(params["W"], "W", (E, 2**d)),
                feature_masks=np.asarray(params["feature_masks"], dtype=bool),
            )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model file: missing {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(str(exc)) from None
    return SavedModel(kind, model, doc.get("preprocessor"), doc.get("metadata") or {})


def load_model(path) -> SavedModel:
    return model_from_json(Path(path).read_text(encoding="utf-8"))
