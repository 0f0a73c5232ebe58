import json

import numpy as np
import pydot
import pytest

from gradtree.data import TabularPreprocessor, titanic20
from gradtree.ensemble import Ensemble
from gradtree.estimators import GradTreeClassifier
from gradtree.model_io import (
    FORMAT,
    ModelFormatError,
    export_dot,
    load_model,
    model_from_json,
    model_to_json,
    prune,
    prune_unvisited,
    save_model,
    to_vanilla,
)
from gradtree.tree import DenseTree, init_tree, leaf_assignment, tree_forward
from gradtree.vanilla import Leaf, Split, count_internal, count_nodes, predict, predict_node, predict_proba


def same_tree(a, b):
    if isinstance(a, Leaf) or isinstance(b, Leaf):
        return (isinstance(a, Leaf) and isinstance(b, Leaf) and a.label == b.label
                and np.array_equal(a.probs, b.probs))
    return ((a.feature, a.threshold, a.name) == (b.feature, b.threshold, b.name)
            and same_tree(a.left, b.left) and same_tree(a.right, b.right))


def random_tree(rng, d, n, c):
    tree = init_tree(d, n, c, rng)
    tree.I = rng.normal(scale=3, size=tree.I.shape)
    tree.T = rng.normal(size=tree.T.shape)
    tree.L = rng.normal(scale=2, size=tree.L.shape)
    return tree


def test_d1_conversion_example():
    tree = DenseTree(1, 1, 2, [[10.0]], [[0.0]], [[2.0, 0.0], [0.0, 2.0]])
    root = to_vanilla(tree)
    assert (root.feature, root.threshold) == (0, 0.0)
    assert np.allclose(root.left.probs, [0.8808, 0.1192], atol=1e-4)
    assert np.allclose(root.right.probs, [0.1192, 0.8808], atol=1e-4)


def test_equal_index_logits_pick_feature_zero():
    tree = DenseTree(1, 3, 2, np.zeros((1, 3)), [[0.5, 0.1, 0.2]], np.zeros((2, 2)))
    assert to_vanilla(tree).feature == 0


def test_vanilla_equals_dense_forward():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d, n, c = int(rng.integers(1, 5)), int(rng.integers(1, 7)), int(rng.integers(2, 4))
        tree = random_tree(rng, d, n, c)
        X = rng.normal(size=(100, n))
        # include exact ties on the hardmax-selected thresholds
        root = to_vanilla(tree)
        X[0, root.feature] = root.threshold
        dense, trace = tree_forward(tree, X)
        assert np.array_equal(predict_proba(root, X), dense)
        leaves = np.argmax(trace.indicator, axis=1)
        assert np.array_equal(leaves, leaf_assignment(tree, X))


def test_prune_examples():
    leaf_a, leaf_b, leaf_c = Leaf([1.0, 0.0]), Leaf([0.0, 1.0]), Leaf([0.5, 0.5])
    tree = Split(0, 0.0, Split(1, 1.0, leaf_a, leaf_b), leaf_c)
    X = np.array([[1.0, 2.0], [1.0, 0.0]])  # every sample goes left at the root
    pruned = prune(tree, X)
    assert same_tree(pruned, tree.left)
    X2 = np.array([[1.0, 2.0], [1.0, 0.0], [-1.0, 0.0]])
    assert same_tree(prune(tree, X2), tree)
    with pytest.raises(ValueError):
        prune(tree, np.empty((0, 2)))


def test_prune_contract_and_leaf_count_variant():
    rng = np.random.default_rng(1)
    for _ in range(200):
        d, n = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        tree = random_tree(rng, d, n, 2)
        X = rng.normal(size=(int(rng.integers(1, 12)), n))
        full = to_vanilla(tree)
        pruned = prune(full, X)
        assert np.array_equal(predict_proba(pruned, X), predict_proba(full, X))
        assert count_nodes(pruned) <= count_nodes(full)
        counts = np.bincount(leaf_assignment(tree, X), minlength=2**d)
        assert same_tree(prune_unvisited(full, counts), pruned)
    with pytest.raises(ValueError):
        prune_unvisited(Split(0, 0.0, Leaf([1.0]), Leaf([1.0])), [1])


def test_titanic_gradtree_prunes_below_full_size():
    ds = titanic20()
    X = TabularPreprocessor(ds.columns).fit_transform(ds.X, ds.y)
    clf = GradTreeClassifier(restarts=1, validation_fraction=0.0).fit(X, ds.y)
    full = clf.to_vanilla(pruned=False)
    pruned = clf.to_vanilla()
    assert count_internal(full) == 7
    assert count_internal(pruned) < 15
    assert np.array_equal(predict(pruned, X), clf.predict(X))


def parse_dot(text):
    graphs = pydot.graph_from_dot_data(text)
    assert graphs is not None and len(graphs) == 1
    g = graphs[0]
    nodes = [nd for nd in g.get_nodes() if nd.get_name() not in ("node", "edge", "graph")]
    return g, nodes, g.get_edges()


def test_dot_shapes():
    _, nodes, edges = parse_dot(export_dot(Leaf([0.2, 0.8])))
    assert len(nodes) == 1 and len(edges) == 0
    tree = DenseTree(1, 1, 2, [[10.0]], [[0.0]], [[2.0, 0.0], [0.0, 2.0]])
    text = export_dot(to_vanilla(tree), ["Age"], ["No", "Yes"])
    _, nodes, edges = parse_dot(text)
    assert len(nodes) == 3 and len(edges) == 2
    assert "Age ≥ 0" in text
    assert [e.get("label") for e in edges] == ['"True"', '"False"']


def test_dot_escapes_names():
    root = Split(0, 1.5, Leaf([1.0, 0.0]), Leaf([0.0, 1.0]), name='a "quoted" \\ name')
    _, nodes, _ = parse_dot(export_dot(root))
    assert len(nodes) == 3


def test_dot_random_trees_parse():
    rng = np.random.default_rng(2)
    for _ in range(20):
        d = int(rng.integers(1, 5))
        root = to_vanilla(random_tree(rng, d, 3, 3))
        _, nodes, edges = parse_dot(export_dot(root, threshold_display=lambda f, t: t * 10))
        assert len(nodes) == count_nodes(root) and len(edges) == count_nodes(root) - 1


def test_dense_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    tree = random_tree(rng, 3, 4, 3)
    tree.T[0, 0] = 0.1 + 0.2  # not a short decimal
    path = tmp_path / "m.json"
    save_model(path, tree, metadata={"seed": 1})
    back = load_model(path)
    assert back.kind == "dense" and back.metadata == {"seed": 1}
    for k in ("I", "T", "L"):
        assert np.array_equal(getattr(back.model, k), getattr(tree, k))
    X = rng.normal(size=(1000, 4))
    assert np.array_equal(tree_forward(back.model, X)[0], tree_forward(tree, X)[0])
    assert model_to_json(back.model, metadata={"seed": 1}) == path.read_text()


def test_vanilla_and_ensemble_round_trip():
    rng = np.random.default_rng(4)
    root = to_vanilla(random_tree(rng, 2, 2, 2), feature_names=["a", "b"])
    back = model_from_json(model_to_json(root)).model
    assert same_tree(back, root)
    ens = Ensemble(rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 2)),
                   rng.normal(size=(2, 4, 2)), rng.normal(size=(2, 4)),
                   np.array([[True, False], [True, True]]))
    got = model_from_json(model_to_json(ens)).model
    for k in ("I", "T", "L", "W", "feature_masks"):
        assert np.array_equal(getattr(got, k), getattr(ens, k))


def test_load_errors(tmp_path):
    text = model_to_json(init_tree(2, 2, 2, np.random.default_rng(5)))
    with pytest.raises(ModelFormatError):
        model_from_json(text[: len(text) // 2])
    doc = json.loads(text)
    doc["format"] = "other-v9"
    with pytest.raises(ModelFormatError):
        model_from_json(json.dumps(doc))
    doc = json.loads(text)
    doc["kind"] = "forest"
    with pytest.raises(ModelFormatError):
        model_from_json(json.dumps(doc))
    doc = json.loads(text)
    doc["parameters"]["I"] = [[1.0]]
    with pytest.raises(ModelFormatError):
        model_from_json(json.dumps(doc))
    doc = json.loads(text)
    del doc["parameters"]["L"]
    with pytest.raises(ModelFormatError):
        model_from_json(json.dumps(doc))
    assert json.loads(text)["format"] == FORMAT


def test_predict_node_convention():
    root = Split(0, 2.0, Leaf([1.0, 0.0]), Leaf([0.0, 1.0]))
    assert predict_node(root, [2.0]).label == 0
    assert predict_node(root, [1.999]).label == 1
