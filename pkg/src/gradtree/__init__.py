"""Gradient-trained hard axis-aligned decision trees, GRANDE ensembles and CART."""

from .cart import cart_fit, entropy, entropy_gain, gini_decrease, gini_impurity, split_gain
from .data import Dataset, TabularPreprocessor, generate_titanic, load_csv, titanic20
from .ensemble import Ensemble, GrandeConfig, ensemble_forward, train_ensemble
from .estimators import CartClassifier, GradTreeClassifier, GrandeClassifier
from .model_io import export_dot, load_model, prune, save_model, to_vanilla
from .optim import TrainConfig, train_tree
from .tree import DenseTree, ForwardMode, SplitActivation, entmax15, tree_forward

__version__ = "0.1.0"

__all__ = [
    "CartClassifier", "Dataset", "DenseTree", "Ensemble", "ForwardMode", "GradTreeClassifier",
    "GrandeClassifier", "GrandeConfig", "SplitActivation", "TabularPreprocessor", "TrainConfig",
    "cart_fit", "ensemble_forward", "entmax15", "entropy", "entropy_gain", "export_dot",
    "generate_titanic", "gini_decrease", "gini_impurity", "load_csv", "load_model", "prune",
    "save_model", "split_gain", "titanic20", "to_vanilla", "train_ensemble", "train_tree",
    "tree_forward",
]
