"""scikit-learn compatible wrappers around the tree learners."""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .cart import cart_fit
from .ensemble import GrandeConfig, ensemble_forward, train_ensemble
from .model_io import prune_unvisited, to_vanilla
from .optim import TrainConfig, train_tree
from .tree import leaf_assignment, tree_forward
from .vanilla import predict_proba as vanilla_proba


def _config(cls, est):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in est.get_params().items() if k in names})


class _Base(ClassifierMixin, BaseEstimator):
    def _encode(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self._le = LabelEncoder().fit(y)
        self.classes_ = self._le.classes_
        self.n_features_in_ = X.shape[1]
        return X, self._le.transform(y).astype(np.int64)

    def _check(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class GradTreeClassifier(_Base):
    """A single hard axis-aligned tree trained by gradient descent."""

    def __init__(self, depth=3, epochs=1000, batch_size=64, patience=200, restarts=3,
                 lr_index=0.01, lr_values=0.01, lr_leaf=0.05, activation="sigmoid",
                 swa_checkpoints=5, schedule="constant", validation_fraction=0.2,
                 weight_decay=0.0, focal_factor=0.0, class_weights=None, seed=42, threads=1):
        self.depth = depth
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.restarts = restarts
        self.lr_index = lr_index
        self.lr_values = lr_values
        self.lr_leaf = lr_leaf
        self.activation = activation
        self.swa_checkpoints = swa_checkpoints
        self.schedule = schedule
        self.validation_fraction = validation_fraction
        self.weight_decay = weight_decay
        self.focal_factor = focal_factor
        self.class_weights = class_weights
        self.seed = seed
        self.threads = threads

    def fit(self, X, y):
        X, yc = self._encode(X, y)
        self.config_ = _config(TrainConfig, self)
        self.tree_, self.report_ = train_tree(X, yc, self.config_, len(self.classes_))
        leaves = leaf_assignment(self.tree_, X)
        self.leaf_counts_ = np.bincount(leaves, minlength=self.tree_.n_leaves)
        return self

    def predict_proba(self, X):
        X = self._check(X)
        return tree_forward(self.tree_, X, self.config_.activation)[0]

    def to_vanilla(self, feature_names=None, pruned=True):
        check_is_fitted(self, "tree_")
        node = to_vanilla(self.tree_, feature_names=feature_names)
        return prune_unvisited(node, self.leaf_counts_) if pruned else node


class GrandeClassifier(_Base):
    """Jointly trained ensemble of hard trees with instance-wise leaf weights."""

    def __init__(self, n_estimators=16, depth=3, epochs=1000, batch_size=64, patience=25,
                 restarts=3, lr_index=0.05, lr_values=0.05, lr_leaf=0.1, lr_weights=0.01,
                 activation="softsign", dropout=0.0, feature_fraction=1.0,
                 sample_fraction=1.0, bootstrap=False, validation_fraction=0.2,
                 weight_decay=0.0, focal_factor=0.0, class_weights=None, seed=42, threads=1):
        self.n_estimators = n_estimators
        self.depth = depth
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.restarts = restarts
        self.lr_index = lr_index
        self.lr_values = lr_values
        self.lr_leaf = lr_leaf
        self.lr_weights = lr_weights
        self.activation = activation
        self.dropout = dropout
        self.feature_fraction = feature_fraction
        self.sample_fraction = sample_fraction
        self.bootstrap = bootstrap
        self.validation_fraction = validation_fraction
        self.weight_decay = weight_decay
        self.focal_factor = focal_factor
        self.class_weights = class_weights
        self.seed = seed
        self.threads = threads

    def fit(self, X, y):
        X, yc = self._encode(X, y)
        self.config_ = _config(GrandeConfig, self)
        self.ensemble_, self.report_ = train_ensemble(X, yc, self.config_, len(self.classes_))
        return self

    def predict_proba(self, X):
        X = self._check(X)
        return ensemble_forward(self.ensemble_, X, self.config_.activation)[0]

    def estimator_weights(self, X):
        """Post-softmax weight of every estimator for every sample."""
        X = self._check(X)
        return ensemble_forward(self.ensemble_, X, self.config_.activation)[1]


class CartClassifier(_Base):
    """Greedy CART baseline (``x >= threshold`` goes left)."""

    def __init__(self, max_depth=3, criterion="gini", min_samples=2):
        self.max_depth = max_depth
        self.criterion = criterion
        self.min_samples = min_samples

    def fit(self, X, y, feature_names=None):
        X, yc = self._encode(X, y)
        self.tree_ = cart_fit(X, yc, self.max_depth, self.criterion, self.min_samples,
                              len(self.classes_), feature_names)
        return self

    def predict_proba(self, X):
        X = self._check(X)
        return vanilla_proba(self.tree_, X)
