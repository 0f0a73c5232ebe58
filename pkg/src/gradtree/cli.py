"""Command-line entry point: ``gradtree {train,eval,predict,export,gen,bench-titanic}``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score

from . import bench
from .cart import cart_fit
from .data import (
    TITANIC_VERSIONS,
    Column,
    DataError,
    TabularPreprocessor,
    dataset_to_csv,
    features_from_csv,
    generate_titanic,
    load_csv,
    titanic20,
)
from .ensemble import Ensemble, GrandeConfig, ensemble_forward, train_ensemble
from .model_io import ModelFormatError, export_dot, load_model, model_to_json, prune_unvisited, to_vanilla
from .optim import ConfigurationError, TrainConfig, train_tree
from .tree import DenseTree, leaf_assignment, tree_forward
from .vanilla import count_internal
from .vanilla import predict_proba as vanilla_proba

LEARNERS = ("gradtree", "grande", "cart")
CART_KEYS = ("max_depth", "criterion", "min_samples")


class UsageError(Exception):
    """Bad flags or flag combinations (exit code 2)."""


# --- helpers ---------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, allow_nan=False)


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _threads(value):
    if value is None:
        env = os.environ.get("GRADTREE_THREADS")
        if env is not None:
            try:
                value = int(env)
            except ValueError:
                raise UsageError(f"GRADTREE_THREADS must be an integer, got {env!r}") from None
        else:
            value = os.cpu_count() or 1
    if value < 1:
        raise UsageError("--threads must be >= 1")
    return value


def _read_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _split_list(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _public_config(cfg):
    # thread count never changes results, keep it out of reproducible outputs
    return {k: v for k, v in cfg.items() if k != "threads"}


def build_config(args):
    """Learner configuration from flags, overridden by an optional config file."""
    model = args.model
    if model == "cart":
        for flag in ("estimators", "activation", "focal", "restarts", "epochs",
                     "validation_fraction"):
            if getattr(args, flag) is not None:
                raise UsageError(f"--{flag.replace('_', '-')} cannot be used with --model cart")
        values = {"max_depth": 3, "criterion": "gini", "min_samples": 2}
        if args.depth is not None:
            values["max_depth"] = args.depth
        if args.criterion is not None:
            values["criterion"] = args.criterion
        extra = _read_config(args.config)
        unknown = sorted(set(extra) - set(CART_KEYS))
        if unknown:
            raise UsageError(f"unknown config keys for cart: {', '.join(unknown)}")
        values.update(extra)
        if values["criterion"] not in ("gini", "entropy"):
            raise UsageError(f"unknown criterion {values['criterion']!r}")
        if not isinstance(values["max_depth"], int) or values["max_depth"] < 0:
            raise UsageError("max_depth must be a non-negative integer")
        return values
    if args.criterion is not None:
        raise UsageError("--criterion only applies to --model cart")
    if model == "gradtree" and args.estimators is not None:
        raise UsageError("--estimators only applies to --model grande")
    cls = GrandeConfig if model == "grande" else TrainConfig
    names = {f.name for f in fields(cls)}
    values = {}
    for flag, key in (("depth", "depth"), ("activation", "activation"), ("focal", "focal_factor"),
                      ("restarts", "restarts"), ("epochs", "epochs"), ("estimators", "n_estimators"),
                      ("validation_fraction", "validation_fraction")):
        if getattr(args, flag) is not None:
            values[key] = getattr(args, flag)
    values["seed"] = args.seed
    extra = _read_config(args.config)
    unknown = sorted(set(extra) - names)
    if unknown:
        raise UsageError(f"unknown config keys for {model}: {', '.join(unknown)}")
    values.update(extra)
    values["threads"] = _threads(args.threads)
    try:
        cfg = cls(**values)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return cfg


def classification_metrics(y_true, y_pred, classes):
    """Accuracy, macro F1, per-class F1 and the confusion matrix."""
    labels = list(range(len(classes)))
    per_class = f1_score(y_true, y_pred, labels=labels, average=None, zero_division=0)
    return {
        "n": int(len(y_true)),
        "accuracy": float(accuracy_score(y_true, y_pred)),
        "macro_f1": float(np.mean(per_class)),
        "per_class_f1": {str(c): float(f) for c, f in zip(classes, per_class)},
        "confusion": confusion_matrix(y_true, y_pred, labels=labels).tolist(),
        "classes": [str(c) for c in classes],
    }


# --- loaded models ---------------------------------------------------------


class LoadedModel:
    def __init__(self, path):
        saved = load_model(path)
        self.kind = saved.kind
        self.model = saved.model
        self.meta = saved.metadata
        if saved.preprocessor is None:
            raise ModelFormatError("model file has no preprocessor state")
        self.pre = TabularPreprocessor.from_state(saved.preprocessor)
        self.columns = [Column.from_dict(d) for d in saved.preprocessor["columns"]]
        self.classes = list(self.meta.get("classes", []))
        self.label_col = self.meta.get("label_col")
        self.activation = self.meta.get("config", {}).get("activation", "sigmoid")

    def transform(self, X):
        Xt = self.pre.transform(X)
        n = self._n_features()
        if n is not None and Xt.shape[1] != n:
            raise DataError(f"model expects {n} features, data gives {Xt.shape[1]}")
        return Xt

    def _n_features(self):
        if self.kind in ("dense", "ensemble"):
            return self.model.n_features
        return None

    def predict_proba(self, Xt):
        return LoadedPredictor(self.model, self.activation).predict_proba(Xt)

    def load_data(self, path, need_labels):
        X, raw = features_from_csv(path, self.columns, self.label_col)
        if not need_labels:
            return X, None
        if raw is None:
            raise DataError(f"{path}: label column {self.label_col!r} missing")
        lookup = {c: k for k, c in enumerate(self.classes)}
        unknown = sorted(set(raw) - set(lookup))
        if unknown:
            raise DataError(f"{path}: labels not seen in training: {unknown}")
        return X, np.array([lookup[v] for v in raw], dtype=np.int64)


# --- subcommands -----------------------------------------------------------


def _fit(model, cfg, Xt, y, n_classes, feature_names):
    """Train one learner; returns (model object, metadata extras, report lines)."""
    if model == "cart":
        root = cart_fit(Xt, y, cfg["max_depth"], cfg["criterion"], cfg["min_samples"],
                        n_classes, feature_names)
        return root, {}, []
    if model == "gradtree":
        tree, report = train_tree(Xt, y, cfg, n_classes)
        counts = np.bincount(leaf_assignment(tree, Xt), minlength=tree.n_leaves)
        extras = {"leaf_counts": counts.tolist()}
    else:
        tree, report = train_ensemble(Xt, y, cfg, n_classes)
        extras = {"leaf_counts": [
            np.bincount(leaf_assignment(tree.tree(e), Xt, tree.feature_masks[e]),
                        minlength=2**tree.depth).tolist()
            for e in range(tree.n_estimators)
        ]}
    lines = [dict(type="epoch", **rec) for rec in report.records()]
    lines += [dict(type="restart", **r) for r in report.restarts]
    extras["chosen_restart"] = report.chosen_restart
    return tree, extras, lines


def cmd_train(args):
    cfg = build_config(args)
    ds = load_csv(args.data, args.label_col, _split_list(args.categorical_cols))
    quantile = not args.no_quantile and args.model != "cart"
    pre = TabularPreprocessor(ds.columns, quantile=quantile)
    Xt = pre.fit_transform(ds.X, ds.y)
    names = list(pre.get_feature_names_out())
    cfg_dict = cfg if isinstance(cfg, dict) else cfg.to_dict()
    model, extras, lines = _fit(args.model, cfg, Xt, ds.y, ds.c, names)

    probs = LoadedPredictor(model, cfg_dict.get("activation")).predict_proba(Xt)
    metrics = classification_metrics(ds.y, probs.argmax(axis=1), ds.classes)
    meta = {
        "learner": args.model,
        "label_col": args.label_col,
        "classes": list(ds.classes),
        "seed": args.seed,
        "config": _public_config(cfg_dict),
        "train_metrics": metrics,
        **extras,
    }
    if args.timestamps:
        meta["created"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    out = Path(args.out)
    out.write_text(model_to_json(model, pre.to_state(), _clean(meta)), encoding="utf-8")

    report_path = Path(args.report) if args.report else out.with_suffix(".report.jsonl")
    head = {"type": "run", "learner": args.model, "seed": args.seed, "data": Path(args.data).name,
            "m": ds.m, "n_features": int(Xt.shape[1]), "config": _public_config(cfg_dict)}
    tail = {"type": "summary", **metrics}
    report_path.write_text("".join(_dumps(r) + "\n" for r in [head, *lines, tail]), encoding="utf-8")
    print(f"{args.model}: train accuracy {metrics['accuracy']:.4f}, macro F1 "
          f"{metrics['macro_f1']:.4f} -> {out}", file=sys.stderr)
    return 0


class LoadedPredictor:
    """Predict with an in-memory model object."""

    def __init__(self, model, activation):
        self.model = model
        self.activation = activation or "sigmoid"

    def predict_proba(self, Xt):
        if isinstance(self.model, DenseTree):
            return tree_forward(self.model, Xt, self.activation)[0]
        if isinstance(self.model, Ensemble):
            return ensemble_forward(self.model, Xt, self.activation)[0]
        return vanilla_proba(self.model, Xt)


def cmd_eval(args):
    lm = LoadedModel(args.model_file)
    X, y = lm.load_data(args.data, need_labels=True)
    probs = lm.predict_proba(lm.transform(X))
    metrics = classification_metrics(y, probs.argmax(axis=1), lm.classes)
    _write(args.out, json.dumps(metrics, sort_keys=True, indent=1) + "\n")
    return 0


def cmd_predict(args):
    lm = LoadedModel(args.model_file)
    X, _ = lm.load_data(args.data, need_labels=False)
    probs = lm.predict_proba(lm.transform(X))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["prediction"]
    if args.proba:
        header += [f"p_{c}" for c in lm.classes]
    writer.writerow(header)
    for row in probs:
        cells = [lm.classes[int(np.argmax(row))]]
        if args.proba:
            cells += [repr(float(p)) for p in row]
        writer.writerow(cells)
    _write(args.out, buf.getvalue())
    return 0


def _display_threshold(pre, raw):
    if not raw:
        return None
    return lambda feature, tau: pre.raw_threshold(feature, tau)


def cmd_export(args):
    lm = LoadedModel(args.model_file)
    names = list(lm.pre.get_feature_names_out())
    counts = lm.meta.get("leaf_counts")
    if lm.kind == "vanilla":
        node = lm.model
    elif lm.kind == "dense":
        node = to_vanilla(lm.model, feature_names=names)
    else:
        e = args.estimator
        if not 0 <= e < lm.model.n_estimators:
            raise UsageError(f"--estimator must be in [0, {lm.model.n_estimators})")
        node = to_vanilla(lm.model.tree(e), lm.model.feature_masks[e], names)
        counts = counts[e] if counts is not None else None
    if lm.kind != "vanilla" and not args.no_prune:
        if counts is None:
            raise ModelFormatError("model file lacks training leaf counts; use --no-prune")
        node = prune_unvisited(node, counts)
    dot = export_dot(node, names, lm.classes, _display_threshold(lm.pre, not args.transformed))
    _write(args.dot, dot)
    print(f"{count_internal(node)} internal nodes", file=sys.stderr)
    return 0


def cmd_gen(args):
    if args.fixed:
        if args.m is not None:
            raise UsageError("--fixed and --m are mutually exclusive")
        ds = titanic20(args.titanic)
    else:
        ds = generate_titanic(args.m or 20, args.seed, args.titanic)
    _write(args.out, dataset_to_csv(ds))
    return 0


def cmd_bench_titanic(args):
    result = bench.run(args.seed, args.restarts, args.estimators, _threads(args.threads))
    sys.stdout.write(bench.render(result))
    if args.json:
        Path(args.json).write_text(json.dumps(result, sort_keys=True, indent=1) + "\n",
                                   encoding="utf-8")
    return 0


# --- parser ----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="gradtree", description="Gradient-trained decision trees.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model on a CSV file")
    t.add_argument("data", help="training CSV with a header row")
    t.add_argument("--label-col", required=True)
    t.add_argument("--model", choices=LEARNERS, default="gradtree")
    t.add_argument("--categorical-cols", help="comma-separated columns to treat as categorical")
    t.add_argument("--no-quantile", action="store_true", help="skip the quantile transform")
    t.add_argument("--depth", type=int)
    t.add_argument("--estimators", type=int)
    t.add_argument("--criterion", choices=("gini", "entropy"))
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--activation", choices=("sigmoid", "softsign", "entmoid"))
    t.add_argument("--focal", type=float, help="focal factor (0 = cross-entropy)")
    t.add_argument("--restarts", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--validation-fraction", type=float)
    t.add_argument("--config", help="JSON file with learner settings; overrides flags")
    t.add_argument("--threads", type=int)
    t.add_argument("--out", required=True, help="model JSON path")
    t.add_argument("--report", help="JSON-lines report path (default: <out>.report.jsonl)")
    t.add_argument("--timestamps", action="store_true", help="record the creation time")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics of a saved model on labelled data")
    e.add_argument("model_file")
    e.add_argument("data")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="predict labels for a CSV file")
    pr.add_argument("model_file")
    pr.add_argument("data")
    pr.add_argument("--proba", action="store_true", help="also write class probabilities")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    x = sub.add_parser("export", help="Graphviz DOT of a saved tree")
    x.add_argument("model_file")
    x.add_argument("--dot", help="output path (default: stdout)")
    x.add_argument("--no-prune", action="store_true")
    x.add_argument("--transformed", action="store_true",
                   help="show thresholds in transformed rather than raw units")
    x.add_argument("--estimator", type=int, default=0, help="ensemble member to export")
    x.set_defaults(func=cmd_export)

    g = sub.add_parser("gen", help="write a synthetic Titanic CSV")
    g.add_argument("--titanic", choices=TITANIC_VERSIONS, default="heterogeneous")
    g.add_argument("--fixed", action="store_true", help="the fixed 20-passenger table")
    g.add_argument("--m", type=int)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("bench-titanic", help="greedy vs gradient trees on the 20-row table")
    b.add_argument("--seed", type=int, default=42)
    b.add_argument("--restarts", type=int, default=10)
    b.add_argument("--estimators", type=int, default=8)
    b.add_argument("--threads", type=int)
    b.add_argument("--json", help="write the full result as JSON")
    b.set_defaults(func=cmd_bench_titanic)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gradtree: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ModelFormatError, ConfigurationError, OSError, ValueError,
            RuntimeError) as exc:
        print(f"gradtree: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
