"""Datasets, CSV ingestion, preprocessing transformers and the 2D Titanic data."""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

ONE_HOT_MAX_CARDINALITY = 10
QUANTILE_CLIP = 1e-7


class DataError(ValueError):
    """Malformed input data."""


@dataclass
class Column:
    name: str
    kind: str = "numeric"  # "numeric" | "categorical"
    categories: list = field(default_factory=list)

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "categories": list(self.categories)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d.get("kind", "numeric"), list(d.get("categories", [])))


@dataclass
class Dataset:
    """Feature matrix with per-column metadata and dense integer labels.

    Categorical columns hold integer codes into ``Column.categories``.
    """

    X: np.ndarray
    y: np.ndarray
    columns: list
    classes: list
    label_name: str = "label"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"X{self.X.shape} and y{self.y.shape} disagree")
        if len(self.columns) != self.X.shape[1]:
            raise DataError("one Column entry per feature is required")

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def c(self):
        return len(self.classes)

    @property
    def feature_names(self):
        return [col.name for col in self.columns]

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.columns, self.classes, self.label_name)


# --- 2D Titanic ------------------------------------------------------------

# (Fare category, Age, Survived) for passengers 1..20
TITANIC20 = (
    ("Low", 61, "No"), ("High", 45, "Yes"), ("High", 29, "No"), ("Low", 10, "Yes"),
    ("High", 32, "No"), ("Low", 69, "No"), ("Low", 68, "No"), ("High", 46, "Yes"),
    ("High", 57, "No"), ("High", 25, "No"), ("Low", 13, "Yes"), ("Low", 24, "No"),
    ("Low", 11, "Yes"), ("Low", 83, "Yes"), ("High", 6, "No"), ("Low", 80, "No"),
    ("High", 55, "Yes"), ("Low", 45, "No"), ("Low", 26, "No"), ("High", 74, "No"),
)
# Numeric fares for the same 20 passengers
TITANIC20_FARES = (34, 126, 234, 12, 68, 36, 12, 112, 79, 199,
                   39, 49, 12, 48, 136, 24, 199, 8, 26, 62)

FARE_CUT = 50.0
AGE_CUT = 21.0
TITANIC_VERSIONS = ("numeric", "categorical", "heterogeneous")


def _fare_category(fare):
    return "Low" if fare <= FARE_CUT else "High"


def _age_category(age):
    return "Young" if age <= AGE_CUT else "Old"


def _titanic_rows(fares, ages, labels, version):
    rows = []
    for fare, age, label in zip(fares, ages, labels):
        if version == "numeric":
            rows.append((fare, age, label))
        elif version == "categorical":
            rows.append((_fare_category(fare), _age_category(age), label))
        else:
            rows.append((_fare_category(fare), age, label))
    return rows


def _titanic_dataset(rows, version):
    names = {
        "numeric": ("Fare", "Age"),
        "categorical": ("Fare Category", "Age Category"),
        "heterogeneous": ("Fare Category", "Age"),
    }[version]
    header = list(names) + ["Survived"]
    return table_to_dataset(header, [list(map(str, r)) for r in rows], "Survived",
                            class_order=["No", "Yes"])


def titanic20(version="heterogeneous") -> Dataset:
    """The fixed 20-passenger table in the requested version."""
    if version not in TITANIC_VERSIONS:
        raise ValueError(f"unknown version {version!r}")
    if version == "heterogeneous":
        rows = list(TITANIC20)
    else:
        ages = [r[1] for r in TITANIC20]
        labels = [r[2] for r in TITANIC20]
        rows = _titanic_rows(TITANIC20_FARES, ages, labels, version)
    return _titanic_dataset(rows, version)


def generate_titanic(m, seed=42, version="heterogeneous", max_tries=1000) -> Dataset:
    """Sample ``m`` synthetic passengers.

    Fare ~ U(1, 250), Age ~ U(1, 90), both rounded to integers; survival
    probability 0.6 for young (Age <= 20) passengers with Fare > 50, else 0.2.
    Rows repeating an earlier (Fare, Age) pair are removed and redrawn.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > 250 * 90:
        raise ValueError(f"at most {250 * 90} distinct (Fare, Age) pairs exist")
    if version not in TITANIC_VERSIONS:
        raise ValueError(f"unknown version {version!r}")
    rng = np.random.default_rng(seed)
    fares = np.empty(0, dtype=int)
    ages = np.empty(0, dtype=int)
    for _ in range(max_tries):
        k = m - fares.size
        fares = np.concatenate([fares, np.rint(rng.uniform(1, 250, size=k)).astype(int)])
        ages = np.concatenate([ages, np.rint(rng.uniform(1, 90, size=k)).astype(int)])
        _, first = np.unique(fares * 1000 + ages, return_index=True)
        keep = np.sort(first)
        fares, ages = fares[keep], ages[keep]
        if fares.size == m:
            break
    else:
        raise DataError(f"could not draw {m} distinct (Fare, Age) pairs")
    p_survive = np.where((ages <= 20) & (fares > 50), 0.6, 0.2)
    survived = rng.uniform(size=m) < p_survive
    labels = ["Yes" if s else "No" for s in survived]
    rows = _titanic_rows(fares.tolist(), ages.tolist(), labels, version)
    return _titanic_dataset(rows, version)


# --- CSV -------------------------------------------------------------------


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def table_to_dataset(header, rows, label_col, categorical_cols=(), class_order=None):
    if label_col not in header:
        raise DataError(f"label column {label_col!r} not in header {header}")
    if not rows:
        raise DataError("no data rows")
    label_pos = header.index(label_col)
    feature_pos = [i for i in range(len(header)) if i != label_pos]
    columns, data = [], []
    for i in feature_pos:
        values = [r[i] for r in rows]
        forced = header[i] in categorical_cols
        if not forced and all(_is_number(v) for v in values):
            columns.append(Column(header[i]))
            data.append([float(v) for v in values])
        else:
            cats = list(dict.fromkeys(values))
            codes = {c: k for k, c in enumerate(cats)}
            columns.append(Column(header[i], "categorical", cats))
            data.append([float(codes[v]) for v in values])
    raw_labels = [r[label_pos] for r in rows]
    if class_order is None:
        if all(_is_number(v) for v in raw_labels):
            class_order = sorted(set(raw_labels), key=float)
        else:
            class_order = sorted(set(raw_labels))
    lookup = {c: k for k, c in enumerate(class_order)}
    y = np.array([lookup[v] for v in raw_labels], dtype=np.int64)
    X = np.array(data, dtype=np.float64).T.reshape(len(rows), len(feature_pos))
    return Dataset(X, y, columns, list(class_order), label_col)


def read_csv_table(path):
    """Header and string rows of a UTF-8 CSV; missing cells are an error."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        row = [cell.strip() for cell in row]
        for col, cell in zip(header, row):
            if cell == "":
                raise DataError(f"{path}:{lineno}: missing value in column {col!r}")
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, rows


def load_csv(path, label_col, categorical_cols=(), class_order=None) -> Dataset:
    header, rows = read_csv_table(path)
    return table_to_dataset(header, rows, label_col, categorical_cols, class_order)


def features_from_csv(path, columns, label_col=None):
    """Feature matrix for already-known ``columns`` (e.g. at predict time).

    Unseen categories get code -1. Returns ``(X, raw_labels or None)``.
    """
    header, rows = read_csv_table(path)
    X = np.empty((len(rows), len(columns)))
    for j, col in enumerate(columns):
        if col.name not in header:
            raise DataError(f"{path}: column {col.name!r} missing")
        pos = header.index(col.name)
        for i, row in enumerate(rows):
            cell = row[pos]
            if col.kind == "categorical":
                X[i, j] = col.categories.index(cell) if cell in col.categories else -1
            else:
                try:
                    X[i, j] = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{i + 2}: {col.name!r} is not numeric: {cell!r}") from None
    labels = None
    if label_col is not None and label_col in header:
        pos = header.index(label_col)
        labels = [row[pos] for row in rows]
    return X, labels


def dataset_to_csv(ds: Dataset, path=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ds.feature_names + [ds.label_name])
    for row, label in zip(ds.X, ds.y):
        cells = []
        for value, col in zip(row, ds.columns):
            if col.kind == "categorical":
                cells.append(col.categories[int(value)])
            else:
                cells.append(f"{value:g}")
        writer.writerow(cells + [ds.classes[label]])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# --- binary container ------------------------------------------------------

GTDS_MAGIC = b"GTDS1"


def save_gtds(ds: Dataset, path):
    """Write ``ds`` as: magic, u32 m, n, c, float64 X (row-major), int64 y, JSON."""
    meta = {
        "columns": [c.to_dict() for c in ds.columns],
        "classes": list(ds.classes),
        "label_name": ds.label_name,
    }
    with open(path, "wb") as fh:
        fh.write(GTDS_MAGIC)
        fh.write(struct.pack("<III", ds.m, ds.n, ds.c))
        fh.write(np.ascontiguousarray(ds.X, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.y, dtype="<i8").tobytes())
        fh.write(json.dumps(meta).encode("utf-8"))


def load_gtds(path) -> Dataset:
    blob = Path(path).read_bytes()
    if not blob.startswith(GTDS_MAGIC):
        raise DataError(f"{path}: not a GTDS1 file")
    off = len(GTDS_MAGIC)
    if len(blob) < off + 12:
        raise DataError(f"{path}: truncated header")
    m, n, c = struct.unpack_from("<III", blob, off)
    off += 12
    nx, ny = 8 * m * n, 8 * m
    if len(blob) < off + nx + ny:
        raise DataError(f"{path}: truncated body")
    X = np.frombuffer(blob, dtype="<f8", count=m * n, offset=off).reshape(m, n).astype(np.float64)
    off += nx
    y = np.frombuffer(blob, dtype="<i8", count=m, offset=off).astype(np.int64)
    off += ny
    try:
        meta = json.loads(blob[off:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad metadata trailer: {exc}") from None
    if len(meta["classes"]) != c:
        raise DataError(f"{path}: class count mismatch")
    return Dataset(X, y, [Column.from_dict(d) for d in meta["columns"]],
                   meta["classes"], meta.get("label_name", "label"))


# --- splitting -------------------------------------------------------------


def split(ds_or_y, fractions=(0.8, 0.2), seed=42, stratified=True):
    """Seeded disjoint partition of row indices by ``fractions``."""
    y = ds_or_y.y if isinstance(ds_or_y, Dataset) else np.asarray(ds_or_y)
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions <= 0) or not np.isclose(fractions.sum(), 1.0):
        raise ValueError("fractions must be positive and sum to 1")
    rng = np.random.default_rng(seed)
    groups = [np.arange(len(y))]
    if stratified:
        groups = [np.flatnonzero(y == label) for label in np.unique(y)]
    parts = [[] for _ in fractions]
    for members in groups:
        members = rng.permutation(members)
        bounds = np.rint(np.cumsum(fractions) * len(members)).astype(int)
        start = 0
        for k, stop in enumerate(bounds):
            parts[k].extend(members[start:stop].tolist())
            start = stop
    return [np.sort(np.array(p, dtype=int)) for p in parts]


# --- preprocessing ---------------------------------------------------------


def quantile_fit(values):
    values = np.asarray(values, dtype=np.float64).ravel()
    m = values.size
    if m == 0:
        raise DataError("cannot fit a quantile transform on an empty column")
    order = np.argsort(values, kind="stable")
    ranks = np.empty(m)
    ranks[order] = np.arange(m)
    scores = ndtri(np.clip((ranks + 0.5) / m, QUANTILE_CLIP, 1 - QUANTILE_CLIP))
    refs, inverse = np.unique(values, return_inverse=True)
    # tied values share the mean of their scores
    ref_scores = np.bincount(inverse, weights=scores) / np.bincount(inverse)
    if refs.size == 1:
        ref_scores[:] = 0.0
    return refs, ref_scores


def quantile_apply(values, refs, ref_scores):
    values = np.asarray(values, dtype=np.float64)
    if refs.size == 1:
        return np.zeros_like(values)
    return np.interp(values, refs, ref_scores)


def quantile_inverse(scores, refs, ref_scores):
    """Raw-scale value at a transformed score (linear between references)."""
    if refs.size == 1:
        return np.full_like(np.asarray(scores, dtype=np.float64), refs[0])
    return np.interp(scores, ref_scores, refs)


class QuantileNormalTransformer(TransformerMixin, BaseEstimator):
    """Rank-based map of each column to approximately standard normal."""

    def __init__(self, columns=None):
        self.columns = columns

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        cols = range(X.shape[1]) if self.columns is None else self.columns
        self.columns_ = list(cols)
        self.references_ = [quantile_fit(X[:, j]) for j in self.columns_]
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "references_")
        X = np.array(X, dtype=np.float64, copy=True)
        for j, (refs, scores) in zip(self.columns_, self.references_):
            X[:, j] = quantile_apply(X[:, j], refs, scores)
        return X


def loo_fit(codes, y, n_classes=None):
    """Leave-one-out target means for categorical ``codes``.

    Targets are one-vs-rest indicators, one output column per class for
    more than two classes and a single column (class 1) for binary labels.
    Returns ``(train_values, state)``.
    """
    codes = np.asarray(codes)
    y = np.asarray(y, dtype=np.int64)
    c = int(n_classes or y.max() + 1)
    targets = np.eye(c)[y]
    if c == 2:
        targets = targets[:, 1:]
    global_mean = targets.mean(axis=0)
    cats, inverse = np.unique(codes, return_inverse=True)
    sums = np.zeros((cats.size, targets.shape[1]))
    np.add.at(sums, inverse, targets)
    counts = np.bincount(inverse, minlength=cats.size).astype(np.float64)
    others = counts[inverse] - 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        train = (sums[inverse] - targets) / others[:, None]
    train[others == 0] = global_mean
    means = {cat.item(): (sums[k] / counts[k]).tolist() for k, cat in enumerate(cats)}
    return train, {"means": means, "global_mean": global_mean.tolist()}


def loo_apply(codes, state):
    codes = np.asarray(codes)
    fallback = state["global_mean"]
    return np.array([state["means"].get(code.item(), fallback) for code in codes],
                    dtype=np.float64).reshape(len(codes), len(fallback))


def one_hot(codes, n_categories):
    """0/1 columns, one per category code (codes outside range give all zeros)."""
    codes = np.asarray(codes).astype(int)
    out = np.zeros((codes.size, n_categories))
    ok = (codes >= 0) & (codes < n_categories)
    out[np.flatnonzero(ok), codes[ok]] = 1.0
    return out


class TabularPreprocessor(TransformerMixin, BaseEstimator):
    """A 0/1 indicator for two-category columns, one-hot (cardinality <= 10)
    or leave-one-out encoding for other categorical columns, then a quantile-to-normal transform of the numeric columns.

    ``columns`` is a list of :class:`Column`; all-numeric when omitted.
    """

    def __init__(self, columns=None, quantile=True, max_one_hot=ONE_HOT_MAX_CARDINALITY):
        self.columns = columns
        self.quantile = quantile
        self.max_one_hot = max_one_hot

    def _plan(self, n):
        cols = self.columns or [Column(f"x{j}") for j in range(n)]
        if len(cols) != n:
            raise DataError(f"{len(cols)} column descriptions for {n} features")
        return cols

    def fit(self, X, y=None):
        self.fit_transform(X, y)
        return self

    def fit_transform(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        cols = self._plan(X.shape[1])
        self.steps_ = []
        blocks, names = [], []
        for j, col in enumerate(cols):
            if col.kind == "categorical" and len(col.categories) == 2:
                # a single indicator of the second category carries all the information
                self.steps_.append({"kind": "binary", "col": j, "k": 1})
                blocks.append((X[:, j:j + 1] == 1).astype(np.float64))
                names.append(f"{col.name}={col.categories[1]}")
            elif col.kind == "categorical" and len(col.categories) <= self.max_one_hot:
                k = max(len(col.categories), 1)
                self.steps_.append({"kind": "onehot", "col": j, "k": k})
                blocks.append(one_hot(X[:, j], k))
                names += [f"{col.name}={cat}" for cat in col.categories] or [col.name]
            elif col.kind == "categorical":
                if y is None:
                    raise DataError("leave-one-out encoding needs labels")
                values, state = loo_fit(X[:, j], y)
                self.steps_.append({"kind": "loo", "col": j, "state": state})
                blocks.append(values)
                width = values.shape[1]
                names += [col.name] if width == 1 else [f"{col.name}[{k}]" for k in range(width)]
            else:
                step = {"kind": "numeric", "col": j}
                values = X[:, j:j + 1]
                if self.quantile:
                    refs, scores = quantile_fit(values)
                    step["refs"], step["scores"] = refs, scores
                    values = quantile_apply(values, refs, scores)
                self.steps_.append(step)
                blocks.append(values)
                names.append(col.name)
        self.feature_names_out_ = names
        self.n_features_in_ = X.shape[1]
        return np.hstack(blocks)

    def transform(self, X):
        check_is_fitted(self, "steps_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        blocks = []
        for step in self.steps_:
            col = X[:, step["col"]]
            if step["kind"] == "binary":
                blocks.append((col == 1).astype(np.float64)[:, None])
            elif step["kind"] == "onehot":
                blocks.append(one_hot(col, step["k"]))
            elif step["kind"] == "loo":
                blocks.append(loo_apply(col, step["state"]))
            elif "refs" in step:
                blocks.append(quantile_apply(col, step["refs"], step["scores"])[:, None])
            else:
                blocks.append(col[:, None])
        return np.hstack(blocks)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "steps_")
        return np.array(self.feature_names_out_, dtype=object)

    def output_columns(self):
        """Describe each output column: source column, kind and display hints."""
        out = []
        for step in self.steps_:
            if step["kind"] in ("binary", "onehot"):
                out += [{"source": step["col"], "kind": step["kind"]}] * step["k"]
            elif step["kind"] == "loo":
                width = len(step["state"]["global_mean"])
                out += [{"source": step["col"], "kind": "loo"}] * width
            else:
                out.append({"source": step["col"], "kind": "numeric",
                            "quantile": "refs" in step})
        return out

    def raw_threshold(self, feature, threshold):
        """Threshold in raw units for a quantile-transformed output column."""
        k = 0
        for step in self.steps_:
            width = (step["k"] if step["kind"] in ("binary", "onehot")
                     else len(step["state"]["global_mean"]) if step["kind"] == "loo" else 1)
            if feature < k + width:
                if step["kind"] == "numeric" and "refs" in step:
                    return float(quantile_inverse(threshold, step["refs"], step["scores"]))
                if step["kind"] in ("binary", "onehot") and 0.0 < threshold <= 1.0:
                    return 0.5  # same split on a 0/1 indicator, easier to read
                return float(threshold)
            k += width
        raise IndexError(feature)

    def to_state(self):
        check_is_fitted(self, "steps_")
        steps = []
        for step in self.steps_:
            s = dict(step)
            for key in ("refs", "scores"):
                if key in s:
                    s[key] = np.asarray(s[key]).tolist()
            if s["kind"] == "loo":
                s["state"] = {"means": [[k, v] for k, v in s["state"]["means"].items()],
                              "global_mean": s["state"]["global_mean"]}
            steps.append(s)
        return {
            "columns": [c.to_dict() for c in (self.columns or [])],
            "quantile": self.quantile,
            "max_one_hot": self.max_one_hot,
            "n_features_in": self.n_features_in_,
            "feature_names_out": list(self.feature_names_out_),
            "steps": steps,
        }

    @classmethod
    def from_state(cls, state):
        cols = [Column.from_dict(d) for d in state["columns"]] or None
        obj = cls(cols, state["quantile"], state["max_one_hot"])
        steps = []
        for s in state["steps"]:
            s = dict(s)
            for key in ("refs", "scores"):
                if key in s:
                    s[key] = np.asarray(s[key], dtype=np.float64)
            if s["kind"] == "loo":
                s["state"] = {"means": {k: v for k, v in s["state"]["means"]},
                              "global_mean": s["state"]["global_mean"]}
            steps.append(s)
        obj.steps_ = steps
        obj.n_features_in_ = state["n_features_in"]
        obj.feature_names_out_ = state["feature_names_out"]
        return obj
