"""Classifiers written from scratch: Gaussian naive Bayes, a CART tree,
the Frank & Hall ordinal wrapper and a prior-sampling random baseline.

Labels are integer stress codes (0 < 1 < 2).  ``predict_proba`` returns
columns aligned with ``classes_`` (the classes seen in training) and
``predict`` breaks argmax ties toward the lower level.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

FORMAT_VERSION = 1
VAR_FLOOR_SCALE = 1e-9
CLASSIFIER_KINDS = ("naive-bayes", "ordinal-naive-bayes", "decision-tree", "random")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y):
            raise ValueError("X must be 2-D with one row per label")
        if len(y) == 0:
            raise ValueError("dataset is empty")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class Prediction:
    predicted: int
    classes: tuple[int, ...]
    probabilities: np.ndarray


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


class _Classifier:
    classes_: np.ndarray
    n_features_: int

    def _check_width(self, X: np.ndarray) -> np.ndarray:
        X = _as_2d(X)
        if X.shape[1] != self.n_features_:
            raise ValueError(f"expected {self.n_features_} features, got {X.shape[1]}")
        return X

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def predict_one(self, x) -> Prediction:
        p = self.predict_proba(x)[0]
        return Prediction(int(self.classes_[np.argmax(p)]), tuple(int(c) for c in self.classes_), p)


class GaussianNB(_Classifier):
    """Gaussian naive Bayes with log-space likelihood accumulation.

    Each class-conditional variance is floored at 1e-9 times that feature's
    pooled training variance (1e-9 when the feature is constant), so the
    parameters of one feature never depend on which other columns are
    present.
    """

    kind = "naive-bayes"

    def __init__(self, var_floor_scale: float = VAR_FLOOR_SCALE):
        self.var_floor_scale = var_floor_scale

    def fit(self, X, y) -> "GaussianNB":
        X = _as_2d(X)
        y = np.asarray(y, dtype=np.int64)
        self.classes_, counts = np.unique(y, return_counts=True)
        if len(self.classes_) == 0:
            raise ValueError("cannot fit on an empty dataset")
        for c, n in zip(self.classes_, counts):
            if n < 2:
                raise ValueError(f"class {int(c)} has {n} observation(s); naive Bayes needs at least 2")
        self.n_features_ = X.shape[1]
        self.priors_ = counts / counts.sum()
        self.means_ = np.vstack([X[y == c].mean(axis=0) for c in self.classes_])
        var = np.vstack([X[y == c].var(axis=0) for c in self.classes_])
        pooled = X.var(axis=0) if len(X) else np.zeros(self.n_features_)
        floor = self.var_floor_scale * np.where(pooled > 0, pooled, 1.0)
        self.vars_ = np.maximum(var, floor)
        return self

    def feature_log_likelihood(self, X) -> np.ndarray:
        """Per-feature log densities, shape (n, classes, features)."""
        X = self._check_width(X)
        diff = X[:, None, :] - self.means_[None]
        return -0.5 * (np.log(2 * np.pi * self.vars_)[None] + diff * diff / self.vars_[None])

    def joint_log_likelihood(self, X) -> np.ndarray:
        return np.log(self.priors_)[None] + self.feature_log_likelihood(X).sum(axis=2)

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.joint_log_likelihood(X))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "var_floor_scale": self.var_floor_scale,
            "classes": self.classes_.tolist(),
            "priors": self.priors_.tolist(),
            "means": self.means_.tolist(),
            "variances": self.vars_.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianNB":
        m = cls(d["var_floor_scale"])
        m.classes_ = np.array(d["classes"], dtype=np.int64)
        m.priors_ = np.array(d["priors"])
        m.means_ = np.array(d["means"]).reshape(len(m.classes_), -1)
        m.vars_ = np.array(d["variances"]).reshape(len(m.classes_), -1)
        m.n_features_ = m.means_.shape[1]
        return m


def _softmax(log_joint: np.ndarray) -> np.ndarray:
    z = log_joint - log_joint.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _gini(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / totals[..., None]
    return 1.0 - np.nansum(p * p, axis=-1)


class DecisionTree(_Classifier):
    """Binary CART tree on Gini impurity with midpoint thresholds.

    An impure node is split whenever a split respecting ``min_leaf`` exists,
    even at zero impurity decrease, so XOR-like structure is reachable.
    """

    kind = "decision-tree"

    def __init__(self, max_depth: int = 8, min_leaf: int = 5):
        if max_depth < 0 or min_leaf < 1:
            raise ValueError("max_depth must be >= 0 and min_leaf >= 1")
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def fit(self, X, y) -> "DecisionTree":
        X = _as_2d(X)
        y = np.asarray(y, dtype=np.int64)
        if len(y) == 0:
            raise ValueError("cannot fit on an empty dataset")
        self.classes_ = np.unique(y)
        self.n_features_ = X.shape[1]
        onehot = (y[:, None] == self.classes_[None]).astype(float)
        # node arrays: feature (-1 for leaves), threshold, left, right, class distribution
        self.feature_: list[int] = []
        self.threshold_: list[float] = []
        self.left_: list[int] = []
        self.right_: list[int] = []
        self.value_: list[np.ndarray] = []
        self._grow(X, onehot, np.arange(len(y)), 0)
        self.depth_ = self._depth(0)
        return self

    def _new_node(self, counts: np.ndarray) -> int:
        self.feature_.append(-1)
        self.threshold_.append(0.0)
        self.left_.append(-1)
        self.right_.append(-1)
        self.value_.append(counts / counts.sum())
        return len(self.feature_) - 1

    def _grow(self, X, onehot, idx, depth) -> int:
        counts = onehot[idx].sum(axis=0)
        node = self._new_node(counts)
        n = len(idx)
        if depth >= self.max_depth or n < 2 * self.min_leaf or np.count_nonzero(counts) <= 1:
            return node
        split = self._best_split(X[idx], onehot[idx])
        if split is None:
            return node
        f, thr = split
        go_left = X[idx, f] <= thr
        self.feature_[node] = f
        self.threshold_[node] = thr
        self.left_[node] = self._grow(X, onehot, idx[go_left], depth + 1)
        self.right_[node] = self._grow(X, onehot, idx[~go_left], depth + 1)
        return node

    def _best_split(self, X, onehot):
        n = len(X)
        lo, hi = self.min_leaf, n - self.min_leaf
        best = None
        for f in range(X.shape[1]):
            order = np.argsort(X[:, f], kind="mergesort")
            xs = X[order, f]
            cum = np.cumsum(onehot[order], axis=0)
            pos = np.arange(lo, hi + 1)
            pos = pos[xs[pos - 1] < xs[np.minimum(pos, n - 1)]]
            if len(pos) == 0:
                continue
            left = cum[pos - 1]
            right = cum[-1] - left
            score = (pos * _gini(left, pos.astype(float)) + (n - pos) * _gini(right, (n - pos).astype(float))) / n
            j = int(np.argmin(score))
            if best is None or score[j] < best[0] - 1e-12:
                i = pos[j]
                thr = (xs[i - 1] + xs[i]) / 2.0
                if not thr < xs[i]:
                    thr = xs[i - 1]
                best = (score[j], f, float(thr))
        return None if best is None else best[1:]

    def _depth(self, node: int) -> int:
        if self.feature_[node] < 0:
            return 0
        return 1 + max(self._depth(self.left_[node]), self._depth(self.right_[node]))

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = self._check_width(X)
        out = np.empty(len(X), dtype=np.int64)
        for r, x in enumerate(X):
            node = 0
            while self.feature_[node] >= 0:
                node = self.left_[node] if x[self.feature_[node]] <= self.threshold_[node] else self.right_[node]
            out[r] = node
        return out

    def predict_proba(self, X) -> np.ndarray:
        leaves = self.apply(X)
        return np.vstack([self.value_[i] for i in leaves]) if len(leaves) else np.zeros((0, len(self.classes_)))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "classes": self.classes_.tolist(),
            "n_features": self.n_features_,
            "nodes": [
                {"feature": f, "threshold": t, "left": l, "right": r, "value": v.tolist()}
                for f, t, l, r, v in zip(self.feature_, self.threshold_, self.left_, self.right_, self.value_)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        m = cls(d["max_depth"], d["min_leaf"])
        m.classes_ = np.array(d["classes"], dtype=np.int64)
        m.n_features_ = d["n_features"]
        nodes = d["nodes"]
        m.feature_ = [n["feature"] for n in nodes]
        m.threshold_ = [n["threshold"] for n in nodes]
        m.left_ = [n["left"] for n in nodes]
        m.right_ = [n["right"] for n in nodes]
        m.value_ = [np.array(n["value"]) for n in nodes]
        m.depth_ = m._depth(0)
        return m


def frank_hall_combine(p_greater: np.ndarray) -> np.ndarray:
    """Class distribution from cumulative P(y > c_j), j = 0..k-2.

    Negative differences (non-monotone sub-models) are clamped to zero and
    the rows renormalised.
    """
    p_greater = np.atleast_2d(np.asarray(p_greater, dtype=float))
    n = len(p_greater)
    upper = np.hstack([np.ones((n, 1)), p_greater])
    lower = np.hstack([p_greater, np.zeros((n, 1))])
    proba = np.clip(upper - lower, 0.0, None)
    total = proba.sum(axis=1, keepdims=True)
    # total can only vanish if every difference was clamped, which the ones/zeros padding prevents
    return proba / total


class _ConstantProbability:
    """Stand-in for a binary sub-model trained on a single class."""

    def __init__(self, p: float, n_features: int):
        self.p = p
        self.n_features_ = n_features

    def positive_proba(self, X) -> np.ndarray:
        return np.full(len(_as_2d(X)), self.p)


class OrdinalClassifier(_Classifier):
    """Frank & Hall decomposition of a k-level ordinal problem into k-1
    binary "level > c_j" problems solved by ``base_factory`` models."""

    kind = "ordinal"

    def __init__(self, base_factory: Callable[[], _Classifier] = GaussianNB):
        self.base_factory = base_factory

    def fit(self, X, y) -> "OrdinalClassifier":
        X = _as_2d(X)
        y = np.asarray(y, dtype=np.int64)
        self.classes_ = np.unique(y)
        self.n_features_ = X.shape[1]
        self.models_ = []
        for c in self.classes_[:-1]:
            target = (y > c).astype(np.int64)
            if np.all(target == target[0]):
                self.models_.append(_ConstantProbability(float(target[0]), self.n_features_))
            else:
                self.models_.append(self.base_factory().fit(X, target))
        return self

    def cumulative_proba(self, X) -> np.ndarray:
        X = self._check_width(X)
        cols = []
        for m in self.models_:
            if isinstance(m, _ConstantProbability):
                cols.append(m.positive_proba(X))
            else:
                cols.append(m.predict_proba(X)[:, list(m.classes_).index(1)])
        return np.column_stack(cols) if cols else np.zeros((len(X), 0))

    def predict_proba(self, X) -> np.ndarray:
        return frank_hall_combine(self.cumulative_proba(X))

    def to_dict(self) -> dict:
        subs = []
        for m in self.models_:
            subs.append({"kind": "constant", "p": m.p} if isinstance(m, _ConstantProbability) else m.to_dict())
        return {"kind": self.kind, "classes": self.classes_.tolist(), "n_features": self.n_features_, "sub_models": subs}

    @classmethod
    def from_dict(cls, d: dict) -> "OrdinalClassifier":
        m = cls()
        m.classes_ = np.array(d["classes"], dtype=np.int64)
        m.n_features_ = d["n_features"]
        m.models_ = [
            _ConstantProbability(s["p"], m.n_features_) if s["kind"] == "constant" else model_from_dict(s)
            for s in d["sub_models"]
        ]
        return m


class RandomClassifier(_Classifier):
    """Baseline that samples a class from the training priors."""

    kind = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def fit(self, X, y) -> "RandomClassifier":
        X = _as_2d(X)
        y = np.asarray(y, dtype=np.int64)
        self.classes_, counts = np.unique(y, return_counts=True)
        self.priors_ = counts / counts.sum()
        self.n_features_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_width(X)
        return np.tile(self.priors_, (len(X), 1))

    def predict(self, X, rng: np.random.Generator | None = None) -> np.ndarray:
        X = self._check_width(X)
        if rng is None:
            rng = np.random.default_rng(self.seed)
        return self.classes_[rng.choice(len(self.classes_), size=len(X), p=self.priors_)]

    def predict_one(self, x, rng: np.random.Generator | None = None) -> Prediction:
        p = self.predict_proba(x)[0]
        return Prediction(int(self.predict(x, rng)[0]), tuple(int(c) for c in self.classes_), p)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "classes": self.classes_.tolist(), "priors": self.priors_.tolist(), "n_features": self.n_features_}

    @classmethod
    def from_dict(cls, d: dict) -> "RandomClassifier":
        m = cls(d["seed"])
        m.classes_ = np.array(d["classes"], dtype=np.int64)
        m.priors_ = np.array(d["priors"])
        m.n_features_ = d["n_features"]
        return m


def fit_naive_bayes(train: Dataset) -> GaussianNB:
    return GaussianNB().fit(train.X, train.y)


def fit_tree(train: Dataset, max_depth: int = 8, min_leaf: int = 5) -> DecisionTree:
    return DecisionTree(max_depth, min_leaf).fit(train.X, train.y)


def fit_ordinal(train: Dataset, base_factory: Callable[[], _Classifier] = GaussianNB) -> OrdinalClassifier:
    if len(np.unique(train.y)) < 2:
        raise ValueError("ordinal decomposition needs at least two levels")
    return OrdinalClassifier(base_factory).fit(train.X, train.y)


def fit_random(train: Dataset, seed: int = 0) -> RandomClassifier:
    return RandomClassifier(seed).fit(train.X, train.y)


def predict(model: _Classifier, x, rng: np.random.Generator | None = None) -> Prediction:
    if isinstance(model, RandomClassifier):
        return model.predict_one(x, rng)
    return model.predict_one(x)


def make_classifier(kind: str, seed: int = 0, max_depth: int = 8, min_leaf: int = 5) -> Callable[[], _Classifier]:
    """Zero-argument factory for a classifier kind."""
    if kind == "naive-bayes":
        return GaussianNB
    if kind == "ordinal-naive-bayes":
        return lambda: OrdinalClassifier(GaussianNB)
    if kind == "decision-tree":
        return lambda: DecisionTree(max_depth, min_leaf)
    if kind == "random":
        return lambda: RandomClassifier(seed)
    raise ValueError(f"unknown classifier kind {kind!r}; choose from {CLASSIFIER_KINDS}")


_LOADERS = {
    GaussianNB.kind: GaussianNB.from_dict,
    DecisionTree.kind: DecisionTree.from_dict,
    OrdinalClassifier.kind: OrdinalClassifier.from_dict,
    RandomClassifier.kind: RandomClassifier.from_dict,
}


def model_from_dict(d: dict) -> _Classifier:
    return _LOADERS[d["kind"]](d)


def save_model(model: _Classifier, path) -> None:
    doc = {"format_version": FORMAT_VERSION, "model": model.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> _Classifier:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    return model_from_dict(doc["model"])
