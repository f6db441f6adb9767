"""Greedy forward feature selection over fixed cross-validation folds.

Naive Bayes models (plain or inside the ordinal wrapper) are scored through
their per-feature log-likelihood tables, which makes a whole round of
candidates one vectorised sum; other models are refitted per candidate.
Both paths give the same predictions because naive Bayes parameters of a
feature do not depend on the other columns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .models import DecisionTree, GaussianNB, OrdinalClassifier, RandomClassifier, _ConstantProbability, frank_hall_combine

Fold = tuple[np.ndarray, np.ndarray]
STOP_REASONS = ("no-improvement", "max-features", "exhausted")


class FoldError(ValueError):
    """The requested cross-validation scheme cannot be formed."""


def stratified_kfold(y, k: int = 5, seed: int = 0) -> list[Fold]:
    """Class-stratified k folds; indices are shuffled with a seeded generator
    and dealt round-robin, continuing across classes to balance fold sizes."""
    y = np.asarray(y)
    n = len(y)
    if n < k or k < 2:
        raise FoldError(f"cannot form {k} folds from {n} observations")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = (offset + np.arange(len(idx))) % k
        offset += len(idx)
    all_idx = np.arange(n)
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


def leave_one_group_out(groups) -> list[Fold]:
    groups = np.asarray(groups)
    uniq = sorted(set(groups.tolist()))
    if len(uniq) < 2:
        raise FoldError("leave-one-group-out needs at least two groups")
    all_idx = np.arange(len(groups))
    return [(all_idx[groups != g], all_idx[groups == g]) for g in uniq]


def fit_classifier(factory: Callable, X: np.ndarray, y: np.ndarray):
    """Fit ``factory()`` after dropping classes too rare for naive Bayes.

    Naive Bayes (and the ordinal wrapper around it) needs two observations
    per class; rarer classes are removed from the training rows.  If nothing
    trainable remains the majority class is predicted.
    """
    model = factory()
    if isinstance(model, (GaussianNB, OrdinalClassifier)):
        classes, counts = np.unique(y, return_counts=True)
        keep = np.isin(y, classes[counts >= 2])
        if not keep.any():
            return DecisionTree(max_depth=0, min_leaf=1).fit(X, y)
        X, y = X[keep], y[keep]
    return model.fit(X, y)


def _nb_submodels(model) -> list | None:
    if isinstance(model, GaussianNB):
        return [model]
    if isinstance(model, OrdinalClassifier) and all(isinstance(m, (GaussianNB, _ConstantProbability)) for m in model.models_):
        return list(model.models_)
    return None


class _FoldScorer:
    """Counts correct predictions on one fold for candidate feature subsets."""

    def __init__(self, factory, X, y, train, test):
        self.factory = factory
        self.Xtr, self.ytr = X[train], y[train]
        self.Xte, self.yte = X[test], y[test]
        self.full = fit_classifier(factory, self.Xtr, self.ytr)
        self.nb = _nb_submodels(self.full)
        if self.nb is not None:
            self.kind = "nb" if isinstance(self.full, GaussianNB) else "ordinal"
            self.tables = []
            for m in self.nb:
                if isinstance(m, _ConstantProbability):
                    self.tables.append(None)
                else:
                    self.tables.append((np.log(m.priors_), m.feature_log_likelihood(self.Xte)))

    def count_correct(self, subset: Sequence[int], candidates: np.ndarray) -> np.ndarray:
        """Correct-prediction count for ``subset + [c]`` for each candidate c."""
        if self.nb is None:
            return np.array([self._refit_count([*subset, int(c)]) for c in candidates])
        subset = list(subset)
        if self.kind == "nb":
            log_prior, ll = self.tables[0]
            cur = log_prior[None] + ll[:, :, subset].sum(axis=2)
            scores = cur[:, :, None] + ll[:, :, candidates]
            pred = self.full.classes_[np.argmax(scores, axis=1)]
        else:
            n, k = len(self.Xte), len(candidates)
            cum = np.empty((n, k, len(self.nb)))
            for j, table in enumerate(self.tables):
                if table is None:
                    cum[:, :, j] = self.nb[j].p
                    continue
                log_prior, ll = table
                pos = list(self.nb[j].classes_).index(1)
                d = ll[:, pos] - ll[:, 1 - pos]
                lo = (log_prior[pos] - log_prior[1 - pos]) + d[:, subset].sum(axis=1)
                logit = lo[:, None] + d[:, candidates]
                cum[:, :, j] = expit(logit)
            proba = frank_hall_combine(cum.reshape(n * k, -1)).reshape(n, k, -1)
            pred = self.full.classes_[np.argmax(proba, axis=2)]
        return np.sum(pred == self.yte[:, None], axis=0)

    def _refit_count(self, subset: list[int]) -> int:
        model = fit_classifier(self.factory, self.Xtr[:, subset], self.ytr)
        if isinstance(model, RandomClassifier):
            pred = model.predict(self.Xte[:, subset], np.random.default_rng(model.seed))
        else:
            pred = model.predict(self.Xte[:, subset])
        return int(np.sum(pred == self.yte))


def cv_accuracy(X, y, factory: Callable, folds: Sequence[Fold], subset: Sequence[int]) -> float:
    """Pooled accuracy of ``subset`` over the folds, refitting every model."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    correct = total = 0
    for train, test in folds:
        model = fit_classifier(factory, X[train][:, list(subset)], y[train])
        pred = model.predict(X[test][:, list(subset)])
        correct += int(np.sum(pred == y[test]))
        total += len(test)
    return correct / total


@dataclass
class SelectionTrace:
    steps: list[tuple[int, float]] = field(default_factory=list)
    stop_reason: str = "exhausted"
    feature_names: tuple[str, ...] = ()

    @property
    def subset(self) -> list[int]:
        return [f for f, _ in self.steps]

    @property
    def accuracy(self) -> float:
        return self.steps[-1][1] if self.steps else float("nan")

    def rows(self):
        for r, (f, acc) in enumerate(self.steps, start=1):
            name = self.feature_names[f] if f < len(self.feature_names) else str(f)
            yield r, name, acc


def forward_select(
    X,
    y,
    factory: Callable,
    folds: Sequence[Fold],
    max_features: int = 20,
    patience: int = 1,
    min_delta: float = 0.0,
    feature_names: Sequence[str] = (),
) -> SelectionTrace:
    """Greedy forward selection maximising pooled cross-validated accuracy.

    The first round always keeps its best feature.  Later rounds must
    improve on the best accuracy so far strictly and by at least
    ``min_delta``.  After ``patience`` consecutive rounds without such a
    gain the search stops and the tentative features of those rounds are
    discarded; with ``patience > 1`` a later gain keeps them, so the trace
    can dip in between.  Ties between candidates go to the lower feature
    index.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if not folds or any(len(tr) == 0 or len(te) == 0 for tr, te in folds):
        raise FoldError("selection needs non-empty training and test folds")
    if len(np.unique(y)) < 2:
        raise ValueError("forward selection needs at least two classes")
    if max_features < 1 or patience < 1:
        raise ValueError("max_features and patience must be >= 1")
    scorers = [_FoldScorer(factory, X, y, tr, te) for tr, te in folds]
    total = sum(len(te) for _, te in folds)
    n_feat = X.shape[1]

    trace = SelectionTrace(feature_names=tuple(feature_names))
    current: list[int] = []
    tentative: list[tuple[int, float]] = []
    best = -np.inf
    while True:
        if len(current) >= max_features:
            trace.stop_reason = "max-features"
            break
        candidates = np.array([f for f in range(n_feat) if f not in current], dtype=np.int64)
        if len(candidates) == 0:
            trace.stop_reason = "exhausted"
            break
        correct = sum(s.count_correct(current, candidates) for s in scorers)
        j = int(np.argmax(correct))
        acc = float(correct[j]) / total
        current.append(int(candidates[j]))
        gain = acc - best
        if not trace.steps or (gain > 0 and gain >= min_delta):
            trace.steps.extend(tentative)
            trace.steps.append((int(candidates[j]), acc))
            tentative = []
            best = acc
        else:
            tentative.append((int(candidates[j]), acc))
            if len(tentative) >= patience:
                trace.stop_reason = "no-improvement"
                break
    return trace
