"""Ordinal/nominal metrics and the user-specific, general (leave one person
out) and similar-users evaluation schemes.

Cohort metrics pool every prediction (micro average); per-user metrics and
their macro averages are reported alongside.  Metrics that would divide by
zero are ``None`` rather than 0.
"""
from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exploratory import midranks
from .models import RandomClassifier, make_classifier
from .observations import AGGREGATE_NAMES, LEVELS, Observation, feature_matrix
from .selection import FoldError, SelectionTrace, fit_classifier, forward_select, leave_one_group_out, stratified_kfold
from .similarity import select_similar_users, silhouette_samples

logger = logging.getLogger(__name__)

SCHEMES = ("user-specific", "general", "similar-users")
LEVEL_NAMES = tuple(lvl.name.lower() for lvl in LEVELS)


@dataclass
class Metrics:
    n: int
    accuracy: float
    sensitivity: dict[str, float | None]
    specificity: dict[str, float | None]
    precision: dict[str, float | None]
    mae: float
    rmse: float
    pearson: float | None
    spearman: float | None
    acc_within: dict[int, float]
    flags: list[str] = field(default_factory=list)

    @property
    def acc1(self) -> float:
        return self.acc_within[1]


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def _int_pearson(a: Sequence[int], b: Sequence[int]) -> float | None:
    n = len(a)
    sa, sb = sum(a), sum(b)
    dx = n * sum(v * v for v in a) - sa * sa
    dy = n * sum(v * v for v in b) - sb * sb
    if dx == 0 or dy == 0:
        return None
    num = n * sum(x * y for x, y in zip(a, b)) - sa * sb
    return num / math.sqrt(dx * dy)


def metrics(true: Sequence[int], pred: Sequence[int]) -> Metrics:
    """All nominal and ordinal metrics for coded levels 0/1/2."""
    t = [int(v) for v in true]
    p = [int(v) for v in pred]
    if len(t) != len(p):
        raise ValueError("true and predicted differ in length")
    n = len(t)
    if n == 0:
        raise ValueError("metrics need at least one prediction")
    sens, spec, prec = {}, {}, {}
    for lvl, name in zip(LEVELS, LEVEL_NAMES):
        tp = sum(1 for a, b in zip(t, p) if a == lvl and b == lvl)
        fn = sum(1 for a, b in zip(t, p) if a == lvl and b != lvl)
        fp = sum(1 for a, b in zip(t, p) if a != lvl and b == lvl)
        tn = n - tp - fn - fp
        sens[name] = _ratio(tp, tp + fn)
        spec[name] = _ratio(tn, tn + fp)
        prec[name] = _ratio(tp, tp + fp)
    err = [abs(a - b) for a, b in zip(t, p)]
    flags = []
    pearson = _int_pearson(t, p)
    # midranks are multiples of 1/2, so doubling keeps the arithmetic in integers
    spearman = _int_pearson(
        [int(round(2 * r)) for r in midranks(t)], [int(round(2 * r)) for r in midranks(p)]
    )
    if pearson is None:
        flags.append("correlation undefined: zero variance")
    return Metrics(
        n=n,
        accuracy=sum(1 for e in err if e == 0) / n,
        sensitivity=sens,
        specificity=spec,
        precision=prec,
        mae=sum(err) / n,
        rmse=math.sqrt(sum(e * e for e in err) / n),
        pearson=pearson,
        spearman=spearman,
        acc_within={k: sum(1 for e in err if e <= k) / n for k in (0, 1, 2)},
        flags=flags,
    )


@dataclass
class EvalConfig:
    classifier: str = "naive-bayes"
    folds: int = 5
    max_features: int = 20
    patience: int = 1
    min_delta: float = 0.0
    select_features: bool = True
    p: float = 50.0
    k_max: int = 5
    restarts: int = 10
    min_user_obs: int = 10
    max_depth: int = 8
    min_leaf: int = 5
    workers: int = 1


@dataclass(frozen=True)
class PredictionRecord:
    user_id: str
    survey_ts: int
    true: int
    predicted: int


@dataclass
class EvalUnit:
    """One train/test split, kept for the leakage audit."""

    name: str
    test_user: str
    train_ids: frozenset
    test_ids: frozenset
    held_out_ids: frozenset = frozenset()
    trace: SelectionTrace | None = None
    similar_users: tuple[str, ...] = ()
    cluster: dict | None = None
    warnings: list[str] = field(default_factory=list)


@dataclass
class EvalReport:
    scheme: str
    classifier: str
    pooled: Metrics | None
    per_user: dict[str, Metrics]
    macro: dict[str, float | None]
    predictions: list[PredictionRecord]
    units: list[EvalUnit]
    skipped: dict[str, str]
    seed: int

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "classifier": self.classifier,
            "seed": self.seed,
            "pooled": None if self.pooled is None else asdict(self.pooled),
            "macro": self.macro,
            "per_user": {u: asdict(m) for u, m in self.per_user.items()},
            "skipped": self.skipped,
            "n_predictions": len(self.predictions),
            "units": [
                {
                    "name": u.name,
                    "test_user": u.test_user,
                    "n_train": len(u.train_ids),
                    "n_test": len(u.test_ids),
                    "n_held_out": len(u.held_out_ids),
                    "selected": [] if u.trace is None else [AGGREGATE_NAMES[f] for f in u.trace.subset],
                    "stop_reason": None if u.trace is None else u.trace.stop_reason,
                    "similar_users": list(u.similar_users),
                    "warnings": u.warnings,
                }
                for u in self.units
            ],
        }


def _user_seed(seed: int, user: str, *extra: int) -> list[int]:
    return [int(seed), zlib.crc32(user.encode("utf-8")), *extra]


def _group(observations: Iterable[Observation]) -> dict[str, tuple[np.ndarray, np.ndarray, list]]:
    by_user: dict[str, list[Observation]] = {}
    for o in observations:
        by_user.setdefault(o.user_id, []).append(o)
    out = {}
    for u in sorted(by_user):
        obs = sorted(by_user[u], key=lambda o: o.survey_ts)
        X, y = feature_matrix(obs)
        out[u] = (X, y, [o.key for o in obs])
    return out


def _fit_predict(cfg: EvalConfig, X_tr, y_tr, X_te, inner_folds, rng_seed) -> tuple[np.ndarray, SelectionTrace | None, list[str]]:
    factory = make_classifier(cfg.classifier, seed=0, max_depth=cfg.max_depth, min_leaf=cfg.min_leaf)
    warnings = []
    trace = None
    subset = list(range(X_tr.shape[1]))
    if cfg.classifier == "random":
        subset = []
    elif len(np.unique(y_tr)) < 2:
        subset = []
        warnings.append("single class in training data; feature selection skipped")
    elif cfg.select_features:
        try:
            folds = inner_folds()
            trace = forward_select(
                X_tr, y_tr, factory, folds, cfg.max_features, cfg.patience, cfg.min_delta, AGGREGATE_NAMES
            )
            subset = trace.subset
        except FoldError as exc:
            warnings.append(f"feature selection skipped: {exc}")
    model = fit_classifier(factory, X_tr[:, subset], y_tr)
    if isinstance(model, RandomClassifier):
        pred = model.predict(X_te[:, subset], np.random.default_rng(rng_seed))
    else:
        pred = model.predict(X_te[:, subset])
    return pred, trace, warnings


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _assemble(scheme, cfg, seed, per_unit, data, skipped) -> EvalReport:
    units, predictions = [], []
    for unit, recs in per_unit:
        units.append(unit)
        predictions.extend(recs)
    per_user = {}
    for u in sorted({r.user_id for r in predictions}):
        rs = [r for r in predictions if r.user_id == u]
        per_user[u] = metrics([r.true for r in rs], [r.predicted for r in rs])
    pooled = metrics([r.true for r in predictions], [r.predicted for r in predictions]) if predictions else None
    macro = {}
    for name in ("accuracy", "mae", "rmse", "pearson", "spearman", "acc1"):
        vals = [getattr(m, name) for m in per_user.values()]
        vals = [v for v in vals if v is not None]
        macro[name] = float(np.mean(vals)) if vals else None
    for w in (w for u in units for w in u.warnings):
        logger.warning(w)
    return EvalReport(scheme, cfg.classifier, pooled, per_user, macro, predictions, units, skipped, seed)


def _records(user, ids, y, pred):
    return [PredictionRecord(user, int(k[1]), int(t), int(p)) for k, t, p in zip(ids, y, pred)]


# --- user-specific -----------------------------------------------------------


def _user_specific_unit(args):
    cfg, seed, user, X, y, ids = args
    out = []
    outer = stratified_kfold(y, cfg.folds, _user_seed(seed, user))
    for f, (tr, te) in enumerate(outer):
        inner = lambda: stratified_kfold(y[tr], cfg.folds, _user_seed(seed, user, f + 1))
        pred, trace, warns = _fit_predict(cfg, X[tr], y[tr], X[te], inner, _user_seed(seed, user, f + 1, 7))
        unit = EvalUnit(
            f"{user}/fold{f + 1}", user, frozenset(ids[i] for i in tr), frozenset(ids[i] for i in te), trace=trace, warnings=warns
        )
        out.append((unit, _records(user, [ids[i] for i in te], y[te], pred)))
    return out


def run_user_specific(observations: Sequence[Observation], seed: int = 0, config: EvalConfig | None = None) -> EvalReport:
    """Stratified k-fold CV within each user; selection runs on each training side."""
    cfg = config or EvalConfig()
    data = _group(observations)
    skipped, jobs = {}, []
    for u, (X, y, ids) in data.items():
        if len(y) < cfg.min_user_obs:
            skipped[u] = f"{len(y)} observations (< {cfg.min_user_obs})"
        elif len(np.unique(y)) < 2:
            skipped[u] = "single stress level"
        else:
            jobs.append((cfg, seed, u, X, y, ids))
    for u, why in skipped.items():
        logger.warning("user-specific: skipping %s: %s", u, why)
    per_unit = [item for res in _map(_user_specific_unit, jobs, cfg.workers) for item in res]
    return _assemble("user-specific", cfg, seed, per_unit, data, skipped)


# --- general (leave one person out) ---------------------------------------------


def _pool(data, users):
    X = np.vstack([data[u][0] for u in users])
    y = np.concatenate([data[u][1] for u in users])
    groups = np.concatenate([[u] * len(data[u][1]) for u in users])
    ids = [k for u in users for k in data[u][2]]
    return X, y, groups, ids


def _inner_folds(y, groups, cfg, seed_words):
    def make():
        if len(set(groups.tolist())) >= 2:
            return leave_one_group_out(groups)
        return stratified_kfold(y, cfg.folds, seed_words)
    return make


def _general_unit(args):
    cfg, seed, user, data = args
    others = [u for u in data if u != user]
    X_tr, y_tr, groups, train_ids = _pool(data, others)
    X_te, y_te, ids_te = data[user]
    pred, trace, warns = _fit_predict(
        cfg, X_tr, y_tr, X_te, _inner_folds(y_tr, groups, cfg, _user_seed(seed, user, 1)), _user_seed(seed, user, 7)
    )
    unit = EvalUnit(f"lopo/{user}", user, frozenset(train_ids), frozenset(ids_te), trace=trace, warnings=warns)
    return [(unit, _records(user, ids_te, y_te, pred))]


def run_general(observations: Sequence[Observation], seed: int = 0, config: EvalConfig | None = None) -> EvalReport:
    """Leave one person out: each user is tested on a model trained on all others."""
    cfg = config or EvalConfig()
    data = _group(observations)
    if len(data) < 3:
        raise ValueError(f"the general scheme needs at least 3 users, got {len(data)}")
    jobs = [(cfg, seed, u, data) for u in data]
    per_unit = [item for res in _map(_general_unit, jobs, cfg.workers) for item in res]
    return _assemble("general", cfg, seed, per_unit, data, {})


# --- similar users ----------------------------------------------------------------


def _similar_unit(args):
    cfg, seed, user, data = args
    X_t, y_t, ids_t = data[user]
    sim = select_similar_users(user, {u: (d[0], d[1]) for u, d in data.items()}, cfg.p, cfg.k_max, cfg.restarts, _user_seed(seed, user))
    held = set(sim.held_out.tolist())
    keep = np.array([i for i in range(len(y_t)) if i not in held], dtype=np.int64)
    X_tr, y_tr, groups, train_ids = _pool(data, sim.similar)
    pred, trace, warns = _fit_predict(
        cfg, X_tr, y_tr, X_t[keep], _inner_folds(y_tr, groups, cfg, _user_seed(seed, user, 1)), _user_seed(seed, user, 7)
    )
    cluster = None
    if sim.clustering is not None:
        c = sim.clustering
        widths = silhouette_samples(sim.vectors, c.labels) if c.n_nonempty >= 2 else np.zeros(len(c.labels))
        cluster = {
            "k": c.k,
            "silhouette": c.silhouette,
            "members": [
                {"user_id": u, "cluster_id": int(lab), "silhouette_width": float(w)}
                for u, lab, w in zip(sim.candidates, c.labels, widths)
            ],
        }
    unit = EvalUnit(
        f"similar/{user}",
        user,
        frozenset(train_ids),
        frozenset(ids_t[i] for i in keep),
        frozenset(ids_t[i] for i in sim.held_out),
        trace=trace,
        similar_users=tuple(sim.similar),
        cluster=cluster,
        warnings=sim.warnings + warns,
    )
    return [(unit, _records(user, [ids_t[i] for i in keep], y_t[keep], pred))]


def run_similar_users(observations: Sequence[Observation], seed: int = 0, config: EvalConfig | None = None) -> EvalReport:
    """Per test user: cluster behaviour vectors, train on the nearest cluster's
    users, evaluate on the test user's observations not used for matching."""
    cfg = config or EvalConfig()
    data = _group(observations)
    if len(data) < 4:
        raise ValueError(f"the similar-users scheme needs at least 4 users, got {len(data)}")
    skipped, jobs = {}, []
    for u, (X, y, ids) in data.items():
        if len(y) < 2:
            skipped[u] = f"{len(y)} observation(s); nothing left to evaluate after matching"
        else:
            jobs.append((cfg, seed, u, data))
    per_unit = [item for res in _map(_similar_unit, jobs, cfg.workers) for item in res]
    return _assemble("similar-users", cfg, seed, per_unit, data, skipped)


def run_scheme(scheme: str, observations: Sequence[Observation], seed: int = 0, config: EvalConfig | None = None) -> EvalReport:
    runners = {"user-specific": run_user_specific, "general": run_general, "similar-users": run_similar_users}
    if scheme not in runners:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return runners[scheme](observations, seed, config)
