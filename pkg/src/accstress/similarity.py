"""Behaviour vectors, k-means with silhouette-based k, and the choice of
similar users for a test user."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exploratory import LEVEL_PAIRS

logger = logging.getLogger(__name__)

MAX_ITER = 300
N_BLOCKS = len(LEVEL_PAIRS)


@dataclass(frozen=True, eq=False)
class BehaviorVector:
    """Median differences per (level pair, feature), blocks in LEVEL_PAIRS order."""

    user_id: str
    entries: np.ndarray
    mask: np.ndarray  # (3,) which blocks are defined

    @property
    def n_features(self) -> int:
        return len(self.entries) // N_BLOCKS

    @property
    def usable(self) -> bool:
        return bool(self.mask.any())

    def columns(self, blocks: Sequence[int]) -> np.ndarray:
        f = self.n_features
        return np.concatenate([self.entries[b * f : (b + 1) * f] for b in blocks]) if len(blocks) else np.zeros(0)


def behavior_vector(user_id: str, X: np.ndarray, y: np.ndarray, features: Sequence[int] | None = None) -> BehaviorVector:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError(f"user {user_id} has no observations")
    if features is not None:
        X = X[:, list(features)]
    f = X.shape[1]
    entries = np.full(N_BLOCKS * f, np.nan)
    mask = np.zeros(N_BLOCKS, dtype=bool)
    for b, (lo, hi) in enumerate(LEVEL_PAIRS):
        if np.any(y == lo) and np.any(y == hi):
            entries[b * f : (b + 1) * f] = np.median(X[y == lo], axis=0) - np.median(X[y == hi], axis=0)
            mask[b] = True
    if not mask.any():
        logger.info("user %s has a single stress level; behaviour vector unusable", user_id)
    return BehaviorVector(user_id, entries, mask)


@dataclass
class Clustering:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    silhouette: float
    wcss: float
    wcss_history: list[float] = field(default_factory=list)
    degenerate: bool = False

    @property
    def n_nonempty(self) -> int:
        return len(np.unique(self.labels))


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return np.maximum(((X[:, None, :] - C[None]) ** 2).sum(axis=2), 0.0)


def _wcss(X, labels, C) -> float:
    return float(((X - C[labels]) ** 2).sum())


def _plus_plus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [int(rng.integers(n))]
    d2 = _sq_dist(X, X[centers]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        nxt = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        centers.append(nxt)
        d2 = np.minimum(d2, _sq_dist(X, X[[nxt]])[:, 0])
    return X[centers].copy()


def _fill_empty(X, labels, C, k) -> np.ndarray:
    """Move the point farthest from its centroid into each empty cluster."""
    labels = labels.copy()
    dist = ((X - C[labels]) ** 2).sum(axis=1)
    for j in range(k):
        sizes = np.bincount(labels, minlength=k)
        if sizes[j] > 0:
            continue
        movable = sizes[labels] > 1
        cand = np.where(movable, dist, -1.0)
        p = int(np.argmax(cand))
        if cand[p] <= 0:
            continue  # all remaining points sit on their centroids
        labels[p] = j
        dist[p] = 0.0
    return labels


def _centroids(X, labels, C_prev, k) -> np.ndarray:
    C = C_prev.copy()
    for j in range(k):
        m = labels == j
        if m.any():
            C[j] = X[m].mean(axis=0)
    return C


def _lloyd(X, k, rng, max_iter):
    C = _plus_plus_init(X, k, rng)
    labels = _fill_empty(X, np.argmin(_sq_dist(X, C), axis=1), C, k)
    C = _centroids(X, labels, C, k)
    history = [_wcss(X, labels, C)]
    for _ in range(max_iter):
        new = _fill_empty(X, np.argmin(_sq_dist(X, C), axis=1), C, k)
        if np.array_equal(new, labels):
            break
        labels = new
        C = _centroids(X, labels, C, k)
        history.append(_wcss(X, labels, C))
    return labels, C, history


def silhouette_samples(X: np.ndarray, labels) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise ValueError("silhouette needs at least two non-empty clusters")
    D = np.sqrt(_sq_dist(X, X))
    s = np.zeros(len(X))
    for i in range(len(X)):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == c].mean() for c in clusters if c != labels[i])
        top = max(a, b)
        s[i] = 0.0 if top == 0 else (b - a) / top
    return s


def silhouette(X: np.ndarray, labels) -> float:
    return float(np.mean(silhouette_samples(X, labels)))


def kmeans(vectors, k: int, restarts: int = 10, seed=0, max_iter: int = MAX_ITER) -> Clustering:
    """Lloyd's k-means, best of ``restarts`` k-means++ starts by WCSS.

    Distances are Euclidean on the vectors as given; callers standardise.
    A clustering with fewer than two non-empty clusters reports a
    silhouette of 0 and ``degenerate=True``.
    """
    X = np.asarray(vectors, dtype=float)
    n = len(X)
    if k < 1 or n < k:
        raise ValueError(f"cannot form {k} clusters from {n} vectors")
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        labels, C, history = _lloyd(X, k, np.random.default_rng(child), max_iter)
        if best is None or history[-1] < best[2][-1]:
            best = (labels, C, history)
    labels, C, history = best
    if len(np.unique(labels)) < 2:
        return Clustering(k, labels, C, 0.0, history[-1], history, degenerate=True)
    return Clustering(k, labels, C, silhouette(X, labels), history[-1], history)


def select_k(vectors, k_max: int = 5, restarts: int = 10, seed=0) -> tuple[int, Clustering]:
    """k in 2..min(k_max, n-1) with the largest silhouette; ties go to smaller k."""
    X = np.asarray(vectors, dtype=float)
    if len(X) < 3:
        raise ValueError("select_k needs at least 3 vectors")
    best = None
    for k in range(2, min(k_max, len(X) - 1) + 1):
        seed_k = [*np.atleast_1d(seed).tolist(), k]
        c = kmeans(X, k, restarts, seed_k)
        if best is None or c.silhouette > best.silhouette:
            best = c
    return best.k, best


def stratified_subset(y, p: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of a class-stratified random ``p`` percent of ``y``.

    The total is round-half-up(n*p/100); quotas follow largest remainders and
    every class gets at least one slot when the total allows it.
    """
    y = np.asarray(y)
    n = len(y)
    if not 0 < p <= 100:
        raise ValueError("p must be in (0, 100]")
    target = int(math.floor(n * p / 100 + 0.5))
    classes, counts = np.unique(y, return_counts=True)
    exact = counts * p / 100
    quota = np.floor(exact).astype(int)
    order = np.lexsort((classes, -(exact - quota)))
    for i in order[: target - quota.sum()]:
        quota[i] += 1
    if target >= len(classes):
        for i in np.flatnonzero(quota == 0):
            donor = int(np.argmax(quota))
            quota[donor] -= 1
            quota[i] += 1
    picked = []
    for c, q in zip(classes, quota):
        idx = np.flatnonzero(y == c)
        picked.extend(idx[rng.permutation(len(idx))[:q]].tolist())
    return np.array(sorted(picked), dtype=np.int64)


@dataclass
class SimilarUsers:
    test_user: str
    similar: list[str]
    held_out: np.ndarray  # indices into the test user's observations
    blocks: list[int]
    candidates: list[str]
    clustering: Clustering | None = None
    vectors: np.ndarray | None = None  # standardised candidate vectors
    warnings: list[str] = field(default_factory=list)

    @property
    def k(self) -> int | None:
        return None if self.clustering is None else self.clustering.k


def select_similar_users(
    test_user: str,
    data: Mapping[str, tuple[np.ndarray, np.ndarray]],
    p: float = 50,
    k_max: int = 5,
    restarts: int = 10,
    seed=0,
) -> SimilarUsers:
    """Pick the training users whose behaviour resembles ``test_user``.

    ``data`` maps each user to ``(X, y)``.  The test user's behaviour vector
    is built from a stratified ``p`` percent subset (returned as
    ``held_out`` so evaluation can exclude it).  Only the level-pair blocks
    the test user has are compared; candidates lacking one of them are left
    out.  Coordinates are standardised across candidates before k-means.
    """
    X_t, y_t = data[test_user]
    rng = np.random.default_rng(np.random.SeedSequence([*np.atleast_1d(seed).tolist(), 0]))
    held = stratified_subset(y_t, p, rng)
    if len(held) >= len(y_t):
        raise ValueError(f"p={p} leaves no evaluation observations for user {test_user}")
    others = sorted(u for u in data if u != test_user)
    b_t = behavior_vector(test_user, X_t[held], y_t[held])
    blocks = [int(b) for b in np.flatnonzero(b_t.mask)]
    result = SimilarUsers(test_user, list(others), held, blocks, others)
    if not blocks:
        result.warnings.append(f"{test_user}: held-out subset has a single stress level; using all other users")
        logger.info(result.warnings[-1])
        return result

    usable, rows = [], []
    for u in others:
        b = behavior_vector(u, *data[u])
        if b.mask[blocks].all():
            usable.append(u)
            rows.append(b.columns(blocks))
    result.candidates = usable
    if len(usable) < 3:
        result.warnings.append(f"{test_user}: only {len(usable)} usable candidate(s); using all other users")
        logger.info(result.warnings[-1])
        return result

    B = np.vstack(rows)
    mu = B.mean(axis=0)
    sd = B.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = (B - mu) / sd
    z_t = (b_t.columns(blocks) - mu) / sd
    _, clustering = select_k(Z, k_max, restarts, seed)
    present = np.unique(clustering.labels)
    d = ((clustering.centroids[present] - z_t) ** 2).sum(axis=1)
    nearest = present[int(np.argmin(d))]
    result.similar = [u for u, lab in zip(usable, clustering.labels) if lab == nearest]
    result.clustering = clustering
    result.vectors = Z
    return result
