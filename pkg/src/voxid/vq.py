"""Vector-quantisation speaker models.

Each speaker is summarised by a K-entry codebook fitted with Lloyd's
algorithm (k-means++ seeding). A test utterance is scored against a codebook
by its average quantisation distortion: the mean, over frames, of the
Euclidean distance to the nearest centroid. Lower is better.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .features import as_features
from .prng import XorShift64Star

DEFAULT_K = 16
DEFAULT_MAX_ITER = 100

# rows per block when forming (T, K, D) difference tensors
_CHUNK = 2048


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray
    train_frames: int = 0
    # mean squared distortion at every assignment step; not persisted
    history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError(f"centroids must be a non-empty 2-D array, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("centroids contain non-finite values")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.train_frames == other.train_frames and np.array_equal(
            self.centroids, other.centroids
        )

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


class VqScore(NamedTuple):
    speaker_id: str
    distortion: float


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """(T, K) matrix of squared Euclidean distances, computed from explicit
    differences rather than the |x|^2 - 2x.c + |c|^2 expansion so that exact
    matches give exactly zero."""
    out = np.empty((X.shape[0], C.shape[0]))
    for s in range(0, X.shape[0], _CHUNK):
        diff = X[s : s + _CHUNK, None, :] - C[None, :, :]
        out[s : s + _CHUNK] = np.einsum("tkd,tkd->tk", diff, diff)
    return out


def kmeans_plus_plus(X: np.ndarray, k: int, rng: XorShift64Star) -> np.ndarray:
    """D^2-weighted seeding. Each draw walks the cumulative weight vector with
    one uniform variate from ``rng``."""
    T = X.shape[0]
    chosen = [rng.below(T)]
    d2 = squared_distances(X, X[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        cum = np.cumsum(d2)
        total = cum[-1]
        if total <= 0.0:
            raise ValueError(f"fewer than {k} distinct feature vectors; cannot seed {k} centroids")
        idx = int(np.searchsorted(cum, rng.uniform() * total, side="right"))
        idx = min(idx, T - 1)
        while d2[idx] == 0.0:  # guard against landing on a flat stretch at the end
            idx -= 1
        chosen.append(idx)
        d2 = np.minimum(d2, squared_distances(X, X[idx][None, :])[:, 0])
    return X[chosen].copy()


def lloyd(
    X: np.ndarray, init: np.ndarray, max_iter: int = DEFAULT_MAX_ITER
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Run Lloyd iterations from ``init``.

    Returns ``(centroids, labels, history)`` where ``history[i]`` is the mean
    squared distance of every row to its nearest centroid at assignment step
    i. ``labels`` are the nearest-centroid indices for the returned centroids.

    An empty cluster's centroid is moved onto the row lying farthest from its
    own (updated) centroid; rows already used for a repair in the same
    iteration are skipped.
    """
    centroids = init.astype(np.float64, copy=True)
    k = centroids.shape[0]
    rows = np.arange(X.shape[0])
    labels = None
    history: list[float] = []
    for _ in range(max_iter):
        d2 = squared_distances(X, centroids)
        new = np.argmin(d2, axis=1)
        history.append(float(np.mean(d2[rows, new])))
        if labels is not None and np.array_equal(new, labels):
            return centroids, labels, history
        labels = new

        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, X)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            own = np.sum((X - centroids[labels]) ** 2, axis=1)
            order = np.argsort(-own, kind="stable")
            for n, j in enumerate(np.flatnonzero(~filled)):
                centroids[j] = X[order[n]]

    d2 = squared_distances(X, centroids)
    labels = np.argmin(d2, axis=1)
    history.append(float(np.mean(d2[rows, labels])))
    return centroids, labels, history


def fit_clusters(
    X, k: int, seed: int = 0, max_iter: int = DEFAULT_MAX_ITER
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """k-means with k-means++ seeding; see :func:`lloyd` for the return value."""
    X = as_features(X)
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if X.shape[0] < k:
        raise ValueError(f"not enough frames: {X.shape[0]} rows for k={k} clusters")
    init = kmeans_plus_plus(X, k, XorShift64Star(seed))
    return lloyd(X, init, max_iter)


def kmeans_fit(X, k: int = DEFAULT_K, seed: int = 0, max_iter: int = DEFAULT_MAX_ITER) -> Codebook:
    centroids, _, history = fit_clusters(X, k, seed, max_iter)
    return Codebook(centroids, train_frames=int(np.shape(X)[0]), history=tuple(history))


def quantization_distortion(X, codebook: Codebook | np.ndarray) -> float:
    """Average over frames of the Euclidean distance to the nearest centroid."""
    C = codebook.centroids if isinstance(codebook, Codebook) else np.asarray(codebook, dtype=np.float64)
    X = as_features(X, dim=C.shape[1])
    if X.shape[0] == 0:
        raise ValueError("cannot score an empty feature matrix")
    nearest = np.sqrt(squared_distances(X, C).min(axis=1))
    return float(nearest.mean())


def vq_identify(X, codebooks: Mapping[str, Codebook]) -> list[VqScore]:
    """Score X against every codebook; ascending distortion, ties by name."""
    if not codebooks:
        raise ValueError("no codebooks registered")
    scores = [VqScore(sid, quantization_distortion(X, cb)) for sid, cb in codebooks.items()]
    return sorted(scores, key=lambda s: (s.distortion, s.speaker_id))
