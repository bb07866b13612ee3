"""Diagonal-covariance Gaussian mixture speaker models trained with EM.

All density arithmetic stays in the log domain; mixture sums go through
:func:`logsumexp`. Scores are per-frame averages of the log-likelihood so
utterances of different length are comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .features import as_features
from .vq import fit_clusters

LOG_2PI = float(np.log(2.0 * np.pi))

DEFAULT_M = 4
DEFAULT_MAX_ITER = 12
DEFAULT_TOL = 1e-5
STARVATION_FRACTION = 1e-6


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        mu = np.array(self.means, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64)
        if w.ndim != 1 or mu.ndim != 2 or mu.shape != var.shape or mu.shape[0] != w.shape[0]:
            raise ValueError(
                f"inconsistent GMM shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise ValueError("GMM parameters must be finite")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must be positive and sum to 1, got sum {w.sum()!r}")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        for a in (w, mu, var):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GmmModel):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )


@dataclass(frozen=True)
class EmTrace:
    log_likelihoods: tuple  # average LL of the initial model, then after each iteration
    iterations_run: int
    converged: bool


class GmmScore(NamedTuple):
    speaker_id: str
    log_likelihood: float


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return np.squeeze(out, axis=axis)


def log_gaussian(x, mu, var) -> float:
    """log N(x; mu, diag(var))."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if not x.shape == mu.shape == var.shape:
        raise ValueError(f"dimension mismatch: x {x.shape}, mu {mu.shape}, var {var.shape}")
    if np.any(var <= 0):
        raise ValueError("variance entries must be positive")
    D = x.shape[0]
    return float(-0.5 * (D * LOG_2PI + np.sum(np.log(var)) + np.sum((x - mu) ** 2 / var)))


def component_log_densities(X: np.ndarray, model: GmmModel) -> np.ndarray:
    """(T, M) matrix of log g(x_t | mu_i, var_i), without the mixture weights."""
    const = -0.5 * (model.dim * LOG_2PI + np.sum(np.log(model.variances), axis=1))
    out = np.empty((X.shape[0], model.m))
    for i in range(model.m):
        z = (X - model.means[i]) ** 2 / model.variances[i]
        out[:, i] = const[i] - 0.5 * z.sum(axis=1)
    return out


def _check(X, model: GmmModel) -> np.ndarray:
    X = as_features(X, dim=model.dim)
    if X.shape[0] == 0:
        raise ValueError("cannot score an empty feature matrix")
    return X


def frame_log_likelihoods(X, model: GmmModel) -> np.ndarray:
    X = _check(X, model)
    return logsumexp(component_log_densities(X, model) + np.log(model.weights), axis=1)


def gmm_log_likelihood(X, model: GmmModel) -> float:
    """Average per-frame log p(x_t | model)."""
    return float(np.mean(frame_log_likelihoods(X, model)))


def e_step(X, model: GmmModel) -> tuple[np.ndarray, float]:
    """Posterior responsibilities (T, M) and the average log-likelihood."""
    X = _check(X, model)
    joint = component_log_densities(X, model) + np.log(model.weights)
    frame_ll = logsumexp(joint, axis=1)
    gamma = np.exp(joint - frame_ll[:, None])
    return gamma, float(np.mean(frame_ll))


def variance_floor(X: np.ndarray) -> np.ndarray:
    return np.maximum(1e-4 * X.var(axis=0), 1e-8)


def m_step(X, gamma, var_floor: np.ndarray | None = None) -> GmmModel:
    """Maximum-likelihood re-estimation from responsibilities.

    A component whose soft count falls below ``1e-6 * T`` is restarted: its
    mean moves to the frame that the surviving components explain worst, its
    variance resets to the global variance and its weight to 1/M before the
    weights are renormalised.
    """
    X = as_features(X)
    gamma = np.asarray(gamma, dtype=np.float64)
    T, D = X.shape
    if T < 1:
        raise ValueError("m_step needs at least one frame")
    if gamma.shape[0] != T:
        raise ValueError(f"responsibilities have {gamma.shape[0]} rows for {T} frames")
    M = gamma.shape[1]
    if var_floor is None:
        var_floor = variance_floor(X)

    N = gamma.sum(axis=0)
    alive = N >= STARVATION_FRACTION * T
    weights = np.empty(M)
    means = np.empty((M, D))
    variances = np.empty((M, D))
    for i in np.flatnonzero(alive):
        g = gamma[:, i]
        means[i] = g @ X / N[i]
        variances[i] = g @ (X - means[i]) ** 2 / N[i]
        weights[i] = N[i] / T
    variances = np.maximum(variances, var_floor)

    starved = np.flatnonzero(~alive)
    if starved.size:
        survivors = GmmModel(
            weights[alive] / weights[alive].sum(), means[alive], variances[alive]
        )
        worst = np.argsort(frame_log_likelihoods(X, survivors), kind="stable")
        global_var = np.maximum(X.var(axis=0), var_floor)
        for n, i in enumerate(starved):
            means[i] = X[worst[n % T]]
            variances[i] = global_var
            weights[i] = 1.0 / M
    weights = weights / weights.sum()
    return GmmModel(weights, means, variances)


def init_from_kmeans(X: np.ndarray, m: int, seed: int, var_floor: np.ndarray) -> GmmModel:
    centroids, labels, _ = fit_clusters(X, m, seed)
    T = X.shape[0]
    counts = np.bincount(labels, minlength=m).astype(np.float64)
    variances = np.empty_like(centroids)
    for i in range(m):
        members = X[labels == i]
        if members.shape[0]:
            variances[i] = np.mean((members - centroids[i]) ** 2, axis=0)
        else:
            variances[i] = X.var(axis=0)
    variances = np.maximum(variances, var_floor)
    counts = np.maximum(counts, 1.0)
    return GmmModel(counts / counts.sum() if T else counts, centroids, variances)


def em_fit(
    X,
    m: int = DEFAULT_M,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> tuple[GmmModel, EmTrace]:
    """Fit an m-component diagonal GMM.

    Starts from k-means (means = centroids, variances = cluster variances,
    weights = occupancies) and alternates E and M steps until the relative
    change of the average log-likelihood drops below ``tol`` or ``max_iter``
    iterations have run.
    """
    X = as_features(X)
    if m < 1:
        raise ValueError("m must be >= 1")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if X.shape[0] < m:
        raise ValueError(f"not enough frames: {X.shape[0]} rows for m={m} components")

    floor = variance_floor(X)
    model = init_from_kmeans(X, m, seed, floor)
    gamma, ll = e_step(X, model)
    trace = [ll]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        model = m_step(X, gamma, floor)
        gamma, new_ll = e_step(X, model)
        trace.append(new_ll)
        if abs(new_ll - ll) < tol * abs(ll):
            converged = True
            break
        ll = new_ll
    return model, EmTrace(tuple(trace), it, converged)


def gmm_identify(X, models: Mapping[str, GmmModel]) -> list[GmmScore]:
    """Score X against every model; descending average log-likelihood, ties by name."""
    if not models:
        raise ValueError("no GMM models registered")
    scores = [GmmScore(sid, gmm_log_likelihood(X, mdl)) for sid, mdl in models.items()]
    return sorted(scores, key=lambda s: (-s.log_likelihood, s.speaker_id))
