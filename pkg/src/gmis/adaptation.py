"""Fitting mixture proposals to chain samples and the adaptive sampling loop.

All estimators work on the first ``K`` spectral coefficients of the samples.
A component is fitted from (possibly soft) sample weights ``q`` by

    m_k = sum_n q_n u_k^n / sum_n q_n,    x_k = m_k / alpha_k,
    h_k = sum_n q_n / sum_n q_n (m_k - u_k^n)^2 - 1 / alpha_k,

which is the explicit KL-optimal single Gaussian for ``q = 1``, the cluster
estimate for indicator weights and the EM M-step for responsibilities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateClusterError, ParameterError
from .proposal_measures import (
    GaussianComponent,
    MixtureProposal,
    clamp_h,
    component_log_densities,
    log_density_mixture,
)
from .samplers import ChainState, ChainTrace, Posterior, is_block, make_schedule
from .spectral_prior import SpectralBasis, truncation_dim

log = logging.getLogger(__name__)

# sample variance below this fraction of the prior variance counts as collapsed
DEGENERATE_VAR = 1e-14
KMEANS_MAX_ITER = 300
KMEANS_RESTARTS = 5


def _head(samples, K: int) -> np.ndarray:
    U = np.atleast_2d(np.asarray(samples, float))
    if U.shape[1] < K:
        raise ParameterError(f"samples have {U.shape[1]} coefficients, need K={K}")
    return U[:, :K]


def _weighted_fit(U: np.ndarray, q: np.ndarray, alpha: np.ndarray):
    """``(x, h, mass)`` from sample weights ``q``; raises on collapsed variance."""
    mass = q.sum()
    if mass <= 0:
        raise DegenerateClusterError("cluster has no mass")
    x = (q @ U) / (mass * alpha)
    var = (q @ (alpha * x - U) ** 2) / mass
    if np.any(~(var > DEGENERATE_VAR * alpha)):
        bad = np.flatnonzero(~(var > DEGENERATE_VAR * alpha)) + 1
        raise DegenerateClusterError(f"zero sample variance in modes {bad.tolist()}")
    h = clamp_h(1.0 / var - 1.0 / alpha, alpha)
    return x, h, mass


def fit_single_gaussian(samples, basis: SpectralBasis, K: int | None = None) -> GaussianComponent:
    """Explicit KL-optimal Gaussian: sample mean and population variance per mode."""
    U = np.atleast_2d(np.asarray(samples, float))
    K = U.shape[1] if K is None else K
    U = _head(U, K)
    if U.shape[0] < 2:
        raise DegenerateClusterError("need at least two samples")
    x, h, _ = _weighted_fit(U, np.ones(U.shape[0]), basis.eigenvalues[:K])
    return GaussianComponent(x, h, 1.0)


# ------------------------------------------------------------------ k-means


@numba.njit(cache=True)
def _assign(U, cnt, centers, labels, dmin, sums, sizes):
    """Nearest-center assignment fused with per-cluster weighted sums."""
    n, K = U.shape
    J = centers.shape[0]
    sums[:] = 0.0
    sizes[:] = 0.0
    inertia = 0.0
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(J):
            d = 0.0
            for k in range(K):
                t = U[i, k] - centers[j, k]
                d += t * t
            if d < best:
                best = d
                arg = j
        labels[i] = arg
        dmin[i] = best
        inertia += cnt[i] * best
        sizes[arg] += cnt[i]
        for k in range(K):
            sums[arg, k] += cnt[i] * U[i, k]
    return inertia


def _kmeans_pp(U, cnt, J, rng):
    n = U.shape[0]
    centers = np.empty((J, U.shape[1]))
    centers[0] = U[rng.choice(n, p=cnt / cnt.sum())]
    d = np.sum((U - centers[0]) ** 2, axis=1)
    for j in range(1, J):
        p = cnt * d
        tot = p.sum()
        idx = rng.choice(n, p=p / tot) if tot > 0 else rng.integers(n)
        centers[j] = U[idx]
        d = np.minimum(d, np.sum((U - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(U, cnt, centers, max_iter=KMEANS_MAX_ITER):
    n, K = U.shape
    J = centers.shape[0]
    U = np.ascontiguousarray(U)
    centers = np.ascontiguousarray(centers, dtype=float)
    labels = np.empty(n, dtype=np.int64)
    prev = np.full(n, -1, dtype=np.int64)
    dmin = np.empty(n)
    sums = np.empty((J, K))
    sizes = np.empty(J)
    history = []
    for _ in range(max_iter):
        history.append(_assign(U, cnt, centers, labels, dmin, sums, sizes))
        if np.array_equal(labels, prev):
            break
        prev[:] = labels
        for j in np.flatnonzero(sizes == 0):
            # re-seed an empty cluster at the point farthest from its centroid
            far = int(np.argmax(dmin))
            sums[j] = U[far]
            sizes[j] = 1.0
            dmin[far] = 0.0
        centers = sums / sizes[:, None]
    inertia = _assign(U, cnt, centers, labels, dmin, sums, sizes)
    history.append(inertia)
    return labels.copy(), centers, inertia, history


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list = field(default_factory=list)


def _dedup(X):
    """Distinct rows, row index of every sample, and multiplicities."""
    uniq, inverse, cnt = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    return uniq, inverse.reshape(-1), cnt.astype(float)


def _kmeans_weighted(uniq, cnt, J, rng, n_init=KMEANS_RESTARTS) -> KMeansResult:
    """k-means on distinct points carrying multiplicities ``cnt``."""
    if J == 1:
        c = (cnt @ uniq) / cnt.sum()
        inertia = float(cnt @ np.sum((uniq - c) ** 2, axis=1))
        return KMeansResult(np.zeros(uniq.shape[0], dtype=np.int64), c[None], inertia, [inertia])
    best = None
    for _ in range(n_init):
        res = _lloyd(uniq, cnt, _kmeans_pp(uniq, cnt, J, rng))
        if best is None or res[2] < best[2]:
            best = res
    labels, centers, inertia, history = best
    return KMeansResult(labels.astype(np.int64), centers, inertia, history)


def kmeans_fit(samples, J: int, rng, n_init: int = KMEANS_RESTARTS) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts.

    Duplicate rows (rejected MCMC moves) are collapsed into weighted points,
    which leaves the objective and assignments unchanged. Iteration stops
    when the assignment no longer changes.
    """
    X = np.atleast_2d(np.asarray(samples, float))
    if J < 1 or X.shape[0] < J:
        raise ParameterError("need 1 <= J <= number of samples")
    uniq, inverse, cnt = _dedup(X)
    res = _kmeans_weighted(uniq, cnt, J, rng, n_init)
    res.labels = res.labels[inverse]
    return res


def kmeans(samples, J: int, rng, n_init: int = KMEANS_RESTARTS) -> np.ndarray:
    """Cluster index per sample."""
    return kmeans_fit(samples, J, rng, n_init).labels


# -------------------------------------------------------- clustering estimate
# These helpers work on distinct points ``P`` with multiplicities ``cnt``.


def _centroids(P, cnt, labels, ids):
    return {i: (cnt[labels == i] @ P[labels == i]) / cnt[labels == i].sum() for i in ids}


def _merge_into_nearest(P, cnt, labels, j, ids):
    cent = _centroids(P, cnt, labels, ids)
    others = [i for i in ids if i != j]
    target = min(others, key=lambda i: float(np.sum((cent[i] - cent[j]) ** 2)))
    labels[labels == j] = target


def _merge_small(P, cnt, labels, min_distinct):
    """Merge clusters with fewer than ``min_distinct`` distinct states into their nearest neighbour.

    Chains of an independence sampler repeat rejected states, so a cluster can
    hold many samples but only a handful of distinct points; its variance
    estimate is then meaningless.
    """
    labels = labels.copy()
    while True:
        ids, distinct = np.unique(labels, return_counts=True)
        if ids.size <= 1 or distinct.min() >= min_distinct:
            return labels
        _merge_into_nearest(P, cnt, labels, ids[np.argmin(distinct)], ids)


def _fit_from_labels(P, cnt, labels, basis) -> tuple[MixtureProposal, bool]:
    """Per-cluster fits; collapsed clusters are merged into their nearest neighbour.

    Returns ``(proposal, degenerate)`` where ``degenerate`` means everything
    collapsed and the prior component was substituted.
    """
    labels = labels.copy()
    K = P.shape[1]
    alpha = basis.eigenvalues[:K]
    while True:
        ids = np.unique(labels)
        fits, bad = [], None
        for j in ids:
            try:
                fits.append(_weighted_fit(P, cnt * (labels == j), alpha))
            except DegenerateClusterError:
                bad = j
                break
        if bad is None:
            break
        if ids.size == 1:
            return MixtureProposal.prior(basis, K), True
        _merge_into_nearest(P, cnt, labels, bad, ids)
    n = cnt.sum()
    comps = tuple(GaussianComponent(x, h, mass / n) for x, h, mass in fits)
    return _normalized(comps, basis), False


def _normalized(comps, basis) -> MixtureProposal:
    w = np.array([c.w for c in comps])
    w = w / w.sum()
    return MixtureProposal(tuple(GaussianComponent(c.x, c.h, wj) for c, wj in zip(comps, w)), basis)


def _cluster_fit(P, cnt, J, basis, rng) -> tuple[MixtureProposal, bool]:
    K = P.shape[1]
    labels = _kmeans_weighted(P, cnt, J, rng).labels if J > 1 else np.zeros(P.shape[0], dtype=np.int64)
    labels = _merge_small(P, cnt, labels, 2 * K + 1)
    return _fit_from_labels(P, cnt, labels, basis)


def _mixture_logpdf(U, prop: MixtureProposal) -> np.ndarray:
    alpha = prop.basis.eigenvalues[: prop.K]
    beta = alpha / (1.0 + alpha * prop.H)
    mean = alpha * prop.X
    lp = -0.5 * (
        np.sum(np.log(2 * np.pi * beta), axis=1)[None, :]
        + ((U[:, None, :] - mean[None]) ** 2 / beta[None]).sum(axis=2)
    )
    with np.errstate(divide="ignore"):
        logw = np.log(prop.weights)
    return logsumexp(lp + logw, axis=1)


def gaussian_loglik(samples, prop: MixtureProposal) -> float:
    """Log-likelihood of the head coefficients under the mixture as a K-dim density."""
    return float(np.sum(_mixture_logpdf(_head(samples, prop.K), prop)))


def bic_scores(samples, basis: SpectralBasis, J_range, rng, K: int | None = None):
    """``{J: (bic, proposal)}`` for each candidate; degenerate fits score ``inf``."""
    U = np.atleast_2d(np.asarray(samples, float))
    K = U.shape[1] if K is None else K
    U = _head(U, K)
    N = U.shape[0]
    P, _, cnt = _dedup(U)
    out = {}
    for J in sorted(set(int(j) for j in J_range)):
        if J < 1 or J > P.shape[0]:
            continue
        prop, degenerate = _cluster_fit(P, cnt, J, basis, rng)
        if degenerate or N < 2 * K + 1:
            out[J] = (math.inf, prop)
            continue
        p = prop.J * (2 * K + 1) - 1
        loglik = float(cnt @ _mixture_logpdf(P, prop))
        out[J] = (-2.0 * loglik + p * math.log(N), prop)
    return out


def select_J(samples, basis: SpectralBasis, J_range, rng, K: int | None = None) -> int:
    """Number of clusters minimizing BIC; ties and all-degenerate go to the smallest J."""
    scores = bic_scores(samples, basis, J_range, rng, K)
    if not scores:
        raise ParameterError("no admissible J in J_range")
    return min(scores, key=lambda j: (scores[j][0], j))


def fit_mixture_clustering(
    samples, basis: SpectralBasis, J="auto", rng=None, K: int | None = None, J_range=(1, 2, 3, 4)
) -> MixtureProposal:
    """k-means clusters, one explicit Gaussian fit per cluster, weights = cluster fractions.

    Clusters backed by fewer than ``2K + 1`` distinct states are merged into
    their nearest neighbour.
    """
    U = np.atleast_2d(np.asarray(samples, float))
    K = U.shape[1] if K is None else K
    U = _head(U, K)
    if rng is None:
        rng = np.random.default_rng(0)
    if J == "auto":
        scores = bic_scores(U, basis, J_range, rng, K)
        if not scores:
            raise ParameterError("no admissible J in J_range")
        best = min(scores, key=lambda j: (scores[j][0], j))
        return scores[best][1]
    P, _, cnt = _dedup(U)
    if int(J) > P.shape[0]:
        raise ParameterError("J exceeds the number of distinct samples")
    return _cluster_fit(P, cnt, int(J), basis, rng)[0]


# ------------------------------------------------------------------------ EM


def em_objective(samples, prop: MixtureProposal) -> float:
    """``sum_n log sum_j w_j f(u^n; x_j, h_j)`` (the sample-average KL objective times N)."""
    return float(np.sum(log_density_mixture(_head(samples, prop.K), prop)))


def em_e_step(samples, prop: MixtureProposal) -> np.ndarray:
    """``(N, J)`` membership probabilities, normalized in log space."""
    U = _head(samples, prop.K)
    with np.errstate(divide="ignore"):
        lw = component_log_densities(U, prop) + np.log(prop.weights)
    return np.exp(lw - logsumexp(lw, axis=1, keepdims=True))


def em_m_step(samples, q, basis: SpectralBasis, K: int | None = None) -> MixtureProposal:
    """Weighted refit per component; vanished or collapsed components are dropped."""
    q = np.atleast_2d(np.asarray(q, float))
    N, J = q.shape
    U = np.atleast_2d(np.asarray(samples, float))
    U = _head(U, U.shape[1] if K is None else K)
    K = U.shape[1]
    alpha = basis.eigenvalues[:K]
    comps = []
    for j in range(J):
        if q[:, j].sum() < 1e-10 * N:
            log.info("EM component %d vanished; dropped", j)
            continue
        try:
            x, h, mass = _weighted_fit(U, q[:, j], alpha)
        except DegenerateClusterError:
            log.info("EM component %d collapsed; dropped", j)
            continue
        comps.append(GaussianComponent(x, h, mass / N))
    if not comps:
        raise DegenerateClusterError("every EM component vanished")
    return _normalized(tuple(comps), basis)


def em_fit(samples, init: MixtureProposal, max_iter: int = 200, tol: float = 1e-8):
    """Alternate E and M steps; returns ``(proposal, objective_trace)``.

    Stops when the relative objective improvement drops below ``tol``.
    """
    U = _head(samples, init.K)
    prop = init
    trace = [em_objective(U, prop)]
    for _ in range(max_iter):
        q = em_e_step(U, prop)
        prop = em_m_step(U, q, init.basis)
        trace.append(em_objective(U, prop))
        if abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-2])):
            break
    return prop, trace


# ----------------------------------------------------------- adaptive loop


ESTIMATORS = ("clustering", "em", "single")


@dataclass
class AdaptConfig:
    """Inputs of the adaptive independence sampler.

    ``n_tol`` draws are made in the main loop; the proposal is refitted from
    the full history after every ``n_adp`` draws while fewer than ``n_max``
    draws have been made. ``i_temp`` tempered stages of ``n_temp`` draws run
    first, with ``lambdas`` defaulting to an equally spaced schedule.
    """

    n_tol: int = 10_000
    n_adp: int = 1000
    n_max: int | None = None
    i_temp: int = 0
    n_temp: int = 500
    lambdas: tuple | None = None
    epsilon: float = 0.01
    estimator: str = "clustering"
    J: int | str = "auto"
    J_range: tuple = (1, 2, 3, 4)
    em_max_iter: int = 200

    def __post_init__(self):
        if self.n_max is None:
            self.n_max = self.n_tol
        if self.n_adp < 1:
            raise ParameterError("n_adp must be >= 1")
        if self.n_max > self.n_tol or self.n_max < 0:
            raise ParameterError("need 0 <= n_max <= n_tol")
        if self.i_temp < 0:
            raise ParameterError("i_temp must be >= 0")
        if self.estimator not in ESTIMATORS:
            raise ParameterError(f"estimator must be one of {ESTIMATORS}")
        if self.lambdas is not None and len(self.lambdas) != self.i_temp:
            raise ParameterError("need one tempering parameter per tempered stage")

    def schedule(self) -> tuple:
        if self.i_temp == 0:
            return ()
        return tuple(self.lambdas) if self.lambdas is not None else make_schedule(self.i_temp).lambdas


def refit(samples, basis: SpectralBasis, K: int, config: AdaptConfig, rng) -> MixtureProposal:
    """One parameter update with the configured estimator (may raise on degeneracy)."""
    U = _head(samples, K)
    if config.estimator == "single":
        return MixtureProposal((fit_single_gaussian(U, basis, K),), basis)
    prop = fit_mixture_clustering(U, basis, config.J, rng, K, config.J_range)
    if config.estimator == "em":
        prop, _ = em_fit(U, prop, max_iter=config.em_max_iter)
    return prop


@dataclass
class AdaptResult:
    trace: ChainTrace
    proposal: MixtureProposal
    K: int
    refits: list = field(default_factory=list)
    tempering: list = field(default_factory=list)


def adaptive_loop(
    config: AdaptConfig,
    posterior: Posterior,
    basis: SpectralBasis,
    rng,
    checkpoint_dir=None,
    cluster_rng=None,
) -> AdaptResult:
    """Adaptive independence sampler with Gaussian mixture proposals.

    The proposal starts at the prior, is optionally warmed up on tempered
    targets, then refitted from the full sample history every ``n_adp`` draws
    until ``n_max`` draws; afterwards it is frozen. A failed refit keeps the
    previous proposal. ``cluster_rng`` (default: ``rng``) drives k-means seeding.
    """
    cluster_rng = rng if cluster_rng is None else cluster_rng
    K = truncation_dim(basis, config.epsilon)
    prop = MixtureProposal.prior(basis, K)
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)
    result = AdaptResult(None, prop, K)

    def update(S, stage):
        nonlocal prop
        try:
            new = refit(S, basis, K, config, cluster_rng)
        except (DegenerateClusterError, ParameterError) as exc:
            log.info("refit at %s failed (%s); keeping previous proposal", stage, exc)
            return False
        prop = new
        if ckpt:
            prop.save(ckpt / f"proposal_{stage}.json")
        return True

    for i, lam in enumerate(config.schedule(), start=1):
        u0 = prop.sample(rng)
        state = ChainState(u0, posterior.phi(u0), log_density_mixture(u0, prop))
        tr, state = is_block(state, prop, posterior, lam, config.n_temp, rng)
        S = np.vstack([u0[None, :K], tr.U[:, :K]])
        ok = update(S, f"temp{i:02d}")
        result.tempering.append(
            {"lambda": lam, "acceptance": tr.acceptance_rate, "J": prop.J, "refit_ok": ok}
        )

    u0 = prop.sample(rng)
    state = ChainState(u0, posterior.phi(u0), log_density_mixture(u0, prop))
    history = np.empty((config.n_tol + 1, K))
    history[0] = u0[:K]
    parts = []
    n = 0
    while n < config.n_tol:
        m = min(config.n_adp, config.n_tol - n)
        tr, state = is_block(state, prop, posterior, 1.0, m, rng)
        parts.append(tr)
        history[n + 1 : n + m + 1] = tr.U[:, :K]
        n += m
        if n < config.n_max and n % config.n_adp == 0:
            ok = update(history[: n + 1], f"n{n:09d}")
            state = ChainState(state.u, state.phi, log_density_mixture(state.u, prop))
            result.refits.append({"n": n, "J": prop.J, "refit_ok": ok, "acceptance": tr.acceptance_rate})
    result.trace = ChainTrace.concat(parts)
    result.trace.meta.update({"K": K, "n_failures": posterior.n_failures})
    result.proposal = prop
    return result
