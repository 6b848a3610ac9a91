import itertools
import json

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmis.adaptation import (
    AdaptConfig,
    adaptive_loop,
    bic_scores,
    em_e_step,
    em_fit,
    em_m_step,
    em_objective,
    fit_mixture_clustering,
    fit_single_gaussian,
    gaussian_loglik,
    kmeans,
    kmeans_fit,
    select_J,
)
from gmis.diagnostics import ess
from gmis.errors import DegenerateClusterError, ParameterError
from gmis.forward_models import LinearGaussianPotential
from gmis.proposal_measures import GaussianComponent, MixtureProposal, validate
from gmis.samplers import Posterior

from .conftest import toy_basis


def brute_force_two_clusters_1d(x):
    """Optimal 2-means split of 1-D data: best threshold over the sorted values."""
    xs = np.sort(x)
    best = (np.inf, None)
    for i in range(1, xs.size):
        a, b = xs[:i], xs[i:]
        sse = np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)
        if sse < best[0]:
            best = (sse, 0.5 * (xs[i - 1] + xs[i]))
    return best


# ------------------------------------------------------------- single fit


def test_single_fit_degenerate():
    b = toy_basis([1.0, 0.5])
    U = np.tile(b.eigenvalues * 0.3, (10, 1))
    with pytest.raises(DegenerateClusterError):
        fit_single_gaussian(U, b)


def test_single_fit_prior_samples():
    b = toy_basis([1.0, 0.4, 0.1, 0.05])
    N = 100_000
    U = b.sample_prior(np.random.default_rng(0), N)
    comp = fit_single_gaussian(U, b, K=3)
    a = b.eigenvalues[:3]
    se_x = np.sqrt(a / N) / a
    assert np.all(np.abs(comp.x) <= 5 * se_x)
    assert np.all(np.abs(comp.h * a) <= 0.05)


@given(st.floats(0.05, 5.0))
def test_single_fit_two_points(a):
    b = toy_basis([1.0])
    comp = fit_single_gaussian(np.array([[a], [-a]]), b)
    assert comp.x[0] == 0.0
    assert comp.h[0] == pytest.approx(1.0 / a**2 - 1.0, rel=1e-12)


def test_single_fit_clamps_h():
    b = toy_basis([1.0])
    # sample variance far above the prior variance would give h < -1/alpha without clamping
    comp = fit_single_gaussian(np.array([[1e4], [-1e4]]), b)
    assert 1 + comp.h[0] > 0


# ---------------------------------------------------------------- k-means


def test_kmeans_single_cluster(rng):
    assert np.all(kmeans(rng.normal(size=(50, 3)), 1, rng) == 0)


def test_kmeans_matches_brute_force_1d():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(-10, 1, 60), rng.normal(10, 1, 40)])
    labels = kmeans(x[:, None], 2, rng)
    sse_opt, thr = brute_force_two_clusters_1d(x)
    ours = labels == labels[np.argmin(x)]
    assert np.array_equal(ours, x < thr)
    res = kmeans_fit(x[:, None], 2, rng)
    assert res.inertia == pytest.approx(sse_opt, rel=1e-12)


@given(st.integers(0, 10_000))
def test_kmeans_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.normal(size=(40, 2)), rng.normal(3, 1, size=(30, 2))])
    X = np.concatenate([X, X[:10]])  # duplicates
    hist = kmeans_fit(X, 3, rng).history
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(hist, hist[1:]))


def test_kmeans_duplicates_share_cluster(rng):
    X = np.concatenate([rng.normal(size=(30, 2)), np.tile([[5.0, 5.0]], (20, 1))])
    labels = kmeans(X, 2, rng)
    assert len(set(labels[30:])) == 1


def test_kmeans_rejects_bad_J(rng):
    with pytest.raises(ParameterError):
        kmeans(rng.normal(size=(3, 2)), 4, rng)


# ------------------------------------------------------------ BIC / clustering


def direct_bic(U, prop):
    N, K = U.shape
    return -2 * gaussian_loglik(U, prop) + (prop.J * (2 * K + 1) - 1) * np.log(N)


def test_select_J_single_blob():
    b = toy_basis([1.0, 0.5])
    U = np.random.default_rng(2).normal(size=(500, 2)) * 0.3
    scores = bic_scores(U, b, (1, 2, 3), np.random.default_rng(3))
    for J, (s, prop) in scores.items():
        assert s == pytest.approx(direct_bic(U, prop), rel=1e-12)
    assert select_J(U, b, (1, 2, 3), np.random.default_rng(3)) == 1


def test_select_J_two_blobs():
    b = toy_basis([1.0])
    rng = np.random.default_rng(4)
    U = np.concatenate([rng.normal(-10, 1, 250), rng.normal(10, 1, 250)])[:, None]
    assert select_J(U, b, (1, 2, 3), rng) == 2


def test_select_J_too_few_points():
    b = toy_basis([1.0, 0.5, 0.2])
    U = np.random.default_rng(5).normal(size=(6, 3))
    assert select_J(U, b, (1, 2, 3), np.random.default_rng(0)) == 1


def test_clustering_J1_equals_single_fit(rng):
    b = toy_basis([1.0, 0.5, 0.2])
    U = rng.normal(size=(300, 3))
    single = fit_single_gaussian(U, b)
    prop = fit_mixture_clustering(U, b, J=1, rng=rng)
    em = em_m_step(U, np.ones((300, 1)), b)
    assert prop.J == 1
    assert np.allclose(prop.X[0], single.x, rtol=1e-13) and np.allclose(prop.H[0], single.h, rtol=1e-13)
    assert np.allclose(em.X[0], single.x, rtol=1e-13) and np.allclose(em.H[0], single.h, rtol=1e-13)


def test_clustering_recovers_two_component_mixture():
    b = toy_basis([1.0])
    rng = np.random.default_rng(6)
    N = 100_000
    side = rng.random(N) < 0.5
    U = np.where(side, 2.0, -2.0) + 0.5 * rng.standard_normal(N)
    prop = fit_mixture_clustering(U[:, None], b, J=2, rng=rng)
    order = np.argsort(prop.X[:, 0])
    X, H, w = prop.X[order, 0], prop.H[order, 0], prop.weights[order]
    n_j = w * N
    se_x = 0.5 / np.sqrt(n_j)
    se_h = np.sqrt(2.0 / n_j) / 0.25  # delta method on 1/var
    assert np.all(np.abs(X - np.array([-2.0, 2.0])) <= 5 * se_x)
    assert np.all(np.abs(H - 3.0) <= 5 * se_h)
    assert np.all(np.abs(w - 0.5) <= 5 * np.sqrt(0.25 / N))


def test_clustering_merges_thin_clusters():
    b = toy_basis([1.0, 0.5])
    rng = np.random.default_rng(7)
    # a far cluster backed by only three distinct states repeated many times
    thin = np.repeat(np.array([[8.0, 8.0], [8.1, 8.0], [8.0, 8.1]]), 100, axis=0)
    U = np.concatenate([rng.normal(size=(400, 2)), thin])
    prop = fit_mixture_clustering(U, b, J=2, rng=rng)
    assert prop.J == 1
    assert validate(prop) == []


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_clustering_output_always_valid(seed, J):
    b = toy_basis([1.0, 0.3, 0.05])
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(80, 3)) * rng.uniform(0.01, 10, 3)
    U = np.concatenate([U, U[: rng.integers(0, 40)]])
    prop = fit_mixture_clustering(U, b, J=J, rng=rng)
    assert validate(prop) == []


def test_clustering_all_degenerate_falls_back_to_prior():
    b = toy_basis([1.0, 0.5])
    U = np.tile([[0.2, 0.1]], (50, 1))
    prop = fit_mixture_clustering(U, b, J=1, rng=np.random.default_rng(0))
    assert prop.is_prior()


# --------------------------------------------------------------------- EM


def two_comp(b):
    return MixtureProposal(
        (GaussianComponent([1.5, 0.0], [3.0, 1.0], 0.5), GaussianComponent([-1.5, 0.0], [3.0, 1.0], 0.5)), b
    )


def test_e_step_single_and_symmetric(rng):
    b = toy_basis([1.0, 0.5])
    q = em_e_step(rng.normal(size=(20, 2)), MixtureProposal((GaussianComponent([0.3, 0], [1, 1]),), b))
    assert np.all(q == 1.0)
    q = em_e_step(np.array([[0.0, 0.3]]), two_comp(b))
    assert np.allclose(q, 0.5, rtol=0, atol=1e-15)


def test_e_step_extended_precision():
    b = toy_basis([1.0, 0.5])
    prop = MixtureProposal(
        (GaussianComponent([1.0, -2.0], [4.0, 10.0], 0.2), GaussianComponent([-3.0, 1.0], [0.5, 30.0], 0.8)), b
    )
    rng = np.random.default_rng(8)
    U = rng.normal(size=(30, 2)) * 2
    q = em_e_step(U, prop)
    mpmath.mp.dps = 40
    a = b.eigenvalues
    for n in range(U.shape[0]):
        terms = []
        for c in prop.components:
            beta = [mpmath.mpf(a[k]) / (1 + mpmath.mpf(a[k]) * mpmath.mpf(c.h[k])) for k in range(2)]
            lf = mpmath.mpf(0)
            for k in range(2):
                m = mpmath.mpf(a[k]) * mpmath.mpf(c.x[k])
                u = mpmath.mpf(U[n, k])
                lf += mpmath.log(mpmath.sqrt(mpmath.mpf(a[k]) / beta[k])) - (u - m) ** 2 / (2 * beta[k]) + u**2 / (2 * a[k])
            terms.append(mpmath.mpf(c.w) * mpmath.e**lf)
        tot = mpmath.fsum(terms)
        assert np.allclose(q[n], [float(t / tot) for t in terms], rtol=0, atol=1e-12)


def test_m_step_hard_memberships_equal_cluster_formulas():
    b = toy_basis([1.0, 0.5])
    rng = np.random.default_rng(9)
    U = np.concatenate([rng.normal(-2, 0.5, (100, 2)), rng.normal(2, 0.5, (60, 2))])
    labels = np.r_[np.zeros(100, int), np.ones(60, int)]
    q = np.eye(2)[labels]
    prop = em_m_step(U, q, b)
    for j in range(2):
        single = fit_single_gaussian(U[labels == j], b)
        assert np.allclose(prop.X[j], single.x, rtol=1e-13)
        assert np.allclose(prop.H[j], single.h, rtol=1e-12)
    assert np.allclose(prop.weights, [100 / 160, 60 / 160], rtol=1e-14)


def test_m_step_drops_vanished_component(rng):
    b = toy_basis([1.0])
    U = rng.normal(size=(50, 1))
    q = np.c_[np.ones(50), np.zeros(50)]
    prop = em_m_step(U, q, b)
    assert prop.J == 1 and prop.weights[0] == 1.0


def test_one_em_iteration_increases_objective():
    b = toy_basis([1.0, 0.5])
    rng = np.random.default_rng(10)
    truth = two_comp(b)
    U = truth.sample(rng, 5000)[:, :2]
    start = MixtureProposal(
        (GaussianComponent([1.0, 0.2], [2.0, 0.5], 0.6), GaussianComponent([-1.0, -0.2], [2.0, 0.5], 0.4)), b
    )
    after = em_m_step(U, em_e_step(U, start), b)
    assert em_objective(U, after) > em_objective(U, start)


def test_em_stationary_start_converges_fast():
    b = toy_basis([1.0, 0.5])
    U = np.random.default_rng(11).normal(size=(400, 2)) * 0.5
    init = MixtureProposal((fit_single_gaussian(U, b),), b)
    _, trace = em_fit(U, init)
    assert len(trace) - 1 <= 2


def test_em_improves_on_clustering():
    b = toy_basis([1.0, 0.5])
    rng = np.random.default_rng(12)
    U = two_comp(b).sample(rng, 4000)[:, :2]
    init = fit_mixture_clustering(U, b, J=2, rng=rng)
    prop, trace = em_fit(U, init)
    assert em_objective(U, prop) >= em_objective(U, init)
    assert all(b_ >= a_ - 1e-10 * abs(a_) for a_, b_ in zip(trace, trace[1:]))


# ----------------------------------------------------------- adaptive loop


def test_config_validation():
    with pytest.raises(ParameterError):
        AdaptConfig(n_tol=10, n_max=20)
    with pytest.raises(ParameterError):
        AdaptConfig(n_adp=0)
    with pytest.raises(ParameterError):
        AdaptConfig(i_temp=-1)
    with pytest.raises(ParameterError):
        AdaptConfig(estimator="nope")
    assert AdaptConfig(i_temp=3).schedule() == (0.0, 0.5, 1.0)


def linear_gaussian(exp_basis):
    data = np.array([0.8, -0.3, 0.2, 0.1, -0.05])
    pot = LinearGaussianPotential(exp_basis, data, 0.3)
    return pot, Posterior(pot, exp_basis)


def test_loop_without_adaptation_is_prior_is(exp_basis):
    _, post = linear_gaussian(exp_basis)
    cfg = AdaptConfig(n_tol=3000, n_adp=500, n_max=0, estimator="single")
    res = adaptive_loop(cfg, post, exp_basis, np.random.default_rng(0))
    assert res.proposal.is_prior() and res.refits == []
    assert len(res.trace) == 3000


def test_loop_recovers_analytic_posterior_parameters(exp_basis):
    pot, post = linear_gaussian(exp_basis)
    cfg = AdaptConfig(n_tol=40_000, n_adp=1000, n_max=40_000, estimator="single")
    res = adaptive_loop(cfg, post, exp_basis, np.random.default_rng(1))
    assert res.K == 5
    x_true, h_true = pot.posterior_parameters()
    comp = res.proposal.components[0]
    a = exp_basis.eigenvalues[:5]
    # final refit uses the whole history except the last block
    H = res.trace.U[: 40_000 - 1000, :5]
    n_eff = np.array([ess(H[:, k]) for k in range(5)])
    mean, var = pot.posterior()
    se_x = np.sqrt(var / n_eff) / a
    se_h = np.sqrt(2.0 / n_eff) / var
    assert np.all(np.abs(comp.x - x_true) <= 5 * se_x)
    assert np.all(np.abs(comp.h - h_true) <= 5 * se_h)


def test_loop_freezes_and_checkpoints(exp_basis, tmp_path):
    _, post = linear_gaussian(exp_basis)
    cfg = AdaptConfig(n_tol=5000, n_adp=1000, n_max=3000, estimator="clustering")
    res = adaptive_loop(cfg, post, exp_basis, np.random.default_rng(2), checkpoint_dir=tmp_path)
    assert [r["n"] for r in res.refits] == [1000, 2000]
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == ["proposal_n000001000.json", "proposal_n000002000.json"]
    last = json.loads((tmp_path / files[-1]).read_text())
    assert last == json.loads(res.proposal.to_json())


def test_loop_tempering_records_stages(exp_basis):
    _, post = linear_gaussian(exp_basis)
    cfg = AdaptConfig(n_tol=2000, n_adp=500, n_max=1000, i_temp=3, n_temp=300)
    res = adaptive_loop(cfg, post, exp_basis, np.random.default_rng(3))
    assert [t["lambda"] for t in res.tempering] == [0.0, 0.5, 1.0]
    assert res.tempering[0]["acceptance"] == 1.0
    assert validate(res.proposal) == []


def test_loop_failed_refit_keeps_previous(exp_basis):
    class Stuck(Posterior):
        def phi(self, coeffs):
            # everything but the origin is infinitely unlikely: the chain never moves
            c = np.atleast_2d(coeffs)
            out = np.where(np.all(c == 0, axis=1), 0.0, np.inf)
            return float(out[0]) if np.ndim(coeffs) == 1 else out

    pot, _ = linear_gaussian(exp_basis)
    post = Stuck(pot, exp_basis)
    cfg = AdaptConfig(n_tol=2000, n_adp=500, estimator="single")
    res = adaptive_loop(cfg, post, exp_basis, np.random.default_rng(4))
    assert res.refits and not any(r["refit_ok"] for r in res.refits)
    assert res.proposal.is_prior()


def test_loop_deterministic(exp_basis):
    _, post = linear_gaussian(exp_basis)
    cfg = AdaptConfig(n_tol=3000, n_adp=500, n_max=2000, i_temp=2, n_temp=200)
    a = adaptive_loop(cfg, post, exp_basis, np.random.default_rng(5), cluster_rng=np.random.default_rng(6))
    b = adaptive_loop(cfg, post, exp_basis, np.random.default_rng(5), cluster_rng=np.random.default_rng(6))
    assert np.array_equal(a.trace.U, b.trace.U)
    assert a.proposal.to_json() == b.proposal.to_json()


@pytest.mark.parametrize("estimator", ["clustering", "em", "single"])
def test_every_estimator_yields_valid_proposals(exp_basis, estimator):
    _, post = linear_gaussian(exp_basis)
    cfg = AdaptConfig(n_tol=3000, n_adp=500, estimator=estimator)
    res = adaptive_loop(cfg, post, exp_basis, np.random.default_rng(7))
    assert validate(res.proposal) == []
