import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from gmis.errors import ParameterError, ShapeError
from gmis.forward_models import (
    BimodalPotential,
    HeatModel,
    HeatPotential,
    LinearGaussianPotential,
    ObservationSet,
    ODEModel,
    ODEPotential,
    bimodal_potential,
    combine_heat_misfits,
    heat_solve,
    interpolation_matrix,
    ode_potential,
    ode_solve,
    omf,
    simulate_data,
)
from gmis.spectral_prior import CovarianceKernel, Grid, build_basis

HEAT_TIMES = 2.0 * np.arange(1, 51) / 50


@pytest.fixture(scope="module")
def heat_grid():
    return Grid.uniform(0.0, 2.0, 100)


@given(st.integers(0, 1000))
def test_interpolation_matrix_matches_interp(seed):
    rng = np.random.default_rng(seed)
    src = np.sort(rng.uniform(0, 1, 12))
    dst = rng.uniform(src[0], src[-1], 30)
    f = rng.normal(size=12)
    assert np.allclose(interpolation_matrix(src, dst) @ f, np.interp(dst, src, f), rtol=0, atol=1e-13)


# --------------------------------------------------------------------- ODE


@pytest.mark.parametrize("c", [0.0, 0.7, 2.5, -1.0])
def test_ode_constant_coefficient(c):
    g = Grid.uniform(0, 1, 30)
    t, x = ode_solve(g, np.full(30, c))
    assert np.max(np.abs(x - np.exp(-c * t))) <= 1e-8


def test_ode_fourth_order():
    # u(t) = 1 + 2t is reproduced exactly by linear interpolation on two nodes
    g = Grid.uniform(0, 1, 2)
    f = np.array([1.0, 3.0])
    exact = np.exp(-2.0)
    errs = [abs(ode_solve(g, f, nsteps=n)[1][-1] - exact) for n in (10, 20, 40)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 4.0) < 0.3)


def test_ode_default_resolution_converged(exp_basis):
    f = exp_basis.synthesize(exp_basis.sample_prior(np.random.default_rng(0)))
    times = np.arange(21) / 20
    coarse = ODEModel(exp_basis.grid, times)(f)
    fine = ODEModel(exp_basis.grid, times, nsteps=16000)(f)
    # kinks of the interpolated field limit the order; still far below the 0.05 noise
    assert np.max(np.abs(coarse - fine)) <= 1e-5


def test_ode_batch_equals_single(exp_basis):
    F = exp_basis.synthesize(exp_basis.sample_prior(np.random.default_rng(1), 4))
    model = ODEModel(exp_basis.grid, np.arange(21) / 20)
    batch = model(F)
    for i in range(4):
        assert np.allclose(batch[i], model(F[i]), rtol=0, atol=1e-15)


def test_ode_potential_zero_on_exact_data(exp_basis):
    f = np.linspace(0.2, 1.0, 100)
    times = np.arange(21) / 20
    clean = ODEModel(exp_basis.grid, times)(f)
    obs = ObservationSet(times, clean, 0.05)
    assert ode_potential(obs, f, exp_basis.grid) == pytest.approx(0.0, abs=1e-20)
    pot = ODEPotential(ODEModel(exp_basis.grid, times), obs)
    assert pot.n_obs == 21 and pot(f + 0.1) > 0
    with pytest.raises(ShapeError):
        pot(np.zeros(99))


# ----------------------------------------------------------------- bimodal


@pytest.mark.parametrize("norm", ["grid", "l2"])
def test_bimodal_symmetric_and_nonnegative(exp_basis, norm):
    pot = BimodalPotential(exp_basis.grid, 1.0, norm)
    F = exp_basis.synthesize(exp_basis.sample_prior(np.random.default_rng(2), 50))
    assert np.allclose(pot(F), pot(-F), rtol=0, atol=1e-12)
    assert np.all(pot(F) >= 0)
    s = pot.shape
    assert pot(s) == pytest.approx(pot(-s), abs=1e-14)
    if norm == "grid":
        # well separated modes: the bumps are local minima
        assert pot(s) <= min(pot(0.9 * s), pot(1.1 * s))


def test_bimodal_explicit_formula():
    g = Grid.uniform(0, 1, 9)
    u = np.linspace(-0.5, 0.5, 9)
    s = np.sin(2 * np.pi * g.points)
    ref = -np.log(0.5 * np.exp(-0.5 * np.sum((u - s) ** 2)) + 0.5 * np.exp(-0.5 * np.sum((u + s) ** 2)))
    assert bimodal_potential(u, g) == pytest.approx(max(ref, 0.0), rel=1e-12)


def test_bimodal_rejects_bad_params(exp_basis):
    with pytest.raises(ParameterError):
        BimodalPotential(exp_basis.grid, 0.0)
    with pytest.raises(ParameterError):
        BimodalPotential(exp_basis.grid, 1.0, "sup")


# -------------------------------------------------------------------- heat


@pytest.mark.parametrize("bc", ["insulated", "robin"])
def test_heat_zero_flux_gives_zero(heat_grid, bc):
    assert np.array_equal(heat_solve(heat_grid, np.zeros(100), bc), np.zeros(50))


def test_heat_refinement(heat_grid):
    q = 0.5 + 0.3 * np.sin(np.pi * heat_grid.points)
    a = HeatModel(heat_grid, HEAT_TIMES, "robin", 50, 400)(q)
    b = HeatModel(heat_grid, HEAT_TIMES, "robin", 100, 800)(q)
    c = HeatModel(heat_grid, HEAT_TIMES, "robin", 200, 1600)(q)
    assert np.max(np.abs(a - c)) < 1e-3
    # second order: halving both steps cuts the difference roughly fourfold
    assert np.max(np.abs(b - c)) < 0.5 * np.max(np.abs(a - b))


def test_heat_content_equals_injected_energy(heat_grid):
    q = 0.5 + 0.3 * np.sin(np.pi * heat_grid.points)
    model = HeatModel(heat_grid, HEAT_TIMES, "insulated")
    content = model.heat_content(q)
    tt = np.linspace(0, 2, 401)[1:]
    injected = np.array([np.trapezoid(np.interp(s, heat_grid.points, q), s) for s in (np.linspace(0, t, 2001) for t in tt)])
    assert np.max(np.abs(content - injected)) <= 1e-4
    assert np.all(np.diff(content) > 0)
    robin = HeatModel(heat_grid, HEAT_TIMES, "robin").heat_content(q)
    assert np.all(robin <= content + 1e-12)


def test_heat_rejects_bad_times(heat_grid):
    with pytest.raises(ParameterError):
        HeatModel(heat_grid, [0.0013])
    with pytest.raises(ParameterError):
        HeatModel(heat_grid, HEAT_TIMES, bc="dirichlet")


def test_heat_misfit_combination(heat_grid, se_basis):
    rng = np.random.default_rng(3)
    truth = se_basis.synthesize(se_basis.sample_prior(rng))
    obs = simulate_data(HeatModel(heat_grid, HEAT_TIMES, "robin"), truth, 0.1, rng)
    pot = HeatPotential(heat_grid, obs)
    F = se_basis.synthesize(se_basis.sample_prior(rng, 20))
    m = pot.misfits(F)
    phi = pot(F)
    ref = -logsumexp(np.c_[np.log(0.8) - m[:, 0], np.log(0.2) - m[:, 1]], axis=1)
    assert np.allclose(phi, np.maximum(ref, 0), rtol=1e-12)
    assert np.allclose(combine_heat_misfits(m[:, 0], m[:, 1]), phi, rtol=1e-12)
    assert np.all(phi >= 0)
    # when both misfits agree the mixture adds nothing
    assert combine_heat_misfits(5.0, 5.0) == pytest.approx(5.0, abs=1e-12)
    assert combine_heat_misfits(0.0, 1e6) == pytest.approx(-np.log(0.8), abs=1e-12)


# ------------------------------------------------------- linear-Gaussian


def test_linear_gaussian_closed_form(exp_basis):
    d = np.array([0.8, -0.3, 0.2])
    pot = LinearGaussianPotential(exp_basis, d, 0.3)
    a = exp_basis.eigenvalues[:3]
    mean, var = pot.posterior()
    assert np.allclose(var, a * 0.09 / (a + 0.09), rtol=1e-14)
    assert np.allclose(mean, a * d / (a + 0.09), rtol=1e-14)
    x, h = pot.posterior_parameters()
    assert np.allclose(a * x, mean, rtol=1e-14)
    assert np.allclose(a / (1 + a * h), var, rtol=1e-12)
    c = np.zeros(exp_basis.full_dim)
    c[:3] = d
    assert pot(exp_basis.synthesize(c)) == pytest.approx(0.0, abs=1e-20)


# ----------------------------------------------------------------- helpers


def test_simulated_noise_level(exp_basis):
    times = np.linspace(0, 1, 20001)
    model = ODEModel(exp_basis.grid, times)
    f = np.ones(100)
    obs = simulate_data(model, f, 0.05, np.random.default_rng(4))
    r = obs.values - model(f)
    assert abs(r.var() / 0.05**2 - 1) < 0.05


def test_observation_round_trip(tmp_path):
    obs = ObservationSet([0.1, 0.2], [1.0 / 3, -2e-17], 0.05, {"preset": "x", "truth_seed": 3})
    obs.save(tmp_path / "obs.csv")
    back = ObservationSet.load(tmp_path / "obs.csv")
    assert np.array_equal(back.times, obs.times) and np.array_equal(back.values, obs.values)
    assert back.noise_sd == 0.05 and back.meta == obs.meta
    with pytest.raises(ParameterError):
        ObservationSet([0.1], [1.0], 0.0)
    with pytest.raises(ShapeError):
        ObservationSet([0.1, 0.2], [1.0], 0.1)


def test_omf_definition():
    basis = build_basis(CovarianceKernel.exponential(2.0), Grid.uniform(0, 1, 20))
    pot = BimodalPotential(basis.grid)
    c = basis.sample_prior(np.random.default_rng(5))
    expected = pot(basis.synthesize(c)) + 0.5 * np.sum(c**2 / basis.eigenvalues)
    assert omf(pot, basis, c) == pytest.approx(expected, rel=1e-12)


def test_heat_noise_free_robin_data_bound(heat_grid, se_basis):
    q = se_basis.synthesize(se_basis.sample_prior(np.random.default_rng(6)))
    clean = HeatModel(heat_grid, HEAT_TIMES, "robin")(q)
    pot = HeatPotential(heat_grid, ObservationSet(HEAT_TIMES, clean, 0.1))
    assert pot(q) <= -np.log(0.2) + 1e-12


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0.01, 10))
def test_heat_combination_monotone(p1, p2, d):
    base = combine_heat_misfits(p1, p2)
    assert combine_heat_misfits(max(p1 - d, 0), p2) <= base
    assert combine_heat_misfits(p1, max(p2 - d, 0)) <= base
