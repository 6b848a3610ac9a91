import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gmis.spectral_prior import CovarianceKernel, Grid, SpectralBasis, build_basis

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def toy_basis(alphas) -> SpectralBasis:
    """Basis with prescribed eigenvalues and coordinate eigenvectors."""
    alphas = np.asarray(alphas, float)
    n = alphas.size
    grid = Grid(np.arange(n, dtype=float), np.ones(n))
    return SpectralBasis(alphas.copy(), np.eye(n), grid)


@pytest.fixture(scope="session")
def exp_basis():
    return build_basis(CovarianceKernel.exponential(2.0), Grid.uniform(0.0, 1.0, 100))


@pytest.fixture(scope="session")
def se_basis():
    return build_basis(CovarianceKernel.squared_exponential(0.3), Grid.uniform(0.0, 2.0, 100))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[num])
