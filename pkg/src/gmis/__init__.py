"""Adaptive independence samplers with Gaussian mixture proposals for
function-space Bayesian inverse problems."""

__version__ = "0.1.0"

from .spectral_prior import CovarianceKernel, Grid, SpectralBasis, build_basis, truncation_dim
from .proposal_measures import GaussianComponent, MixtureProposal
from .samplers import ChainState, ChainTrace, Posterior
from .adaptation import AdaptConfig, adaptive_loop, em_fit, fit_mixture_clustering, fit_single_gaussian
from .experiments import ExperimentConfig, build_problem, execute, preset_defaults

__all__ = [
    "AdaptConfig",
    "ChainState",
    "ChainTrace",
    "CovarianceKernel",
    "ExperimentConfig",
    "GaussianComponent",
    "Grid",
    "MixtureProposal",
    "Posterior",
    "SpectralBasis",
    "adaptive_loop",
    "build_basis",
    "build_problem",
    "em_fit",
    "execute",
    "fit_mixture_clustering",
    "fit_single_gaussian",
    "preset_defaults",
    "truncation_dim",
]
