"""Benchmark presets, problem construction and scheme execution."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .adaptation import AdaptConfig, AdaptResult, adaptive_loop
from .errors import ConfigError
from .forward_models import (
    BimodalPotential,
    HeatModel,
    HeatPotential,
    LinearGaussianPotential,
    ObservationSet,
    ODEModel,
    ODEPotential,
    Potential,
    simulate_data,
)
from .proposal_measures import MixtureProposal
from .samplers import ChainState, ChainTrace, Posterior, pcn_chain
from .spectral_prior import CovarianceKernel, Grid, SpectralBasis, build_basis, truncation_dim

log = logging.getLogger(__name__)

PRESETS = ("ode", "bimodal", "bimodal-far", "heat", "linear-gaussian")
SCHEMES = ("prior-is", "adaptive-is-gaussian", "adaptive-is-mixture", "pcn")
TRUTH_GRID = 500


@dataclass
class ExperimentConfig:
    preset: str = "ode"
    scheme: str = "adaptive-is-mixture"
    n_samples: int = 300_000
    n_adp: int = 1000
    n_max: int = 200_000
    i_temp: int = 0
    n_temp: int = 500
    beta: float = 0.1
    epsilon: float = 0.01
    seed: int = 0
    output_dir: str = "runs/out"
    n_grid: int = 100
    estimator: str = "clustering"
    J: int | str = "auto"
    J_range: tuple = (1, 2, 3, 4)
    thin: int = 10
    burn_in: float = 0.1
    acceptance_window: int = 1000
    truth_seed: int = 0
    noise_seed: int = 1
    amplitude: float = 1.0
    norm: str = "grid"
    lg_modes: int = 5
    lg_sigma: float = 0.3
    desk: bool = False
    checkpoint: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        for name in ("n_samples", "n_adp", "thin", "acceptance_window", "n_grid", "lg_modes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.n_max <= self.n_samples:
            raise ConfigError("need 0 <= n_max <= n_samples")
        if self.i_temp < 0 or self.n_temp < 1:
            raise ConfigError("i_temp >= 0 and n_temp >= 1 required")
        if not 0 < self.beta <= 1:
            raise ConfigError("beta must lie in (0, 1]")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in must lie in [0, 1)")
        if self.estimator not in ("clustering", "em"):
            raise ConfigError("estimator must be 'clustering' or 'em'")
        if self.J != "auto" and (not isinstance(self.J, int) or self.J < 1):
            raise ConfigError("J must be 'auto' or a positive integer")
        if self.norm not in ("grid", "l2"):
            raise ConfigError("norm must be 'grid' or 'l2'")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["J_range"] = list(self.J_range)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        """Preset defaults overlaid with the given fields."""
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        base = preset_defaults(doc.get("preset", "ode"), desk=bool(doc.get("desk", False)))
        for k, v in doc.items():
            if k == "J_range":
                v = tuple(int(j) for j in v)
            setattr(base, k, v)
        try:
            return base.validate()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


_PUBLISHED = {
    # draws, adaptation interval, adaptation stop, tempering stages, pCN step
    "ode": dict(n_samples=300_000, n_adp=1000, n_max=200_000, i_temp=0, beta=0.1),
    "bimodal": dict(n_samples=500_000, n_adp=1000, n_max=400_000, i_temp=0, beta=0.5),
    "bimodal-far": dict(n_samples=500_000, n_adp=1000, n_max=400_000, i_temp=0, beta=0.5, amplitude=2.0),
    "heat": dict(n_samples=150_000, n_adp=500, n_max=100_000, i_temp=11, n_temp=500, beta=0.1),
    "linear-gaussian": dict(n_samples=200_000, n_adp=1000, n_max=100_000, i_temp=0, beta=0.5),
}

# per-preset truncation thresholds and fixed truth/noise seeds
_EXTRA = {
    "ode": dict(epsilon=0.01, truth_seed=20160308, noise_seed=5),
    "bimodal": dict(epsilon=0.001),
    "bimodal-far": dict(epsilon=0.001),
    "heat": dict(epsilon=0.01, truth_seed=20160311, noise_seed=7),
    "linear-gaussian": dict(epsilon=0.01, truth_seed=11, noise_seed=12),
}


def preset_defaults(preset: str, desk: bool = False) -> ExperimentConfig:
    """Published experiment parameters; ``desk`` divides the draw counts by 10."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    cfg = ExperimentConfig(preset=preset, **_PUBLISHED[preset], **_EXTRA[preset])
    if desk:
        cfg.n_samples //= 10
        cfg.n_max //= 10
        cfg.desk = True
    return cfg


# ------------------------------------------------------------------ problems


@dataclass
class Problem:
    basis: SpectralBasis
    potential: Potential
    truth: np.ndarray | None = None
    obs: ObservationSet | None = None
    extra: dict = field(default_factory=dict)

    @property
    def posterior(self) -> Posterior:
        return Posterior(self.potential, self.basis)


def _domain(preset):
    if preset == "heat":
        return (0.0, 2.0), CovarianceKernel.squared_exponential(0.3)
    return (0.0, 1.0), CovarianceKernel.exponential(2.0)


def _truth(cfg: ExperimentConfig):
    """Prior draw on a fixed fine grid, shared by every inference resolution."""
    (a, b), kernel = _domain(cfg.preset)
    fine = build_basis(kernel, Grid.uniform(a, b, TRUTH_GRID))
    rng = np.random.default_rng(cfg.truth_seed)
    return fine, fine.synthesize(fine.sample_prior(rng))


def build_problem(cfg: ExperimentConfig) -> Problem:
    (a, b), kernel = _domain(cfg.preset)
    grid = Grid.uniform(a, b, cfg.n_grid)
    basis = build_basis(kernel, grid)
    if cfg.preset in ("bimodal", "bimodal-far"):
        return Problem(basis, BimodalPotential(grid, cfg.amplitude, cfg.norm))
    if cfg.preset == "linear-gaussian":
        rng = np.random.default_rng(cfg.truth_seed)
        c = basis.sample_prior(rng)[: cfg.lg_modes]
        d = c + cfg.lg_sigma * np.random.default_rng(cfg.noise_seed).standard_normal(cfg.lg_modes)
        pot = LinearGaussianPotential(basis, d, cfg.lg_sigma)
        return Problem(basis, pot, basis.synthesize(c), extra={"data": d.tolist()})
    fine, truth_fine = _truth(cfg)
    noise_rng = np.random.default_rng(cfg.noise_seed)
    meta = {"preset": cfg.preset, "truth_seed": cfg.truth_seed, "noise_seed": cfg.noise_seed}
    if cfg.preset == "ode":
        times = np.arange(21) / 20.0
        obs = simulate_data(ODEModel(fine.grid, times), truth_fine, 0.05, noise_rng, meta)
        pot = ODEPotential(ODEModel(grid, times), obs)
    else:
        times = 2.0 * np.arange(1, 51) / 50.0
        obs = simulate_data(HeatModel(fine.grid, times, "robin"), truth_fine, 0.1, noise_rng, meta)
        pot = HeatPotential(grid, obs)
    truth = np.interp(grid.points, fine.grid.points, truth_fine)
    return Problem(basis, pot, truth, obs)


# ----------------------------------------------------------------- execution


@dataclass
class RunResult:
    config: ExperimentConfig
    problem: Problem
    trace: ChainTrace
    K: int
    proposal: MixtureProposal | None = None
    adapt: AdaptResult | None = None
    n_failures: int = 0


def streams(seed: int) -> dict:
    """Independent generators per role, all derived from one root seed."""
    names = ("chain", "clustering")
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def adapt_config(cfg: ExperimentConfig) -> AdaptConfig:
    if cfg.scheme == "prior-is":
        return AdaptConfig(n_tol=cfg.n_samples, n_adp=cfg.n_adp, n_max=0, i_temp=0,
                           epsilon=cfg.epsilon, estimator="single")
    return AdaptConfig(
        n_tol=cfg.n_samples,
        n_adp=cfg.n_adp,
        n_max=cfg.n_max,
        i_temp=cfg.i_temp,
        n_temp=cfg.n_temp,
        epsilon=cfg.epsilon,
        estimator="single" if cfg.scheme == "adaptive-is-gaussian" else cfg.estimator,
        J=cfg.J,
        J_range=tuple(cfg.J_range),
    )


def execute(cfg: ExperimentConfig, problem: Problem | None = None, checkpoint_dir=None) -> RunResult:
    cfg.validate()
    problem = problem or build_problem(cfg)
    post = problem.posterior
    rngs = streams(cfg.seed)
    rng = rngs["chain"]
    basis = problem.basis
    if cfg.scheme == "pcn":
        u0 = basis.sample_prior(rng)
        trace, _ = pcn_chain(ChainState(u0, post.phi(u0)), cfg.beta, post, cfg.n_samples, rng)
        return RunResult(cfg, problem, trace, truncation_dim(basis, cfg.epsilon), n_failures=post.n_failures)
    res = adaptive_loop(adapt_config(cfg), post, basis, rng, checkpoint_dir, rngs["clustering"])
    return RunResult(cfg, problem, res.trace, res.K, res.proposal, res, post.n_failures)
