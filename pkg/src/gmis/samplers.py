"""MCMC kernels on spectral-coefficient space.

The independence sampler accepts a proposal ``u'`` from a mixture ``mu`` with
log-probability ``min(0, [-lam Phi(u') - log g(u')] - [-lam Phi(u) - log g(u)])``
where ``g = dmu/dmu_0``. The pCN random walk is the prior-reversible baseline.

Because independence proposals do not depend on the chain state, a block of
draws under a fixed proposal can be evaluated in one vectorized potential call
(``is_block``); only the accept/reject sweep is sequential.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ParameterError
from .forward_models import Potential
from .proposal_measures import MixtureProposal, log_density_mixture
from .spectral_prior import SpectralBasis

log = logging.getLogger(__name__)


class Posterior:
    """A potential pulled back to coefficient space, plus the prior basis.

    Non-finite potential values are mapped to ``+inf`` (automatic rejection)
    and counted in ``n_failures``.
    """

    def __init__(self, potential: Potential, basis: SpectralBasis):
        self.potential = potential
        self.basis = basis
        self.n_failures = 0

    def phi(self, coeffs):
        c = np.asarray(coeffs, float)
        with np.errstate(all="ignore"):
            val = np.asarray(self.potential(self.basis.synthesize(c)), float)
        bad = ~np.isfinite(val)
        if np.any(bad):
            nbad = int(np.sum(bad))
            self.n_failures += nbad
            log.warning("%d non-finite potential value(s); treated as rejections", nbad)
            val = np.where(bad, np.inf, val)
        return float(val) if val.ndim == 0 else val

    def omf(self, coeffs, phi=None):
        if phi is None:
            phi = self.phi(coeffs)
        return phi + 0.5 * self.basis.cameron_martin_norm_sq(coeffs)


@dataclass(frozen=True)
class ChainState:
    u: np.ndarray
    phi: float
    log_g: float = 0.0


@dataclass(frozen=True)
class ChainRecord:
    u: np.ndarray
    accepted: bool
    phi: float
    omf: float


@dataclass
class ChainTrace:
    """Columnar chain record: one row per iteration, repeats kept on rejection."""

    U: np.ndarray
    accepted: np.ndarray
    phi: np.ndarray
    omf: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.accepted.size

    def __getitem__(self, i) -> ChainRecord:
        return ChainRecord(self.U[i], bool(self.accepted[i]), float(self.phi[i]), float(self.omf[i]))

    def records(self) -> list[ChainRecord]:
        return [self[i] for i in range(len(self))]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if len(self) else float("nan")

    @classmethod
    def concat(cls, parts: list["ChainTrace"]) -> "ChainTrace":
        dim = next((p.U.shape[1] for p in parts if p.U.ndim == 2), 0)
        return cls(
            np.concatenate([p.U for p in parts]) if parts else np.zeros((0, dim)),
            np.concatenate([p.accepted for p in parts]) if parts else np.zeros(0, bool),
            np.concatenate([p.phi for p in parts]) if parts else np.zeros(0),
            np.concatenate([p.omf for p in parts]) if parts else np.zeros(0),
        )

    def tail(self, n: int) -> "ChainTrace":
        return ChainTrace(self.U[-n:], self.accepted[-n:], self.phi[-n:], self.omf[-n:], dict(self.meta))


@dataclass(frozen=True)
class TemperingSchedule:
    lambdas: tuple

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        if not lam or lam[0] < 0 or lam[-1] != 1.0 or any(b <= a for a, b in zip(lam, lam[1:])):
            raise ParameterError("tempering parameters must increase strictly from >= 0 to 1")
        object.__setattr__(self, "lambdas", lam)

    def __iter__(self):
        return iter(self.lambdas)

    def __len__(self):
        return len(self.lambdas)


def make_schedule(i_temp: int) -> TemperingSchedule:
    """Equally spaced ``lambda_i = (i - 1) / (i_temp - 1)``; ``[1.0]`` without tempering."""
    if i_temp < 1:
        raise ParameterError("i_temp must be >= 1")
    if i_temp == 1:
        return TemperingSchedule((1.0,))
    return TemperingSchedule(tuple((i - 1) / (i_temp - 1) for i in range(1, i_temp + 1)))


def _tempered(phi, lam):
    # lam = 0 must ignore the potential even where phi = inf
    if lam == 0:
        return np.zeros_like(phi, dtype=float) if np.ndim(phi) else 0.0
    return -lam * phi


def log_acceptance(state: ChainState, phi_new, log_g_new, lam: float = 1.0):
    """Independence-sampler log acceptance probability (vectorized in the proposal)."""
    cur = _tempered(state.phi, lam) - state.log_g
    new = _tempered(np.asarray(phi_new, float), lam) - np.asarray(log_g_new, float)
    with np.errstate(invalid="ignore"):
        out = np.minimum(0.0, new - cur)
    return np.where(np.isnan(out), -np.inf, out)


def init_state(posterior: Posterior, u, prop: MixtureProposal | None = None) -> ChainState:
    u = np.asarray(u, float)
    log_g = 0.0 if prop is None else log_density_mixture(u, prop)
    return ChainState(u, posterior.phi(u), log_g)


def is_step(state: ChainState, prop: MixtureProposal, posterior: Posterior, lam: float, rng):
    """One independence-sampler transition; returns ``(state, accepted)``."""
    if not 0.0 <= lam <= 1.0:
        raise ParameterError("lambda must lie in [0, 1]")
    u_new = prop.sample(rng)
    phi_new = posterior.phi(u_new)
    log_g_new = log_density_mixture(u_new, prop)
    log_a = float(log_acceptance(state, phi_new, log_g_new, lam))
    if rng.random() < np.exp(log_a):
        return ChainState(u_new, phi_new, log_g_new), True
    return state, False


def is_block(state: ChainState, prop: MixtureProposal, posterior: Posterior, lam: float, n: int, rng):
    """``n`` independence-sampler transitions under a fixed proposal.

    Returns ``(trace, final_state)``. Proposals, potentials and proposal
    densities are computed for the whole block at once.
    """
    if not 0.0 <= lam <= 1.0:
        raise ParameterError("lambda must lie in [0, 1]")
    U_prop = prop.sample(rng, n)
    phi_prop = posterior.phi(U_prop)
    g_prop = log_density_mixture(U_prop, prop)
    coins = rng.random(n)
    t_prop = _tempered(phi_prop, lam) - g_prop
    idx = np.empty(n, dtype=np.int64)
    accepted = np.zeros(n, dtype=bool)
    cur = _tempered(state.phi, lam) - state.log_g
    j = -1
    for i in range(n):
        d = t_prop[i] - cur
        if d >= 0 or coins[i] < np.exp(d):
            j = i
            cur = t_prop[i]
            accepted[i] = True
        idx[i] = j
    stay = idx < 0
    U = np.where(stay[:, None], state.u, U_prop[np.maximum(idx, 0)])
    phi = np.where(stay, state.phi, phi_prop[np.maximum(idx, 0)])
    omf = posterior.omf(U, phi)
    if j >= 0:
        state = ChainState(U_prop[j], float(phi_prop[j]), float(g_prop[j]))
    return ChainTrace(U, accepted, phi, omf), state


def pcn_step(state: ChainState, beta: float, posterior: Posterior, rng):
    """One pCN transition: ``u' = sqrt(1 - beta^2) u + beta w`` with ``w`` a prior draw."""
    if not 0.0 < beta <= 1.0:
        raise ParameterError("beta must lie in (0, 1]")
    alpha = posterior.basis.eigenvalues
    w = np.sqrt(alpha) * rng.standard_normal(alpha.size)
    u_new = np.sqrt(1.0 - beta**2) * state.u + beta * w
    phi_new = posterior.phi(u_new)
    if rng.random() < np.exp(min(0.0, state.phi - phi_new)):
        return ChainState(u_new, phi_new), True
    return state, False


def pcn_chain(state: ChainState, beta: float, posterior: Posterior, n: int, rng):
    """``n`` pCN steps with pre-drawn noise; returns ``(trace, final_state)``."""
    if not 0.0 < beta <= 1.0:
        raise ParameterError("beta must lie in (0, 1]")
    alpha = posterior.basis.eigenvalues
    noise = beta * np.sqrt(alpha) * rng.standard_normal((n, alpha.size))
    coins = rng.random(n)
    rho = np.sqrt(1.0 - beta**2)
    U = np.empty((n, alpha.size))
    phi = np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    u, p = state.u, state.phi
    for i in range(n):
        u_new = rho * u + noise[i]
        p_new = posterior.phi(u_new)
        if coins[i] < np.exp(min(0.0, p - p_new)):
            u, p = u_new, p_new
            accepted[i] = True
        U[i] = u
        phi[i] = p
    return ChainTrace(U, accepted, phi, posterior.omf(U, phi)), ChainState(u, p)


def run_chain(kernel: Callable, init: ChainState, n: int, rng, posterior: Posterior | None = None):
    """Apply ``kernel(state, rng) -> (state, accepted)`` ``n`` times and record each state.

    OMF values need ``posterior``; without it they are recorded as NaN.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    dim = np.asarray(init.u).size
    U = np.empty((n, dim))
    phi = np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    state = init
    for i in range(n):
        state, accepted[i] = kernel(state, rng)
        U[i] = state.u
        phi[i] = state.phi
    omf = posterior.omf(U, phi) if posterior is not None else np.full(n, np.nan)
    return ChainTrace(U, accepted, phi, omf)
