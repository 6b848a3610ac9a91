"""Gaussian mixture proposals parametrized relative to the prior.

Component ``j`` has mean ``sum_k alpha_k x_{j,k} e_k`` and precision
``C_0^{-1} + sum_k h_{j,k} e_k <e_k, .>`` for ``k <= K``; beyond ``K`` it
coincides with the prior. Densities are Radon-Nikodym derivatives with respect
to the prior and are only ever handled in log space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidComponentError, InvalidProposalError, ShapeError
from .spectral_prior import SpectralBasis

H_MARGIN = 1e-6
WEIGHT_TOL = 1e-10


@dataclass(frozen=True)
class GaussianComponent:
    x: np.ndarray
    h: np.ndarray
    w: float = 1.0

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        h = np.array(self.h, dtype=float).reshape(-1)
        if x.shape != h.shape:
            raise ShapeError("x and h must have equal length")
        x.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "w", float(self.w))

    @property
    def K(self) -> int:
        return self.x.size

    @classmethod
    def prior(cls, K: int, w: float = 1.0) -> "GaussianComponent":
        return cls(np.zeros(K), np.zeros(K), w)

    def violations(self, basis: SpectralBasis) -> list[str]:
        out = []
        if self.K > basis.full_dim:
            out.append(f"K={self.K} exceeds full_dim={basis.full_dim}")
            return out
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.h))):
            out.append("non-finite x or h")
        if not np.isfinite(self.w) or not 0.0 <= self.w <= 1.0:
            out.append(f"weight {self.w} outside [0, 1]")
        r = 1.0 + basis.eigenvalues[: self.K] * self.h
        bad = np.flatnonzero(~(r > 0))
        if bad.size:
            out.append(f"1 + alpha_k h_k <= 0 at modes {(bad + 1).tolist()}")
        return out

    def check(self, basis: SpectralBasis) -> None:
        v = self.violations(basis)
        if v:
            raise InvalidComponentError("; ".join(v))


def clamp_h(h, alpha) -> np.ndarray:
    """Keep ``1 + alpha_k h_k`` strictly positive with a relative safety margin."""
    alpha = np.asarray(alpha, dtype=float)
    floor = -(1.0 - H_MARGIN) / np.where(alpha > 0, alpha, 1.0)
    return np.where(alpha > 0, np.maximum(h, floor), h)


@dataclass(frozen=True)
class MixtureProposal:
    components: tuple
    basis: SpectralBasis

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidProposalError("a mixture needs at least one component")
        if len({c.K for c in comps}) != 1:
            raise ShapeError("all components must share the same K")
        object.__setattr__(self, "components", comps)

    @classmethod
    def prior(cls, basis: SpectralBasis, K: int) -> "MixtureProposal":
        return cls((GaussianComponent.prior(K),), basis)

    @property
    def K(self) -> int:
        return self.components[0].K

    @property
    def J(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.w for c in self.components])

    @property
    def X(self) -> np.ndarray:
        return np.stack([c.x for c in self.components])

    @property
    def H(self) -> np.ndarray:
        return np.stack([c.h for c in self.components])

    def is_prior(self) -> bool:
        return all(not c.x.any() and not c.h.any() for c in self.components)

    def log_density(self, u) -> np.ndarray | float:
        return log_density_mixture(u, self)

    def sample(self, rng, size=None) -> np.ndarray:
        return sample_proposal(self, rng, size)

    def validate(self) -> list[str]:
        return validate(self)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "components": [
                {"w": c.w, "x": c.x.tolist(), "h": c.h.tolist()} for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict, basis: SpectralBasis) -> "MixtureProposal":
        comps = tuple(GaussianComponent(c["x"], c["h"], c["w"]) for c in doc["components"])
        prop = cls(comps, basis)
        if prop.K != int(doc["K"]):
            raise ShapeError(f"document K={doc['K']} disagrees with component length {prop.K}")
        return prop

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str, basis: SpectralBasis) -> "MixtureProposal":
        return cls.from_dict(json.loads(text), basis)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path, basis: SpectralBasis) -> "MixtureProposal":
        return cls.from_json(Path(path).read_text(encoding="utf-8"), basis)


def component_variances(comp: GaussianComponent, basis: SpectralBasis) -> np.ndarray:
    """Coefficient variances ``beta_k = alpha_k / (1 + alpha_k h_k)`` for ``k <= K``."""
    comp.check(basis)
    alpha = basis.eigenvalues[: comp.K]
    return alpha / (1.0 + alpha * comp.h)


def _log_f(U: np.ndarray, X: np.ndarray, H: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    # U: (n, K); X, H: (J, K) -> (n, J).
    # With r = 1 + alpha h: alpha/beta = r, alpha^2/beta = alpha r, 2 alpha/beta = 2 r,
    # which stays finite on zero-variance modes.
    r = 1.0 + alpha * H
    const = 0.5 * np.sum(np.log(r) - alpha * r * X**2, axis=1)
    quad = U**2 @ H.T
    lin = U @ (r * X).T
    return const - 0.5 * quad + lin


def _as_rows(u, K: int) -> tuple[np.ndarray, bool]:
    U = np.asarray(u, dtype=float)
    single = U.ndim == 1
    U = np.atleast_2d(U)
    if U.shape[1] < K:
        raise ShapeError(f"need at least K={K} coefficients, got {U.shape[1]}")
    return U[:, :K], single


def log_density_component(u, comp: GaussianComponent, basis: SpectralBasis):
    """``log dmu_j/dmu_0`` at ``u`` (one coefficient vector or a stack of them)."""
    comp.check(basis)
    U, single = _as_rows(u, comp.K)
    out = _log_f(U, comp.x[None], comp.h[None], basis.eigenvalues[: comp.K])[:, 0]
    return float(out[0]) if single else out


def component_log_densities(u, prop: MixtureProposal) -> np.ndarray:
    """``(n, J)`` matrix of per-component log density ratios."""
    U, _ = _as_rows(u, prop.K)
    return _log_f(U, prop.X, prop.H, prop.basis.eigenvalues[: prop.K])


def log_density_mixture(u, prop: MixtureProposal):
    w = prop.weights
    if not np.any(w > 0):
        raise InvalidProposalError("all mixture weights are zero")
    U, single = _as_rows(u, prop.K)
    if prop.is_prior():
        out = np.zeros(U.shape[0])
    else:
        for c in prop.components:
            c.check(prop.basis)
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        lf = _log_f(U, prop.X, prop.H, prop.basis.eigenvalues[: prop.K])
        out = logsumexp(lf + logw, axis=1)
    return float(out[0]) if single else out


def sample_proposal(prop: MixtureProposal, rng, size=None) -> np.ndarray:
    """Draw from the mixture: pick a component by weight, Gaussian head, prior tail."""
    basis = prop.basis
    n = 1 if size is None else int(size)
    alpha = basis.eigenvalues
    K = prop.K
    w = prop.weights
    j = rng.choice(prop.J, size=n, p=w / w.sum()) if prop.J > 1 else np.zeros(n, dtype=int)
    xi = rng.standard_normal((n, basis.full_dim))
    X, H = prop.X, prop.H
    head_sd = np.sqrt(alpha[:K] / (1.0 + alpha[:K] * H))
    out = np.sqrt(alpha) * xi
    out[:, :K] = alpha[:K] * X[j] + head_sd[j] * xi[:, :K]
    return out[0] if size is None else out


def validate(prop: MixtureProposal) -> list[str]:
    """Human-readable list of validity violations; empty means valid."""
    out = []
    w = prop.weights
    if not np.all(np.isfinite(w)):
        out.append("non-finite weights")
    elif abs(w.sum() - 1.0) > WEIGHT_TOL:
        out.append(f"weights sum to {w.sum():.12g}, not 1")
    for j, c in enumerate(prop.components):
        out.extend(f"component {j}: {v}" for v in c.violations(prop.basis))
    return out
