"""Discretized Karhunen-Loeve basis of a stationary Gaussian prior.

Fields live on a 1-D grid with quadrature weights. The prior covariance is
discretized Nystrom-style: the eigenpairs of ``W^{1/2} C W^{1/2}`` are mapped
back to grid functions that are orthonormal under the weighted inner product.
Every sampler in the package works on the resulting spectral coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidKernelError, NotInCameronMartinError, ParameterError, ShapeError

EIG_CLAMP = 1e-12


@dataclass(frozen=True)
class Grid:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        wts = np.asarray(self.weights, dtype=float)
        if pts.ndim != 1 or pts.shape != wts.shape or pts.size < 1:
            raise ShapeError("grid points and weights must be 1-D with equal length")
        if pts.size > 1 and np.any(np.diff(pts) <= 0):
            raise ParameterError("grid points must be strictly increasing")
        if np.any(wts <= 0):
            raise ParameterError("quadrature weights must be strictly positive")
        pts.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @classmethod
    def uniform(cls, a: float, b: float, n: int) -> "Grid":
        """Uniform grid with trapezoidal weights on ``[a, b]``."""
        if n < 2:
            raise ParameterError("a uniform grid needs at least 2 points")
        pts = np.linspace(a, b, n)
        h = (b - a) / (n - 1)
        wts = np.full(n, h)
        wts[0] = wts[-1] = h / 2
        return cls(pts, wts)

    def __len__(self):
        return self.points.size

    @property
    def length(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class CovarianceKernel:
    """Stationary correlation kernel with unit variance.

    ``kind="exponential"`` gives ``exp(-|t - t'| / scale)``,
    ``kind="squared_exponential"`` gives ``exp(-|t - t'|^2 / (2 scale^2))``.
    """

    kind: str
    scale: float

    def __post_init__(self):
        if self.kind not in ("exponential", "squared_exponential"):
            raise InvalidKernelError(f"unknown kernel kind {self.kind!r}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise InvalidKernelError("kernel scale must be positive and finite")

    @classmethod
    def exponential(cls, scale: float = 2.0) -> "CovarianceKernel":
        return cls("exponential", scale)

    @classmethod
    def squared_exponential(cls, scale: float = 0.3) -> "CovarianceKernel":
        return cls("squared_exponential", scale)

    def __call__(self, t, s) -> np.ndarray:
        r = np.abs(np.subtract.outer(np.asarray(t, float), np.asarray(s, float)))
        if self.kind == "exponential":
            return np.exp(-r / self.scale)
        return np.exp(-(r**2) / (2.0 * self.scale**2))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale}


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenpairs of the discretized prior covariance.

    Attributes
    ----------
    eigenvalues : (full_dim,) array
        Prior variances of the spectral coefficients, descending, >= 0.
    eigenvectors : (n_grid, full_dim) array
        Column ``k`` is the eigenfunction ``e_k`` sampled on the grid.
    grid : Grid
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    grid: Grid
    kernel: CovarianceKernel | None = field(default=None, compare=False)

    def __post_init__(self):
        for arr in (self.eigenvalues, self.eigenvectors):
            arr.setflags(write=False)

    @property
    def full_dim(self) -> int:
        return self.eigenvalues.size

    @property
    def positive(self) -> np.ndarray:
        """Mask of modes with nonzero prior variance."""
        return self.eigenvalues > 0

    def project(self, field_values) -> np.ndarray:
        """Spectral coefficients ``<u, e_k>_w``; accepts a field or a stack of fields."""
        f = np.asarray(field_values, dtype=float)
        if f.shape[-1] != len(self.grid):
            raise ShapeError(f"field length {f.shape[-1]} != grid size {len(self.grid)}")
        return (f * self.grid.weights) @ self.eigenvectors

    def synthesize(self, coeffs) -> np.ndarray:
        """Grid values of ``sum_k c_k e_k``; trailing modes may be omitted."""
        c = np.asarray(coeffs, dtype=float)
        k = c.shape[-1]
        if k > self.full_dim:
            raise ShapeError(f"{k} coefficients exceed full_dim={self.full_dim}")
        return c @ self.eigenvectors[:, :k].T

    def sample_prior(self, rng, size=None) -> np.ndarray:
        shape = (self.full_dim,) if size is None else (size, self.full_dim)
        return np.sqrt(self.eigenvalues) * rng.standard_normal(shape)

    def cameron_martin_norm_sq(self, coeffs) -> np.ndarray | float:
        c = np.asarray(coeffs, dtype=float)
        if c.shape[-1] > self.full_dim:
            raise ShapeError("too many coefficients")
        alpha = self.eigenvalues[: c.shape[-1]]
        zero = alpha <= 0
        if np.any(c[..., zero] != 0):
            raise NotInCameronMartinError("nonzero coefficient on a zero-variance mode")
        safe = np.where(zero, 1.0, alpha)
        out = np.sum(np.where(zero, 0.0, c**2 / safe), axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def truncation_dim(self, epsilon: float = 0.01) -> int:
        return truncation_dim(self, epsilon)

    def inner_product_error(self) -> float:
        """Largest deviation of the weighted Gram matrix from the identity."""
        e = self.eigenvectors
        gram = e.T @ (self.grid.weights[:, None] * e)
        return float(np.max(np.abs(gram - np.eye(e.shape[1]))))


def build_basis(kernel: CovarianceKernel, grid: Grid) -> SpectralBasis:
    cov = kernel(grid.points, grid.points)
    if not np.all(np.isfinite(cov)):
        raise InvalidKernelError("kernel produced non-finite entries")
    sw = np.sqrt(grid.weights)
    a = sw[:, None] * cov * sw[None, :]
    a = 0.5 * (a + a.T)
    try:
        lam, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise InvalidKernelError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(lam)[::-1]
    lam, v = lam[order], v[:, order]
    lam = np.where(lam < EIG_CLAMP * lam[0], 0.0, lam)
    # fix the sign convention so bases are reproducible across platforms
    signs = np.sign(v[np.argmax(np.abs(v), axis=0), np.arange(v.shape[1])])
    v = v * np.where(signs == 0, 1.0, signs)
    return SpectralBasis(lam, v / sw[:, None], grid, kernel)


def truncation_dim(basis: SpectralBasis, epsilon: float = 0.01) -> int:
    """Smallest (1-based) ``k`` with ``alpha_k / alpha_1 < epsilon``, else ``full_dim``."""
    if not 0 < epsilon < 1:
        raise ParameterError("epsilon must lie in (0, 1)")
    alpha = basis.eigenvalues
    if alpha.size == 0:
        raise ParameterError("empty basis")
    below = np.flatnonzero(alpha / alpha[0] < epsilon)
    return int(below[0]) + 1 if below.size else alpha.size


def project(basis: SpectralBasis, field_values) -> np.ndarray:
    return basis.project(field_values)


def synthesize(basis: SpectralBasis, coeffs) -> np.ndarray:
    return basis.synthesize(coeffs)


def sample_prior(basis: SpectralBasis, rng, size=None) -> np.ndarray:
    """Draw ``sqrt(alpha_k) * xi_k`` with iid standard normal ``xi``."""
    return basis.sample_prior(rng, size)


def cameron_martin_norm_sq(basis: SpectralBasis, coeffs):
    return basis.cameron_martin_norm_sq(coeffs)
