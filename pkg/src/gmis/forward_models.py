"""Benchmark potentials: ODE coefficient inversion, bimodal toy likelihood,
nonlinear inverse heat conduction with an uncertain boundary condition, and a
linear-Gaussian problem with a closed-form posterior used for validation.

Every potential maps fields on a grid (one field or a stack of fields) to
non-negative misfit values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.special import logsumexp

from .errors import ParameterError, ShapeError
from .spectral_prior import Grid, SpectralBasis


def interpolation_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Dense matrix ``M`` with ``M @ f == np.interp(dst, src, f)`` for every ``f``."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    idx = np.clip(np.searchsorted(src, dst, side="right") - 1, 0, src.size - 2)
    t = (dst - src[idx]) / (src[idx + 1] - src[idx])
    t = np.clip(t, 0.0, 1.0)
    m = np.zeros((dst.size, src.size))
    rows = np.arange(dst.size)
    m[rows, idx] = 1.0 - t
    m[rows, idx + 1] += t
    return m


@dataclass
class ObservationSet:
    times: np.ndarray
    values: np.ndarray
    noise_sd: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.values = np.asarray(self.values, float)
        if self.times.shape != self.values.shape:
            raise ShapeError("observation coordinates and values differ in length")
        if not self.noise_sd > 0:
            raise ParameterError("noise_sd must be positive")

    def __len__(self):
        return self.times.size

    def save(self, csv_path, sidecar_path=None) -> None:
        """Write ``index,coordinate,value`` CSV plus a JSON sidecar."""
        csv_path = Path(csv_path)
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "coordinate", "value"])
            for i, (t, v) in enumerate(zip(self.times, self.values)):
                w.writerow([i, repr(float(t)), repr(float(v))])
        sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
        doc = {"noise_sd": self.noise_sd, **self.meta}
        sidecar.write_text(json.dumps(doc, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, csv_path, sidecar_path=None) -> "ObservationSet":
        csv_path = Path(csv_path)
        with csv_path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        sidecar = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        noise_sd = meta.pop("noise_sd")
        return cls(
            [float(r["coordinate"]) for r in rows],
            [float(r["value"]) for r in rows],
            noise_sd,
            meta,
        )


class Potential:
    """Data misfit ``Phi``; call with one field ``(n_grid,)`` or a stack ``(n, n_grid)``."""

    name = "potential"

    def __init__(self, grid: Grid):
        self.grid = grid

    @property
    def n_obs(self) -> int:
        return 0

    def _evaluate(self, fields: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, fields):
        f = np.asarray(fields, float)
        single = f.ndim == 1
        f = np.atleast_2d(f)
        if f.shape[1] != len(self.grid):
            raise ShapeError(f"field length {f.shape[1]} != grid size {len(self.grid)}")
        out = self._evaluate(f)
        return float(out[0]) if single else out


def gaussian_misfit(pred: np.ndarray, obs: ObservationSet) -> np.ndarray:
    r = pred - obs.values
    return np.sum(r * r, axis=-1) / (2.0 * obs.noise_sd**2)


# ---------------------------------------------------------------- ODE model


def ode_solve(u_grid: Grid, fields, x0: float = 1.0, T: float = 1.0, nsteps: int = 1000):
    """Integrate ``dx/dt = -u(t) x`` by classical RK4 with ``nsteps`` fixed steps.

    ``u`` is linearly interpolated between grid points. Returns ``(times, x)``
    where ``x`` has shape ``(..., nsteps + 1)``.

    For a linear scalar ODE one RK4 step multiplies the state by a polynomial
    in ``dt * u`` at the step start, midpoint and end, so the whole trajectory
    is a cumulative product of per-step factors.
    """
    if nsteps < 1:
        raise ParameterError("nsteps must be >= 1")
    f = np.asarray(fields, float)
    dt = T / nsteps
    half_times = np.linspace(0.0, T, 2 * nsteps + 1)
    a = f @ interpolation_matrix(u_grid.points, half_times).T
    a0, ah, a1 = a[..., 0:-1:2], a[..., 1::2], a[..., 2::2]
    k1 = -a0
    k2 = -ah * (1.0 + 0.5 * dt * k1)
    k3 = -ah * (1.0 + 0.5 * dt * k2)
    k4 = -a1 * (1.0 + dt * k3)
    g = 1.0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    ones = np.ones(g.shape[:-1] + (1,))
    x = x0 * np.cumprod(np.concatenate([ones, g], axis=-1), axis=-1)
    return np.linspace(0.0, T, nsteps + 1), x


class ODEModel:
    """Forward map from ``u`` to ``x(t_i)`` at the observation times."""

    def __init__(self, grid: Grid, times, x0: float = 1.0, T: float = 1.0, nsteps: int = 1000):
        self.grid = grid
        self.times = np.asarray(times, float)
        self.x0 = x0
        self.T = T
        self.nsteps = nsteps
        step_times = np.linspace(0.0, T, nsteps + 1)
        self._pick = interpolation_matrix(step_times, self.times)

    def __call__(self, fields):
        _, x = ode_solve(self.grid, fields, self.x0, self.T, self.nsteps)
        return x @ self._pick.T


class ODEPotential(Potential):
    name = "ode"

    def __init__(self, model: ODEModel, obs: ObservationSet):
        super().__init__(model.grid)
        self.model = model
        self.obs = obs

    @property
    def n_obs(self):
        return len(self.obs)

    def _evaluate(self, fields):
        return gaussian_misfit(self.model(fields), self.obs)


def ode_potential(obs: ObservationSet, u, grid: Grid, x0=1.0, T=1.0, nsteps=1000):
    return ODEPotential(ODEModel(grid, obs.times, x0, T, nsteps), obs)(u)


# ----------------------------------------------------------- bimodal model


class BimodalPotential(Potential):
    """``exp(-Phi) ~ exp(-|u - a s|^2 / 2) + exp(-|u + a s|^2 / 2)``, ``s = sin(2 pi t)``.

    ``norm="grid"`` sums squares over grid values; ``norm="l2"`` uses the
    quadrature-weighted L2 norm. A ``log 2`` shift keeps ``Phi >= 0``.
    """

    name = "bimodal"

    def __init__(self, grid: Grid, amplitude: float = 1.0, norm: str = "grid"):
        super().__init__(grid)
        if not amplitude > 0:
            raise ParameterError("amplitude must be positive")
        if norm not in ("grid", "l2"):
            raise ParameterError(f"unknown norm {norm!r}")
        self.amplitude = amplitude
        self.norm = norm
        self.shape = amplitude * np.sin(2 * np.pi * grid.points)
        self._w = np.ones(len(grid)) if norm == "grid" else grid.weights

    def sq_norm(self, f) -> np.ndarray:
        return np.sum(self._w * np.asarray(f) ** 2, axis=-1)

    def _evaluate(self, fields):
        plus = -0.5 * self.sq_norm(fields - self.shape)
        minus = -0.5 * self.sq_norm(fields + self.shape)
        phi = -logsumexp(np.stack([plus, minus]), axis=0) + math.log(2.0)
        return np.maximum(phi, 0.0)


def bimodal_potential(u, grid: Grid, amplitude: float = 1.0, norm: str = "grid"):
    return BimodalPotential(grid, amplitude, norm)(u)


# -------------------------------------------------------------- heat model


@numba.njit(cache=True, error_model="numpy")
def _heat_kernel(Q, nx, length, dt, robin, obs_steps, probe):
    # Q: (n, nt + 1) inward flux per time level; output is probe . u at obs_steps.
    # IMEX BDF2: conductivity extrapolated from the two previous levels,
    # diffusion implicit; the first step is backward Euler with lagged c.
    n, ntp1 = Q.shape
    nt = ntp1 - 1
    nobs = obs_steps.size
    out = np.empty((n, nobs))
    dx = length / nx
    r = dt / (dx * dx)
    m = nx + 1
    u = np.empty(m)
    uold = np.empty(m)
    cn = np.empty(m)
    lo = np.empty(m)
    di = np.empty(m)
    up = np.empty(m)
    rhs = np.empty(m)
    cp = np.empty(m)
    dp = np.empty(m)
    for b in range(n):
        for i in range(m):
            u[i] = 0.0
            uold[i] = 0.0
        k = 0
        for step in range(1, nt + 1):
            if step == 1:
                a0 = 1.0
                for i in range(m):
                    cn[i] = u[i] * u[i] + 1.0
                    rhs[i] = u[i]
            else:
                a0 = 1.5
                for i in range(m):
                    ue = 2.0 * u[i] - uold[i]
                    cn[i] = ue * ue + 1.0
                    rhs[i] = 2.0 * u[i] - 0.5 * uold[i]
            ch = 0.5 * (cn[0] + cn[1])
            lo[0] = 0.0
            di[0] = a0 + 2.0 * r * ch
            up[0] = -2.0 * r * ch
            rhs[0] += 2.0 * dt / dx * Q[b, step]
            for i in range(1, m - 1):
                cl = 0.5 * (cn[i - 1] + cn[i])
                cr = 0.5 * (cn[i] + cn[i + 1])
                lo[i] = -r * cl
                di[i] = a0 + r * (cl + cr)
                up[i] = -r * cr
            cl = 0.5 * (cn[m - 2] + cn[m - 1])
            lo[m - 1] = -2.0 * r * cl
            di[m - 1] = a0 + 2.0 * r * cl
            if robin:
                di[m - 1] += 2.0 * dt / dx * cn[m - 1]
            up[m - 1] = 0.0
            cp[0] = up[0] / di[0]
            dp[0] = rhs[0] / di[0]
            for i in range(1, m):
                den = di[i] - lo[i] * cp[i - 1]
                cp[i] = up[i] / den
                dp[i] = (rhs[i] - lo[i] * dp[i - 1]) / den
            for i in range(m):
                uold[i] = u[i]
            u[m - 1] = dp[m - 1]
            for i in range(m - 2, -1, -1):
                u[i] = dp[i] - cp[i] * u[i + 1]
            while k < nobs and obs_steps[k] == step:
                acc = 0.0
                for i in range(m):
                    acc += probe[i] * u[i]
                out[b, k] = acc
                k += 1
    return out


class HeatModel:
    """Sensor temperature history for ``u_t = (c(u) u_x)_x`` with ``c(u) = u^2 + 1``.

    Semi-implicit finite volumes in space, second-order IMEX BDF2 in time: the
    conductivity is extrapolated from earlier levels and the diffusion solved
    implicitly (one tridiagonal solve per step). The left boundary injects the
    heat flux ``q(t)``, i.e. ``-c(u) u_x(0, t) = q(t)``; the right boundary is
    insulated (``bc="insulated"``) or ``u_x(L, t) = -u`` (``bc="robin"``).
    Zero initial temperature.
    """

    def __init__(
        self,
        grid: Grid,
        times,
        bc: str = "insulated",
        nx: int = 50,
        nt: int = 400,
        length: float = 1.0,
        T: float = 2.0,
        sensor: float = 0.9,
    ):
        if bc not in ("insulated", "robin"):
            raise ParameterError(f"unknown boundary condition {bc!r}")
        if nx < 2 or nt < 1:
            raise ParameterError("nx >= 2 and nt >= 1 required")
        self.grid = grid
        self.times = np.asarray(times, float)
        self.bc = bc
        self.nx, self.nt, self.length, self.T, self.sensor = nx, nt, length, T, sensor
        self.dt = T / nt
        steps = np.rint(self.times / self.dt).astype(np.int64)
        if np.any(np.abs(steps * self.dt - self.times) > 1e-9 * T) or np.any(steps < 1):
            raise ParameterError("observation times must be positive multiples of T/nt")
        self._obs_steps = steps
        pos = sensor / length * nx
        si = min(int(math.floor(pos)), nx - 1)
        self._probe = np.zeros(nx + 1)
        self._probe[si] = 1.0 - (pos - si)
        self._probe[si + 1] = pos - si
        self._flux_interp = interpolation_matrix(grid.points, np.linspace(0.0, T, nt + 1))

    def _run(self, fields, steps, probe):
        f = np.asarray(fields, float)
        single = f.ndim == 1
        Q = np.ascontiguousarray(np.atleast_2d(f) @ self._flux_interp.T)
        out = _heat_kernel(Q, self.nx, self.length, self.dt, self.bc == "robin", steps, probe)
        return out[0] if single else out

    def __call__(self, fields):
        return self._run(fields, self._obs_steps, self._probe)

    def heat_content(self, fields):
        """Trapezoidal integral of the temperature over ``[0, L]`` after every time step."""
        wts = np.full(self.nx + 1, self.length / self.nx)
        wts[0] = wts[-1] = wts[0] / 2
        return self._run(fields, np.arange(1, self.nt + 1, dtype=np.int64), wts)


def heat_solve(grid: Grid, q, bc="insulated", nx=50, nt=400, times=None, T=2.0):
    if times is None:
        times = T * np.arange(1, 51) / 50
    return HeatModel(grid, times, bc, nx, nt, T=T)(q)


class HeatPotential(Potential):
    """``exp(-Phi) = 0.8 exp(-Phi_insulated) + 0.2 exp(-Phi_robin)``."""

    name = "heat"

    def __init__(self, grid: Grid, obs: ObservationSet, nx=50, nt=400, probs=(0.8, 0.2), T=2.0):
        super().__init__(grid)
        self.obs = obs
        self.models = (
            HeatModel(grid, obs.times, "insulated", nx, nt, T=T),
            HeatModel(grid, obs.times, "robin", nx, nt, T=T),
        )
        self.log_probs = np.log(np.asarray(probs, float))

    @property
    def n_obs(self):
        return len(self.obs)

    def misfits(self, fields) -> np.ndarray:
        """``(n, 2)`` array of per-boundary-condition misfits."""
        f = np.atleast_2d(np.asarray(fields, float))
        return np.stack([gaussian_misfit(m(f), self.obs) for m in self.models], axis=-1)

    def _evaluate(self, fields):
        phis = self.misfits(fields)
        phis = np.where(np.isfinite(phis), phis, np.inf)
        with np.errstate(invalid="ignore"):
            out = -logsumexp(self.log_probs - phis, axis=1)
        return np.where(np.isnan(out), np.inf, np.maximum(out, 0.0))


def combine_heat_misfits(phi1, phi2, probs=(0.8, 0.2)):
    lp = np.log(np.asarray(probs, float))
    out = -logsumexp(np.stack([lp[0] - np.asarray(phi1), lp[1] - np.asarray(phi2)]), axis=0)
    return np.maximum(out, 0.0)


# ------------------------------------------------------ linear-Gaussian model


class LinearGaussianPotential(Potential):
    """``Phi(u) = sum_{k<=K} (u_k - d_k)^2 / (2 sigma^2)`` on spectral coefficients.

    The posterior is Gaussian and diagonal in the prior basis, which makes this
    the reference problem for sampler correctness.
    """

    name = "linear-gaussian"

    def __init__(self, basis: SpectralBasis, data, sigma: float):
        super().__init__(basis.grid)
        self.basis = basis
        self.data = np.asarray(data, float)
        self.sigma = float(sigma)

    @property
    def K(self):
        return self.data.size

    @property
    def n_obs(self):
        return self.K

    def _evaluate(self, fields):
        c = self.basis.project(fields)[:, : self.K]
        return np.sum((c - self.data) ** 2, axis=1) / (2.0 * self.sigma**2)

    def posterior(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of the retained modes under the exact posterior."""
        alpha = self.basis.eigenvalues[: self.K]
        var = 1.0 / (1.0 / alpha + 1.0 / self.sigma**2)
        return var * self.data / self.sigma**2, var

    def posterior_parameters(self) -> tuple[np.ndarray, np.ndarray]:
        """``(x, h)`` of the proposal component equal to the exact posterior."""
        alpha = self.basis.eigenvalues[: self.K]
        mean, var = self.posterior()
        return mean / alpha, 1.0 / var - 1.0 / alpha


# ----------------------------------------------------------------- helpers


def simulate_data(model, u_true, noise_sd: float, rng, meta=None) -> ObservationSet:
    """``y_i = G(u_true)(t_i) + noise_sd * xi_i``."""
    clean = np.asarray(model(u_true), float)
    y = clean + noise_sd * rng.standard_normal(clean.shape)
    return ObservationSet(model.times, y, noise_sd, dict(meta or {}))


def omf(potential: Potential, basis: SpectralBasis, u) -> float | np.ndarray:
    """Onsager-Machlup functional ``Phi(u) + |u|_E^2 / 2`` of coefficient vectors."""
    return potential(basis.synthesize(u)) + 0.5 * basis.cameron_martin_norm_sq(u)
