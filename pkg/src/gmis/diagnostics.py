"""Chain diagnostics: autocorrelation, integrated autocorrelation time, ESS,
running acceptance rates and the sample-level KL objective of a proposal."""

from __future__ import annotations

import numpy as np

from .errors import GmisError, ParameterError
from .proposal_measures import MixtureProposal, log_density_mixture


class UndefinedACFError(GmisError, ValueError):
    pass


def _trace(values) -> np.ndarray:
    v = np.asarray(values, float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ParameterError("trace contains non-finite values")
    return v


def _acf_all(v: np.ndarray) -> np.ndarray:
    x = v - v.mean()
    n = x.size
    denom = x @ x
    if not denom > 0:
        raise UndefinedACFError("constant series has no autocorrelation")
    size = 1 << int(2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n]
    return ac / denom


def acf(values, max_lag: int) -> np.ndarray:
    """Autocorrelation ``rho(0..max_lag)`` normalized by the lag-0 sum of squares."""
    v = _trace(values)
    if not 0 <= max_lag < v.size:
        raise ParameterError("need 0 <= max_lag < len(trace)")
    out = _acf_all(v)[: max_lag + 1]
    out[0] = 1.0
    return out


def iact(values) -> float:
    """Integrated autocorrelation time ``tau = sum_{l>=1} rho(l)``.

    The sum is truncated with Geyer's initial positive sequence: pairs
    ``rho(2m) + rho(2m+1)`` are accumulated until the first negative pair.
    """
    v = _trace(values)
    if v.size < 100:
        raise ParameterError("iact needs at least 100 samples")
    rho = _acf_all(v)
    rho[0] = 1.0
    npairs = rho.size // 2
    pairs = rho[: 2 * npairs : 2] + rho[1 : 2 * npairs : 2]
    neg = np.flatnonzero(pairs < 0)
    stop = neg[0] if neg.size else npairs
    tau = pairs[:stop].sum() - 1.0
    return max(float(tau), 0.0)


def ess(values) -> float:
    v = _trace(values)
    return v.size / (1.0 + 2.0 * iact(v))


def mc_stderr(values) -> float:
    """Monte Carlo standard error of the sample mean, ``sd / sqrt(ESS)``."""
    v = _trace(values)
    return float(np.std(v) / np.sqrt(ess(v)))


def acceptance_curve(flags, window: int) -> np.ndarray:
    """Trailing moving average of acceptance flags over complete windows.

    Entry ``i`` averages ``flags[i : i + window]``, so the result has
    ``len(flags) - window + 1`` entries.
    """
    f = np.asarray(flags, float).reshape(-1)
    if not 1 <= window <= f.size:
        raise ParameterError("need 1 <= window <= len(flags)")
    c = np.concatenate([[0.0], np.cumsum(f)])
    return (c[window:] - c[:-window]) / window


def kld_objective(samples, prop: MixtureProposal) -> float:
    """``-(1/N) sum_n log sum_j w_j f(u^n)``: KL divergence from the sampled target
    to the proposal, up to a proposal-independent constant."""
    return -float(np.mean(log_density_mixture(samples, prop)))


def burn_in(n: int, fraction: float = 0.1) -> int:
    return int(np.floor(n * fraction))


def per_column(fn, matrix) -> np.ndarray:
    """Apply a scalar diagnostic to each column; constant columns give NaN."""
    M = np.asarray(matrix, float)
    out = np.full(M.shape[1], np.nan)
    for k in range(M.shape[1]):
        try:
            out[k] = fn(M[:, k])
        except UndefinedACFError:
            pass
    return out


def lag1(values) -> float:
    return float(acf(values, 1)[1])


def chain_report(trace, basis, K: int, burn: float = 0.1, max_lag: int = 100,
                 grid_points: bool = True) -> dict:
    """Summary diagnostics of a chain (after discarding a burn-in fraction).

    Per-mode figures use the first ``K`` spectral coefficients; per-point
    figures use the synthesized fields on the grid.
    """
    b = burn_in(len(trace), burn)
    U = trace.U[b:]
    omf = trace.omf[b:]
    rep = {
        "n": int(len(trace)),
        "burn_in": b,
        "acceptance_rate": float(np.mean(trace.accepted)),
        "acceptance_rate_post_burn": float(np.mean(trace.accepted[b:])),
    }
    finite = np.isfinite(omf).all() and np.ptp(omf) > 0
    rep["omf_mean"] = float(np.mean(omf))
    rep["omf_lag1_acf"] = lag1(omf) if finite else float("nan")
    rep["omf_tau"] = iact(omf) if finite and omf.size >= 100 else float("nan")
    rep["omf_ess"] = ess(omf) if finite and omf.size >= 100 else float("nan")
    rep["omf_acf"] = acf(omf, min(max_lag, omf.size - 1)).tolist() if finite else []
    if U.shape[0] >= 100:
        mode_ess = per_column(ess, U[:, :K])
        rep["mode_ess"] = mode_ess.tolist()
        rep["mode_ess_median"] = float(np.nanmedian(mode_ess)) if np.any(np.isfinite(mode_ess)) else float("nan")
        rep["mode_lag1_acf"] = per_column(lag1, U[:, :K]).tolist()
        if grid_points:
            F = basis.synthesize(U)
            point_ess = per_column(ess, F)
            rep["point_ess"] = point_ess.tolist()
            rep["point_lag1_acf"] = per_column(lag1, F).tolist()
            rep["point_ess_median"] = float(np.nanmedian(point_ess)) if np.any(np.isfinite(point_ess)) else float("nan")
    rep["posterior_mean_field"] = basis.synthesize(U.mean(axis=0)).tolist()
    return rep
