"""Benchmark processes with known time-varying spectra.

Three generators are provided: a trivariate moving-average process whose
coefficients switch abruptly at mid-series, a bivariate moving-average
process whose coefficients drift slowly, and a long bivariate autoregression
with four regimes of varying contrast.  Each comes with the closed-form
local spectrum, evaluated at the coefficients in force at a scaled time,
for use as ground truth in accuracy studies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .model import MultivariateSeries, SpectrumGrid


@dataclass(frozen=True)
class VmaSpec:
    """Vector MA(2) with (possibly time-varying) lag matrices."""

    n_samples: int
    n_dim: int
    phi1: Callable[[int], np.ndarray]
    phi2: Callable[[int], np.ndarray]
    sigma: Callable[[int], np.ndarray]


@dataclass(frozen=True)
class VarSpec:
    """Vector AR(2) with regime-dependent lag matrices and innovation covariance."""

    n_samples: int
    n_dim: int
    phi1: Callable[[int], np.ndarray]
    phi2: Callable[[int], np.ndarray]
    sigma: Callable[[int], np.ndarray]


def _correlation(n_dim: int, rho: float) -> np.ndarray:
    sigma = np.full((n_dim, n_dim), rho)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def _sample_innovations(sigma: np.ndarray, count: int, rng) -> np.ndarray:
    chol = np.linalg.cholesky(sigma)
    return rng.standard_normal((count, sigma.shape[0])) @ chol.T


def make_piecewise_vma_spec(n_samples: int = 600) -> VmaSpec:
    """Trivariate MA(2), abrupt coefficient switch at mid-series."""
    phi_a = np.array([[0.6, 0.0, 0.0],
                      [0.2, -0.5, 0.0],
                      [0.1, 0.3, 0.4]])
    phi_b = np.array([[0.6, 0.0, 0.0],
                      [0.2, 0.5, 0.0],
                      [-0.1, -0.3, 0.4]])
    phi2 = np.diag([0.3, 0.3, 0.0])
    sigma = _correlation(3, 0.5)
    half = n_samples // 2

    def phi1_fn(t: int) -> np.ndarray:
        return phi_a if t <= half else phi_b

    return VmaSpec(n_samples=n_samples, n_dim=3, phi1=phi1_fn,
                   phi2=lambda t: phi2, sigma=lambda t: sigma)


def make_slowvarying_vma_spec(n_samples: int = 1024) -> VmaSpec:
    """Bivariate MA(2) with slowly drifting diagonal lag-1 coefficients."""
    phi2 = np.array([[0.5, 0.0], [0.0, -1.2]])
    sigma = _correlation(2, 0.2)

    def phi1_fn(t: int) -> np.ndarray:
        a = 1.122 * (1.0 - 1.781 * math.sin(math.pi * t / 2048.0))
        b = 1.122 * (1.0 - 1.781 * math.cos(0.8 * math.pi * t / 2048.0))
        return np.array([[a, -1.0], [-1.0, b]])

    return VmaSpec(n_samples=n_samples, n_dim=2, phi1=phi1_fn,
                   phi2=lambda t: phi2, sigma=lambda t: sigma)


def make_piecewise_var_spec(scale: float = 1.0, n_min: int = 60) -> VarSpec:
    """Bivariate AR(2) with four regimes; ``scale`` shrinks T and boundaries."""
    bounds = [400, 5000, 10000, 12000]
    scaled = [int(round(b * scale)) for b in bounds]
    if any(b - a < n_min for a, b in zip([0] + scaled[:-1], scaled)):
        raise InvalidArgumentError(f"scaled regime shorter than n_min = {n_min}")
    b1, b2, b3, n_samples = scaled

    phi1_by_regime = [np.diag([0.5, -0.6]), np.diag([0.5, 0.6]),
                      np.diag([0.5, 0.6]), np.diag([1.32, 0.6])]
    phi2_by_regime = [np.diag([0.0, -0.5])] * 3 + [np.diag([-0.81, -0.5])]
    sigma_by_regime = [_correlation(2, 0.5)] * 2 + [_correlation(2, 0.8)] * 2

    def regime(t: int) -> int:
        if t <= b1:
            return 0
        if t <= b2:
            return 1
        if t <= b3:
            return 2
        return 3

    return VarSpec(n_samples=n_samples, n_dim=2,
                   phi1=lambda t: phi1_by_regime[regime(t)],
                   phi2=lambda t: phi2_by_regime[regime(t)],
                   sigma=lambda t: sigma_by_regime[regime(t)])


def simulate_vma(spec: VmaSpec, rng) -> MultivariateSeries:
    # two pre-samples of innovations so X_1 has both lags available
    sig0 = spec.sigma(1)
    eps = np.empty((spec.n_samples + 2, spec.n_dim))
    eps[:2] = _sample_innovations(sig0, 2, rng)
    for t in range(1, spec.n_samples + 1):
        eps[t + 1] = _sample_innovations(spec.sigma(t), 1, rng)[0]
    x = np.empty((spec.n_samples, spec.n_dim))
    for t in range(1, spec.n_samples + 1):
        x[t - 1] = eps[t + 1] + spec.phi1(t) @ eps[t] + spec.phi2(t) @ eps[t - 1]
    return MultivariateSeries(x)


def simulate_var(spec: VarSpec, rng, pre_samples: int = 500) -> MultivariateSeries:
    # one continuous recursion crossing regime boundaries; the pre-period
    # before t = 1 runs under the first regime and is discarded
    total = spec.n_samples + pre_samples
    x = np.zeros((total + 2, spec.n_dim))
    for i in range(total):
        t = i - pre_samples + 1
        t_eff = max(t, 1)
        eps = _sample_innovations(spec.sigma(t_eff), 1, rng)[0]
        x[i + 2] = spec.phi1(t_eff) @ x[i + 1] + spec.phi2(t_eff) @ x[i] + eps
    return MultivariateSeries(x[pre_samples + 2 :])


def gen_piecewise_vma(rng, n_samples: int = 600) -> MultivariateSeries:
    return simulate_vma(make_piecewise_vma_spec(n_samples), rng)


def gen_slowvarying_vma(rng, n_samples: int = 1024) -> MultivariateSeries:
    return simulate_vma(make_slowvarying_vma_spec(n_samples), rng)


def gen_piecewise_var(rng, scale: float = 1.0) -> MultivariateSeries:
    return simulate_var(make_piecewise_var_spec(scale), rng)


def _time_at(u: float, n_samples: int) -> int:
    return int(min(max(math.ceil(u * n_samples), 1), n_samples))


def true_spectrum_vma(spec: VmaSpec, u: float, freqs) -> np.ndarray:
    """f(u, w) = Phi(u, w) Sigma Phi(u, w)^* at the coefficients in force at u."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    t = _time_at(u, spec.n_samples)
    e1 = np.exp(-2j * np.pi * freqs)
    e2 = np.exp(-4j * np.pi * freqs)
    eye = np.eye(spec.n_dim)
    phi = (eye[None, :, :] + e1[:, None, None] * spec.phi1(t)[None]
           + e2[:, None, None] * spec.phi2(t)[None])
    f = phi @ spec.sigma(t) @ np.conj(np.swapaxes(phi, -1, -2))
    return 0.5 * (f + np.conj(np.swapaxes(f, -1, -2)))


def true_spectrum_var(spec: VarSpec, u: float, freqs) -> np.ndarray:
    """AR spectrum ``A^{-1} Sigma A^{-*}`` with ``A = I - Phi1 e^{-iw} - Phi2 e^{-2iw}``."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    t = _time_at(u, spec.n_samples)
    e1 = np.exp(-2j * np.pi * freqs)
    e2 = np.exp(-4j * np.pi * freqs)
    eye = np.eye(spec.n_dim)
    a = (eye[None, :, :] - e1[:, None, None] * spec.phi1(t)[None]
         - e2[:, None, None] * spec.phi2(t)[None])
    sig = np.broadcast_to(spec.sigma(t).astype(complex), a.shape)
    try:
        y = np.linalg.solve(a, sig)
        f = np.conj(np.swapaxes(np.linalg.solve(a, np.conj(np.swapaxes(y, -1, -2))), -1, -2))
    except np.linalg.LinAlgError as exc:
        raise InvalidStateError("autoregressive polynomial singular at a requested frequency") from exc
    return 0.5 * (f + np.conj(np.swapaxes(f, -1, -2)))


def truth_grid(spec, time_grid, freq_grid) -> SpectrumGrid:
    """True spectra on a lattice; time grid holds sample positions in (0, T]."""
    time_grid = np.asarray(time_grid, dtype=float)
    freq_grid = np.asarray(freq_grid, dtype=float)
    fn = true_spectrum_vma if isinstance(spec, VmaSpec) else true_spectrum_var
    vals = np.empty((time_grid.size, freq_grid.size, spec.n_dim, spec.n_dim), dtype=complex)
    for i, t in enumerate(time_grid):
        vals[i] = fn(spec, float(t) / spec.n_samples, freq_grid)
    return SpectrumGrid(time_points=time_grid, freq_points=freq_grid, values=vals)
