"""Posterior summaries: averaged spectra, credible bands, change-point masses.

Every snapshot's spectrum estimate is piecewise constant in time (the value
on segment ``q`` comes from the coefficients in force there), so snapshots
are reduced to a compact per-segment representation before being expanded
onto the output lattice.  Scalar functionals (log spectra, coherences) are
computed per snapshot and then averaged; credible bands are empirical
percentiles of the same per-snapshot values, which keeps point summaries and
bands percentile-consistent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .model import (
    SpectrumGrid,
    component_runs,
    parse_functional,
    reconstruct_cholesky,
    spectrum_from_cholesky,
)


def default_functionals(n_dim: int) -> list[str]:
    """log f_jj for every channel plus rho_jk for every pair j > k."""
    names = [f"logf{j}{j}" for j in range(1, n_dim + 1)]
    names += [f"rho{j}{k}" for j in range(2, n_dim + 1) for k in range(1, j)]
    return names


def segment_owner(delta: np.ndarray, time_grid: np.ndarray) -> np.ndarray:
    """0-based index of the segment owning each grid time (segments own (d_{q-1}, d_q])."""
    return np.searchsorted(delta, time_grid, side="left") - 1


def _snapshot_segment_values(state, freq_grid, names):
    """Per-segment functional rows and spectral matrices for one snapshot."""
    part = state.partition
    run_map = component_runs(part)
    n_dim = part.n_dim
    mats = np.empty((part.m, freq_grid.size, n_dim, n_dim), dtype=complex)
    for q in range(1, part.m + 1):
        vectors = state.coeffs.segment_vectors(q, run_map)
        pair = reconstruct_cholesky(vectors, freq_grid, n_dim)
        mats[q - 1] = spectrum_from_cholesky(pair)
    values = {}
    for name in names:
        kind, j, k = parse_functional(name, n_dim)
        if kind == "f":
            values[name] = mats[..., j - 1, j - 1].real
        elif kind == "logf":
            values[name] = np.log(mats[..., j - 1, j - 1].real)
        else:
            num = np.abs(mats[..., j - 1, k - 1]) ** 2
            values[name] = num / (mats[..., j - 1, j - 1].real * mats[..., k - 1, k - 1].real)
    return mats, values


@dataclass
class PosteriorSummary:
    """Everything the output stage writes: grids, bands and change-point masses."""

    time_points: np.ndarray
    freq_points: np.ndarray
    spectrum: SpectrumGrid
    functional_means: dict
    bands: dict
    pm: np.ndarray
    ploc: dict = field(default_factory=dict)

    def check_invariants(self) -> None:
        if abs(float(np.sum(self.pm)) - 1.0) > 1e-12:
            raise InvalidArgumentError("segment-count masses must sum to 1")
        for (k, q), (pos, probs) in self.ploc.items():
            if abs(float(np.sum(probs)) - 1.0) > 1e-12:
                raise InvalidArgumentError(f"location histogram for m={k}, q={q} must sum to 1")
        for name, (lo, hi) in self.bands.items():
            if np.any(lo > hi + 1e-12):
                raise InvalidArgumentError(f"band for {name} has lower > upper")


def summarize(snapshots, time_grid, freq_grid, max_segments: int,
              level: float = 0.95, functionals=None) -> PosteriorSummary:
    """One pass over the snapshots building all posterior outputs."""
    if not snapshots:
        raise InvalidArgumentError("need at least one snapshot")
    if not (0.0 < level < 1.0):
        raise InvalidArgumentError("level must lie in (0, 1)")
    time_grid = np.asarray(time_grid, dtype=float)
    freq_grid = np.asarray(freq_grid, dtype=float)
    n_dim = snapshots[0].partition.n_dim
    n_samples = snapshots[0].partition.n_samples
    names = list(functionals) if functionals is not None else default_functionals(n_dim)
    mean_names = set(names) | {f"f{j}{j}" for j in range(1, n_dim + 1)}
    n_snap = len(snapshots)
    if n_snap < 100:
        warnings.warn(f"only {n_snap} snapshots: percentile bands will be noisy")

    m_max = max(s.partition.m for s in snapshots)
    n_t, n_f = time_grid.size, freq_grid.size
    mat_sum = np.zeros((n_t, n_f, n_dim, n_dim), dtype=complex)
    mean_sum = {name: np.zeros((n_t, n_f)) for name in mean_names}
    padded = {name: np.zeros((n_snap, m_max, n_f)) for name in names}
    rows = np.zeros((n_snap, n_t), dtype=np.int32)

    for s_idx, state in enumerate(snapshots):
        delta = np.asarray(state.partition.delta)
        mats, values = _snapshot_segment_values(state, freq_grid, mean_names)
        owner = segment_owner(delta, time_grid)
        rows[s_idx] = owner
        for q in range(state.partition.m):
            sel = owner == q
            if np.any(sel):
                mat_sum[sel] += mats[q]
        for name in mean_names:
            mean_sum[name] += values[name][owner]
        for name in names:
            padded[name][s_idx, : state.partition.m] = values[name]

    spectrum = SpectrumGrid(time_points=time_grid, freq_points=freq_grid,
                            values=mat_sum / n_snap)
    functional_means = {name: acc / n_snap for name, acc in mean_sum.items()}

    lo_q, hi_q = 100.0 * (1.0 - level) / 2.0, 100.0 * (1.0 + level) / 2.0
    bands = {name: (np.empty((n_t, n_f)), np.empty((n_t, n_f))) for name in names}
    snap_idx = np.arange(n_snap)
    for t in range(n_t):
        sel = rows[:, t]
        for name in names:
            vals = padded[name][snap_idx, sel, :]
            lo, hi = np.percentile(vals, [lo_q, hi_q], axis=0)
            bands[name][0][t] = lo
            bands[name][1][t] = hi

    pm, ploc = changepoint_posterior(snapshots, max_segments, n_samples)
    summary = PosteriorSummary(time_points=time_grid, freq_points=freq_grid,
                               spectrum=spectrum, functional_means=functional_means,
                               bands=bands, pm=pm, ploc=ploc)
    summary.check_invariants()
    return summary


def posterior_spectrum(snapshots, time_grid, freq_grid) -> SpectrumGrid:
    """Across-snapshot mean of the piecewise-constant spectral matrices."""
    if not snapshots:
        raise InvalidArgumentError("need at least one snapshot")
    time_grid = np.asarray(time_grid, dtype=float)
    freq_grid = np.asarray(freq_grid, dtype=float)
    n_dim = snapshots[0].partition.n_dim
    acc = np.zeros((time_grid.size, freq_grid.size, n_dim, n_dim), dtype=complex)
    for state in snapshots:
        delta = np.asarray(state.partition.delta)
        mats, _ = _snapshot_segment_values(state, freq_grid, ())
        acc += mats[segment_owner(delta, time_grid)]
    return SpectrumGrid(time_points=time_grid, freq_points=freq_grid,
                        values=acc / len(snapshots))


def functional_mean(snapshots, functional: str, time_grid, freq_grid) -> np.ndarray:
    """Functional-first average: evaluate per snapshot, then take the mean."""
    if not snapshots:
        raise InvalidArgumentError("need at least one snapshot")
    time_grid = np.asarray(time_grid, dtype=float)
    freq_grid = np.asarray(freq_grid, dtype=float)
    acc = np.zeros((time_grid.size, freq_grid.size))
    for state in snapshots:
        delta = np.asarray(state.partition.delta)
        _, values = _snapshot_segment_values(state, freq_grid, (functional,))
        acc += values[functional][segment_owner(delta, time_grid)]
    return acc / len(snapshots)


def credible_bands(snapshots, functional: str, level: float,
                   time_grid, freq_grid) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise empirical percentile bands of one functional."""
    if not snapshots:
        raise InvalidArgumentError("need at least one snapshot")
    if not (0.0 < level < 1.0):
        raise InvalidArgumentError("level must lie in (0, 1)")
    if len(snapshots) < 100:
        warnings.warn(f"only {len(snapshots)} snapshots: percentile bands will be noisy")
    time_grid = np.asarray(time_grid, dtype=float)
    freq_grid = np.asarray(freq_grid, dtype=float)
    per_snap = np.empty((len(snapshots), time_grid.size, freq_grid.size))
    for s_idx, state in enumerate(snapshots):
        delta = np.asarray(state.partition.delta)
        _, values = _snapshot_segment_values(state, freq_grid, (functional,))
        per_snap[s_idx] = values[functional][segment_owner(delta, time_grid)]
    lo_q, hi_q = 100.0 * (1.0 - level) / 2.0, 100.0 * (1.0 + level) / 2.0
    lo, hi = np.percentile(per_snap, [lo_q, hi_q], axis=0)
    return lo, hi


def changepoint_posterior(snapshots, max_segments: int, n_samples: int):
    """(Pr(m = k | Y) for k = 1..M, conditional breakpoint histograms).

    ``ploc[(k, q)]`` is a pair (positions, probabilities) of the empirical
    distribution of breakpoint ``delta_q`` among snapshots with ``m = k``.
    """
    if not snapshots:
        raise InvalidArgumentError("need at least one snapshot")
    pm = np.zeros(max_segments)
    by_m: dict[int, list] = {}
    for state in snapshots:
        m = state.partition.m
        if m > max_segments:
            raise InvalidArgumentError(f"snapshot has m = {m} > max_segments = {max_segments}")
        pm[m - 1] += 1
        by_m.setdefault(m, []).append(state.partition.delta)
    pm /= len(snapshots)
    ploc = {}
    for k, deltas in sorted(by_m.items()):
        if k == 1:
            continue
        arr = np.asarray(deltas)
        for q in range(1, k):
            positions, counts = np.unique(arr[:, q], return_counts=True)
            ploc[(k, q)] = (positions.astype(int), counts / counts.sum())
    return pm, ploc


def conditional_mode_breakpoints(ploc: dict, k: int) -> list[int]:
    """Modal location of each breakpoint conditional on ``m = k``."""
    out = []
    for q in range(1, k):
        positions, probs = ploc[(k, q)]
        out.append(int(positions[int(np.argmax(probs))]))
    return out


def ase(estimate: SpectrumGrid, truth: SpectrumGrid, functional: str) -> float:
    """Mean squared error of a functional over a congruent lattice."""
    if (estimate.time_points.shape != truth.time_points.shape
            or estimate.freq_points.shape != truth.freq_points.shape
            or not np.allclose(estimate.time_points, truth.time_points)
            or not np.allclose(estimate.freq_points, truth.freq_points)):
        raise InvalidArgumentError("estimate and truth grids are not congruent")
    return ase_grids(estimate.functional(functional), truth.functional(functional))


def ase_grids(estimate: np.ndarray, truth: np.ndarray) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise InvalidArgumentError("grids must have identical shapes")
    return float(np.mean((estimate - truth) ** 2))


def time_variation(grid: np.ndarray) -> np.ndarray:
    """Discrete total variation along the time axis, one value per frequency."""
    return np.sum(np.abs(np.diff(grid, axis=0)), axis=0)
