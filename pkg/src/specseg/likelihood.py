"""Local discrete Fourier transforms and the sum-of-Whittle log-likelihood.

Per segment ``q`` of length ``n_q`` the local DFT at Fourier frequency
``w = l / n_q`` is

    y_{ql} = n_q^{-1/2} sum_{t = d_{q-1}+1}^{d_q} X_t exp(-2 pi i w t),

for ``l = 1..L_q`` with ``L_q = floor((n_q - 1) / 2)``; the sum runs over
absolute sample indices ``t``.  Segments are mean-centered before the
transform so that dropping the ``l = 0`` term is exact; for even ``n_q`` the
Nyquist term is dropped as well.

The log-likelihood of segment ``q`` is

    -sum_l { sum_j log psi_j(w_l) + sum_j |z_j(w_l)|^2 / psi_j(w_l) },

with ``z = Theta^* y``, which equals ``log|f| + y^* f^{-1} y`` without ever
forming ``f``.  The same ``z`` fields yield the exact gradient with respect
to every basis coefficient.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import model
from .errors import InvalidArgumentError, InvalidStateError
from .model import (
    KIND_IMAG,
    KIND_LOGPSI,
    KIND_REAL,
    LOGPSI_CLAMP,
    MultivariateSeries,
    Partition,
    SegmentCoefficients,
    component_indices,
    segment_bases,
)


@dataclass(frozen=True)
class SegmentDft:
    """DFT values of one segment: frequencies strictly inside (0, 0.5)."""

    start: int          # delta_{q-1}
    end: int            # delta_q
    freqs: np.ndarray   # (L,)
    y: np.ndarray       # (L, N) complex
    energy: float       # sum of squared centered samples, for Parseval checks

    @property
    def n(self) -> int:
        return self.end - self.start

    @property
    def n_freq(self) -> int:
        return self.freqs.size


@dataclass(frozen=True)
class LocalDftSet:
    """Per-segment DFT vectors for a full partition."""

    segments: tuple[SegmentDft, ...]
    n_dim: int

    def check_parseval(self, rtol: float = 1e-8) -> None:
        """Assert ``sum_l 2 |y_l|^2 <= centered segment energy`` per segment."""
        for seg in self.segments:
            lhs = 2.0 * float(np.sum(np.abs(seg.y) ** 2))
            if lhs > seg.energy * (1.0 + rtol) + 1e-9:
                raise InvalidStateError(
                    f"Parseval violated on segment ({seg.start}, {seg.end}]: {lhs} > {seg.energy}"
                )


def _segment_dft(values: np.ndarray, start: int, end: int, demean: bool = True) -> SegmentDft:
    x = values[start:end]
    n = end - start
    if demean:
        x = x - x.mean(axis=0, keepdims=True)
    n_freq = (n - 1) // 2
    freqs = np.arange(1, n_freq + 1, dtype=float) / n
    spec = np.fft.fft(x, axis=0)[1 : n_freq + 1]
    # fft sums over within-segment offsets tau = 0..n-1; the definition uses
    # absolute sample indices t = start + 1 + tau, hence the phase twist.
    phase = np.exp(-2j * np.pi * freqs * (start + 1))
    y = spec * phase[:, None] / np.sqrt(n)
    y.setflags(write=False)
    freqs.setflags(write=False)
    return SegmentDft(start=start, end=end, freqs=freqs, y=y,
                      energy=float(np.sum(x * x)))


def local_dft(series: MultivariateSeries, partition: Partition, demean: bool = True) -> LocalDftSet:
    """Mean-centered local DFTs of every segment of ``partition``."""
    if partition.n_samples != series.n_samples:
        raise InvalidArgumentError("partition endpoint must equal the series length")
    segs = tuple(
        _segment_dft(series.values, *partition.segment_bounds(q), demean=demean)
        for q in range(1, partition.m + 1)
    )
    return LocalDftSet(segments=segs, n_dim=series.n_dim)


class DftCache:
    """Lazily computed segment DFTs keyed by ``(start, end)``.

    Partition moves touch at most three segments, so an LRU of modest size
    keeps every segment a chain revisits.  The cache is confined to the
    sampler thread; it is not safe for concurrent writers.

    With ``flat=True`` every segment reports zero Fourier frequencies, which
    makes the likelihood identically zero (used to sample from the prior).
    """

    def __init__(self, series: MultivariateSeries, max_entries: int = 1024, flat: bool = False):
        self.series = series
        self.max_entries = max_entries
        self.flat = flat
        self._cache: OrderedDict[tuple[int, int], SegmentDft] = OrderedDict()

    def get(self, start: int, end: int) -> SegmentDft:
        key = (start, end)
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        if self.flat:
            n_dim = self.series.n_dim
            seg = SegmentDft(start=start, end=end, freqs=np.zeros(0),
                             y=np.zeros((0, n_dim), dtype=complex), energy=0.0)
        else:
            seg = _segment_dft(self.series.values, start, end)
        self._cache[key] = seg
        if len(self._cache) > self.max_entries:
            self._cache.popitem(last=False)
        return seg

    def dft_set(self, partition: Partition) -> LocalDftSet:
        segs = tuple(self.get(*partition.segment_bounds(q)) for q in range(1, partition.m + 1))
        return LocalDftSet(segments=segs, n_dim=self.series.n_dim)


def bases_for_segment(seg: SegmentDft, s_trunc: int) -> tuple[np.ndarray, np.ndarray]:
    """Basis matrices matching a segment's actual frequency vector.

    Normally the shared per-length cache applies; zero-frequency segments
    (the flat-likelihood mode) get empty matrices.
    """
    if seg.n_freq == (seg.n - 1) // 2:
        _, even, odd = segment_bases(seg.n, s_trunc)
        return even, odd
    if seg.n_freq == 0:
        return np.zeros((0, s_trunc)), np.zeros((0, s_trunc))
    return (model.basis_matrix(seg.freqs, s_trunc, "even"),
            model.basis_matrix(seg.freqs, s_trunc, "odd"))


def segment_fields(y: np.ndarray, even: np.ndarray, odd: np.ndarray,
                   vectors, n_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``z = Theta^* y`` and ``log psi`` on one segment's frequencies.

    ``vectors`` lists the canonical N**2 coefficient vectors in force.
    """
    comps = component_indices(n_dim)
    z = np.array(y, dtype=complex, copy=True)
    logpsi = np.zeros((y.shape[0], n_dim))
    for comp, vec in zip(comps, vectors):
        if comp.kind == KIND_REAL:
            z[:, comp.k - 1] += (even @ vec) * y[:, comp.j - 1]
        elif comp.kind == KIND_IMAG:
            z[:, comp.k - 1] += (-1j) * (odd @ vec) * y[:, comp.j - 1]
        else:
            logpsi[:, comp.j - 1] = even @ vec
    return z, logpsi


def fields_loglik(z: np.ndarray, logpsi: np.ndarray) -> float:
    """Segment log-likelihood from precomputed fields (clamped log-psi)."""
    lp = np.clip(logpsi, -LOGPSI_CLAMP, LOGPSI_CLAMP)
    with np.errstate(over="ignore"):
        quad = np.abs(z) ** 2 * np.exp(-lp)
    return -float(np.sum(lp) + np.sum(quad))


def segment_loglik(y, even, odd, vectors, n_dim: int) -> float:
    z, logpsi = segment_fields(y, even, odd, vectors, n_dim)
    return fields_loglik(z, logpsi)


def _check_finite(value: float, q: int, context: str) -> None:
    if not np.isfinite(value):
        raise InvalidStateError(f"non-finite {context} on segment {q}")


def whittle_loglik(dfts: LocalDftSet, coeffs: SegmentCoefficients,
                   partition: Partition) -> float:
    """Sum of per-segment Whittle log-likelihoods via the Cholesky shortcut."""
    run_map = model.component_runs(partition)
    total = 0.0
    for q, seg in enumerate(dfts.segments, start=1):
        even, odd = bases_for_segment(seg, coeffs.s_trunc)
        vectors = coeffs.segment_vectors(q, run_map)
        ll = segment_loglik(seg.y, even, odd, vectors, coeffs.n_dim)
        _check_finite(ll, q, "log-likelihood")
        total += ll
    return total


def segment_grad_blocks(y, even, odd, vectors, n_dim: int) -> list[np.ndarray]:
    """Per-component gradient of one segment's log-likelihood.

    Returns the canonical list of length-``S`` gradient vectors.  Frequencies
    whose log-psi expansion is clamped contribute zero to the log-psi
    gradients (the clamped likelihood is locally flat there).
    """
    comps = component_indices(n_dim)
    z, logpsi = segment_fields(y, even, odd, vectors, n_dim)
    lp = np.clip(logpsi, -LOGPSI_CLAMP, LOGPSI_CLAMP)
    inv_psi = np.exp(-lp)
    in_range = np.abs(logpsi) <= LOGPSI_CLAMP
    grads = []
    for comp in comps:
        if comp.kind == KIND_LOGPSI:
            j = comp.j - 1
            w = np.abs(z[:, j]) ** 2 * inv_psi[:, j] - 1.0
            grads.append(even.T @ (w * in_range[:, j]))
        else:
            jj, kk = comp.j - 1, comp.k - 1
            cross = np.conj(z[:, kk]) * y[:, jj] * inv_psi[:, kk]
            if comp.kind == KIND_REAL:
                grads.append(-2.0 * (even.T @ cross.real))
            else:
                grads.append(-2.0 * (odd.T @ cross.imag))
    return grads


def whittle_grad(dfts: LocalDftSet, coeffs: SegmentCoefficients,
                 partition: Partition) -> np.ndarray:
    """Exact gradient of :func:`whittle_loglik` w.r.t. every coefficient entry.

    Layout: component-run-major, coefficient-index-minor — components in
    canonical order, runs of a component in segment order, and within a run
    the ``S`` coefficients in basis order.
    """
    run_map = model.component_runs(partition)
    n_comp = coeffs.n_dim * coeffs.n_dim
    acc = [
        [np.zeros(coeffs.s_trunc) for _ in range(run_map.n_runs(c))]
        for c in range(n_comp)
    ]
    for q, seg in enumerate(dfts.segments, start=1):
        even, odd = bases_for_segment(seg, coeffs.s_trunc)
        vectors = coeffs.segment_vectors(q, run_map)
        blocks = segment_grad_blocks(seg.y, even, odd, vectors, coeffs.n_dim)
        for c in range(n_comp):
            if not np.all(np.isfinite(blocks[c])):
                raise InvalidStateError(f"non-finite gradient on segment {q}")
            acc[c][run_map.run_of(c, q)] += blocks[c]
    return np.concatenate([g for per_comp in acc for g in per_comp])


def grad_layout(coeffs: SegmentCoefficients, partition: Partition) -> list[tuple[int, int]]:
    """(component, run) pairs in the order used by :func:`whittle_grad`."""
    run_map = model.component_runs(partition)
    n_comp = coeffs.n_dim * coeffs.n_dim
    return [(c, r) for c in range(n_comp) for r in range(run_map.n_runs(c))]
