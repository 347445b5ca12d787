"""Domain types and spectral reconstruction for the segmented Cholesky model.

A length-``T``, dimension-``N`` series is partitioned into ``m`` contiguous
segments.  Within a segment the inverse spectral matrix is parameterized
through the modified Cholesky factorization

    f^{-1}(omega) = Theta(omega) Psi(omega)^{-1} Theta(omega)^*,

with ``Theta`` complex unit-lower-triangular and ``Psi`` positive diagonal.
The free functions of frequency are the real and imaginary parts of the
sub-diagonal entries of ``Theta`` and the log of the diagonal of ``Psi``;
each is expanded in a truncated cosine (even) or sine (odd) basis.

Component bookkeeping conventions used throughout the package:

* frequencies are cycles per sample in ``[0, 0.5]``;
* the ``N**2`` scalar components are ordered canonically: real parts of
  ``theta_{jk}`` for ``j > k`` (pairs sorted by ``(j, k)``), then imaginary
  parts in the same pair order, then ``log psi_{jj}`` for ``j = 1..N``;
* every coefficient vector has length ``S`` (the basis truncation level):
  intercept plus ``S - 1`` cosines for even components, ``S`` sines for the
  odd components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidPartitionError, InvalidStateError

KIND_REAL = "re_theta"
KIND_IMAG = "im_theta"
KIND_LOGPSI = "log_psi"

#: log-psi expansions are clipped to this magnitude before exponentiation
LOGPSI_CLAMP = 50.0


@dataclass(frozen=True)
class ComponentIndex:
    """One scalar Cholesky component: ``kind`` plus matrix position (1-based).

    ``j > k`` for the theta kinds, ``j == k`` for the log-psi kind.
    """

    kind: str
    j: int
    k: int

    def __post_init__(self):
        if self.kind not in (KIND_REAL, KIND_IMAG, KIND_LOGPSI):
            raise InvalidArgumentError(f"unknown component kind {self.kind!r}")
        if self.kind == KIND_LOGPSI:
            if self.j != self.k:
                raise InvalidArgumentError("log_psi components must have j == k")
        elif self.j <= self.k:
            raise InvalidArgumentError("theta components require j > k")

    @property
    def is_even(self) -> bool:
        """Even components carry an intercept; the odd (imaginary) kind does not."""
        return self.kind != KIND_IMAG


@lru_cache(maxsize=32)
def component_indices(n_dim: int) -> tuple[ComponentIndex, ...]:
    """Canonically ordered tuple of the ``n_dim**2`` component indices."""
    if n_dim < 1:
        raise InvalidArgumentError("dimension must be >= 1")
    pairs = [(j, k) for j in range(2, n_dim + 1) for k in range(1, j)]
    out = [ComponentIndex(KIND_REAL, j, k) for j, k in pairs]
    out += [ComponentIndex(KIND_IMAG, j, k) for j, k in pairs]
    out += [ComponentIndex(KIND_LOGPSI, j, j) for j in range(1, n_dim + 1)]
    return tuple(out)


def basis_matrix(freqs, s_trunc: int, kind: str) -> np.ndarray:
    """Demmler-Reinsch style trigonometric design matrix at ``freqs``.

    Parameters
    ----------
    freqs : array_like
        Frequencies in cycles/sample; shape ``(L,)``, must be nonempty.
    s_trunc : int
        Truncation level ``S >= 2``.
    kind : {"even", "odd"}
        ``"even"`` returns columns ``[1, cos(2 pi s w)]`` for ``s = 1..S-1``;
        ``"odd"`` returns columns ``[sin(2 pi s w)]`` for ``s = 1..S``.

    Returns
    -------
    ndarray of shape ``(L, S)``.
    """
    freqs = np.asarray(freqs, dtype=float)
    if freqs.ndim != 1 or freqs.size == 0:
        raise InvalidArgumentError("freqs must be a nonempty 1-D array")
    if s_trunc < 2:
        raise InvalidArgumentError("basis truncation level must be >= 2")
    if kind == "even":
        s = np.arange(s_trunc)
        cols = np.cos(2.0 * np.pi * np.outer(freqs, s))
        cols[:, 0] = 1.0
        return cols
    if kind == "odd":
        s = np.arange(1, s_trunc + 1)
        return np.sin(2.0 * np.pi * np.outer(freqs, s))
    raise InvalidArgumentError(f"kind must be 'even' or 'odd', got {kind!r}")


@lru_cache(maxsize=4096)
def _cached_bases(n: int, s_trunc: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(freqs, even, odd) design matrices for a segment of length ``n``.

    Cached and shared; callers must treat the arrays as read-only.
    """
    n_freq = (n - 1) // 2
    freqs = np.arange(1, n_freq + 1, dtype=float) / n
    if n_freq == 0:
        even = np.zeros((0, s_trunc))
        odd = np.zeros((0, s_trunc))
    else:
        even = basis_matrix(freqs, s_trunc, "even")
        odd = basis_matrix(freqs, s_trunc, "odd")
    for arr in (freqs, even, odd):
        arr.setflags(write=False)
    return freqs, even, odd


def segment_bases(n: int, s_trunc: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fourier frequencies and basis matrices for a segment of ``n`` samples."""
    return _cached_bases(int(n), int(s_trunc))


@dataclass(frozen=True)
class MultivariateSeries:
    """Observed ``T x N`` real-valued series; ``sample_rate`` is for labeling only."""

    values: np.ndarray
    sample_rate: Optional[float] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise InvalidArgumentError("series values must be a T x N matrix")
        if values.shape[0] < 2:
            raise InvalidArgumentError("series must contain at least two samples")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("series values must all be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Partition:
    """Segment count ``m``, breakpoints ``delta`` and per-breakpoint change-sets.

    ``delta`` holds ``m + 1`` integers ``0 = delta_0 < ... < delta_m = T``;
    segment ``q`` (1-based) covers samples ``delta_{q-1} + 1 .. delta_q``.
    ``phi[q-1]`` is the nonempty set of component ids (0-based positions in
    :func:`component_indices`) that change at interior breakpoint ``delta_q``.
    """

    delta: tuple[int, ...]
    phi: tuple[frozenset[int], ...]
    n_dim: int

    def __post_init__(self):
        delta = tuple(int(d) for d in self.delta)
        phi = tuple(frozenset(int(c) for c in s) for s in self.phi)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "phi", phi)
        if len(delta) < 2 or delta[0] != 0:
            raise InvalidPartitionError("delta must start at 0 and contain at least (0, T)")
        if any(b <= a for a, b in zip(delta, delta[1:])):
            raise InvalidPartitionError("breakpoints must be strictly increasing")
        if len(phi) != self.m - 1:
            raise InvalidPartitionError("need one change-set per interior breakpoint")
        n_comp = self.n_dim * self.n_dim
        for q, s in enumerate(phi, start=1):
            if not s:
                raise InvalidPartitionError(f"change-set at breakpoint {q} is empty")
            if any(c < 0 or c >= n_comp for c in s):
                raise InvalidPartitionError(f"change-set at breakpoint {q} has ids outside 0..{n_comp - 1}")

    @property
    def m(self) -> int:
        return len(self.delta) - 1

    @property
    def n_samples(self) -> int:
        return self.delta[-1]

    def segment_bounds(self, q: int) -> tuple[int, int]:
        """Half-open sample bounds ``(delta_{q-1}, delta_q]`` of segment ``q`` (1-based)."""
        return self.delta[q - 1], self.delta[q]

    def segment_length(self, q: int) -> int:
        return self.delta[q] - self.delta[q - 1]

    def lengths(self) -> np.ndarray:
        return np.diff(np.asarray(self.delta))

    def midpoint(self, q: int) -> float:
        """Scaled time of segment ``q``: ``(delta_q + delta_{q-1}) / (2 T)``."""
        return (self.delta[q] + self.delta[q - 1]) / (2.0 * self.n_samples)

    def validate_lengths(self, n_min: int, max_segments: Optional[int] = None) -> None:
        if int(self.lengths().min()) < n_min:
            raise InvalidPartitionError(f"every segment must span at least {n_min} samples")
        if max_segments is not None and self.m > max_segments:
            raise InvalidPartitionError(f"partition has {self.m} segments, max is {max_segments}")


@dataclass(frozen=True)
class ComponentRunMap:
    """For each component, the maximal groups of consecutive segments it spans.

    ``runs[c]`` lists 1-based inclusive segment spans ``(first, last)``; the
    spans tile ``1..m`` in order, and a span boundary sits at breakpoint ``q``
    exactly when component ``c`` belongs to ``phi[q-1]``.
    """

    runs: tuple[tuple[tuple[int, int], ...], ...]
    n_segments: int

    def run_of(self, comp: int, q: int) -> int:
        """Index of the run of component ``comp`` that contains segment ``q``."""
        for r, (a, b) in enumerate(self.runs[comp]):
            if a <= q <= b:
                return r
        raise InvalidArgumentError(f"segment {q} outside 1..{self.n_segments}")

    def n_runs(self, comp: int) -> int:
        return len(self.runs[comp])

    def regenerate_phi(self) -> tuple[frozenset[int], ...]:
        """Recover the change-sets implied by the run boundaries."""
        out = []
        for q in range(1, self.n_segments):
            changed = frozenset(
                c for c, spans in enumerate(self.runs) if any(b == q for _, b in spans[:-1])
            )
            out.append(changed)
        return tuple(out)


def component_runs(partition: Partition) -> ComponentRunMap:
    """Build the run map of a partition: one scan over breakpoints per component."""
    n_comp = partition.n_dim * partition.n_dim
    m = partition.m
    runs = []
    for c in range(n_comp):
        spans = []
        start = 1
        for q in range(1, m):
            if c in partition.phi[q - 1]:
                spans.append((start, q))
                start = q + 1
        spans.append((start, m))
        runs.append(tuple(spans))
    return ComponentRunMap(runs=tuple(runs), n_segments=m)


@dataclass(frozen=True)
class SegmentCoefficients:
    """Per component-run coefficient vectors and smoothing parameters.

    ``vectors[c][r]`` is the length-``S`` coefficient vector of run ``r`` of
    component ``c`` (canonical component order); ``lambdas[c][r]`` is the
    corresponding smoothing parameter ``lambda**2 > 0``.
    """

    n_dim: int
    s_trunc: int
    vectors: tuple[tuple[np.ndarray, ...], ...]
    lambdas: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        comps = component_indices(self.n_dim)
        if len(self.vectors) != len(comps) or len(self.lambdas) != len(comps):
            raise InvalidArgumentError("need one run list per component")
        vecs = []
        for c, per_run in enumerate(self.vectors):
            if len(per_run) != len(self.lambdas[c]):
                raise InvalidArgumentError("vectors and lambdas must align run-for-run")
            fixed = []
            for v in per_run:
                v = np.asarray(v, dtype=float)
                if v.shape != (self.s_trunc,):
                    raise InvalidArgumentError(
                        f"coefficient vectors must have length {self.s_trunc}, got {v.shape}"
                    )
                if not np.all(np.isfinite(v)):
                    raise InvalidStateError("non-finite coefficient vector")
                v = v.copy()
                v.setflags(write=False)
                fixed.append(v)
            vecs.append(tuple(fixed))
        object.__setattr__(self, "vectors", tuple(vecs))
        lams = tuple(tuple(float(x) for x in per_run) for per_run in self.lambdas)
        object.__setattr__(self, "lambdas", lams)
        for per_run in lams:
            for lam2 in per_run:
                if not np.isfinite(lam2) or lam2 <= 0.0:
                    raise InvalidStateError("smoothing parameters must be positive and finite")

    def validate_kappa(self, kappa: float) -> None:
        for per_run in self.lambdas:
            for lam2 in per_run:
                if lam2 > kappa:
                    raise InvalidStateError(f"smoothing parameter {lam2} exceeds bound {kappa}")

    def segment_vectors(self, q: int, run_map: ComponentRunMap) -> list[np.ndarray]:
        """Coefficient vectors in force on segment ``q``, in canonical order."""
        return [self.vectors[c][run_map.run_of(c, q)] for c in range(len(self.vectors))]


@dataclass(frozen=True)
class CholeskyPair:
    """``Theta`` (unit lower-triangular, per frequency) and the diagonal of ``Psi``."""

    theta: np.ndarray  # (L, N, N) complex
    psi: np.ndarray    # (L, N) positive

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=complex)
        psi = np.asarray(self.psi, dtype=float)
        if theta.ndim != 3 or theta.shape[1] != theta.shape[2]:
            raise InvalidArgumentError("theta must have shape (L, N, N)")
        if psi.shape != theta.shape[:2]:
            raise InvalidArgumentError("psi must have shape (L, N)")
        n = theta.shape[1]
        diag = theta[:, np.arange(n), np.arange(n)]
        if not np.all(diag == 1.0):
            raise InvalidStateError("theta diagonal must be exactly 1")
        iu = np.triu_indices(n, k=1)
        if theta.shape[0] and np.any(theta[:, iu[0], iu[1]] != 0.0):
            raise InvalidStateError("theta strict upper triangle must be exactly 0")
        if not np.all(psi > 0.0):
            raise InvalidStateError("psi entries must be positive")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "psi", psi)

    @property
    def n_dim(self) -> int:
        return self.theta.shape[1]


def reconstruct_cholesky(
    vectors: Sequence[np.ndarray],
    freqs,
    n_dim: int,
    clamp_events: Optional[list] = None,
) -> CholeskyPair:
    """Evaluate the basis expansions of one segment's components at ``freqs``.

    ``vectors`` holds the N**2 canonical coefficient vectors in force on the
    segment.  The log-psi expansions are clipped to ``+-LOGPSI_CLAMP`` before
    exponentiation; if ``clamp_events`` is given, the number of clipped bins
    is appended to it.
    """
    freqs = np.asarray(freqs, dtype=float)
    comps = component_indices(n_dim)
    if len(vectors) != len(comps):
        raise InvalidArgumentError(f"expected {len(comps)} coefficient vectors")
    s_trunc = len(vectors[0])
    even = basis_matrix(freqs, s_trunc, "even")
    odd = basis_matrix(freqs, s_trunc, "odd")
    theta = np.zeros((freqs.size, n_dim, n_dim), dtype=complex)
    theta[:, np.arange(n_dim), np.arange(n_dim)] = 1.0
    logpsi = np.zeros((freqs.size, n_dim))
    for comp, vec in zip(comps, vectors):
        vec = np.asarray(vec, dtype=float)
        if not np.all(np.isfinite(vec)):
            raise InvalidStateError("non-finite coefficient vector")
        if comp.kind == KIND_REAL:
            theta[:, comp.j - 1, comp.k - 1] += even @ vec
        elif comp.kind == KIND_IMAG:
            theta[:, comp.j - 1, comp.k - 1] += 1j * (odd @ vec)
        else:
            logpsi[:, comp.j - 1] = even @ vec
    clipped = np.abs(logpsi) > LOGPSI_CLAMP
    if clamp_events is not None and clipped.any():
        clamp_events.append(int(clipped.sum()))
    psi = np.exp(np.clip(logpsi, -LOGPSI_CLAMP, LOGPSI_CLAMP))
    return CholeskyPair(theta=theta, psi=psi)


def _unit_lower_inverse(theta: np.ndarray) -> np.ndarray:
    """Invert a batch of unit lower-triangular matrices by forward substitution."""
    n = theta.shape[1]
    inv = np.zeros_like(theta)
    inv[:, np.arange(n), np.arange(n)] = 1.0
    for r in range(1, n):
        for c in range(r):
            inv[:, r, c] = -np.einsum("fk,fk->f", theta[:, r, c:r], inv[:, c:r, c])
    return inv


def spectrum_from_cholesky(pair: CholeskyPair) -> np.ndarray:
    """Spectral matrices ``f = Theta^{-*} Psi Theta^{-1}`` per frequency.

    Uses triangular substitution (never a general inverse); the result is
    symmetrized, Hermitian to machine precision.
    """
    inv = _unit_lower_inverse(pair.theta)
    f = np.einsum("fji,fj,fjk->fik", inv.conj(), pair.psi, inv)
    return 0.5 * (f + np.conj(np.swapaxes(f, -1, -2)))


def coherence(f: np.ndarray, j: int, k: int) -> np.ndarray:
    """Squared coherence ``|f_jk|**2 / (f_jj f_kk)`` (1-based indices, ``j != k``).

    Accepts a single matrix or a leading batch of matrices.
    """
    if j == k:
        raise InvalidArgumentError("coherence requires j != k")
    f = np.asarray(f)
    fjj = f[..., j - 1, j - 1].real
    fkk = f[..., k - 1, k - 1].real
    if np.any(fjj <= 0.0) or np.any(fkk <= 0.0):
        raise InvalidStateError("diagonal spectra must be positive")
    return np.abs(f[..., j - 1, k - 1]) ** 2 / (fjj * fkk)


@dataclass(frozen=True)
class SpectrumGrid:
    """Posterior (or true) spectral matrices on a time x frequency lattice.

    ``values[t, w]`` is an ``N x N`` Hermitian matrix; optional per-cell
    percentile bands for scalar functionals live in ``bands`` keyed by
    functional name, each entry a ``(lo, hi)`` pair of 2-D grids.
    """

    time_points: np.ndarray
    freq_points: np.ndarray
    values: np.ndarray
    bands: dict = field(default_factory=dict)

    def __post_init__(self):
        tp = np.asarray(self.time_points, dtype=float)
        fp = np.asarray(self.freq_points, dtype=float)
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim != 4 or vals.shape[:2] != (tp.size, fp.size) or vals.shape[2] != vals.shape[3]:
            raise InvalidArgumentError("values must have shape (n_time, n_freq, N, N)")
        object.__setattr__(self, "time_points", tp)
        object.__setattr__(self, "freq_points", fp)
        object.__setattr__(self, "values", vals)

    @property
    def n_dim(self) -> int:
        return self.values.shape[2]

    def functional(self, name: str) -> np.ndarray:
        """Evaluate a named scalar functional ("f11", "logf11", "rho21") cell-wise."""
        kind, j, k = parse_functional(name, self.n_dim)
        if kind == "f":
            return self.values[..., j - 1, j - 1].real
        if kind == "logf":
            return np.log(self.values[..., j - 1, j - 1].real)
        return coherence(self.values, j, k)


def parse_functional(name: str, n_dim: int) -> tuple[str, int, int]:
    """Parse functional names like ``f11``, ``logf22``, ``rho21``."""
    orig = name
    name = name.strip().lower()
    if name.startswith("logf"):
        kind, rest = "logf", name[4:]
    elif name.startswith("f"):
        kind, rest = "f", name[1:]
    elif name.startswith("rho"):
        kind, rest = "rho", name[3:]
    else:
        raise InvalidArgumentError(f"unknown functional {orig!r}")
    if len(rest) != 2 or not rest.isdigit():
        raise InvalidArgumentError(f"functional {orig!r} must end with two digit indices")
    j, k = int(rest[0]), int(rest[1])
    if not (1 <= j <= n_dim and 1 <= k <= n_dim):
        raise InvalidArgumentError(f"functional {orig!r} indices outside 1..{n_dim}")
    if kind in ("f", "logf") and j != k:
        raise InvalidArgumentError("spectrum functionals are diagonal: use fJJ")
    if kind == "rho" and j == k:
        raise InvalidArgumentError("coherence functionals require j != k")
    return kind, j, k
