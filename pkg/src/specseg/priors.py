"""Prior densities for the partition, change-sets, coefficients and smoothers.

The partition prior places ``1/M`` on each segment count and, conditional on
``m``, equal weight on every admissible location of each successive
breakpoint.  Change-sets are uniform over the ``2**(N**2) - 1`` nonempty
component subsets.  Coefficient vectors get mean-zero Gaussian priors whose
diagonal covariances shrink the ``s``-th trigonometric coefficient with
variance ``lambda**2 / (2 pi s)**2`` (intercepts get variance
``sigma_alpha**2``), so each smoothing parameter ``lambda**2 ~ U(0, kappa)``
controls the integrated squared first derivative of one component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import InvalidArgumentError, InvalidPartitionError, InvalidStateError
from .model import ComponentIndex, SegmentCoefficients, component_indices, component_runs

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters: max segments, min segment length, smoother bound, intercept variance."""

    max_segments: int
    n_min: int = 60
    kappa: float = 1e5
    sigma_alpha_sq: float = 1e4

    def __post_init__(self):
        if self.max_segments < 1:
            raise InvalidArgumentError("max_segments must be >= 1")
        if self.n_min < 2:
            raise InvalidArgumentError("n_min must be >= 2")
        if not (self.kappa > 0.0 and np.isfinite(self.kappa)):
            raise InvalidArgumentError("kappa must be positive and finite")
        if not (self.sigma_alpha_sq > 0.0 and np.isfinite(self.sigma_alpha_sq)):
            raise InvalidArgumentError("sigma_alpha_sq must be positive and finite")

    def validate_for(self, n_samples: int, s_trunc: int) -> None:
        """Checks that need the series length and basis truncation."""
        if self.max_segments > n_samples // self.n_min:
            raise InvalidArgumentError(
                f"max_segments {self.max_segments} exceeds floor(T/n_min) = {n_samples // self.n_min}"
            )
        if s_trunc < 4:
            raise InvalidArgumentError("basis truncation level must be >= 4")
        if self.n_min < 2 * s_trunc:
            raise InvalidArgumentError("n_min must be at least twice the basis truncation level")


def log_prior_partition(m: int, delta, config: PriorConfig) -> float:
    """``log Pr(m) + sum_q log(1 / alpha_q)`` for an admissible partition."""
    delta = tuple(int(d) for d in delta)
    if len(delta) != m + 1:
        raise InvalidPartitionError("delta must hold m + 1 breakpoints")
    if m > config.max_segments:
        raise InvalidPartitionError(f"m = {m} exceeds max_segments = {config.max_segments}")
    n_samples = delta[-1]
    lengths = np.diff(np.asarray(delta))
    if np.any(lengths < config.n_min):
        raise InvalidPartitionError(f"segments shorter than n_min = {config.n_min}")
    out = -math.log(config.max_segments)
    for q in range(1, m):
        alpha = n_samples - delta[q - 1] - (m - q + 1) * config.n_min + 1
        if alpha <= 0:
            raise InvalidPartitionError(f"no admissible location for breakpoint {q}")
        out -= math.log(alpha)
    return out


def log_prior_phi(phi, n_dim: int) -> float:
    """Uniform over nonempty change-sets: ``-(m - 1) log(2**(N**2) - 1)``."""
    for q, s in enumerate(phi, start=1):
        if not s:
            raise InvalidArgumentError(f"change-set at breakpoint {q} is empty")
    n_sets = 2 ** (n_dim * n_dim) - 1
    return -len(tuple(phi)) * math.log(n_sets)


def prior_variances(comp: ComponentIndex, s_trunc: int, lam2: float,
                    sigma_alpha_sq: float) -> np.ndarray:
    """Diagonal prior variances for one component's coefficient vector."""
    if comp.is_even:
        s = np.arange(1, s_trunc, dtype=float)
        return np.concatenate(([sigma_alpha_sq], lam2 / (2.0 * np.pi * s) ** 2))
    s = np.arange(1, s_trunc + 1, dtype=float)
    return lam2 / (2.0 * np.pi * s) ** 2


def gaussian_logpdf_diag(x: np.ndarray, variances: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(-0.5 * np.sum(LOG_2PI + np.log(variances) + x * x / variances))


def log_prior_coeffs(coeffs: SegmentCoefficients, config: PriorConfig,
                     partition=None) -> float:
    """Sum of Gaussian log-densities over every component-run vector.

    ``partition`` is only used to sanity-check the run structure when given.
    """
    comps = component_indices(coeffs.n_dim)
    if partition is not None:
        run_map = component_runs(partition)
        for c in range(len(comps)):
            if len(coeffs.vectors[c]) != run_map.n_runs(c):
                raise InvalidArgumentError("coefficient runs do not match the partition")
    total = 0.0
    for c, comp in enumerate(comps):
        for vec, lam2 in zip(coeffs.vectors[c], coeffs.lambdas[c]):
            if not (0.0 < lam2 <= config.kappa):
                raise InvalidStateError(f"lambda^2 = {lam2} outside (0, kappa]")
            total += gaussian_logpdf_diag(
                vec, prior_variances(comp, coeffs.s_trunc, lam2, config.sigma_alpha_sq)
            )
    return total


def log_prior_lambda(lam2: float, kappa: float) -> float:
    """Uniform(0, kappa] log-density of one smoothing parameter."""
    if 0.0 < lam2 <= kappa:
        return -math.log(kappa)
    return -math.inf


def lambda_conditional_params(coeff_vector: np.ndarray, kind: str) -> tuple[float, float]:
    """(shape, rate) of the inverse-gamma conditional of ``lambda**2``.

    ``coeff_vector`` holds only the lambda-scaled coefficients (the intercept
    of even components removed), so entry ``s`` carries penalty ``(2 pi (s+1))**2``.
    """
    a = np.asarray(coeff_vector, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise InvalidArgumentError("coefficient vector must be a nonempty 1-D array")
    if kind not in ("even", "odd"):
        raise InvalidArgumentError("kind must be 'even' or 'odd'")
    s = np.arange(1, a.size + 1, dtype=float)
    rate = 0.5 * float(np.sum((2.0 * np.pi * s * a) ** 2))
    shape = a.size / 2.0 - 1.0
    if shape <= 0.0:
        raise InvalidArgumentError("need at least three lambda-scaled coefficients")
    return shape, rate


def sample_lambda_conditional(coeff_vector, kind: str, kappa: float, rng,
                              notes: Optional[list] = None) -> float:
    """Draw ``lambda**2`` from its conditional, truncated to ``(0, kappa]``.

    The conditional of ``g = 1/lambda**2`` is Gamma(shape, rate) restricted
    to ``g >= 1/kappa``; it is sampled by inverting the survival function,
    which stays accurate even when the allowed tail mass is tiny.  When every
    coefficient is zero the conditional degenerates to the flat prior and a
    Uniform(0, kappa] value is returned (noted in ``notes``).
    """
    shape, rate = lambda_conditional_params(coeff_vector, kind)
    if rate == 0.0:
        if notes is not None:
            notes.append("lambda conditional degenerate (all coefficients zero): uniform draw")
        return float(kappa * (1.0 - rng.uniform(0.0, 1.0)))
    tail = float(special.gammaincc(shape, rate / kappa))
    if tail <= 0.0:
        # allowed mass underflows: the conditional is pinned at the bound
        if notes is not None:
            notes.append("lambda conditional truncation mass underflow: returning kappa")
        return float(kappa)
    w = rng.uniform(0.0, tail)
    g = float(special.gammainccinv(shape, w)) / rate
    lam2 = 1.0 / g
    return float(min(lam2, kappa))


def truncated_invgamma_cdf(x, shape: float, rate: float, kappa: float):
    """CDF of the truncated conditional, for distributional tests."""
    x = np.asarray(x, dtype=float)
    num = special.gammaincc(shape, rate / np.clip(x, 1e-300, None))
    den = special.gammaincc(shape, rate / kappa)
    return np.clip(num / den, 0.0, 1.0)
