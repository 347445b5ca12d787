"""Gaussian block proposals and per-block potentials for the sampler.

A "block" is the coefficient vector of one component-run.  Given fixed
values for everything else, the log-likelihood of a real- or imaginary-part
block is exactly quadratic, so its conditional posterior is Gaussian and is
found by one linear solve.  Log-psi blocks are log-concave; their Laplace
approximation is built with a few damped Newton steps from a warm start.
The resulting Gaussians serve both as proposal distributions in the
trans-dimensional and relocation moves (their densities enter the
acceptance ratios) and as exact conditionals for initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import NumericalError
from .model import KIND_LOGPSI, KIND_REAL, LOGPSI_CLAMP, ComponentIndex
from .priors import prior_variances

LOG_2PI = math.log(2.0 * math.pi)


class SegWorkspace:
    """Mutable per-segment evaluation record used inside one sampler step.

    Holds the segment DFT ``y``, the basis matrices, and the current fields
    ``z = Theta^* y`` and ``log psi`` implied by some vector assignment.
    """

    __slots__ = ("q", "start", "end", "n", "freqs", "even", "odd", "y", "z", "logpsi")

    def __init__(self, q, start, end, freqs, even, odd, y, z, logpsi):
        self.q = q
        self.start = start
        self.end = end
        self.n = end - start
        self.freqs = freqs
        self.even = even
        self.odd = odd
        self.y = y
        self.z = z
        self.logpsi = logpsi

    def loglik(self) -> float:
        lp = np.clip(self.logpsi, -LOGPSI_CLAMP, LOGPSI_CLAMP)
        with np.errstate(over="ignore"):
            quad = np.abs(self.z) ** 2 * np.exp(-lp)
        return -float(np.sum(lp) + np.sum(quad))

    def apply_theta_change(self, comp: ComponentIndex, old_vec, new_vec) -> None:
        j, k = comp.j - 1, comp.k - 1
        if comp.kind == KIND_REAL:
            self.z[:, k] += (self.even @ (new_vec - old_vec)) * self.y[:, j]
        else:
            self.z[:, k] += (-1j) * (self.odd @ (new_vec - old_vec)) * self.y[:, j]

    def apply_psi_change(self, comp: ComponentIndex, new_vec) -> None:
        self.logpsi[:, comp.j - 1] = self.even @ new_vec


@dataclass
class QuadBlock:
    """Likelihood of a theta block: ``U_lik(x) = const + g.x + x.A.x / 2``."""

    a_mat: np.ndarray
    g_vec: np.ndarray


def quad_block_terms(ws: SegWorkspace, comp: ComponentIndex, cur_vec: np.ndarray) -> QuadBlock:
    """Quadratic likelihood summary of one segment for a theta block.

    ``cur_vec`` must be the vector of this component that ``ws.z`` was built
    with; its contribution is subtracted out to expose the affine residual.
    """
    j, k = comp.j - 1, comp.k - 1
    e = np.exp(-np.clip(ws.logpsi[:, k], -LOGPSI_CLAMP, LOGPSI_CLAMP))
    yj = ws.y[:, j]
    if comp.kind == KIND_REAL:
        basis = ws.even
        resid = ws.z[:, k] - (basis @ cur_vec) * yj
        lin = 2.0 * (np.conj(resid) * yj).real * e
    else:
        basis = ws.odd
        resid = ws.z[:, k] + 1j * (basis @ cur_vec) * yj
        lin = 2.0 * (np.conj(resid) * yj).imag * e
    weight = (np.abs(yj) ** 2) * e
    a_mat = 2.0 * basis.T @ (basis * weight[:, None])
    return QuadBlock(a_mat=a_mat, g_vec=basis.T @ lin)


def psi_block_terms(ws: SegWorkspace, comp: ComponentIndex) -> tuple[np.ndarray, np.ndarray]:
    """(basis, |z_j|^2) pair of one segment for a log-psi block."""
    j = comp.j - 1
    return ws.even, np.abs(ws.z[:, j]) ** 2


class PsiPotential:
    """Negative conditional log-posterior of a log-psi block (plus constants)."""

    def __init__(self, basis: np.ndarray, weights: np.ndarray, var_inv: np.ndarray):
        self.basis = basis
        self.weights = weights
        self.var_inv = var_inv

    def value(self, d: np.ndarray) -> float:
        lp = self.basis @ d
        lpe = np.clip(lp, -LOGPSI_CLAMP, LOGPSI_CLAMP)
        with np.errstate(over="ignore"):
            quad = self.weights * np.exp(-lpe)
        return float(np.sum(lpe + quad) + 0.5 * np.sum(self.var_inv * d * d))

    def grad(self, d: np.ndarray) -> np.ndarray:
        lp = self.basis @ d
        in_range = np.abs(lp) <= LOGPSI_CLAMP
        lpe = np.clip(lp, -LOGPSI_CLAMP, LOGPSI_CLAMP)
        with np.errstate(over="ignore"):
            we = self.weights * np.exp(-lpe)
        return self.basis.T @ ((1.0 - we) * in_range) + self.var_inv * d

    def hessian(self, d: np.ndarray) -> np.ndarray:
        lp = self.basis @ d
        in_range = np.abs(lp) <= LOGPSI_CLAMP
        lpe = np.clip(lp, -LOGPSI_CLAMP, LOGPSI_CLAMP)
        with np.errstate(over="ignore"):
            we = self.weights * np.exp(-lpe) * in_range
        return self.basis.T @ (self.basis * we[:, None]) + np.diag(self.var_inv)


class QuadPotential:
    """Negative conditional log-posterior of a theta block: exactly quadratic."""

    def __init__(self, a_total: np.ndarray, g_total: np.ndarray):
        self.a_total = a_total
        self.g_total = g_total

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.a_total @ x + self.g_total @ x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.a_total @ x + self.g_total


@dataclass(frozen=True)
class GaussianProposal:
    """Multivariate normal with precision ``H = chol @ chol.T`` (lower chol)."""

    mean: np.ndarray
    chol_precision: np.ndarray

    def sample(self, rng) -> np.ndarray:
        xi = rng.standard_normal(self.mean.size)
        return self.mean + solve_triangular(self.chol_precision.T, xi, lower=False)

    def logpdf(self, x: np.ndarray) -> float:
        dx = x - self.mean
        u = self.chol_precision.T @ dx
        logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol_precision))))
        return float(-0.5 * self.mean.size * LOG_2PI + 0.5 * logdet - 0.5 * u @ u)


def _chol_lower(h: np.ndarray) -> np.ndarray:
    try:
        return cholesky(h, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - H is PD by construction
        raise NumericalError("block precision matrix is not positive definite") from exc


def block_potential(ws_list, comp: ComponentIndex, cur_vecs, lam2: float,
                    s_trunc: int, sigma_alpha_sq: float):
    """Potential object of one component-run given base workspaces.

    ``ws_list`` holds the run's segments; ``cur_vecs`` the vector of this
    component each workspace was built with (one per segment).
    """
    variances = prior_variances(comp, s_trunc, lam2, sigma_alpha_sq)
    var_inv = 1.0 / variances
    if comp.kind == KIND_LOGPSI:
        bases, weights = [], []
        for ws in ws_list:
            b, w = psi_block_terms(ws, comp)
            bases.append(b)
            weights.append(w)
        basis = np.vstack(bases) if bases else np.zeros((0, s_trunc))
        weight = np.concatenate(weights) if weights else np.zeros(0)
        return PsiPotential(basis, weight, var_inv)
    a_total = np.diag(var_inv).astype(float)
    g_total = np.zeros(s_trunc)
    for ws, cur in zip(ws_list, cur_vecs):
        qb = quad_block_terms(ws, comp, cur)
        a_total += qb.a_mat
        g_total += qb.g_vec
    return QuadPotential(a_total, g_total)


def laplace_proposal(potential, warm_start: np.ndarray, newton_steps: int = 5) -> GaussianProposal:
    """Gaussian approximation of the conditional: exact for theta blocks."""
    if isinstance(potential, QuadPotential):
        chol = _chol_lower(potential.a_total)
        mean = -cho_solve((chol, True), potential.g_total)
        return GaussianProposal(mean=mean, chol_precision=chol)

    if potential.basis.shape[0] == 0:
        # no data terms: the conditional is the (diagonal Gaussian) prior
        return GaussianProposal(mean=np.zeros_like(potential.var_inv),
                                chol_precision=np.diag(np.sqrt(potential.var_inv)))

    d = np.asarray(warm_start, dtype=float).copy()
    u_cur = potential.value(d)
    if not np.isfinite(u_cur):
        d = np.zeros_like(d)
        u_cur = potential.value(d)
    for _ in range(newton_steps):
        hess = potential.hessian(d)
        grad = potential.grad(d)
        chol = _chol_lower(hess)
        step = -cho_solve((chol, True), grad)
        new = d + step
        u_new = potential.value(new)
        tries = 0
        while (not np.isfinite(u_new) or u_new > u_cur + 1e-10) and tries < 8:
            step *= 0.5
            new = d + step
            u_new = potential.value(new)
            tries += 1
        if not np.isfinite(u_new) or u_new > u_cur:
            break
        converged = np.max(np.abs(new - d)) < 1e-9
        d, u_cur = new, u_new
        if converged:
            break
    return GaussianProposal(mean=d, chol_precision=_chol_lower(potential.hessian(d)))


def split_lambda(lam2: float, u: float) -> tuple[float, float]:
    """Reversible smoothing-parameter split: geometric-mean preserving."""
    return lam2 * u / (1.0 - u), lam2 * (1.0 - u) / u


def merge_lambda(lam2_left: float, lam2_right: float) -> float:
    return math.sqrt(lam2_left * lam2_right)


def split_fraction(lam2_left: float, lam2_right: float) -> float:
    """The ``u`` that :func:`split_lambda` would need to reproduce the pair."""
    left, right = math.sqrt(lam2_left), math.sqrt(lam2_right)
    return left / (left + right)


def log_split_jacobian(lam2: float, u: float) -> float:
    """log |d(lam_left^2, lam_right^2) / d(lam^2, u)|."""
    return math.log(2.0 * lam2 / (u * (1.0 - u)))
