import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

from specseg import priors
from specseg.errors import InvalidArgumentError, InvalidPartitionError, InvalidStateError
from specseg.model import (
    KIND_REAL,
    ComponentIndex,
    Partition,
    SegmentCoefficients,
    component_indices,
)
from specseg.priors import (
    PriorConfig,
    log_prior_coeffs,
    log_prior_partition,
    log_prior_phi,
    prior_variances,
    sample_lambda_conditional,
)


def enumerate_partitions(n_samples, n_min, m):
    """All admissible breakpoint vectors for a given m (exhaustive oracle)."""
    if m == 1:
        return [(0, n_samples)]
    interior = range(n_min, n_samples - n_min + 1)
    out = []
    for cuts in itertools.combinations(interior, m - 1):
        delta = (0,) + cuts + (n_samples,)
        if all(b - a >= n_min for a, b in zip(delta, delta[1:])):
            out.append(delta)
    return out


class TestPartitionPrior:
    def test_single_segment(self):
        cfg = PriorConfig(max_segments=3, n_min=60)
        assert log_prior_partition(1, (0, 200), cfg) == pytest.approx(math.log(1 / 3))

    def test_two_segments_direct_arithmetic(self):
        cfg = PriorConfig(max_segments=4, n_min=60)
        val = log_prior_partition(2, (0, 250, 600), cfg)
        # alpha_1 = 600 - 0 - 2*60 + 1 = 481
        assert val == pytest.approx(math.log(1 / 4) + math.log(1 / 481))

    @pytest.mark.parametrize("m", [2, 3])
    def test_exhaustive_normalization(self, m):
        cfg = PriorConfig(max_segments=3, n_min=60)
        mass = sum(
            math.exp(log_prior_partition(m, d, cfg))
            for d in enumerate_partitions(200, 60, m)
        )
        assert mass == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_total_mass_over_all_m(self):
        cfg = PriorConfig(max_segments=3, n_min=60)
        mass = sum(
            math.exp(log_prior_partition(m, d, cfg))
            for m in (1, 2, 3)
            for d in enumerate_partitions(200, 60, m)
        )
        assert mass == pytest.approx(1.0, abs=1e-12)

    def test_rejects_inadmissible(self):
        cfg = PriorConfig(max_segments=4, n_min=60)
        with pytest.raises(InvalidPartitionError):
            log_prior_partition(2, (0, 30, 600), cfg)
        with pytest.raises(InvalidPartitionError):
            log_prior_partition(4, (0, 60, 120, 180, 200), cfg)


class TestPhiPrior:
    def test_one_breakpoint_bivariate(self):
        assert log_prior_phi((frozenset({0}),), 2) == pytest.approx(-math.log(15))

    def test_one_breakpoint_trivariate(self):
        assert log_prior_phi((frozenset({3}),), 3) == pytest.approx(-math.log(511))

    def test_no_breakpoints(self):
        assert log_prior_phi((), 2) == 0.0

    def test_uniform_in_content(self):
        a = log_prior_phi((frozenset({0}), frozenset({1, 2})), 2)
        b = log_prior_phi((frozenset({0, 1, 2, 3}), frozenset({3})), 2)
        assert a == b

    def test_rejects_empty(self):
        with pytest.raises(InvalidArgumentError):
            log_prior_phi((frozenset(),), 2)


class TestCoefficientPrior:
    def make_coeffs(self, vectors, lambdas, n_dim=1, s_trunc=4):
        return SegmentCoefficients(n_dim=n_dim, s_trunc=s_trunc,
                                   vectors=vectors, lambdas=lambdas)

    def test_zero_coefficients_constants_only(self):
        cfg = PriorConfig(max_segments=2, n_min=60, kappa=10.0, sigma_alpha_sq=100.0)
        coeffs = self.make_coeffs(((np.zeros(4),),), ((2.0,),))
        comp = component_indices(1)[0]
        v = prior_variances(comp, 4, 2.0, 100.0)
        expected = -0.5 * np.sum(np.log(2 * np.pi * v))
        assert log_prior_coeffs(coeffs, cfg) == pytest.approx(expected)

    def test_single_cosine_term_density(self):
        # S = 2 vector (0, c1): one intercept at zero plus one penalized term
        cfg = PriorConfig(max_segments=2, n_min=60, kappa=50.0, sigma_alpha_sq=1e4)
        lam2, c1 = 3.0, 0.7
        comp = ComponentIndex(KIND_REAL, 2, 1)
        v = prior_variances(comp, 2, lam2, cfg.sigma_alpha_sq)
        expected = (-0.5 * math.log(2 * math.pi * cfg.sigma_alpha_sq)
                    - 0.5 * math.log(2 * math.pi * lam2 / (2 * math.pi) ** 2)
                    - c1 ** 2 * (2 * math.pi) ** 2 / (2 * lam2))
        got = priors.gaussian_logpdf_diag(np.array([0.0, c1]), v)
        assert got == pytest.approx(expected)

    def test_lambda_outside_range_rejected(self):
        cfg = PriorConfig(max_segments=2, n_min=60, kappa=1.0)
        coeffs = self.make_coeffs(((np.zeros(4),),), ((5.0,),))
        with pytest.raises(InvalidStateError):
            log_prior_coeffs(coeffs, cfg)

    def test_roughness_scales_with_lambda(self):
        # E integral (d/dw ReTheta)^2 dw = sum_s E[c_s^2] (2 pi s)^2 / 2 = (S-1) lam2 / 2
        rng = np.random.default_rng(5)
        s_trunc, lam2 = 6, 2.5
        comp = ComponentIndex(KIND_REAL, 2, 1)
        v = prior_variances(comp, s_trunc, lam2, 1e4)
        draws = rng.standard_normal((200_000, s_trunc)) * np.sqrt(v)
        s = np.arange(1, s_trunc)
        roughness = 0.5 * np.sum(draws[:, 1:] ** 2 * (2 * np.pi * s) ** 2, axis=1)
        assert np.mean(roughness) == pytest.approx((s_trunc - 1) * lam2 / 2, rel=0.02)


class TestLambdaConditional:
    def test_untruncated_mean_matches_moment(self):
        rng = np.random.default_rng(11)
        vec = np.array([0.4, -0.2, 0.1, 0.05, 0.3, -0.15, 0.2, 0.1, 0.12])
        shape, rate = priors.lambda_conditional_params(vec, "even")
        draws = np.array([
            sample_lambda_conditional(vec, "even", 1e18, rng) for _ in range(100_000)
        ])
        assert np.mean(draws) == pytest.approx(rate / (shape - 1), rel=0.01)

    def test_draws_respect_bound(self):
        rng = np.random.default_rng(12)
        vec = np.array([5.0, 4.0, 3.0, 2.0])
        kappa = 0.05
        draws = [sample_lambda_conditional(vec, "odd", kappa, rng) for _ in range(2000)]
        assert max(draws) <= kappa
        assert min(draws) > 0.0

    def test_quadrupled_rate_scales_distribution(self):
        vec = np.array([0.3, -0.2, 0.15, 0.1])
        s1, r1 = priors.lambda_conditional_params(vec, "odd")
        s2, r2 = priors.lambda_conditional_params(2.0 * vec, "odd")
        assert s2 == s1 and r2 == pytest.approx(4.0 * r1)
        d1 = [sample_lambda_conditional(vec, "odd", 1e12, np.random.default_rng(99))
              for _ in range(200)]
        d2 = [sample_lambda_conditional(2.0 * vec, "odd", 4e12, np.random.default_rng(99))
              for _ in range(200)]
        assert np.allclose(np.asarray(d2), 4.0 * np.asarray(d1), rtol=1e-9)

    def test_zero_coefficients_fall_back_to_uniform(self):
        rng = np.random.default_rng(13)
        notes = []
        draws = [
            sample_lambda_conditional(np.zeros(5), "odd", 10.0, rng, notes=notes)
            for _ in range(5000)
        ]
        assert notes
        assert 0.0 < min(draws) and max(draws) <= 10.0
        assert np.mean(draws) == pytest.approx(5.0, rel=0.05)

    def test_kolmogorov_smirnov_against_quadrature_cdf(self):
        rng = np.random.default_rng(14)
        vec = np.array([0.5, -0.3, 0.25, 0.2, -0.1, 0.15, 0.1, -0.05, 0.08])
        kappa = 0.5
        shape, rate = priors.lambda_conditional_params(vec, "even")
        draws = np.array([
            sample_lambda_conditional(vec, "even", kappa, rng) for _ in range(100_000)
        ])

        # independent numerical CDF: quadrature of the unnormalized density
        grid = np.exp(np.linspace(np.log(draws.min()) - 0.5, np.log(kappa), 20_001))
        dens = grid ** (-(shape + 1.0)) * np.exp(-rate / grid + rate / kappa)
        cum = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
        cum /= cum[-1]

        def cdf(x):
            return np.interp(x, grid, cum, left=0.0, right=1.0)

        result = stats.kstest(draws, cdf)
        assert result.pvalue > 0.01


class TestPriorConfig:
    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            PriorConfig(max_segments=0)
        with pytest.raises(InvalidArgumentError):
            PriorConfig(max_segments=2, kappa=-1.0)
        cfg = PriorConfig(max_segments=12, n_min=60)
        with pytest.raises(InvalidArgumentError):
            cfg.validate_for(600, 10)  # floor(600/60) = 10 < 12
        with pytest.raises(InvalidArgumentError):
            PriorConfig(max_segments=2, n_min=10).validate_for(600, 10)
        PriorConfig(max_segments=10, n_min=60).validate_for(600, 10)
