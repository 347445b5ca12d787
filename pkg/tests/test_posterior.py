import numpy as np
import pytest

from specseg import posterior as post
from specseg.errors import InvalidArgumentError
from specseg.model import Partition, SegmentCoefficients, SpectrumGrid
from specseg.sampler import ChainState


def make_state(delta, phi, n_dim, s_trunc, vectors, lambdas=None, iteration=0):
    part = Partition(delta=delta, phi=phi, n_dim=n_dim)
    n_comp = n_dim * n_dim
    if lambdas is None:
        lambdas = tuple(tuple(1.0 for _ in per) for per in vectors)
    coeffs = SegmentCoefficients(n_dim=n_dim, s_trunc=s_trunc,
                                 vectors=vectors, lambdas=lambdas)
    ll = np.zeros(part.m)
    ll.setflags(write=False)
    return ChainState(partition=part, coeffs=coeffs, seg_loglik=ll, iteration=iteration)


def single_run_state(n_samples=200, n_dim=2, s_trunc=4, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    vectors = tuple((scale * rng.standard_normal(s_trunc),) for _ in range(n_dim * n_dim))
    return make_state((0, n_samples), (), n_dim, s_trunc, vectors)


def two_segment_state(n_samples=200, cut=100, n_dim=1, s_trunc=4, values=(0.0, 1.0)):
    vectors = ((np.array([values[0]] + [0.0] * (s_trunc - 1)),
                np.array([values[1]] + [0.0] * (s_trunc - 1))),)
    return make_state((0, cut, n_samples), (frozenset({0}),), n_dim, s_trunc, vectors)


class TestPosteriorSpectrum:
    def test_single_snapshot_constant_in_time(self):
        state = single_run_state()
        grid = post.posterior_spectrum([state], np.arange(1, 201), np.linspace(0, 0.5, 11))
        assert np.allclose(grid.values[0], grid.values[-1])

    def test_identical_snapshots_average_to_same(self):
        state = single_run_state()
        one = post.posterior_spectrum([state], np.arange(1, 201), np.linspace(0, 0.5, 7))
        two = post.posterior_spectrum([state, state], np.arange(1, 201),
                                      np.linspace(0, 0.5, 7))
        assert np.allclose(one.values, two.values)

    def test_piecewise_expansion_respects_ownership(self):
        state = two_segment_state(values=(0.0, np.log(4.0)))
        grid = post.posterior_spectrum([state], np.arange(1, 201), np.array([0.1]))
        f = grid.values[:, 0, 0, 0].real
        assert np.allclose(f[:100], 1.0)
        assert np.allclose(f[100:], 4.0)

    def test_mean_matrices_positive_semidefinite(self):
        states = [single_run_state(seed=s) for s in range(6)]
        grid = post.posterior_spectrum(states, np.arange(1, 201, 10),
                                       np.linspace(0, 0.5, 9))
        for mat in grid.values.reshape(-1, 2, 2):
            assert np.min(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))) > -1e-10

    def test_empty_snapshots_rejected(self):
        with pytest.raises(InvalidArgumentError):
            post.posterior_spectrum([], np.arange(1, 10), np.array([0.1]))


class TestCredibleBands:
    def test_identical_snapshots_zero_width(self):
        state = single_run_state()
        lo, hi = post.credible_bands([state] * 150, "logf11", 0.95,
                                     np.arange(1, 201, 5), np.linspace(0, 0.5, 5))
        assert np.allclose(lo, hi)

    def test_bands_nest_with_level(self):
        states = [single_run_state(seed=s) for s in range(120)]
        args = (np.arange(1, 201, 20), np.linspace(0, 0.5, 5))
        lo50, hi50 = post.credible_bands(states, "logf11", 0.5, *args)
        lo95, hi95 = post.credible_bands(states, "logf11", 0.95, *args)
        assert np.all(lo95 <= lo50 + 1e-12)
        assert np.all(hi50 <= hi95 + 1e-12)

    def test_warns_on_few_snapshots(self):
        state = single_run_state()
        with pytest.warns(UserWarning):
            post.credible_bands([state] * 5, "logf11", 0.95,
                                np.arange(1, 201, 50), np.array([0.1]))


class TestChangepointPosterior:
    def test_point_mass_single_segment(self):
        states = [single_run_state(seed=s) for s in range(4)]
        pm, ploc = post.changepoint_posterior(states, max_segments=3, n_samples=200)
        assert np.allclose(pm, [1.0, 0.0, 0.0])
        assert ploc == {}

    def test_mixture_counts_and_histograms(self):
        snaps = [single_run_state(seed=1)] * 3
        snaps += [two_segment_state(cut=100)] * 5
        snaps += [two_segment_state(cut=120)] * 2
        pm, ploc = post.changepoint_posterior(snaps, max_segments=4, n_samples=200)
        assert np.allclose(pm, [0.3, 0.7, 0.0, 0.0])
        positions, probs = ploc[(2, 1)]
        assert positions.tolist() == [100, 120]
        assert np.allclose(probs, [5 / 7, 2 / 7])
        assert post.conditional_mode_breakpoints(ploc, 2) == [100]

    def test_histograms_sum_to_one(self):
        snaps = [two_segment_state(cut=c) for c in (80, 90, 100, 100, 140)]
        pm, ploc = post.changepoint_posterior(snaps, max_segments=2, n_samples=200)
        assert pm.sum() == pytest.approx(1.0, abs=1e-12)
        for _, probs in ploc.values():
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)


class TestAse:
    def make_grid(self, values):
        n_t, n_f = values.shape
        mats = np.zeros((n_t, n_f, 1, 1), dtype=complex)
        mats[..., 0, 0] = values
        return SpectrumGrid(time_points=np.arange(n_t), freq_points=np.arange(n_f) / 10,
                            values=mats)

    def test_equal_grids_zero(self):
        g = self.make_grid(np.random.default_rng(0).uniform(1, 2, (5, 7)))
        assert post.ase(g, g, "f11") == 0.0

    def test_constant_offset_squares(self):
        base = np.random.default_rng(1).uniform(1, 2, (5, 7))
        est = self.make_grid(base + 0.25)
        truth = self.make_grid(base)
        assert post.ase(est, truth, "f11") == pytest.approx(0.0625, abs=1e-12)

    def test_grid_mismatch_rejected(self):
        a = self.make_grid(np.ones((5, 7)))
        b = SpectrumGrid(time_points=np.arange(5) + 1.0, freq_points=np.arange(7) / 10,
                         values=a.values)
        with pytest.raises(InvalidArgumentError):
            post.ase(a, b, "f11")


class TestSummarize:
    def test_full_summary_consistency(self):
        states = [single_run_state(seed=s) for s in range(110)]
        states += [two_segment_state(cut=100, n_dim=1)] * 0  # keep dims equal
        time_grid = np.arange(1, 201, 4, dtype=float)
        freq_grid = np.linspace(0, 0.5, 9)
        summary = post.summarize(states, time_grid, freq_grid, max_segments=3)
        summary.check_invariants()
        # functional means agree with the standalone path
        ref = post.functional_mean(states, "rho21", time_grid, freq_grid)
        assert np.allclose(summary.functional_means["rho21"], ref)
        lo, hi = post.credible_bands(states, "logf11", 0.95, time_grid, freq_grid)
        assert np.allclose(summary.bands["logf11"][0], lo)
        assert np.allclose(summary.bands["logf11"][1], hi)
        # coherence means stay inside [0, 1]
        assert np.all(summary.functional_means["rho21"] >= 0.0)
        assert np.all(summary.functional_means["rho21"] <= 1.0)

    def test_time_variation_helper(self):
        grid = np.array([[0.0, 1.0], [1.0, 1.0], [0.0, 1.0]])
        assert np.allclose(post.time_variation(grid), [2.0, 0.0])
