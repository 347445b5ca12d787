import numpy as np
import pytest

from specseg import model
from specseg.errors import InvalidArgumentError, InvalidStateError, InvalidPartitionError
from specseg.model import (
    KIND_IMAG,
    KIND_LOGPSI,
    KIND_REAL,
    CholeskyPair,
    Partition,
    basis_matrix,
    coherence,
    component_indices,
    component_runs,
    reconstruct_cholesky,
    spectrum_from_cholesky,
)


def random_vectors(rng, n_dim, s_trunc, scale=0.5):
    return [scale * rng.standard_normal(s_trunc) for _ in range(n_dim * n_dim)]


class TestComponentIndices:
    @pytest.mark.parametrize("n_dim", [1, 2, 3, 4])
    def test_count_is_n_squared(self, n_dim):
        comps = component_indices(n_dim)
        assert len(comps) == n_dim * n_dim
        n_re = sum(1 for c in comps if c.kind == KIND_REAL)
        n_im = sum(1 for c in comps if c.kind == KIND_IMAG)
        n_psi = sum(1 for c in comps if c.kind == KIND_LOGPSI)
        assert n_re == n_im == n_dim * (n_dim - 1) // 2
        assert n_psi == n_dim

    def test_theta_requires_subdiagonal(self):
        with pytest.raises(InvalidArgumentError):
            model.ComponentIndex(KIND_REAL, 1, 1)
        with pytest.raises(InvalidArgumentError):
            model.ComponentIndex(KIND_LOGPSI, 2, 1)


class TestBasisMatrix:
    def test_even_row_at_zero_is_ones(self):
        row = basis_matrix([0.0], 5, "even")[0]
        assert np.array_equal(row, np.ones(5))

    def test_odd_row_at_zero_is_zeros(self):
        row = basis_matrix([0.0], 5, "odd")[0]
        assert np.array_equal(row, np.zeros(5))

    def test_even_s3_at_quarter(self):
        row = basis_matrix([0.25], 3, "even")[0]
        assert np.allclose(row, [1.0, 0.0, -1.0], atol=1e-15)

    def test_invalid_arguments(self):
        with pytest.raises(InvalidArgumentError):
            basis_matrix([0.1], 1, "even")
        with pytest.raises(InvalidArgumentError):
            basis_matrix([], 4, "odd")
        with pytest.raises(InvalidArgumentError):
            basis_matrix([0.1], 4, "cubic")


class TestReconstructCholesky:
    def test_zero_coefficients_give_identity_model(self):
        freqs = np.linspace(0.0, 0.5, 7)
        vectors = [np.zeros(6) for _ in range(9)]
        pair = reconstruct_cholesky(vectors, freqs, n_dim=3)
        assert np.array_equal(pair.theta, np.broadcast_to(np.eye(3), (7, 3, 3)))
        assert np.array_equal(pair.psi, np.ones((7, 3)))

    def test_intercept_only_psi(self):
        freqs = np.linspace(0.01, 0.49, 5)
        vectors = [np.zeros(4) for _ in range(4)]
        vectors[2] = np.array([np.log(2.0), 0.0, 0.0, 0.0])  # log psi_11, N=2
        pair = reconstruct_cholesky(vectors, freqs, n_dim=2)
        assert np.allclose(pair.psi[:, 0], 2.0)
        assert np.allclose(pair.psi[:, 1], 1.0)

    def test_inverse_identity_against_dense_oracle(self):
        # f built from the pair must satisfy f^{-1} = Theta Psi^{-1} Theta^*
        rng = np.random.default_rng(7)
        freqs = rng.uniform(0.0, 0.5, size=9)
        vectors = random_vectors(rng, 2, 6)
        pair = reconstruct_cholesky(vectors, freqs, n_dim=2)
        f = spectrum_from_cholesky(pair)
        for l in range(freqs.size):
            finv_direct = pair.theta[l] @ np.diag(1.0 / pair.psi[l]) @ pair.theta[l].conj().T
            assert np.allclose(np.linalg.inv(f[l]), finv_direct, atol=1e-12)

    def test_nonfinite_coefficients_rejected(self):
        vectors = [np.zeros(4) for _ in range(4)]
        vectors[0] = np.array([np.nan, 0.0, 0.0, 0.0])
        with pytest.raises(InvalidStateError):
            reconstruct_cholesky(vectors, [0.1], n_dim=2)

    def test_clamp_counts_events(self):
        vectors = [np.zeros(4) for _ in range(4)]
        vectors[2] = np.array([80.0, 0.0, 0.0, 0.0])
        events = []
        pair = reconstruct_cholesky(vectors, [0.1, 0.2], n_dim=2, clamp_events=events)
        assert events == [2]
        assert np.allclose(pair.psi[:, 0], np.exp(50.0))

    def test_component_symmetry_in_frequency(self):
        # Re theta even, Im theta odd, psi even when evaluated at +-omega
        rng = np.random.default_rng(3)
        vectors = random_vectors(rng, 2, 5)
        w = np.array([0.13])
        plus = reconstruct_cholesky(vectors, w, n_dim=2)
        minus = reconstruct_cholesky(vectors, -w, n_dim=2)
        assert np.allclose(plus.theta[0, 1, 0].real, minus.theta[0, 1, 0].real)
        assert np.allclose(plus.theta[0, 1, 0].imag, -minus.theta[0, 1, 0].imag)
        assert np.allclose(plus.psi, minus.psi)


class TestSpectrumFromCholesky:
    def test_identity_pair(self):
        pair = CholeskyPair(theta=np.broadcast_to(np.eye(2), (3, 2, 2)).copy(),
                            psi=np.ones((3, 2)))
        assert np.allclose(spectrum_from_cholesky(pair), np.eye(2))

    def test_diagonal_psi(self):
        pair = CholeskyPair(theta=np.broadcast_to(np.eye(2), (1, 2, 2)).copy(),
                            psi=np.array([[2.0, 5.0]]))
        f = spectrum_from_cholesky(pair)[0]
        assert np.allclose(f, np.diag([2.0, 5.0]))

    def test_random_pair_positive_definite(self):
        rng = np.random.default_rng(11)
        vectors = random_vectors(rng, 3, 6)
        pair = reconstruct_cholesky(vectors, rng.uniform(0, 0.5, 6), n_dim=3)
        f = spectrum_from_cholesky(pair)
        for mat in f:
            assert np.allclose(mat, mat.conj().T, atol=1e-12)
            assert np.min(np.linalg.eigvalsh(mat)) > 0.0

    def test_log_det_equals_sum_log_psi(self):
        rng = np.random.default_rng(5)
        vectors = random_vectors(rng, 3, 5)
        freqs = rng.uniform(0, 0.5, 4)
        pair = reconstruct_cholesky(vectors, freqs, n_dim=3)
        f = spectrum_from_cholesky(pair)
        for l in range(freqs.size):
            _, logdet = np.linalg.slogdet(f[l])
            assert abs(logdet - np.sum(np.log(pair.psi[l]))) < 1e-10

    def test_psi_must_be_positive(self):
        with pytest.raises(InvalidStateError):
            CholeskyPair(theta=np.broadcast_to(np.eye(2), (1, 2, 2)).copy(),
                         psi=np.array([[1.0, -0.5]]))


class TestCoherence:
    def test_diagonal_matrix_zero(self):
        assert coherence(np.diag([1.0, 3.0]).astype(complex), 2, 1) == 0.0

    def test_half_correlation(self):
        f = np.array([[1.0, 0.5], [0.5, 1.0]], dtype=complex)
        assert np.isclose(coherence(f, 2, 1), 0.25)

    def test_random_pd_in_unit_interval(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            f = a @ a.conj().T + 1e-6 * np.eye(3)
            for j in range(2, 4):
                for k in range(1, j):
                    rho = coherence(f, j, k)
                    assert 0.0 <= rho < 1.0

    def test_requires_distinct_indices(self):
        with pytest.raises(InvalidArgumentError):
            coherence(np.eye(2, dtype=complex), 1, 1)


def brute_force_runs(partition):
    """Independent reconstruction: walk segments, breaking where phi says."""
    n_comp = partition.n_dim ** 2
    out = []
    for c in range(n_comp):
        spans, start = [], 1
        for q in range(1, partition.m + 1):
            boundary = q < partition.m and c in partition.phi[q - 1]
            if boundary:
                spans.append((start, q))
                start = q + 1
        spans.append((start, partition.m))
        out.append(tuple(spans))
    return tuple(out)


class TestComponentRuns:
    def test_single_segment(self):
        p = Partition(delta=(0, 100), phi=(), n_dim=2)
        rm = component_runs(p)
        assert all(spans == ((1, 1),) for spans in rm.runs)

    def test_full_change_set_splits_every_component(self):
        p = Partition(delta=(0, 50, 100), phi=(frozenset(range(4)),), n_dim=2)
        rm = component_runs(p)
        assert all(spans == ((1, 1), (2, 2)) for spans in rm.runs)

    def test_against_brute_force_enumeration(self):
        rng = np.random.default_rng(17)
        n_comp = 4
        for m in range(2, 5):
            for _ in range(40):
                delta = (0,) + tuple(np.sort(rng.choice(np.arange(1, 200), m - 1, replace=False)).tolist()) + (200,)
                phi = tuple(
                    frozenset(rng.choice(n_comp, size=rng.integers(1, n_comp + 1), replace=False).tolist())
                    for _ in range(m - 1)
                )
                p = Partition(delta=delta, phi=phi, n_dim=2)
                rm = component_runs(p)
                assert rm.runs == brute_force_runs(p)
                # runs tile the segments exactly
                for spans in rm.runs:
                    assert spans[0][0] == 1 and spans[-1][1] == m
                    for (a1, b1), (a2, b2) in zip(spans, spans[1:]):
                        assert a2 == b1 + 1
                assert rm.regenerate_phi() == phi

    def test_partition_validation(self):
        with pytest.raises(InvalidPartitionError):
            Partition(delta=(0, 100, 50), phi=(frozenset({0}),), n_dim=2)
        with pytest.raises(InvalidPartitionError):
            Partition(delta=(0, 50, 100), phi=(frozenset(),), n_dim=2)
        with pytest.raises(InvalidPartitionError):
            Partition(delta=(0, 50, 100), phi=(frozenset({9}),), n_dim=2)
        p = Partition(delta=(0, 30, 100), phi=(frozenset({0}),), n_dim=2)
        with pytest.raises(InvalidPartitionError):
            p.validate_lengths(n_min=40)


class TestSeriesAndGrid:
    def test_series_must_be_finite(self):
        values = np.ones((30, 2))
        values[3, 1] = np.inf
        with pytest.raises(InvalidArgumentError):
            model.MultivariateSeries(values)

    def test_grid_functionals(self):
        vals = np.tile(np.array([[2.0, 0.5], [0.5, 1.0]], dtype=complex), (4, 3, 1, 1))
        grid = model.SpectrumGrid(time_points=np.arange(4), freq_points=np.arange(3) / 10,
                                  values=vals)
        assert np.allclose(grid.functional("f11"), 2.0)
        assert np.allclose(grid.functional("logf22"), 0.0)
        assert np.allclose(grid.functional("rho21"), 0.125)
        with pytest.raises(InvalidArgumentError):
            grid.functional("rho11")
        with pytest.raises(InvalidArgumentError):
            grid.functional("f21")
