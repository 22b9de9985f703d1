import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdfts.dfpca import (
    eigen_decompose,
    project_scores,
    reconstruct,
    select_k,
    select_k_array,
    truncation_residuals,
)
from hdfts.errors import DimensionMismatchError, GridMismatchError, NotSymmetricError
from hdfts.fda import AgeGrid, Curve, inner_product
from hdfts.longrun import long_run_cov
from hdfts.synthgen import orthonormal_basis


def gram(basis):
    w = basis.grid.quad_weights
    phi = basis.eigenfunctions
    return (phi * w) @ phi.T


def random_psd(rng, p):
    a = rng.normal(size=(p, p))
    return a @ a.T / p


def smooth_series(rng, T, grid, K=3, decay=0.5):
    phi = orthonormal_basis(grid, K)
    z = rng.normal(size=(T, K)) * decay ** np.arange(K)
    return 1.0 + z @ phi


class TestSelectK:
    def test_hand_fixture(self):
        assert select_k(np.array([9.0, 0.6, 0.4]), 0.95) == 2

    def test_ignores_negative(self):
        assert select_k(np.array([9.0, 0.6, 0.4, -5.0]), 0.95) == 2
        assert select_k(np.array([9.0, 1.0, 0.0]), 0.9) == 1

    @given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=12),
           st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_monotone_in_threshold(self, vals, a, b):
        theta = np.sort(np.array(vals))[::-1]
        lo, hi = min(a, b), max(a, b)
        assert select_k(theta, lo) <= select_k(theta, hi)

    def test_array_version(self, rng):
        theta = np.sort(rng.exponential(size=(20, 8)), axis=1)[:, ::-1]
        expect = [select_k(t, 0.9) for t in theta]
        assert list(select_k_array(theta, 0.9)) == expect


class TestEigenDecompose:
    def test_rank_one(self):
        grid = AgeGrid.uniform(0, 2, 41)
        phi = orthonormal_basis(grid, 2)[1]
        es = eigen_decompose(3.0 * np.outer(phi, phi), grid)
        assert es.eigenvalues[0] == pytest.approx(3.0, abs=1e-10)
        assert es.K == 1
        assert np.allclose(np.abs(es.eigenfunctions[0]), np.abs(phi), atol=1e-8)

    def test_reconstruction_random_psd(self, rng):
        for p in (2, 7, 15, 40):
            grid = AgeGrid.uniform(0, 1, p)
            C = random_psd(rng, p)
            es = eigen_decompose(C, grid, 0.95)
            rebuilt = (es.eigenfunctions.T * es.eigenvalues) @ es.eigenfunctions
            assert np.max(np.abs(rebuilt - C)) <= 1e-8

    def test_nonuniform_grid_orthonormal(self, rng):
        grid = AgeGrid(np.cumsum(rng.uniform(0.2, 2.0, size=12)))
        es = eigen_decompose(random_psd(rng, 12), grid)
        assert np.allclose(gram(es), np.eye(12), atol=1e-8)
        assert np.all(np.diff(es.eigenvalues) <= 1e-12)

    def test_negative_eigenvalues_clipped(self):
        grid = AgeGrid.uniform(0, 1, 3)
        es = eigen_decompose(np.diag([2.0, -1.0, 0.5]), grid)
        assert np.all(es.eigenvalues >= 0)

    def test_asymmetric_rejected(self):
        C = np.eye(3)
        C[0, 1] = 1e-3
        with pytest.raises(NotSymmetricError):
            eigen_decompose(C, AgeGrid.uniform(0, 1, 3))

    def test_sign_rule(self, rng):
        es = eigen_decompose(random_psd(rng, 6), AgeGrid.uniform(0, 1, 6))
        for f in es.eigenfunctions:
            big = np.abs(f) >= 1e-6 * np.abs(f).max()
            assert f[np.argmax(big)] > 0

    def test_k_max_from_sample_size(self, rng):
        grid = AgeGrid.uniform(0, 1, 10)
        lr = long_run_cov(rng.normal(size=(5, 10)))
        assert eigen_decompose(lr, grid).k_max == 4

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
    @settings(max_examples=25, deadline=None)
    def test_scaling(self, seed, c):
        rng = np.random.default_rng(seed)
        grid = AgeGrid.uniform(0, 1, 8)
        C = random_psd(rng, 8)
        a, b = eigen_decompose(C, grid), eigen_decompose(c * c * C, grid)
        assert np.allclose(b.eigenvalues, c * c * a.eigenvalues, rtol=1e-8, atol=1e-10)
        assert a.K == b.K
        gap = np.min(np.abs(np.diff(a.eigenvalues[: a.K + 1])))
        if gap > 1e-6:
            assert np.allclose(b.eigenfunctions[: a.K], a.eigenfunctions[: a.K], atol=1e-6)


class TestScores:
    grid = AgeGrid.uniform(0, 1, 21)

    def basis(self, rng, T=30):
        x = smooth_series(rng, T, self.grid)
        return x, eigen_decompose(long_run_cov(x), self.grid, 0.95)

    def test_identical_curves_zero_scores(self, rng):
        _, es = self.basis(rng)
        x = np.tile(rng.normal(size=21), (6, 1))
        assert np.allclose(project_scores(x, es).scores, 0.0, atol=1e-12)

    def test_alternating_first_component(self, rng):
        _, es = self.basis(rng)
        es = es.truncated(3)
        mean = rng.normal(size=21)
        c = np.array([-1.0, 1.0] * 4)
        sm = project_scores(mean + c[:, None] * es.eigenfunctions[0], es)
        assert np.allclose(sm.scores[:, 0], c, atol=1e-8)
        assert np.allclose(sm.scores[:, 1:], 0.0, atol=1e-8)

    def test_inner_product_oracle(self, rng):
        _, es = self.basis(rng)
        x = rng.normal(size=(10, 21))
        sm = project_scores(x, es)
        mean = Curve(self.grid, x.mean(axis=0))
        for t in range(10):
            for k, phi in enumerate(es.functions()):
                assert sm.scores[t, k] == pytest.approx(
                    inner_product(Curve(self.grid, x[t]) - mean, phi), abs=1e-12)

    def test_score_means_zero(self, rng):
        x, es = self.basis(rng)
        assert np.max(np.abs(project_scores(x, es).scores.mean(axis=0))) < 1e-8

    def test_zero_scores_reconstruct_mean(self, rng):
        x, es = self.basis(rng)
        sm = project_scores(x, es)
        zero = type(sm)(np.zeros_like(sm.scores), sm.mean_curve)
        for c in reconstruct(zero, es):
            assert np.array_equal(c.values, sm.mean_curve.values)

    def test_full_rank_roundtrip_and_parseval(self, rng):
        x = rng.normal(size=(30, 21))
        es = eigen_decompose(long_run_cov(x), self.grid, 1.0, k_max=21).truncated(21)
        sm = project_scores(x, es)
        back = np.array([c.values for c in reconstruct(sm, es)])
        assert np.max(np.abs(back - x)) <= 1e-8
        centred = x - x.mean(axis=0)
        energy = (centred**2) @ self.grid.quad_weights
        assert np.allclose((sm.scores**2).sum(axis=1), energy, atol=1e-8)

    def test_truncation_energy(self, rng):
        grid = self.grid
        phi = orthonormal_basis(grid, 4)
        x = (rng.normal(size=(200, 4)) * np.array([1.0, 0.5, 0.2, 0.05])) @ phi
        from hdfts.longrun import sample_cov
        es = eigen_decompose(sample_cov(x), grid, 0.95)
        sm = project_scores(x, es)
        eps = truncation_residuals(x, sm, es)
        centred = x - x.mean(axis=0)
        total = float(((centred**2) @ grid.quad_weights).sum())
        lost = float(((eps**2) @ grid.quad_weights).sum())
        assert lost <= 0.05 * total + 1e-8

    def test_grid_and_width_errors(self, rng):
        _, es = self.basis(rng)
        with pytest.raises(GridMismatchError):
            project_scores(np.zeros((3, 5)), es)
        sm = project_scores(np.zeros((3, 21)), es)
        too_wide = type(sm)(np.zeros((3, es.k_max + 1)), sm.mean_curve)
        with pytest.raises(DimensionMismatchError):
            reconstruct(too_wide, es)
