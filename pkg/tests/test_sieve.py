import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdfts.anova import median_polish
from hdfts.errors import DegenerateBootstrapError, SeriesTooShortError, SingularDesignError
from hdfts.fda import AgeGrid
from hdfts.forecast import ForecastConfig
from hdfts.sieve import (
    DEFAULT_DELTA_GRID,
    BootstrapConfig,
    calibrate_delta,
    calibration_errors,
    bootstrap_future_paths,
    fit_sieve,
    fit_var,
    generate_pseudo_series,
    interval_forecast,
    select_delta,
    select_var_order,
    substream,
)
from hdfts.synthgen import SynthSpec, generate, orthonormal_basis

GRID = AgeGrid.uniform(0, 100, 11)


def var1(rng, A, T, burn=200):
    K = A.shape[0]
    z = np.zeros((T + burn, K))
    for t in range(1, T + burn):
        z[t] = A @ z[t - 1] + rng.standard_normal(K)
    return z[burn:]


def curve_series(rng, T, K=2, p=11, noise=0.01):
    grid = AgeGrid.uniform(0, 100, p)
    A = 0.5 * np.eye(K)
    scores = var1(rng, A, T) * 0.5 ** np.arange(K)
    return scores @ orthonormal_basis(grid, K) + noise * rng.normal(size=(T, p))


class TestConfig:
    def test_defaults(self):
        cfg = BootstrapConfig()
        assert cfg.B == 200 and cfg.w == 1 and cfg.nominal_levels == (0.8, 0.95)
        assert cfg.delta_grid[0] == 0.1 and cfg.delta_grid[-1] == 5.0
        assert len(DEFAULT_DELTA_GRID) == 99

    @pytest.mark.parametrize("kw", [{"B": 10}, {"w": 0}, {"delta_grid": (1.0, 0.5)},
                                    {"nominal_levels": (1.2,)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            BootstrapConfig(**kw)


class TestFitVar:
    def test_white_noise(self, rng):
        m = fit_var(rng.standard_normal((5000, 2)), 1)
        assert np.max(np.abs(m.coefficients)) < 0.05

    def test_var1_recovery(self, rng):
        A = np.array([[0.5, 0.2], [-0.1, 0.4]])
        assert np.max(np.abs(np.linalg.eigvals(A))) == pytest.approx(0.6, abs=0.2)
        m = fit_var(var1(rng, A, 5000), 1)
        assert np.max(np.abs(m.coefficients[0] - A)) < 0.05

    def test_forward_backward_ar1(self, rng):
        y = var1(rng, np.array([[0.6]]), 5000)
        f, b = fit_var(y, 1, "forward"), fit_var(y, 1, "backward")
        assert abs(f.coefficients[0, 0, 0] - b.coefficients[0, 0, 0]) < 0.05

    def test_residuals_centered(self, rng):
        m = fit_var(rng.normal(size=(40, 3)) + 5.0, 2, "backward")
        assert m.residuals.shape == (38, 3)
        assert np.max(np.abs(m.residuals.mean(axis=0))) < 1e-10

    def test_errors(self, rng):
        with pytest.raises(SeriesTooShortError):
            fit_var(rng.normal(size=(4, 2)), 1)
        with pytest.raises(SingularDesignError):
            fit_var(np.zeros((20, 2)), 1)

    def test_order_zero(self, rng):
        y = rng.normal(size=(10, 2))
        m = fit_var(y, 0)
        assert np.allclose(m.intercept, y.mean(axis=0))

    def test_order_selection(self, rng):
        A = 0.6 * np.eye(2)
        picks = [select_var_order(var1(rng, A, 800)) for _ in range(20)]
        assert picks.count(1) >= 15
        B2 = [np.array([[0.5, 0.0], [0.0, 0.3]]), np.array([[-0.4, 0.0], [0.0, -0.3]])]
        z = np.zeros((1000, 2))
        for t in range(2, 1000):
            z[t] = B2[0] @ z[t - 1] + B2[1] @ z[t - 2] + rng.standard_normal(2)
        assert select_var_order(z[200:]) == 2


class TestFuturePaths:
    def test_degenerate(self):
        x = np.tile(np.linspace(-3, -1, 11), (12, 1))
        out = bootstrap_future_paths(x, 2, BootstrapConfig(B=60), rng=substream(0), grid=GRID)
        assert np.allclose(out, x[0], atol=1e-12)

    def test_seed_reproducible(self, rng):
        x = curve_series(rng, 30)
        a = bootstrap_future_paths(x, 3, BootstrapConfig(B=60, seed=7), grid=GRID)
        b = bootstrap_future_paths(x, 3, BootstrapConfig(B=60, seed=7), grid=GRID)
        assert a.tobytes() == b.tobytes()

    def test_enumeration_oracle(self):
        # T = 4 is the shortest series on which a VAR(1) with intercept is identifiable
        rng = np.random.default_rng(3)
        phi = orthonormal_basis(GRID, 1)[0]
        x = np.outer([1.0, -0.4, 0.7, 0.1], phi) + 1e-3 * rng.normal(size=(4, 11))
        cfg = BootstrapConfig(B=4000, var_order=1)
        fit = fit_sieve(x, cfg, grid=GRID)
        assert fit.basis.K == 1 and fit.forward.order == 1
        g = fit.scores[:, 0]
        slope, a = np.polyfit(g[:-1], g[1:], 1)
        e = g[1:] - (a + slope * g[:-1])
        U = fit.remainders - fit.remainders.mean(axis=0)
        support = np.array([
            fit.mean + (a + slope * g[-1] + ei) * fit.basis.eigenfunctions[0] + Uj
            for ei in e - e.mean() for Uj in U
        ])
        out = bootstrap_future_paths(x, 1, cfg, rng=substream(1), grid=GRID)
        dist = np.max(np.abs(out[:, None, :] - support[None, :, :]), axis=2)
        nearest = dist.min(axis=1)
        assert np.max(nearest) < 1e-10
        assert set(np.argmin(dist, axis=1)) == set(range(support.shape[0]))


class TestPseudoSeries:
    def test_full_window_is_observed(self, rng):
        x = curve_series(rng, 20)
        out = generate_pseudo_series(x, BootstrapConfig(B=50, w=20), rng=substream(0), grid=GRID)
        assert np.array_equal(out, np.broadcast_to(x, out.shape))

    def test_w1_last_curve_is_most_recent(self, rng):
        x = curve_series(rng, 20)
        out = generate_pseudo_series(x, BootstrapConfig(B=50, w=1, var_order=1), rng=substream(0), grid=GRID)
        assert np.array_equal(out[:, -1], np.broadcast_to(x[-1], out[:, -1].shape))
        assert not np.allclose(out[:, 0], x[0])

    def test_tail_covers_var_order(self, rng):
        x = curve_series(rng, 30)
        out = generate_pseudo_series(x, BootstrapConfig(B=50, w=1, var_order=3), rng=substream(0), grid=GRID)
        assert np.array_equal(out[:, -3:], np.broadcast_to(x[-3:], out[:, -3:].shape))

    def test_reproducible(self, rng):
        x = curve_series(rng, 20)
        a = generate_pseudo_series(x, BootstrapConfig(B=50), rng=substream(5), grid=GRID)
        b = generate_pseudo_series(x, BootstrapConfig(B=50), rng=substream(5), grid=GRID)
        assert a.tobytes() == b.tobytes()


class TestDelta:
    def test_normal_quantiles(self):
        hits = {0.95: 0, 0.8: 0}
        for seed in range(20):
            omega = np.random.default_rng(seed).standard_normal((1000, 21))
            d95, _ = select_delta(omega, 0.95)
            d80, _ = select_delta(omega, 0.80)
            hits[0.95] += 1.8 <= d95 <= 2.2
            hits[0.8] += 1.15 <= d80 <= 1.45
        assert hits[0.95] == 20 and hits[0.8] == 20

    def test_degenerate(self):
        with pytest.raises(DegenerateBootstrapError):
            select_delta(np.zeros((60, 5)), 0.9)

    def test_partial_zero_spread(self, rng):
        omega = rng.standard_normal((200, 4))
        omega[:, 2] = 0.0
        delta, sd = select_delta(omega, 0.8)
        assert sd[2] == 0 and delta > 0

    def test_tie_goes_to_smaller(self):
        omega = np.array([[1.0], [-1.0]] * 30)
        delta, _ = select_delta(omega, 1.0, (0.5, 1.0, 1.5, 2.0))
        sd = omega.std(ddof=1)
        assert delta == min(d for d in (0.5, 1.0, 1.5, 2.0) if d * sd >= 1.0)

    @given(st.integers(0, 2**32 - 1), st.floats(0.5, 0.99))
    @settings(max_examples=30, deadline=None)
    def test_coverage_is_best_on_grid(self, seed, level):
        omega = np.random.default_rng(seed).standard_normal((80, 5))
        delta, sd = select_delta(omega, level)
        gaps = [abs(np.mean(np.abs(omega) <= d * sd) - level) for d in DEFAULT_DELTA_GRID]
        assert abs(np.mean(np.abs(omega) <= delta * sd) - level) == pytest.approx(min(gaps))

    def test_calibrate_delta_on_series(self, rng):
        from hdfts.fda import Curve
        x = curve_series(rng, 30)
        curves = [Curve(GRID, r) for r in x]
        delta, sd = calibrate_delta(curves, 1, BootstrapConfig(B=100), 0.8)
        assert delta in DEFAULT_DELTA_GRID and np.all(sd.values >= 0)

    def test_omega_shift_invariant(self, rng):
        x = curve_series(rng, 25)
        cfg = BootstrapConfig(B=60)
        a = calibration_errors(x, 2, cfg, grid=GRID, rng=substream(3))
        b = calibration_errors(x + np.linspace(1, 2, 11), 2, cfg, grid=GRID, rng=substream(3))
        assert np.allclose(a, b, atol=1e-9)


class TestIntervals:
    def test_zero_residual_panel(self):
        panel, _ = generate(SynthSpec(S=3, T=12, p=7, noise_scale=0.0, seed=2))
        out = interval_forecast(panel, 2, "fmp", BootstrapConfig(B=50))
        surface = median_polish(panel).effects_array()[:, :, None, :]
        for iv in out.values():
            assert np.allclose(iv.lower.data, surface, atol=1e-10)
            assert np.allclose(iv.upper.data, surface, atol=1e-10)

    @pytest.mark.parametrize("method", ("fmp", "fm", "independent"))
    def test_symmetry_and_addback(self, method):
        panel, _ = generate(SynthSpec(S=3, T=25, p=9, residual_process="score_var1", seed=4))
        out = interval_forecast(panel, 2, method, BootstrapConfig(B=60))
        assert set(out) == {0.8, 0.95}
        for iv in out.values():
            assert np.max(np.abs(iv.upper.data + iv.lower.data - 2 * iv.point.data)) <= 1e-10
            assert np.all(iv.lower.data <= iv.upper.data)
            width = iv.upper.data - iv.lower.data
            assert np.allclose(width, 2 * iv.delta[..., None] * iv.sd_curve, atol=1e-12)

    def test_wider_band_contains_narrower(self):
        panel, _ = generate(SynthSpec(S=3, T=25, p=9, residual_process="far1", seed=8))
        out = interval_forecast(panel, 1, "fmp", BootstrapConfig(B=100))
        lo, hi = out[0.8], out[0.95]
        ordered = hi.delta >= lo.delta
        assert ordered.mean() >= 0.5  # flagged per cell, not assumed
        inside = (hi.lower.data <= lo.lower.data + 1e-12) & (lo.upper.data <= hi.upper.data + 1e-12)
        assert np.all(inside[ordered])

    def test_reproducible_and_thread_independent(self):
        panel, _ = generate(SynthSpec(S=3, T=20, p=7, seed=9))
        runs = [interval_forecast(panel, 2, "fmp", BootstrapConfig(B=50, seed=11),
                                  ForecastConfig(threads=t)) for t in (1, 1, 3)]
        for r in runs[1:]:
            assert r[0.95].upper.data.tobytes() == runs[0][0.95].upper.data.tobytes()
