import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdfts.errors import EmptyCollectionError, GridMismatchError
from hdfts.fda import (
    AgeGrid,
    Curve,
    CurvePanel,
    inner_product,
    norm,
    pointwise_mean,
    pointwise_median,
)

from conftest import curves

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
# zero or well away from underflow, so that f != 0 implies <f, f> > 0 in floating point
safe = st.one_of(st.just(0.0), st.floats(1e-6, 1e3), st.floats(-1e3, -1e-6))


class TestAgeGrid:
    def test_weights_sum_to_span(self):
        g = AgeGrid(np.array([0.0, 1.0, 3.0, 7.5, 10.0]))
        assert np.isclose(g.quad_weights.sum(), 10.0, rtol=1e-12)
        assert np.all(g.quad_weights > 0)

    @pytest.mark.parametrize("pts", [[0.0], [0.0, 0.0, 1.0], [2.0, 1.0]])
    def test_rejects_bad_points(self, pts):
        with pytest.raises(ValueError):
            AgeGrid(np.array(pts))

    def test_equality_by_points(self):
        assert AgeGrid.uniform(0, 10, 11) == AgeGrid.ages(0, 10)
        assert AgeGrid.uniform(0, 10, 11) != AgeGrid.uniform(0, 10, 12)


class TestInnerProduct:
    def test_constant_one(self):
        g = AgeGrid.uniform(0, 100, 101)
        one = Curve(g, np.ones(101))
        assert inner_product(one, one) == pytest.approx(100.0, abs=1e-12)

    def test_linearity_sign(self):
        g = AgeGrid.uniform(0, 100, 101)
        assert inner_product(Curve(g, np.ones(101)), Curve(g, -np.ones(101))) == pytest.approx(-100.0)

    def test_linear_integrand(self):
        g = AgeGrid.uniform(0, 1, 1001)
        val = inner_product(Curve(g, g.points.copy()), Curve(g, np.ones(1001)))
        assert abs(val - 0.5) < 1e-6

    def test_grid_mismatch(self):
        a = Curve(AgeGrid.uniform(0, 1, 5), np.zeros(5))
        b = Curve(AgeGrid.uniform(0, 2, 5), np.zeros(5))
        with pytest.raises(GridMismatchError):
            inner_product(a, b)

    @given(arrays(float, 7, elements=safe), arrays(float, 7, elements=safe))
    def test_symmetric_and_positive(self, a, b):
        g = AgeGrid.uniform(0, 6, 7)
        f, h = Curve(g, a), Curve(g, b)
        assert inner_product(f, h) == pytest.approx(inner_product(h, f), rel=1e-12, abs=1e-9)
        assert inner_product(f, f) >= 0
        if np.all(a == 0):
            assert norm(f) == 0
        else:
            assert inner_product(f, f) > 0


class TestPointwiseMedian:
    def test_robust_to_outlier(self):
        g = AgeGrid.uniform(0, 1, 4)
        med = pointwise_median(curves(g, [np.full(4, 1.0), np.full(4, 2.0), np.full(4, 100.0)]))
        assert np.array_equal(med.values, np.full(4, 2.0))

    def test_even_count_midpoint(self, rng):
        g = AgeGrid.uniform(0, 1, 6)
        a, b = rng.normal(size=6), rng.normal(size=6)
        assert np.allclose(pointwise_median(curves(g, [a, b])).values, (a + b) / 2, atol=1e-15)

    def test_sort_oracle(self, rng):
        g = AgeGrid.uniform(0, 1, 9)
        rows = rng.normal(size=(5, 9))
        oracle = [sorted(rows[:, i])[2] for i in range(9)]
        assert np.array_equal(pointwise_median(curves(g, rows)).values, oracle)

    def test_empty(self):
        with pytest.raises(EmptyCollectionError):
            pointwise_median([])

    @given(arrays(float, (5, 4), elements=finite), finite)
    def test_translation_equivariant(self, rows, c):
        g = AgeGrid.uniform(0, 1, 4)
        lhs = pointwise_median(curves(g, rows + c)).values
        rhs = pointwise_median(curves(g, rows)).values + c
        assert np.allclose(lhs, rhs, atol=1e-9)

    @given(arrays(float, (5, 4), elements=finite), st.floats(0, 1e6))
    def test_breakdown_odd_count(self, rows, bump):
        g = AgeGrid.uniform(0, 1, 4)
        before = pointwise_median(curves(g, rows)).values
        bumped = rows.copy()
        idx = np.argmax(rows, axis=0)
        bumped[idx, np.arange(4)] += bump
        assert np.array_equal(pointwise_median(curves(g, bumped)).values, before)


class TestPointwiseMean:
    def test_single_identity(self, rng):
        g = AgeGrid.uniform(0, 1, 5)
        c = Curve(g, rng.normal(size=5))
        assert np.array_equal(pointwise_mean([c]).values, c.values)

    def test_symmetric_pair(self, rng):
        g = AgeGrid.uniform(0, 1, 5)
        v = rng.normal(size=5)
        assert np.allclose(pointwise_mean(curves(g, [v, -v])).values, 0.0, atol=1e-15)

    def test_summation_oracle(self, rng):
        g = AgeGrid.uniform(0, 1, 8)
        rows = rng.normal(size=(7, 8))
        oracle = [sum(float(rows[k, i]) for k in range(7)) / 7 for i in range(8)]
        assert np.allclose(pointwise_mean(curves(g, rows)).values, oracle, atol=1e-14)

    def test_empty(self):
        with pytest.raises(EmptyCollectionError):
            pointwise_mean([])


class TestContainers:
    def test_curve_immutable(self):
        c = Curve(AgeGrid.uniform(0, 1, 3), np.zeros(3))
        with pytest.raises(ValueError):
            c.values[0] = 1.0

    def test_curve_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Curve(AgeGrid.uniform(0, 1, 3), np.array([0.0, np.nan, 1.0]))

    def test_panel_shape_checks(self):
        g = AgeGrid.uniform(0, 1, 3)
        with pytest.raises(Exception):
            CurvePanel(g, ("a",), ("F", "M"), (1, 2), np.zeros((2, 2, 2, 3)))
        with pytest.raises(ValueError):
            CurvePanel(g, ("a",), ("F", "M"), (2, 1), np.zeros((1, 2, 2, 3)))

    def test_select_years(self):
        g = AgeGrid.uniform(0, 1, 2)
        panel = CurvePanel(g, ("a", "b"), ("F", "M"), (1, 2, 3), np.arange(24.0).reshape(2, 2, 3, 2))
        sub = panel.select_years(1, 3)
        assert sub.years == (2, 3)
        assert np.array_equal(sub.data, panel.data[:, :, 1:3])
