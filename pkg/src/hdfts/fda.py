"""Grid-sampled functions: age grids, curves, curve panels and pointwise statistics.

Curves are stored as values on a shared :class:`AgeGrid`.  Integration uses
trapezoidal quadrature weights fixed by the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hdfts.errors import (
    DimensionMismatchError,
    EmptyCollectionError,
    GridMismatchError,
    LabelMismatchError,
)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    h = np.diff(points)
    w = np.zeros(points.shape[0])
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


@dataclass(frozen=True, eq=False)
class AgeGrid:
    """Ordered abscissae with trapezoidal quadrature weights."""

    points: np.ndarray
    quad_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise ValueError("an AgeGrid needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "quad_weights", _frozen(trapezoid_weights(pts)))

    @classmethod
    def uniform(cls, start: float, stop: float, num: int) -> "AgeGrid":
        return cls(np.linspace(start, stop, num))

    @classmethod
    def ages(cls, first: int, last: int) -> "AgeGrid":
        """Single-year ages ``first..last`` inclusive."""
        return cls(np.arange(first, last + 1, dtype=float))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, AgeGrid):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )

    def __hash__(self) -> int:
        return hash(self.points.tobytes())

    def __repr__(self) -> str:
        return f"AgeGrid({self.points[0]:g}..{self.points[-1]:g}, p={len(self)})"


@dataclass(frozen=True, eq=False)
class Curve:
    grid: AgeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.shape[0] != len(self.grid):
            raise DimensionMismatchError(
                f"curve has {vals.shape[0]} values on a grid of {len(self.grid)} points"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "values", _frozen(vals))

    def __len__(self) -> int:
        return self.values.shape[0]

    def _check(self, other: "Curve") -> None:
        if self.grid != other.grid:
            raise GridMismatchError("curves live on different grids")

    def __add__(self, other):
        if isinstance(other, Curve):
            self._check(other)
            return Curve(self.grid, self.values + other.values)
        return Curve(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Curve):
            self._check(other)
            return Curve(self.grid, self.values - other.values)
        return Curve(self.grid, self.values - float(other))

    def __mul__(self, c: float) -> "Curve":
        return Curve(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "Curve":
        return Curve(self.grid, -self.values)

    def allclose(self, other: "Curve", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.values, other.values, rtol=0.0, atol=atol))


@dataclass(frozen=True, eq=False)
class CurvePanel:
    """Curves indexed by state x gender x year, stored as an (S, G, T, p) array."""

    grid: AgeGrid
    states: tuple
    genders: tuple
    years: tuple
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        states, genders, years = tuple(self.states), tuple(self.genders), tuple(self.years)
        if data.ndim != 4:
            raise DimensionMismatchError("panel data must have shape (S, G, T, p)")
        expected = (len(states), len(genders), len(years), len(self.grid))
        if data.shape != expected:
            raise DimensionMismatchError(
                f"panel data shape {data.shape} does not match labels {expected}"
            )
        if len(set(states)) != len(states) or len(set(genders)) != len(genders):
            raise LabelMismatchError("state and gender labels must be unique")
        if len(years) > 1 and np.any(np.diff(np.asarray(years, dtype=float)) <= 0):
            raise ValueError("years must be strictly increasing")
        if not np.all(np.isfinite(data)):
            raise ValueError("panel contains non-finite values")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "genders", genders)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "data", _frozen(data))

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def curve(self, s: int, g: int, t: int) -> Curve:
        return Curve(self.grid, self.data[s, g, t])

    def series(self, s: int, g: int) -> list:
        return [Curve(self.grid, row) for row in self.data[s, g]]

    def with_data(self, data: np.ndarray, years=None) -> "CurvePanel":
        return CurvePanel(
            self.grid, self.states, self.genders,
            self.years if years is None else years, data,
        )

    def select_years(self, start: int, stop: int) -> "CurvePanel":
        """Years by position, ``start`` inclusive and ``stop`` exclusive."""
        return self.with_data(self.data[:, :, start:stop], self.years[start:stop])

    def same_layout(self, other: "CurvePanel", check_years: bool = True) -> bool:
        return (
            self.grid == other.grid
            and self.states == other.states
            and self.genders == other.genders
            and (not check_years or self.years == other.years)
        )


def stack_curves(curves: Sequence[Curve]) -> tuple[np.ndarray, AgeGrid]:
    """Stack curves sharing one grid into a (n, p) array."""
    curves = list(curves)
    if not curves:
        raise EmptyCollectionError("empty collection of curves")
    grid = curves[0].grid
    for c in curves[1:]:
        if c.grid != grid:
            raise GridMismatchError("curves live on different grids")
    return np.vstack([c.values for c in curves]), grid


def as_series(series, grid: AgeGrid | None = None) -> tuple[np.ndarray, AgeGrid | None]:
    """Accept a list of Curves or a (T, p) array; return the array and its grid."""
    if isinstance(series, np.ndarray):
        arr = np.asarray(series, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if grid is not None and arr.shape[-1] != len(grid):
            raise GridMismatchError("series width does not match the grid")
        return arr, grid
    arr, g = stack_curves(series)
    if grid is not None and g != grid:
        raise GridMismatchError("series grid differs from the expected grid")
    return arr, g


def inner_product(f: Curve, g: Curve) -> float:
    """Quadrature inner product: ``sum_i f(u_i) g(u_i) w_i``."""
    if f.grid != g.grid:
        raise GridMismatchError("inner product of curves on different grids")
    return float(np.dot(f.values * g.values, f.grid.quad_weights))


def norm(f: Curve) -> float:
    return float(np.sqrt(max(inner_product(f, f), 0.0)))


def pointwise_median(curves: Sequence[Curve]) -> Curve:
    """Sample median at each grid point; midpoint of the central pair for even counts."""
    arr, grid = stack_curves(curves)
    return Curve(grid, np.median(arr, axis=0))


def pointwise_mean(curves: Sequence[Curve]) -> Curve:
    arr, grid = stack_curves(curves)
    return Curve(grid, np.mean(arr, axis=0))
