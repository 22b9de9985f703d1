"""Two-way functional ANOVA of a curve panel: median polish and means.

The panel is viewed as an S x G table (states by genders) whose cells hold the
T yearly curves as replicates.  Both fits return grand, row and column effect
curves plus residuals such that ``grand + row[s] + col[g] + resid[s, g, t]``
reproduces the input exactly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from hdfts.errors import DegenerateDesignError, LabelMismatchError
from hdfts.fda import AgeGrid, Curve, CurvePanel
from hdfts.ingest import _fmt, _fmt_age, export_panel

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PolishDecomposition:
    grand: Curve
    row_effects: tuple  # S Curves
    col_effects: tuple  # G Curves
    residuals: CurvePanel
    method: Literal["median_polish", "means"]
    iterations: int
    converged: bool

    @property
    def grid(self) -> AgeGrid:
        return self.grand.grid

    def effects_array(self) -> np.ndarray:
        """Deterministic surface ``grand + row[s] + col[g]`` as an (S, G, p) array."""
        rows = np.vstack([c.values for c in self.row_effects])
        cols = np.vstack([c.values for c in self.col_effects])
        return self.grand.values[None, None, :] + rows[:, None, :] + cols[None, :, :]

    def fitted(self) -> CurvePanel:
        """Input panel rebuilt from the components."""
        return apply_effects(self, self.residuals)


def _check_design(panel: CurvePanel) -> None:
    S, G, T, _ = panel.shape
    if S < 2 or G < 2:
        raise DegenerateDesignError(f"two-way decomposition needs S >= 2 and G >= 2, got {S}x{G}")
    if T < 1:
        raise DegenerateDesignError("panel has no years")


def _build(panel, grand, rows, cols, resid, method, iterations, converged):
    grid = panel.grid
    return PolishDecomposition(
        grand=Curve(grid, grand),
        row_effects=tuple(Curve(grid, r) for r in rows),
        col_effects=tuple(Curve(grid, c) for c in cols),
        residuals=panel.with_data(resid),
        method=method,
        iterations=iterations,
        converged=converged,
    )


def polish_array(data: np.ndarray, max_iter: int = 50, tol: float = 1e-8, debug: bool = False):
    """Median polish of an (S, G, T, p) array; the engine behind :func:`median_polish`.

    Works for any p >= 1.  Returns ``(grand, rows, cols, resid, iterations, converged)``
    with the residuals recomputed so that the reconstruction identity is exact.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 4:
        raise ValueError("data must have shape (S, G, T, p)")
    S, G, T, p = data.shape
    if S < 2 or G < 2 or T < 1:
        raise DegenerateDesignError(f"median polish needs S >= 2, G >= 2, T >= 1; got {S}, {G}, {T}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    resid = data.copy()
    grand = np.zeros(p)
    rows = np.zeros((S, p))
    cols = np.zeros((G, p))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rdelta = np.median(resid.reshape(S, G * T, p), axis=1)
        resid -= rdelta[:, None, None, :]
        rows += rdelta
        shift = np.median(cols, axis=0)
        cols -= shift
        grand += shift

        cdelta = np.median(resid.transpose(1, 0, 2, 3).reshape(G, S * T, p), axis=1)
        resid -= cdelta[None, :, None, :]
        cols += cdelta
        shift = np.median(rows, axis=0)
        rows -= shift
        grand += shift

        if debug:
            rebuilt = grand + rows[:, None, None, :] + cols[None, :, None, :] + resid
            assert np.max(np.abs(rebuilt - data)) <= 1e-9 * max(1.0, np.max(np.abs(data)))

        adjustment = max(np.max(np.abs(rdelta)), np.max(np.abs(cdelta)))
        if adjustment < tol:
            converged = True
            break
    if not converged:
        logger.warning("median polish did not converge in %d iterations", max_iter)
    resid = data - (grand + rows[:, None, None, :] + cols[None, :, None, :])
    return grand, rows, cols, resid, it, converged


def median_polish(
    panel: CurvePanel, max_iter: int = 50, tol: float = 1e-8, debug: bool = False
) -> PolishDecomposition:
    """Functional median polish with years as within-cell replicates.

    Each iteration sweeps pointwise medians out of the rows (states, median
    over genders and years) and then out of the columns (genders, median over
    states and years), re-centering the opposite effect into the grand effect
    after each sweep.  Iteration stops once the largest absolute row or column
    adjustment over all grid points is below ``tol``.  Non-convergence within
    ``max_iter`` is reported through ``converged``, not raised.
    """
    _check_design(panel)
    grand, rows, cols, resid, it, converged = polish_array(panel.data, max_iter, tol, debug)
    return _build(panel, grand, rows, cols, resid, "median_polish", it, converged)


def mean_anova(panel: CurvePanel) -> PolishDecomposition:
    """Single-pass two-way ANOVA by means."""
    _check_design(panel)
    data = panel.data
    grand = data.mean(axis=(0, 1, 2))
    rows = data.mean(axis=(1, 2)) - grand
    cols = data.mean(axis=(0, 2)) - grand
    resid = data - (grand + rows[:, None, None, :] + cols[None, :, None, :])
    return _build(panel, grand, rows, cols, resid, "means", 1, True)


def decompose(panel: CurvePanel, method: str, max_iter: int = 50, tol: float = 1e-8):
    if method in ("fmp", "median_polish"):
        return median_polish(panel, max_iter=max_iter, tol=tol)
    if method in ("fm", "means"):
        return mean_anova(panel)
    raise ValueError(f"unknown decomposition method {method!r}")


def apply_effects(decomp: PolishDecomposition, residual_forecast: CurvePanel) -> CurvePanel:
    """Add ``grand + row[s] + col[g]`` to every curve of ``residual_forecast``."""
    ref = decomp.residuals
    if (
        residual_forecast.grid != ref.grid
        or residual_forecast.states != ref.states
        or residual_forecast.genders != ref.genders
    ):
        raise LabelMismatchError("forecast panel does not match the decomposition layout")
    surface = decomp.effects_array()
    return residual_forecast.with_data(residual_forecast.data + surface[:, :, None, :])


def zero_effects(panel: CurvePanel) -> PolishDecomposition:
    """Trivial decomposition that keeps every curve as residual."""
    S, G, _, p = panel.shape
    return _build(
        panel, np.zeros(p), np.zeros((S, p)), np.zeros((G, p)),
        np.array(panel.data), "means", 0, True,
    )


def export_decomposition(decomp: PolishDecomposition, outdir) -> list[Path]:
    """Write grand.csv, row_effects.csv, col_effects.csv and residuals.csv."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ages = [_fmt_age(a) for a in decomp.grid.points]
    panel = decomp.residuals
    written = []

    def write(name, header, rows):
        path = outdir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        written.append(path)

    write("grand.csv", ["age", "value"],
          ([a, _fmt(v)] for a, v in zip(ages, decomp.grand.values)))
    write("row_effects.csv", ["state", "age", "value"],
          ([s, a, _fmt(v)] for s, c in zip(panel.states, decomp.row_effects)
           for a, v in zip(ages, c.values)))
    write("col_effects.csv", ["gender", "age", "value"],
          ([g, a, _fmt(v)] for g, c in zip(panel.genders, decomp.col_effects)
           for a, v in zip(ages, c.values)))
    written.append(export_panel(panel, outdir / "residuals.csv"))
    return written
