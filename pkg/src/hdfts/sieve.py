"""Sieve-bootstrap prediction intervals for functional time series.

For one population: forward and backward VARs are fitted to the dynamic FPCA
scores; forward paths give bootstrap future curves, backward recursions give
pseudo-series that are re-forecast with the point-forecast method.  The
pointwise spread of the resulting calibration errors, scaled by a multiplier
chosen to match the nominal in-sample coverage, gives a symmetric band around
the point forecast.  Deterministic effects are added back afterwards.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from hdfts.anova import PolishDecomposition, decompose, zero_effects
from hdfts.dfpca import EigenSystem, project_scores
from hdfts.errors import (
    DegenerateBootstrapError,
    GridMismatchError,
    SeriesTooShortError,
    SingularDesignError,
)
from hdfts.fda import AgeGrid, Curve, CurvePanel, as_series
from hdfts.forecast import (
    ForecastConfig,
    _horizon_years,
    batch_forecast,
    fit_basis,
    fit_population,
    parallel_map,
    resolve_threads,
)

logger = logging.getLogger(__name__)

DEFAULT_DELTA_GRID = tuple(round(0.1 + 0.05 * i, 2) for i in range(99))  # 0.10 .. 5.00
MAX_VAR_ORDER = 3


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 200
    w: int = 1
    var_order: int | None = None  # None: AICc over 1..3
    delta_grid: tuple = DEFAULT_DELTA_GRID
    nominal_levels: tuple = (0.80, 0.95)
    seed: int = 0

    def __post_init__(self):
        if self.B < 50:
            raise ValueError("B must be at least 50")
        if self.w < 1:
            raise ValueError("w must be >= 1")
        if self.var_order is not None and self.var_order < 1:
            raise ValueError("var_order must be >= 1")
        grid = np.asarray(self.delta_grid, dtype=float)
        if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("delta_grid must be positive and strictly increasing")
        for level in self.nominal_levels:
            if not 0 < level < 1:
                raise ValueError("nominal levels must lie in (0, 1)")
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in grid))
        object.__setattr__(self, "nominal_levels", tuple(float(x) for x in self.nominal_levels))


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (state, gender, origin, ...) key."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


# ---------------------------------------------------------------- VAR


@dataclass(frozen=True, eq=False)
class VarModel:
    order: int
    coefficients: np.ndarray  # (order, K, K); lag j+1 at index j
    intercept: np.ndarray  # (K,)
    residuals: np.ndarray  # (T - order, K), column-centered
    direction: Literal["forward", "backward"]

    @property
    def K(self) -> int:
        return self.intercept.shape[0]

    def step(self, lagged: np.ndarray, shocks: np.ndarray) -> np.ndarray:
        """One recursion: ``lagged`` is (..., order, K) with the nearest neighbour first."""
        out = self.intercept + shocks
        for j in range(self.order):
            out = out + lagged[..., j, :] @ self.coefficients[j].T
        return out


def _var_design(gamma: np.ndarray, order: int, direction: str, start: int = 0):
    T, K = gamma.shape
    if direction == "forward":
        targets = np.arange(max(order, start), T)
        lagged = [targets - j for j in range(1, order + 1)]
    elif direction == "backward":
        targets = np.arange(0, T - max(order, start))
        lagged = [targets + j for j in range(1, order + 1)]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    X = np.hstack([np.ones((targets.size, 1))] + [gamma[idx] for idx in lagged])
    return X, gamma[targets]


def fit_var(scores, order: int, direction: Literal["forward", "backward"] = "forward",
            _start: int = 0) -> VarModel:
    """Least-squares VAR(order) with intercept, forward or backward in time.

    ``order = 0`` gives an intercept-only model (used as a degenerate fallback).
    """
    gamma = np.asarray(scores, dtype=float)
    if gamma.ndim == 1:
        gamma = gamma[:, None]
    T, K = gamma.shape
    if order < 0:
        raise ValueError("order must be >= 0")
    if T < order * K + order + 2:
        raise SeriesTooShortError(f"VAR({order}) on {K} scores needs T >= {order * K + order + 2}")
    X, Y = _var_design(gamma, order, direction, _start)
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise SingularDesignError(
            f"rank-deficient VAR({order}) design (rank {rank} < {X.shape[1]}); use a lower order"
        )
    beta, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ beta
    resid = resid - resid.mean(axis=0)
    coefs = np.stack([beta[1 + j * K: 1 + (j + 1) * K].T for j in range(order)]) if order else \
        np.zeros((0, K, K))
    return VarModel(order, coefs, beta[0].copy(), resid, direction)


def select_var_order(scores, max_order: int = MAX_VAR_ORDER) -> int:
    """AICc choice of the VAR order over 1..max_order on a common sample."""
    gamma = np.asarray(scores, dtype=float)
    if gamma.ndim == 1:
        gamma = gamma[:, None]
    T, K = gamma.shape
    feasible = [p for p in range(1, max_order + 1) if T - max_order >= p * K + p + 2]
    if not feasible:
        raise SeriesTooShortError(f"series of length {T} too short for a VAR on {K} scores")
    start = max(feasible)
    best, best_score = None, math.inf
    for p in feasible:
        try:
            model = fit_var(gamma, p, "forward", _start=start)
        except SingularDesignError:
            continue
        n = model.residuals.shape[0]
        m = K * p + 1
        denom = n - m - K - 1
        if denom <= 0:
            continue
        sigma = model.residuals.T @ model.residuals / n
        sign, logdet = np.linalg.slogdet(sigma)
        logdet = logdet if sign > 0 else -700.0 * K
        score = n * logdet + n * K * (n + m) / denom
        if score < best_score - 1e-12:
            best, best_score = p, score
    if best is None:
        raise SingularDesignError("no VAR order between 1 and max_order could be fitted")
    return best


def _fit_var_pair(gamma: np.ndarray, order: int | None) -> tuple[VarModel, VarModel]:
    """Forward and backward VARs of a common order, degrading to lower orders if singular."""
    try:
        order = select_var_order(gamma) if order is None else order
    except (SingularDesignError, SeriesTooShortError):
        order = 1
    for p in range(order, -1, -1):
        try:
            return fit_var(gamma, p, "forward"), fit_var(gamma, p, "backward")
        except (SingularDesignError, SeriesTooShortError):
            logger.debug("VAR(%d) not identifiable, trying a lower order", p)
    raise SingularDesignError("no VAR could be fitted to the scores")


# ---------------------------------------------------------------- bootstrap


@dataclass(frozen=True, eq=False)
class SieveFit:
    """Everything the resampling steps need for one population."""

    x: np.ndarray  # (T, p) observed series
    basis: EigenSystem
    mean: np.ndarray  # (p,)
    scores: np.ndarray  # (T, K)
    remainders: np.ndarray  # (T, p) truncation remainders U_t
    forward: VarModel
    backward: VarModel


def fit_sieve(series, config: BootstrapConfig, forecast_config: ForecastConfig | None = None,
              grid: AgeGrid | None = None) -> SieveFit:
    forecast_config = forecast_config or ForecastConfig()
    x, g = as_series(series, grid)
    grid = g or grid
    if grid is None:
        raise GridMismatchError("a grid is required for array input")
    basis = fit_basis(x, grid, forecast_config)
    sm = project_scores(x, basis)
    mean = sm.mean_curve.values
    gamma = sm.scores
    remainders = x - mean - gamma @ basis.eigenfunctions[: basis.K]
    fwd, bwd = _fit_var_pair(gamma, config.var_order)
    return SieveFit(x, basis, mean, gamma, remainders, fwd, bwd)


def _resample(rng: np.random.Generator, pool: np.ndarray, size: tuple) -> np.ndarray:
    return pool[rng.integers(0, pool.shape[0], size=size)]


def _future_paths(fit: SieveFit, H: int, B: int, rng) -> np.ndarray:
    """Bootstrap future curves for horizons 1..H, shape (B, H, p)."""
    var = fit.forward
    K = fit.scores.shape[1]
    shocks = _resample(rng, var.residuals, (B, H))
    remainders = _resample(rng, fit.remainders - fit.remainders.mean(axis=0), (B, H))
    hist = np.broadcast_to(fit.scores, (B,) + fit.scores.shape)
    path = np.concatenate([hist, np.zeros((B, H, K))], axis=1)
    T = fit.scores.shape[0]
    for j in range(H):
        t = T + j
        lagged = path[:, [t - i for i in range(1, var.order + 1)], :] if var.order else \
            np.zeros((B, 0, K))
        path[:, t] = var.step(lagged, shocks[:, j])
    future = path[:, T:]
    phi = fit.basis.eigenfunctions[:K]
    return fit.mean + future @ phi + remainders


def bootstrap_future_paths(
    series, h: int, config: BootstrapConfig, forecast_config: ForecastConfig | None = None,
    rng: np.random.Generator | None = None, grid: AgeGrid | None = None,
) -> np.ndarray:
    """B bootstrap future curves at horizon h, shape (B, p)."""
    if h < 1:
        raise ValueError("horizon must be >= 1")
    fit = fit_sieve(series, config, forecast_config, grid)
    rng = rng or substream(config.seed)
    return _future_paths(fit, h, config.B, rng)[:, h - 1]


def _pseudo_series(fit: SieveFit, w: int, B: int, rng) -> np.ndarray:
    """Backward-generated pseudo-series, shape (B, T, p)."""
    T, K = fit.scores.shape
    var = fit.backward
    # the backward recursion needs `order` known successors, so the observed tail
    # is at least as long as the VAR order
    n_gen = T - min(T, max(w, var.order))
    shocks = _resample(rng, var.residuals, (B, n_gen))
    remainders = _resample(rng, fit.remainders - fit.remainders.mean(axis=0), (B, n_gen))
    gamma = np.empty((B, T, K))
    gamma[:, n_gen:] = fit.scores[n_gen:]
    for t in range(n_gen - 1, -1, -1):
        idx = [t + i for i in range(1, var.order + 1)]
        lagged = gamma[:, idx, :] if var.order else np.zeros((B, 0, K))
        gamma[:, t] = var.step(lagged, shocks[:, t])
    phi = fit.basis.eigenfunctions[:K]
    out = np.empty((B, T, fit.x.shape[1]))
    out[:, :n_gen] = fit.mean + gamma[:, :n_gen] @ phi + remainders
    out[:, n_gen:] = fit.x[n_gen:]
    return out


def generate_pseudo_series(
    series, config: BootstrapConfig, forecast_config: ForecastConfig | None = None,
    rng: np.random.Generator | None = None, grid: AgeGrid | None = None,
) -> np.ndarray:
    """B pseudo-series of the same length as ``series``, shape (B, T, p).

    The last ``w`` curves are the observed ones (observed scores plus observed
    remainders); earlier curves come from the backward VAR.
    """
    x, _ = as_series(series)
    if not 1 <= config.w <= x.shape[0]:
        raise ValueError("w must lie in 1..T")
    fit = fit_sieve(series, config, forecast_config, grid)
    rng = rng or substream(config.seed)
    return _pseudo_series(fit, config.w, config.B, rng)


def calibration_errors(
    series, H: int, config: BootstrapConfig, forecast_config: ForecastConfig | None = None,
    grid: AgeGrid | None = None, rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Calibration errors ``X*_{T+h} - Xhat*_{T+h|T}`` for h = 1..H, shape (B, H, p)."""
    forecast_config = forecast_config or ForecastConfig()
    x, g = as_series(series, grid)
    grid = g or grid
    rng = rng or substream(config.seed)
    fit = fit_sieve(x, config, forecast_config, grid)
    future = _future_paths(fit, H, config.B, rng)
    pseudo = _pseudo_series(fit, config.w, config.B, rng)
    predicted = batch_forecast(pseudo, grid.quad_weights, H, forecast_config)
    return future - predicted


def select_delta(
    omega: np.ndarray, level: float, delta_grid: Sequence[float] = DEFAULT_DELTA_GRID
) -> tuple[float, np.ndarray]:
    """Pick the band multiplier for calibration errors of shape (B, p).

    Coverage is pooled over replicates and grid points; the multiplier whose
    coverage is closest to ``level`` wins, ties going to the smaller value.
    """
    omega = np.asarray(omega, dtype=float)
    sd = omega.std(axis=0, ddof=1)
    if not np.any(sd > 0):
        raise DegenerateBootstrapError("calibration errors have zero spread at every grid point")
    ratio = np.abs(omega)
    best, best_gap = None, math.inf
    for delta in delta_grid:
        coverage = float(np.mean(ratio <= delta * sd))
        gap = abs(coverage - level)
        if gap < best_gap - 1e-15:
            best, best_gap = float(delta), gap
    return best, sd


def calibrate_delta(
    series, h: int, config: BootstrapConfig, level: float,
    forecast_config: ForecastConfig | None = None,
) -> tuple[float, Curve]:
    x, grid = as_series(series)
    omega = calibration_errors(series, h, config, forecast_config, grid)[:, h - 1]
    delta, sd = select_delta(omega, level, config.delta_grid)
    return delta, Curve(grid, sd)


# ---------------------------------------------------------------- panel intervals


@dataclass(frozen=True, eq=False)
class IntervalForecast:
    """Symmetric prediction band at one nominal level for horizons 1..H."""

    lower: CurvePanel
    upper: CurvePanel
    point: CurvePanel
    level: float
    delta: np.ndarray  # (S, G, H)
    sd_curve: np.ndarray  # (S, G, H, p)


def population_intervals(
    series, H: int, config: BootstrapConfig, forecast_config: ForecastConfig,
    grid: AgeGrid, rng: np.random.Generator,
) -> tuple[np.ndarray, dict]:
    """Point forecast (H, p) and, per level, (delta (H,), half-width (H, p))."""
    x, _ = as_series(series, grid)
    point = fit_population(x, forecast_config, grid).forecast(H)
    omega = calibration_errors(x, H, config, forecast_config, grid, rng)
    bands = {}
    for level in config.nominal_levels:
        deltas = np.empty(H)
        sds = np.empty((H, x.shape[1]))
        for j in range(H):
            try:
                deltas[j], sds[j] = select_delta(omega[:, j], level, config.delta_grid)
            except DegenerateBootstrapError:
                deltas[j], sds[j] = config.delta_grid[0], 0.0
        bands[level] = (deltas, sds)
    return point, bands


def interval_forecast(
    panel: CurvePanel,
    h: int,
    method: Literal["fmp", "fm", "independent"] = "fmp",
    config: BootstrapConfig | None = None,
    forecast_config: ForecastConfig | None = None,
    decomp: PolishDecomposition | None = None,
    stream_key: tuple = (),
) -> dict:
    """Prediction bands for horizons 1..h, one :class:`IntervalForecast` per level.

    The bootstrap runs on each population's residual series separately; the
    deterministic effects are added to the point forecast and both bounds.
    """
    config = config or BootstrapConfig()
    forecast_config = forecast_config or ForecastConfig()
    if h < 1:
        raise ValueError("horizon must be >= 1")
    if decomp is None:
        decomp = zero_effects(panel) if method == "independent" else \
            decompose(panel, method, forecast_config.max_iter, forecast_config.tol)
    resid = decomp.residuals
    S, G, _, p = resid.shape
    cells = [(s, g) for s in range(S) for g in range(G)]

    def run(cell):
        s, g = cell
        rng = substream(config.seed, *stream_key, s, g)
        return population_intervals(resid.data[s, g], h, config, forecast_config, resid.grid, rng)

    results = parallel_map(run, cells, resolve_threads(forecast_config.threads))
    surface = decomp.effects_array()[:, :, None, :]
    point = np.empty((S, G, h, p))
    for (s, g), (pt, _) in zip(cells, results):
        point[s, g] = pt
    years = _horizon_years(panel, h)
    point_panel = CurvePanel(panel.grid, panel.states, panel.genders, years, point + surface)
    out = {}
    for level in config.nominal_levels:
        delta = np.empty((S, G, h))
        sd = np.empty((S, G, h, p))
        for (s, g), (_, bands) in zip(cells, results):
            delta[s, g], sd[s, g] = bands[level]
        half = delta[..., None] * sd
        out[level] = IntervalForecast(
            lower=point_panel.with_data(point + surface - half),
            upper=point_panel.with_data(point + surface + half),
            point=point_panel,
            level=level,
            delta=delta,
            sd_curve=sd,
        )
    return out
