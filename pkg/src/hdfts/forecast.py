"""Point forecasts of functional residuals through forecast principal component scores.

For one state the populations (genders) are stacked: each population has its
own long-run eigenfunctions, the stacked basis is block diagonal, and every
score column is forecast with a univariate model.  The deterministic effects
of the decomposition are then added back.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from hdfts.anova import PolishDecomposition, apply_effects, decompose, zero_effects
from hdfts.dfpca import (
    EigenSystem,
    ScoreMatrix,
    eigen_decompose,
    project_scores,
    select_k_array,
    weighted_eigh,
)
from hdfts.errors import DimensionMismatchError, GridMismatchError, SeriesTooShortError
from hdfts.fda import AgeGrid, Curve, CurvePanel, as_series
from hdfts.longrun import KernelSpec, long_run_cov, long_run_cov_array, sample_cov

logger = logging.getLogger(__name__)

ScoreModelName = Literal["rwd", "ar_p", "mean"]
MAX_AR_ORDER = 5


@dataclass(frozen=True)
class ForecastConfig:
    score_model: ScoreModelName = "rwd"
    ar_order: int | None = None  # None: chosen by AICc over 0..5
    variance_threshold: float = 0.95
    kernel: KernelSpec = field(default_factory=KernelSpec)
    covariance: Literal["long_run", "lag0"] = "long_run"
    harmonize_k: bool = True
    max_iter: int = 50
    tol: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        if self.score_model not in ("rwd", "ar_p", "mean"):
            raise ValueError(f"unknown score model {self.score_model!r}")
        if self.covariance not in ("long_run", "lag0"):
            raise ValueError(f"unknown covariance {self.covariance!r}")
        if not 0 < self.variance_threshold <= 1:
            raise ValueError("variance_threshold must lie in (0, 1]")
        if self.ar_order is not None and not 0 <= self.ar_order <= MAX_AR_ORDER:
            raise ValueError(f"ar_order must lie in 0..{MAX_AR_ORDER}")


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        threads = int(os.environ.get("HDFTS_THREADS", "1") or 1)
    return max(1, threads)


def parallel_map(fn, items: Sequence, threads: int = 1) -> list:
    """Ordered map; results never depend on the thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- score models


@dataclass(frozen=True)
class ScoreModel:
    """A fitted univariate model for one score series."""

    model: ScoreModelName
    params: dict
    history: np.ndarray

    def predict(self, h: int) -> np.ndarray:
        """Forecasts for horizons 1..h."""
        if h < 1:
            raise ValueError("horizon must be >= 1")
        y = self.history
        steps = np.arange(1, h + 1, dtype=float)
        if self.model == "rwd":
            return y[-1] + steps * self.params["drift"]
        if self.model == "mean":
            return np.full(h, self.params["mean"])
        coef = self.params["coef"]
        c = self.params["intercept"]
        order = coef.shape[0]
        if order == 0:
            return np.full(h, c)
        buf = list(y[-order:])
        out = np.empty(h)
        for i in range(h):
            nxt = c + float(np.dot(coef, buf[::-1][:order]))
            out[i] = nxt
            buf.append(nxt)
        return out


def _ar_design(y: np.ndarray, order: int, start: int):
    rows = np.arange(start, y.shape[0])
    X = np.ones((rows.size, order + 1))
    for j in range(1, order + 1):
        X[:, j] = y[rows - j]
    return X, y[rows]


def _fit_ar(y: np.ndarray, order: int, start: int | None = None):
    start = order if start is None else start
    X, target = _ar_design(y, order, start)
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ beta
    return beta, resid


def _aicc(resid: np.ndarray, n_params: int) -> float:
    n = resid.shape[0]
    sigma2 = max(float(resid @ resid) / n, 1e-300)
    k = n_params
    if n - k - 1 <= 0:
        return math.inf
    return n * math.log(sigma2) + 2 * k + 2 * k * (k + 1) / (n - k - 1)


def select_ar_order(y: np.ndarray, max_order: int = MAX_AR_ORDER) -> int:
    """AICc choice over orders 0..max_order on a common estimation sample."""
    T = y.shape[0]
    max_order = min(max_order, max(0, (T - 4) // 2))
    best, best_score = 0, math.inf
    for order in range(max_order + 1):
        _, resid = _fit_ar(y, order, start=max_order)
        score = _aicc(resid, order + 1)
        if score < best_score - 1e-12:
            best, best_score = order, score
    return best


def fit_score_model(y, model: ScoreModelName = "rwd", ar_order: int | None = None) -> ScoreModel:
    y = np.asarray(y, dtype=float).ravel()
    T = y.shape[0]
    if model == "rwd":
        if T < 3:
            raise SeriesTooShortError(f"random walk with drift needs T >= 3, got {T}")
        return ScoreModel("rwd", {"drift": (y[-1] - y[0]) / (T - 1)}, y)
    if model == "mean":
        if T < 1:
            raise SeriesTooShortError("empty score series")
        return ScoreModel("mean", {"mean": float(y.mean())}, y)
    if model == "ar_p":
        order = select_ar_order(y) if ar_order is None else ar_order
        if T < order + 2:
            raise SeriesTooShortError(f"AR({order}) needs T >= {order + 2}, got {T}")
        beta, _ = _fit_ar(y, order)
        return ScoreModel(
            "ar_p", {"intercept": float(beta[0]), "coef": beta[1:].copy(), "order": order}, y
        )
    raise ValueError(f"unknown score model {model!r}")


def forecast_score_series(
    scores, h: int, model: ScoreModelName = "rwd", ar_order: int | None = None
) -> np.ndarray:
    """Forecasts of one score series for horizons 1..h."""
    return fit_score_model(scores, model, ar_order).predict(h)


# ---------------------------------------------------------------- per-population fits


@dataclass(frozen=True, eq=False)
class PopulationFit:
    basis: EigenSystem
    scores: ScoreMatrix
    models: tuple

    def forecast(self, h: int) -> np.ndarray:
        """Forecast curves for horizons 1..h as an (h, p) array."""
        K = self.scores.scores.shape[1]
        fc = np.vstack([m.predict(h) for m in self.models]).T if K else np.zeros((h, 0))
        return self.scores.mean_curve.values + fc @ self.basis.eigenfunctions[:K]


def fit_basis(x: np.ndarray, grid: AgeGrid, config: ForecastConfig) -> EigenSystem:
    T = x.shape[0]
    if T < 4:
        raise SeriesTooShortError(f"FPCA forecasting needs T >= 4 curves, got {T}")
    cov = long_run_cov(x, config.kernel) if config.covariance == "long_run" else sample_cov(x)
    return eigen_decompose(cov, grid, config.variance_threshold)


def fit_population(
    series, config: ForecastConfig, grid: AgeGrid | None = None, K: int | None = None,
    basis: EigenSystem | None = None,
) -> PopulationFit:
    x, g = as_series(series, grid)
    grid = g or grid
    if grid is None:
        raise GridMismatchError("a grid is required for array input")
    basis = basis or fit_basis(x, grid, config)
    if K is not None:
        basis = basis.truncated(K)
    scores = project_scores(x, basis)
    models = tuple(
        fit_score_model(scores.scores[:, k], config.score_model, config.ar_order)
        for k in range(basis.K)
    )
    return PopulationFit(basis, scores, models)


def population_forecast(series, h: int, config: ForecastConfig, grid=None, K=None) -> np.ndarray:
    """Forecast curves of a single population for horizons 1..h, shape (h, p)."""
    return fit_population(series, config, grid, K).forecast(h)


# ---------------------------------------------------------------- stacked populations


@dataclass(frozen=True, eq=False)
class StackedBasis:
    """Block-diagonal arrangement of per-population eigenfunctions.

    ``phi[g, j]`` is the j-th column of row g; columns ``g*K .. g*K+K-1`` carry
    population g's eigenfunctions and every other entry of row g is zero.
    """

    phi: np.ndarray  # (G, G*K, p)
    K: int
    state: object = None

    def evaluate(self, gamma: np.ndarray) -> np.ndarray:
        """``Phi(u) Gamma`` for a stacked score vector of length G*K, shape (G, p)."""
        return np.einsum("gjp,j->gp", self.phi, gamma)


@dataclass(frozen=True, eq=False)
class ScoreForecast:
    point: np.ndarray  # (G*K,)
    horizon: int
    model: ScoreModelName
    fitted_params: tuple


@dataclass(frozen=True, eq=False)
class JointFit:
    fits: tuple  # one PopulationFit per population
    stacked: StackedBasis

    @property
    def K(self) -> int:
        return self.stacked.K

    def score_forecast(self, h: int) -> ScoreForecast:
        gamma = np.concatenate([np.array([m.predict(h)[-1] for m in f.models]) for f in self.fits])
        params = tuple(m.params for f in self.fits for m in f.models)
        return ScoreForecast(gamma, h, self.fits[0].models[0].model, params)

    def forecast(self, h: int) -> np.ndarray:
        """Forecast curves for horizons 1..h, shape (G, h, p)."""
        return np.stack([f.forecast(h) for f in self.fits])


def fit_joint(populations: Sequence, config: ForecastConfig, grid: AgeGrid | None = None,
              state=None) -> JointFit:
    arrays = [as_series(pop, grid) for pop in populations]
    known = [g for _, g in arrays if g is not None]
    if any(g != known[0] for g in known):
        raise GridMismatchError("populations live on different grids")
    grid = grid or (known[0] if known else None)
    if grid is None:
        raise GridMismatchError("a grid is required for array input")
    lengths = {x.shape for x, _ in arrays}
    if len(lengths) != 1:
        raise DimensionMismatchError("populations must share grid and series length")
    bases = [fit_basis(x, grid, config) for x, _ in arrays]
    if config.harmonize_k:
        K = max(b.K for b in bases)
        bases = [b.truncated(K) for b in bases]
    # the block layout needs one K; with harmonize_k off the widest block sets it
    K = max(b.K for b in bases)
    fits = tuple(fit_population(x, config, grid, basis=b) for (x, _), b in zip(arrays, bases))
    G, p = len(fits), len(grid)
    phi = np.zeros((G, G * K, p))
    for g, f in enumerate(fits):
        k = f.basis.K
        phi[g, g * K: g * K + k] = f.basis.eigenfunctions[:k]
    return JointFit(fits, StackedBasis(phi, K, state))


def joint_point_forecast(
    residuals_F, residuals_M, h: int, config: ForecastConfig | None = None,
    grid: AgeGrid | None = None,
) -> tuple[Curve, Curve]:
    """h-step forecasts of the female and male residual curves of one state.

    ``grid`` is only needed when the residuals are passed as arrays.
    """
    config = config or ForecastConfig()
    if h < 1:
        raise ValueError("horizon must be >= 1")
    xf, gf = as_series(residuals_F, grid)
    xm, gm = as_series(residuals_M, grid)
    gf, gm = gf or grid, gm or grid
    if gf != gm:
        raise GridMismatchError("female and male series use different grids")
    if xf.shape != xm.shape:
        raise DimensionMismatchError("female and male series must have the same length")
    fit = fit_joint([xf, xm], config, gf)
    fc = fit.forecast(h)[:, -1]
    return Curve(gf, fc[0]), Curve(gf, fc[1])


# ---------------------------------------------------------------- panel pipeline


def _horizon_years(panel: CurvePanel, h: int) -> tuple:
    last = panel.years[-1]
    try:
        return tuple(int(last) + k for k in range(1, h + 1))
    except (TypeError, ValueError):
        return tuple(f"{last}+{k}" for k in range(1, h + 1))


def residual_forecasts(
    decomp: PolishDecomposition, h: int, config: ForecastConfig, joint: bool = True
) -> np.ndarray:
    """Forecast the residual panel of a decomposition: (S, G, h, p)."""
    resid = decomp.residuals
    grid = resid.grid
    S, G, _, _ = resid.shape

    def one_state(s):
        if joint:
            return fit_joint(list(resid.data[s]), config, grid, resid.states[s]).forecast(h)
        return np.stack([population_forecast(resid.data[s, g], h, config, grid) for g in range(G)])

    return np.stack(parallel_map(one_state, range(S), resolve_threads(config.threads)))


def pipeline_point_forecast(
    panel: CurvePanel,
    h: int,
    method: Literal["fmp", "fm", "independent"] = "fmp",
    config: ForecastConfig | None = None,
    decomp: PolishDecomposition | None = None,
) -> CurvePanel:
    """Forecast panel for horizons 1..h (years labelled after the last observed year)."""
    config = config or ForecastConfig()
    if h < 1:
        raise ValueError("horizon must be >= 1")
    if method == "independent":
        decomp = zero_effects(panel)
        fc = residual_forecasts(decomp, h, config, joint=False)
    elif method in ("fmp", "fm"):
        decomp = decomp or decompose(panel, method, config.max_iter, config.tol)
        fc = residual_forecasts(decomp, h, config, joint=True)
    else:
        raise ValueError(f"unknown method {method!r}")
    out = CurvePanel(panel.grid, panel.states, panel.genders, _horizon_years(panel, h), fc)
    return apply_effects(decomp, out)


# ---------------------------------------------------------------- batched forecasting


def batch_forecast(x: np.ndarray, weights: np.ndarray, h: int, config: ForecastConfig) -> np.ndarray:
    """Single-population forecasts for a stack of series.

    ``x`` has shape (B, T, p); the result has shape (B, h, p).  Each series is
    handled exactly as :func:`population_forecast` would, vectorized where the
    score model allows it.
    """
    B, T, p = x.shape
    if T < 4:
        raise SeriesTooShortError(f"FPCA forecasting needs T >= 4 curves, got {T}")
    mean = x.mean(axis=1)
    if config.covariance == "long_run":
        b = config.kernel.resolve(T)
        C, _ = long_run_cov_array(x, b, config.kernel.family)
    else:
        z = x - mean[:, None, :]
        C = np.einsum("btu,btv->buv", z, z) / T
    evals, phi = weighted_eigh(C, weights)
    k_max = max(1, min(T - 1, p))
    K = np.minimum(select_k_array(evals, config.variance_threshold), k_max)
    kk = int(K.max())
    phi = phi[:, :kk, :]
    scores = np.einsum("btp,bkp->btk", (x - mean[:, None, :]) * weights, phi)
    mask = (np.arange(kk)[None, :] < K[:, None]).astype(float)  # (B, kk)
    steps = np.arange(1, h + 1, dtype=float)
    if config.score_model == "rwd":
        if T < 3:
            raise SeriesTooShortError("random walk with drift needs T >= 3")
        drift = (scores[:, -1] - scores[:, 0]) / (T - 1)
        fc = scores[:, -1][:, None, :] + steps[None, :, None] * drift[:, None, :]
    elif config.score_model == "mean":
        fc = np.repeat(scores.mean(axis=1)[:, None, :], h, axis=1)
    else:
        fc = np.empty((B, h, kk))
        for i in range(B):
            for k in range(int(K[i])):
                fc[i, :, k] = forecast_score_series(scores[i, :, k], h, "ar_p", config.ar_order)
            fc[i, :, int(K[i]):] = 0.0
    fc = fc * mask[:, None, :]
    return mean[:, None, :] + np.einsum("bhk,bkp->bhp", fc, phi)
