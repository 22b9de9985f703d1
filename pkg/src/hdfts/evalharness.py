"""Out-of-sample evaluation: rolling or expanding windows, point and interval scores.

Forecast origins are the last ``H`` training ends.  For horizon h the scored
targets are years ``T+h .. T+H`` of the evaluation period, each forecast from
the origin ``h`` years earlier, so ``RMSPE(h)`` pools ``H - h + 1`` curves.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from hdfts.anova import decompose, zero_effects
from hdfts.errors import DimensionMismatchError, DivisionByZeroError, HDFTSError, InvalidIntervalError
from hdfts.fda import CurvePanel, as_series
from hdfts.forecast import ForecastConfig, fit_joint, fit_population, parallel_map, resolve_threads
from hdfts.sieve import BootstrapConfig, population_intervals, substream

logger = logging.getLogger(__name__)

METHODS = ("fmp", "fm", "independent")
REPORT_HEADER = ("state", "gender", "method", "metric", "level", "horizon", "value")


def _pair(actual, other) -> tuple[np.ndarray, np.ndarray]:
    a, _ = as_series(actual) if not isinstance(actual, np.ndarray) else (np.atleast_2d(actual), None)
    b, _ = as_series(other) if not isinstance(other, np.ndarray) else (np.atleast_2d(other), None)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    return np.asarray(a, dtype=float), np.asarray(b, dtype=float)


def _relative_errors(actual, forecast) -> np.ndarray:
    a, f = _pair(actual, forecast)
    zero = np.argwhere(a == 0)
    if zero.size:
        raise DivisionByZeroError(f"actual value is zero at (curve, point) {tuple(zero[0])}")
    return (a - f) / a


def rmspe(actual, forecast) -> float:
    """Root mean squared percentage error, ``100 * sqrt(mean(((Y - Yhat) / Y)^2))``."""
    rel = _relative_errors(actual, forecast)
    return float(100.0 * math.sqrt(np.mean(rel**2)))


def mape(actual, forecast) -> float:
    """Mean absolute percentage error, ``100 * mean(|Y - Yhat| / |Y|)``."""
    rel = _relative_errors(actual, forecast)
    return float(100.0 * np.mean(np.abs(rel)))


def empirical_coverage(actual, lower, upper) -> float:
    """Share of cells inside the band; values on a bound count as covered."""
    a, lo = _pair(actual, lower)
    _, hi = _pair(actual, upper)
    outside = (a > hi).astype(float) + (a < lo).astype(float)
    return float(1.0 - outside.mean())


def cpd(empirical: float, nominal: float) -> float:
    return abs(empirical - nominal)


def interval_score(actual, lower, upper, alpha: float) -> float:
    """Mean interval score ``(ub - lb) + 2/alpha * exceedance`` over all cells."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    a, lo = _pair(actual, lower)
    _, hi = _pair(actual, upper)
    if np.any(lo > hi):
        raise InvalidIntervalError("lower bound exceeds upper bound")
    score = (hi - lo) + (2.0 / alpha) * (lo - a) * (a < lo) + (2.0 / alpha) * (a - hi) * (a > hi)
    return float(score.mean())


# ---------------------------------------------------------------- harness


@dataclass(frozen=True)
class WindowScheme:
    kind: Literal["rolling", "expanding"] = "rolling"
    train_size: int = 30
    horizon_max: int = 10

    def __post_init__(self):
        if self.kind not in ("rolling", "expanding"):
            raise ValueError(f"unknown window scheme {self.kind!r}")
        if self.horizon_max < 1:
            raise ValueError("horizon_max must be >= 1")
        if self.train_size < 4:
            raise ValueError("train_size must be >= 4")

    def window(self, end: int) -> tuple[int, int]:
        """Training slice ending (exclusive) at ``end``."""
        return (end - self.train_size if self.kind == "rolling" else 0), end


@dataclass(frozen=True)
class EvalConfig:
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    intervals: bool = True
    scale: Literal["log", "raw"] = "log"


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def add(self, state, gender, method, metric, level, horizon, value):
        self.rows.append(
            {"state": state, "gender": gender, "method": method, "metric": metric,
             "level": level, "horizon": horizon, "value": float(value)}
        )

    def values(self, **match) -> list[float]:
        return [r["value"] for r in self.rows if all(r[k] == v for k, v in match.items())]

    def value(self, **match) -> float:
        vals = self.values(**match)
        if len(vals) != 1:
            raise KeyError(f"{len(vals)} rows match {match}")
        return vals[0]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                level = "" if r["level"] is None else repr(float(r["level"]))
                w.writerow([r["state"], r["gender"], r["method"], r["metric"], level,
                            r["horizon"], repr(r["value"])])
        return path

    def write_failures(self, path) -> Path | None:
        if not self.failures:
            return None
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "origin", "state", "error"])
            w.writerows(self.failures)
        return path

    def summary(self) -> str:
        """Mean-over-horizon table per method and gender, averaged over states."""
        lines = [
            "RMSPE = 100*sqrt(mean(rel^2)), MAPE = 100*mean(|rel|), rel = (Y - Yhat)/Y;",
            "the x100 is applied outside the square root (conventional placement).",
            "",
        ]
        keys = sorted({(r["method"], r["gender"], r["metric"], r["level"]) for r in self.rows
                       if r["horizon"] == "mean"},
                      key=lambda k: (METHODS.index(k[0]) if k[0] in METHODS else 99, str(k[1]),
                                     k[2], -1 if k[3] is None else k[3]))
        lines.append(f"{'method':<12}{'gender':<8}{'metric':<16}{'level':>7}{'mean':>12}")
        for method, gender, metric, level in keys:
            vals = self.values(method=method, gender=gender, metric=metric, level=level,
                               horizon="mean")
            lv = "" if level is None else f"{level:.2f}"
            lines.append(f"{method:<12}{gender:<8}{metric:<16}{lv:>7}{np.mean(vals):>12.4f}")
        if self.failures:
            lines.append(f"\n{len(self.failures)} failed (method, origin, state) fits; see failures.csv")
        return "\n".join(lines)


def _state_forecasts(decomp, s, hmax, method, config: EvalConfig, stream_key):
    """Point forecasts (G, hmax, p) and per-level half-widths for one state."""
    resid = decomp.residuals
    grid = resid.grid
    G = resid.shape[1]
    if method == "independent":
        point = np.stack([fit_population(resid.data[s, g], config.forecast, grid).forecast(hmax)
                          for g in range(G)])
    else:
        point = fit_joint(list(resid.data[s]), config.forecast, grid).forecast(hmax)
    bands = {}
    if config.intervals:
        for g in range(G):
            rng = substream(config.bootstrap.seed, *stream_key, s, g)
            ipoint, levels = population_intervals(
                resid.data[s, g], hmax, config.bootstrap, config.forecast, grid, rng
            )
            for level, (delta, sd) in levels.items():
                bands.setdefault(level, np.zeros(point.shape))[g] = delta[:, None] * sd
            bands.setdefault("center", np.zeros(point.shape))[g] = ipoint
    return point, bands


def run_evaluation(
    panel: CurvePanel,
    scheme: WindowScheme,
    methods: Iterable[str] = METHODS,
    config: EvalConfig | None = None,
) -> EvalReport:
    config = config or EvalConfig()
    methods = [m for m in METHODS if m in set(methods)] + \
        sorted(set(methods) - set(METHODS))
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    S, G, N, p = panel.shape
    T, H = scheme.train_size, scheme.horizon_max
    if N < T + H:
        raise DimensionMismatchError(f"panel has {N} years, scheme needs T + H = {T + H}")
    threads = resolve_threads(config.forecast.threads)
    levels = config.bootstrap.nominal_levels if config.intervals else ()
    report = EvalReport()
    transform = (lambda v: 10.0**v) if config.scale == "raw" else (lambda v: v)

    for mi, method in enumerate(methods):
        # point[target][h] and bands[level][target][h] hold (S, G, p) arrays; NaN where failed
        point = np.full((H, H, S, G, p), np.nan)
        center = np.full((H, H, S, G, p), np.nan)
        half = {lv: np.full((H, H, S, G, p), np.nan) for lv in levels}
        for oi, end in enumerate(range(T, T + H)):
            start, stop = scheme.window(end)
            train = panel.select_years(start, stop)
            hmax = T + H - end
            try:
                decomp = zero_effects(train) if method == "independent" else \
                    decompose(train, method, config.forecast.max_iter, config.forecast.tol)
            except HDFTSError as exc:
                report.failures.append([method, oi, "*", repr(exc)])
                continue
            surface = decomp.effects_array()

            def run_state(s, decomp=decomp, hmax=hmax, oi=oi):
                try:
                    return _state_forecasts(decomp, s, hmax, method, config, (oi, mi))
                except (HDFTSError, np.linalg.LinAlgError, FloatingPointError) as exc:
                    return exc

            results = parallel_map(run_state, range(S), threads)
            for s, res in enumerate(results):
                if isinstance(res, Exception):
                    report.failures.append([method, oi, panel.states[s], repr(res)])
                    logger.warning("%s origin %d state %s failed: %s", method, oi, panel.states[s], res)
                    continue
                pt, bands = res
                for h in range(1, hmax + 1):
                    target = end - T + h - 1  # 0-based index into the evaluation period
                    point[target, h - 1, s] = pt[:, h - 1] + surface[s]
                    if bands:
                        center[target, h - 1, s] = bands["center"][:, h - 1] + surface[s]
                        for lv in levels:
                            half[lv][target, h - 1, s] = bands[lv][:, h - 1]

        actual_all = panel.data[:, :, T:T + H]  # (S, G, H, p)
        for s, state in enumerate(panel.states):
            for g, gender in enumerate(panel.genders):
                per_h = {"rmspe": [], "mape": []}
                per_lv = {(lv, m): [] for lv in levels for m in ("coverage", "cpd", "interval_score")}
                for h in range(1, H + 1):
                    targets = range(h - 1, H)
                    act = np.stack([actual_all[s, g, z] for z in targets])
                    fc = np.stack([point[z, h - 1, s, g] for z in targets])
                    if np.isnan(fc).any():
                        continue
                    for name, fn in (("rmspe", rmspe), ("mape", mape)):
                        v = fn(transform(act), transform(fc))
                        per_h[name].append(v)
                        report.add(state, gender, method, name, None, h, v)
                    for lv in levels:
                        c = np.stack([center[z, h - 1, s, g] for z in targets])
                        hw = np.stack([half[lv][z, h - 1, s, g] for z in targets])
                        if np.isnan(c).any() or np.isnan(hw).any():
                            continue
                        lo, hi = transform(c - hw), transform(c + hw)
                        cov = empirical_coverage(transform(act), lo, hi)
                        vals = {
                            "coverage": cov,
                            "cpd": cpd(cov, lv),
                            "interval_score": interval_score(transform(act), lo, hi, 1.0 - lv),
                        }
                        for m, v in vals.items():
                            per_lv[(lv, m)].append(v)
                            report.add(state, gender, method, m, lv, h, v)
                for name, vals in per_h.items():
                    if vals:
                        report.add(state, gender, method, name, None, "mean", np.mean(vals))
                for (lv, m), vals in per_lv.items():
                    if vals:
                        report.add(state, gender, method, m, lv, "mean", np.mean(vals))
    return report
