"""Reading rate tables into curve panels, log10 transform, and curve smoothing.

Two on-disk layouts are understood:

``hmd_1x1``
    Whitespace-delimited life-table rates, one file per state.  Lines before
    the ``Year Age Female Male Total`` header are skipped, ``.`` marks a
    missing rate and ``110+`` an open age group.
``csv_long``
    ``state,gender,year,age,rate`` with an empty ``rate`` for missing values.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal

import numpy as np

from hdfts.errors import ParseError, SchemaError, TooFewPointsError
from hdfts.fda import AgeGrid, Curve, CurvePanel

logger = logging.getLogger(__name__)

GENDERS = ("F", "M")
CSV_LONG_HEADER = ("state", "gender", "year", "age", "rate")
GCV_LAMBDAS = tuple(10.0 ** k for k in np.arange(-2.0, 4.01, 0.5))


@dataclass(frozen=True)
class RawRateTable:
    """Observed rates for one state and one year."""

    year: int
    rows: tuple  # (age, female_rate | None, male_rate | None)
    source_path: str = ""

    def __post_init__(self):
        ages = [r[0] for r in self.rows]
        if ages != sorted(set(ages)):
            raise SchemaError(f"ages not unique and sorted in {self.source_path} year {self.year}")
        for age, f, m in self.rows:
            for v in (f, m):
                if v is not None and v < 0:
                    raise SchemaError(
                        f"negative rate at age {age} in {self.source_path} year {self.year}"
                    )


@dataclass(frozen=True)
class SmoothingConfig:
    """Preprocessing options.

    ``lam=None`` selects the penalty per curve by generalized cross-validation
    over :data:`GCV_LAMBDAS`.
    """

    lam: float | None = None
    enabled: bool = False
    zero_rate_policy: Literal["floor", "missing"] = "floor"
    floor_eps: float = 1e-6
    missing_policy: Literal["interpolate", "fail"] = "interpolate"
    max_age: int = 100
    min_age: int = 0

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.zero_rate_policy not in ("floor", "missing"):
            raise ValueError(f"unknown zero_rate_policy {self.zero_rate_policy!r}")
        if self.zero_rate_policy == "floor" and not self.floor_eps > 0:
            raise ValueError("floor_eps must be positive")
        if self.missing_policy not in ("interpolate", "fail"):
            raise ValueError(f"unknown missing_policy {self.missing_policy!r}")
        if self.max_age <= self.min_age:
            raise ValueError("max_age must exceed min_age")


# ---------------------------------------------------------------- smoothing


@lru_cache(maxsize=32)
def _penalty_eigen(p: int) -> tuple[np.ndarray, np.ndarray]:
    d = np.diff(np.eye(p), n=2, axis=0)
    evals, evecs = np.linalg.eigh(d.T @ d)
    # the two-dimensional null space (constants and lines) must be passed through exactly
    evals = np.where(evals < 1e-10 * evals.max(), 0.0, evals)
    evals.setflags(write=False)
    evecs.setflags(write=False)
    return evals, evecs


def whittaker(y: np.ndarray, lam: float) -> np.ndarray:
    """Minimize ``||y - f||^2 + lam * ||D2 f||^2`` with second differences D2."""
    y = np.asarray(y, dtype=float)
    if lam == 0:
        return y.copy()
    evals, evecs = _penalty_eigen(y.shape[-1])
    return evecs @ ((evecs.T @ y) / (1.0 + lam * evals))


def gcv_lambda(y: np.ndarray, lambdas=GCV_LAMBDAS) -> float:
    evals, evecs = _penalty_eigen(y.shape[0])
    coef = evecs.T @ y
    p = y.shape[0]
    best, best_score = None, math.inf
    for lam in lambdas:
        shrink = 1.0 / (1.0 + lam * evals)
        resid = coef * (1.0 - shrink)
        rss = float(resid @ resid)
        dof = p - float(shrink.sum())
        score = p * rss / dof**2 if dof > 0 else math.inf
        if score < best_score:
            best, best_score = lam, score
    return float(best)


def smooth_curve(raw: Curve, config: SmoothingConfig) -> Curve:
    """Second-difference penalized least-squares smoothing of one curve."""
    if len(raw) < 4:
        raise TooFewPointsError("smoothing needs at least 4 grid points")
    lam = config.lam if config.lam is not None else gcv_lambda(raw.values)
    return Curve(raw.grid, whittaker(raw.values, lam))


def smooth_panel(panel: CurvePanel, config: SmoothingConfig) -> CurvePanel:
    if not config.enabled:
        return panel
    out = np.empty_like(panel.data)
    S, G, T, _ = panel.shape
    for s in range(S):
        for g in range(G):
            for t in range(T):
                out[s, g, t] = smooth_curve(panel.curve(s, g, t), config).values
    return panel.with_data(out)


# ---------------------------------------------------------------- parsing


def _parse_rate(token: str, path, lineno) -> float | None:
    if token in (".", "", "NA", "NaN", "nan"):
        return None
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"cannot parse rate {token!r}", path, lineno) from None
    if value < 0 or not math.isfinite(value):
        raise ParseError(f"invalid rate {token!r}", path, lineno)
    return value


def _parse_age(token: str, path, lineno) -> float:
    try:
        age = float(token.rstrip("+"))
    except ValueError:
        raise ParseError(f"cannot parse age {token!r}", path, lineno) from None
    if not math.isfinite(age):
        raise ParseError(f"invalid age {token!r}", path, lineno)
    return age


def read_hmd_1x1(path) -> list[RawRateTable]:
    """Parse one HMD-style ``Mx_1x1`` file into per-year tables."""
    path = Path(path)
    by_year: dict[int, list] = defaultdict(list)
    in_body = False
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if not in_body:
                if tokens[0] == "Year":
                    cols = [t.lower() for t in tokens]
                    if cols[:4] != ["year", "age", "female", "male"]:
                        raise SchemaError(f"{path}: unexpected header {tokens}")
                    in_body = True
                continue
            if len(tokens) < 4:
                raise ParseError("expected Year Age Female Male Total", path, lineno)
            try:
                year = int(tokens[0])
            except ValueError:
                raise ParseError(f"cannot parse year {tokens[0]!r}", path, lineno) from None
            age = _parse_age(tokens[1], path, lineno)
            female = _parse_rate(tokens[2], path, lineno)
            male = _parse_rate(tokens[3], path, lineno)
            by_year[year].append((age, female, male))
    if not in_body:
        raise SchemaError(f"{path}: no 'Year Age Female Male Total' header found")
    return [RawRateTable(y, tuple(by_year[y]), str(path)) for y in sorted(by_year)]


def read_csv_long(path) -> dict:
    """Return ``{state: {gender: {year: {age: rate | None}}}}``."""
    path = Path(path)
    out: dict = defaultdict(lambda: defaultdict(lambda: defaultdict(dict)))
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header[:5]) != CSV_LONG_HEADER:
            raise SchemaError(f"{path}: header must start with {','.join(CSV_LONG_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 5:
                raise ParseError("expected 5 fields", path, lineno)
            state, gender = row[0], row[1]
            try:
                year = int(row[2])
            except ValueError:
                raise ParseError(f"cannot parse year {row[2]!r}", path, lineno) from None
            age = _parse_age(row[3], path, lineno)
            rate = row[4].strip()
            if rate == "":
                value = None
            else:
                try:
                    value = float(rate)
                except ValueError:
                    raise ParseError(f"cannot parse rate {rate!r}", path, lineno) from None
            cell = out[state][gender][year]
            if age in cell:
                raise ParseError(f"duplicate age {age}", path, lineno)
            cell[age] = value
    return out


# ---------------------------------------------------------------- assembly


def _truncate(ages: np.ndarray, rates: np.ndarray, min_age: int, max_age: int):
    """Drop ages below ``min_age`` and fold ages above ``max_age`` into the last group.

    Only rates are available, so the open group is the plain average of the
    non-missing rates at ages ``>= max_age``.
    """
    keep = ages >= min_age
    ages, rates = ages[keep], rates[keep]
    if ages.size == 0 or ages.max() < max_age:
        return ages, rates
    tail = ages >= max_age
    tail_rates = rates[tail]
    tail_rates = tail_rates[~np.isnan(tail_rates)]
    open_rate = tail_rates.mean() if tail_rates.size else np.nan
    ages = np.append(ages[~tail], max_age)
    rates = np.append(rates[~tail], open_rate)
    return ages, rates


def _to_log10(rates: np.ndarray, config: SmoothingConfig, where: str) -> np.ndarray:
    rates = np.asarray(rates, dtype=float).copy()
    if config.zero_rate_policy == "floor":
        rates = np.where(rates == 0, config.floor_eps, rates)
    else:
        rates = np.where(rates == 0, np.nan, rates)
    values = np.log10(rates)
    return _fill_missing(values, config, where)


def _fill_missing(values: np.ndarray, config: SmoothingConfig, where: str) -> np.ndarray:
    missing = np.isnan(values)
    if not missing.any():
        return values
    if config.missing_policy == "fail":
        raise SchemaError(f"missing rates in {where}")
    if missing.all():
        raise SchemaError(f"no observed rates in {where}")
    idx = np.arange(values.shape[0])
    values = values.copy()
    values[missing] = np.interp(idx[missing], idx[~missing], values[~missing])
    return values


def _assemble(cells: dict, config: SmoothingConfig, transform: str, source: str) -> CurvePanel:
    """Build a panel from ``{state: {gender: {year: (ages, rates)}}}``."""
    states = sorted(cells)
    if not states:
        raise SchemaError(f"no data found in {source}")
    genders = sorted({g for s in states for g in cells[s]}, key=_gender_key)
    years = sorted({y for s in states for g in cells[s] for y in cells[s][g]})
    common_ages = None
    for s in states:
        if set(cells[s]) != set(genders):
            raise SchemaError(f"state {s!r} lacks some genders of {genders}")
        for g in genders:
            if sorted(cells[s][g]) != years:
                raise SchemaError(f"state {s!r} gender {g!r} has a different year range")
            for y in years:
                ages = cells[s][g][y][0]
                if common_ages is None:
                    common_ages = ages
                elif not np.array_equal(ages, common_ages):
                    raise SchemaError(
                        f"state {s!r} gender {g!r} year {y} has an inconsistent age range"
                    )
    grid = AgeGrid(np.asarray(common_ages, dtype=float))
    data = np.empty((len(states), len(genders), len(years), len(grid)))
    for i, s in enumerate(states):
        for j, g in enumerate(genders):
            for k, y in enumerate(years):
                rates = cells[s][g][y][1]
                where = f"state {s} gender {g} year {y}"
                if transform == "log10":
                    data[i, j, k] = _to_log10(rates, config, where)
                else:
                    data[i, j, k] = _fill_missing(np.asarray(rates, dtype=float), config, where)
    panel = CurvePanel(grid, tuple(states), tuple(genders), tuple(years), data)
    return smooth_panel(panel, config)


def _gender_key(g: str):
    return (GENDERS.index(g), g) if g in GENDERS else (len(GENDERS), g)


def load_panel(
    source,
    schema: Literal["hmd_1x1", "csv_long"] = "hmd_1x1",
    config: SmoothingConfig | None = None,
    transform: Literal["log10", "none"] = "log10",
) -> CurvePanel:
    """Load a directory (or a single file) of rate tables into a :class:`CurvePanel`.

    For ``hmd_1x1`` each file is one state named after the file stem.  With
    ``transform="none"`` the ``rate`` values are taken as already on the
    modeling scale, which is how :func:`export_panel` output is read back.
    """
    config = config or SmoothingConfig()
    if transform not in ("log10", "none"):
        raise ValueError(f"unknown transform {transform!r}")
    source = Path(source)
    if source.is_dir():
        pattern = "*.csv" if schema == "csv_long" else "*.txt"
        files = sorted(p for p in source.glob(pattern) if p.is_file())
        if not files:
            raise SchemaError(f"{source}: no {pattern} files")
    elif source.is_file():
        files = [source]
    else:
        raise FileNotFoundError(source)

    cells: dict = defaultdict(lambda: defaultdict(dict))
    if schema == "hmd_1x1":
        for path in files:
            state = path.stem
            if state.endswith(".Mx_1x1"):
                state = state[: -len(".Mx_1x1")]
            for table in read_hmd_1x1(path):
                ages = np.array([r[0] for r in table.rows], dtype=float)
                for gi, g in enumerate(GENDERS):
                    rates = np.array(
                        [np.nan if r[gi + 1] is None else r[gi + 1] for r in table.rows]
                    )
                    cells[state][g][table.year] = _truncate(
                        ages, rates, config.min_age, config.max_age
                    )
    elif schema == "csv_long":
        for path in files:
            parsed = read_csv_long(path)
            for state, by_g in parsed.items():
                for g, by_y in by_g.items():
                    for y, by_age in by_y.items():
                        if y in cells[state][g]:
                            raise SchemaError(f"duplicate rows for {state}/{g}/{y}")
                        ages = np.array(sorted(by_age), dtype=float)
                        rates = np.array(
                            [np.nan if by_age[a] is None else by_age[a] for a in sorted(by_age)]
                        )
                        if transform == "log10":
                            cells[state][g][y] = _truncate(
                                ages, rates, config.min_age, config.max_age
                            )
                        else:
                            cells[state][g][y] = (ages, rates)
    else:
        raise SchemaError(f"unknown schema {schema!r}")
    logger.info("loaded %d files from %s", len(files), source)
    return _assemble(cells, config, transform, str(source))


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_age(a: float) -> str:
    return str(int(a)) if float(a).is_integer() else repr(float(a))


def export_panel(panel: CurvePanel, path, extra: dict | None = None) -> Path:
    """Write a panel as csv_long in (state, gender, year, age) order.

    Values are written with round-trip float formatting so that
    ``load_panel(path, "csv_long", transform="none")`` is bit-exact.
    ``extra`` adds constant leading columns, e.g. ``{"horizon": 1}``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = extra or {}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(CSV_LONG_HEADER) + list(extra))
        ages = [_fmt_age(a) for a in panel.grid.points]
        tail = [str(v) for v in extra.values()]
        for i, s in enumerate(panel.states):
            for j, g in enumerate(panel.genders):
                for k, y in enumerate(panel.years):
                    row = panel.data[i, j, k]
                    for a, v in zip(ages, row):
                        writer.writerow([s, g, y, a, _fmt(v)] + tail)
    return path
