"""Run configuration: one TOML document with a section per module.

Example::

    [data]
    directory = "data/usa"
    schema = "hmd_1x1"

    [forecast]
    score_model = "rwd"

    [bootstrap]
    B = 200
    levels = [0.8, 0.95]

    [run]
    methods = ["fmp", "fm"]
    horizon = 10
    seed = 1

Unknown sections or keys raise :class:`~hdfts.errors.ConfigError`.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from hdfts.errors import ConfigError
from hdfts.evalharness import METHODS, EvalConfig, WindowScheme
from hdfts.forecast import ForecastConfig
from hdfts.ingest import SmoothingConfig
from hdfts.longrun import KernelSpec
from hdfts.sieve import DEFAULT_DELTA_GRID, BootstrapConfig
from hdfts.synthgen import SynthSpec


@dataclass(frozen=True)
class RunConfig:
    data_dir: Path | None = None
    schema: str = "hmd_1x1"
    transform: str = "log10"
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    synth: SynthSpec | None = None
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    scheme_kind: str = "rolling"
    train_size: int | None = None  # None: all years but the last `horizon`
    intervals: bool = True
    scale: str = "log"
    methods: tuple = ("fmp",)
    horizon: int = 10
    seed: int = 0
    threads: int = 1
    out: Path = Path("out")

    def window_scheme(self, n_years: int) -> WindowScheme:
        train = self.train_size if self.train_size is not None else n_years - self.horizon
        if train < 4:
            raise ConfigError(
                f"{n_years} years leave a training window of {train} for horizon {self.horizon}"
            )
        return WindowScheme(self.scheme_kind, train, self.horizon)

    @property
    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.forecast, self.bootstrap, self.intervals, self.scale)


_SECTIONS = {
    "data": {"directory", "schema", "transform"},
    "smoothing": {f.name for f in fields(SmoothingConfig)},
    "synth": {f.name for f in fields(SynthSpec)},
    "forecast": {"score_model", "ar_order", "variance_threshold", "covariance", "harmonize_k",
                 "kernel", "bandwidth", "max_iter", "tol"},
    "bootstrap": {"B", "w", "var_order", "delta_min", "delta_max", "delta_step", "levels"},
    "evaluate": {"kind", "train_size", "horizon_max", "intervals", "scale"},
    "run": {"methods", "horizon", "seed", "threads", "out"},
}


def _check_keys(doc: dict) -> None:
    for section, body in doc.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(body) - _SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")


def read_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    _check_keys(doc)
    return doc


def _delta_grid(body: dict) -> tuple:
    if not {"delta_min", "delta_max", "delta_step"} & set(body):
        return DEFAULT_DELTA_GRID
    lo = float(body.get("delta_min", 0.1))
    hi = float(body.get("delta_max", 5.0))
    step = float(body.get("delta_step", 0.05))
    if step <= 0 or hi < lo:
        raise ConfigError("delta grid needs delta_step > 0 and delta_max >= delta_min")
    n = int(round((hi - lo) / step)) + 1
    return tuple(round(lo + i * step, 10) for i in range(n))


def build_config(doc: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge a parsed config document with command-line overrides and validate it."""
    doc = dict(doc or {})
    _check_keys(doc)
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}
    data = doc.get("data", {})
    fc = doc.get("forecast", {})
    bs = doc.get("bootstrap", {})
    ev = doc.get("evaluate", {})
    run = doc.get("run", {})
    try:
        seed = int(ov.get("seed", run.get("seed", 0)))
        threads = int(ov.get("threads", run.get("threads", 0)))
        horizon = int(ov.get("horizon", run.get("horizon", ev.get("horizon_max", 10))))
        if horizon < 1:
            raise ConfigError("horizon must be >= 1")
        methods = ov.get("methods", run.get("methods", ["fmp"]))
        if isinstance(methods, str):
            methods = [m.strip() for m in methods.split(",") if m.strip()]
        methods = tuple(methods)
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise ConfigError(f"methods must be drawn from {METHODS}, got {list(methods)}")

        kernel_family = fc.get("kernel", "bartlett")
        bandwidth = fc.get("bandwidth")
        kernel = KernelSpec.fixed(float(bandwidth), kernel_family) if bandwidth is not None \
            else KernelSpec(family=kernel_family)
        forecast = ForecastConfig(
            score_model=fc.get("score_model", "rwd"),
            ar_order=fc.get("ar_order"),
            variance_threshold=float(fc.get("variance_threshold", 0.95)),
            kernel=kernel,
            covariance=fc.get("covariance", "long_run"),
            harmonize_k=bool(fc.get("harmonize_k", True)),
            max_iter=int(fc.get("max_iter", 50)),
            tol=float(fc.get("tol", 1e-8)),
            threads=threads,
        )
        levels = ov.get("levels", bs.get("levels", [0.8, 0.95]))
        if isinstance(levels, str):
            levels = [float(x) for x in levels.split(",") if x.strip()]
        bootstrap = BootstrapConfig(
            B=int(bs.get("B", 200)),
            w=int(bs.get("w", 1)),
            var_order=bs.get("var_order"),
            delta_grid=_delta_grid(bs),
            nominal_levels=tuple(float(x) for x in levels),
            seed=seed,
        )
        kind = ev.get("kind", "rolling")
        if kind not in ("rolling", "expanding"):
            raise ConfigError(f"unknown window scheme {kind!r}")
        train_size = ev.get("train_size")
        synth = None
        if "synth" in doc:
            body = dict(doc["synth"])
            for key in ("grand_coefs", "var_matrix"):
                if body.get(key) is not None:
                    body[key] = tuple(tuple(r) if isinstance(r, list) else r for r in body[key])
            body.setdefault("seed", seed)
            if "seed" in ov:
                body["seed"] = seed
            synth = SynthSpec(**body)
        data_dir = ov.get("data", data.get("directory"))
        return RunConfig(
            data_dir=Path(data_dir) if data_dir else None,
            schema=ov.get("schema", data.get("schema", "hmd_1x1")),
            transform=ov.get("transform", data.get("transform", "log10")),
            smoothing=SmoothingConfig(**doc.get("smoothing", {})),
            synth=synth,
            forecast=forecast,
            bootstrap=bootstrap,
            scheme_kind=kind,
            train_size=None if train_size is None else int(train_size),
            intervals=bool(ev.get("intervals", True)),
            scale=ev.get("scale", "log"),
            methods=methods,
            horizon=horizon,
            seed=seed,
            threads=threads,
            out=Path(ov.get("out", run.get("out", "out"))),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    doc = read_config_file(path) if path else {}
    return build_config(doc, overrides)


def with_threads(config: RunConfig, threads: int) -> RunConfig:
    return replace(config, threads=threads, forecast=replace(config.forecast, threads=threads))
