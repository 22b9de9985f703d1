"""Batch command line: ``hdfts {decompose,forecast,intervals,evaluate,simulate}``.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numerical failure (a ``failure_manifest.txt`` is written to the output
directory).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from hdfts.anova import decompose, export_decomposition
from hdfts.config import RunConfig, load_config
from hdfts.errors import (
    ConfigError,
    HDFTSError,
    LabelMismatchError,
    ParseError,
    SchemaError,
)
from hdfts.evalharness import run_evaluation
from hdfts.forecast import pipeline_point_forecast
from hdfts.ingest import CSV_LONG_HEADER, _fmt, _fmt_age, export_panel, load_panel
from hdfts.plots import fan_chart
from hdfts.sieve import interval_forecast
from hdfts.synthgen import generate

logger = logging.getLogger("hdfts")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--data", type=Path, help="directory (or file) of rate tables")
    common.add_argument("--schema", choices=("hmd_1x1", "csv_long"))
    common.add_argument("--transform", choices=("log10", "none"),
                        help="'none' when the rate column is already log10 (e.g. simulate output)")
    common.add_argument("--method", action="append", choices=("fmp", "fm", "independent"),
                        help="repeat for several methods")
    common.add_argument("--horizon", type=_positive_int, metavar="H")
    common.add_argument("--levels", help="comma-separated nominal coverages, e.g. 0.8,0.95")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads (fallback: $HDFTS_THREADS)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hdfts", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("decompose", "two-way functional ANOVA of the panel"),
        ("forecast", "h-step point forecasts"),
        ("intervals", "sieve-bootstrap prediction intervals"),
        ("evaluate", "rolling/expanding out-of-sample evaluation"),
        ("simulate", "write a synthetic panel and its true components"),
    ):
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {
        "data": args.data,
        "schema": args.schema,
        "transform": args.transform,
        "methods": tuple(args.method) if args.method else None,
        "horizon": args.horizon,
        "levels": args.levels,
        "seed": args.seed,
        "threads": args.threads,
        "out": args.out,
    }
    return load_config(args.config, overrides)


def _load(cfg: RunConfig):
    if cfg.data_dir is not None:
        try:
            return load_panel(cfg.data_dir, cfg.schema, cfg.smoothing, cfg.transform)
        except FileNotFoundError as exc:
            raise DataError(f"data not found: {exc}") from exc
    if cfg.synth is not None:
        return generate(cfg.synth)[0]
    raise ConfigError("no data source: pass --data or add a [data] or [synth] section")


def _write_rows(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _panel_rows(panel, extra_fn):
    ages = [_fmt_age(a) for a in panel.grid.points]
    for i, s in enumerate(panel.states):
        for j, g in enumerate(panel.genders):
            for k, y in enumerate(panel.years):
                tail = extra_fn(k)
                for a, v in zip(ages, panel.data[i, j, k]):
                    yield [s, g, y, a, _fmt(v)] + tail


# ---------------------------------------------------------------- commands


def cmd_decompose(cfg: RunConfig) -> list[Path]:
    panel = _load(cfg)
    written = []
    log_lines = []
    for method in cfg.methods:
        if method == "independent":
            continue
        d = decompose(panel, method, cfg.forecast.max_iter, cfg.forecast.tol)
        written += export_decomposition(d, cfg.out / method)
        log_lines.append(f"{method} method={d.method} iterations={d.iterations} "
                         f"converged={str(d.converged).lower()}")
    if not log_lines:
        raise ConfigError("decompose needs method fmp or fm")
    log = cfg.out / "convergence.log"
    log.write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    return written + [log]


def cmd_forecast(cfg: RunConfig) -> list[Path]:
    panel = _load(cfg)
    written = []
    for method in cfg.methods:
        fc = pipeline_point_forecast(panel, cfg.horizon, method, cfg.forecast)
        written.append(_write_rows(
            cfg.out / f"forecast_{method}.csv", list(CSV_LONG_HEADER) + ["horizon"],
            _panel_rows(fc, lambda k: [k + 1]),
        ))
        for i, state in enumerate(panel.states):
            curves = {g: fc.data[i, j] for j, g in enumerate(panel.genders)}
            written.append(fan_chart(
                cfg.out / "plots" / f"forecast_{method}_{state}.svg", panel.grid.points, curves,
                title=f"{state}: {method} point forecasts, h = 1..{cfg.horizon}",
            ))
    return written


def cmd_intervals(cfg: RunConfig) -> list[Path]:
    panel = _load(cfg)
    written = []
    for method in cfg.methods:
        bands = interval_forecast(panel, cfg.horizon, method, cfg.bootstrap, cfg.forecast)
        point = next(iter(bands.values())).point
        written.append(_write_rows(
            cfg.out / f"intervals_{method}_point.csv", list(CSV_LONG_HEADER) + ["horizon"],
            _panel_rows(point, lambda k: [k + 1]),
        ))
        for level, iv in bands.items():
            def rows(iv=iv, level=level):
                ages = [_fmt_age(a) for a in panel.grid.points]
                for i, s in enumerate(iv.point.states):
                    for j, g in enumerate(iv.point.genders):
                        for k, y in enumerate(iv.point.years):
                            for bound, src in (("lb", iv.lower), ("ub", iv.upper)):
                                for a, v in zip(ages, src.data[i, j, k]):
                                    yield [s, g, y, a, _fmt(v), _fmt(level), bound, k + 1]
            written.append(_write_rows(
                cfg.out / f"intervals_{method}_{level:g}.csv",
                list(CSV_LONG_HEADER) + ["level", "bound", "horizon"], rows(),
            ))
            for i, state in enumerate(panel.states):
                curves = {g: iv.point.data[i, j] for j, g in enumerate(panel.genders)}
                lu = {g: (iv.lower.data[i, j], iv.upper.data[i, j])
                      for j, g in enumerate(panel.genders)}
                written.append(fan_chart(
                    cfg.out / "plots" / f"intervals_{method}_{level:g}_{state}.svg",
                    panel.grid.points, curves, lu,
                    title=f"{state}: {method} {level:.0%} intervals",
                ))
    return written


def cmd_evaluate(cfg: RunConfig) -> list[Path]:
    panel = _load(cfg)
    scheme = cfg.window_scheme(len(panel.years))
    report = run_evaluation(panel, scheme, cfg.methods, cfg.eval_config)
    written = [report.to_csv(cfg.out / "report.csv")]
    summary = cfg.out / "summary.txt"
    summary.write_text(
        f"scheme={scheme.kind} train_size={scheme.train_size} H={scheme.horizon_max} "
        f"methods={','.join(cfg.methods)} seed={cfg.seed}\n\n" + report.summary() + "\n",
        encoding="utf-8",
    )
    written.append(summary)
    failures = report.write_failures(cfg.out / "failures.csv")
    if failures:
        written.append(failures)
    return written


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    if cfg.synth is None:
        raise ConfigError("simulate needs a [synth] section in the config")
    panel, truth = generate(cfg.synth)
    written = [export_panel(panel, cfg.out / "panel.csv")]
    written += export_decomposition(truth, cfg.out / "truth")
    spec = cfg.out / "synth_spec.json"
    spec.write_text(json.dumps(dataclasses.asdict(cfg.synth), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return written + [spec]


COMMANDS = {
    "decompose": cmd_decompose,
    "forecast": cmd_forecast,
    "intervals": cmd_intervals,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        print(f"hdfts: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        written = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"hdfts: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError, ParseError, LabelMismatchError, FileNotFoundError) as exc:
        print(f"hdfts: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (HDFTSError, np.linalg.LinAlgError, FloatingPointError) as exc:
        manifest = cfg.out / "failure_manifest.txt"
        manifest.write_text(
            f"command: {args.command}\nerror: {type(exc).__name__}: {exc}\n\n"
            + "".join(traceback.format_exception(type(exc), exc, exc.__traceback__)),
            encoding="utf-8",
        )
        print(f"hdfts: numerical failure: {exc} (see {manifest})", file=sys.stderr)
        return EXIT_NUMERIC
    for path in written:
        logger.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
