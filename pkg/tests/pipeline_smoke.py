"""Helpers for the data-present pipeline smoke run."""

import csv
import math
from pathlib import Path

from hdfts.cli import main


def write_hmd_dir(panel, directory):
    """Write a log10-scale panel as one ``<state>.Mx_1x1.txt`` rate file per state."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s, state in enumerate(panel.states):
        lines = [f"{state}, Death rates (period 1x1)", "", "  Year  Age  Female  Male  Total"]
        for t, year in enumerate(panel.years):
            for i, age in enumerate(panel.grid.points):
                f = 10.0 ** panel.data[s, 0, t, i]
                m = 10.0 ** panel.data[s, 1, t, i]
                lines.append(f"  {year}  {int(age)}  {f:.8f}  {m:.8f}  {(f + m) / 2:.8f}")
        (directory / f"{state}.Mx_1x1.txt").write_text("\n".join(lines) + "\n")
    return directory


def run_data_smoke(directory, out, extra=()):
    """Evaluate fmp, fm and independent with H = 10 on an hmd_1x1 directory.

    Returns ``(exit_code, {method: mean MAPE averaged over cells}, failures_written)``.
    """
    out = Path(out)
    code = main(["evaluate", "--data", str(directory), "--schema", "hmd_1x1",
                 "--method", "fmp", "--method", "fm", "--method", "independent",
                 "--horizon", "10", "--out", str(out), *extra])
    mean_mape = {}
    report = out / "report.csv"
    if report.exists():
        with open(report) as fh:
            for r in csv.DictReader(fh):
                if r["metric"] == "mape" and r["horizon"] == "mean":
                    mean_mape.setdefault(r["method"], []).append(float(r["value"]))
    summary = {m: sum(v) / len(v) for m, v in mean_mape.items()}
    return code, summary, (out / "failures.csv").exists()


def smoke_ok(code, summary, failed):
    return (code == 0 and not failed and set(summary) == {"fmp", "fm", "independent"}
            and all(math.isfinite(v) and v > 0 for v in summary.values()))
