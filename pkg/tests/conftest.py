import numpy as np
import pytest

from hdfts.fda import AgeGrid, Curve, CurvePanel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_panel(data, grid=None, years=None):
    data = np.asarray(data, dtype=float)
    S, G, T, p = data.shape
    grid = grid or AgeGrid.uniform(0.0, 1.0, p) if p >= 2 else None
    return CurvePanel(
        grid,
        tuple(f"S{i}" for i in range(S)),
        ("F", "M") if G == 2 else tuple(f"G{j}" for j in range(G)),
        tuple(range(2000, 2000 + T)) if years is None else years,
        data,
    )


def curves(grid, rows):
    return [Curve(grid, np.asarray(r, dtype=float)) for r in rows]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
