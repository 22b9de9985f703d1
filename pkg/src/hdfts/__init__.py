"""Robust two-way functional ANOVA and dynamic FPCA forecasting of curve panels."""

from hdfts.anova import PolishDecomposition, decompose, mean_anova, median_polish
from hdfts.dfpca import EigenSystem, eigen_decompose, project_scores
from hdfts.errors import HDFTSError
from hdfts.evalharness import EvalConfig, EvalReport, WindowScheme, run_evaluation
from hdfts.fda import AgeGrid, Curve, CurvePanel, inner_product, norm
from hdfts.forecast import ForecastConfig, pipeline_point_forecast
from hdfts.ingest import SmoothingConfig, export_panel, load_panel
from hdfts.longrun import KernelSpec, lag_autocov, long_run_cov
from hdfts.sieve import BootstrapConfig, IntervalForecast, interval_forecast
from hdfts.synthgen import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "AgeGrid", "BootstrapConfig", "Curve", "CurvePanel", "EigenSystem", "EvalConfig",
    "EvalReport", "ForecastConfig", "HDFTSError", "IntervalForecast", "KernelSpec",
    "PolishDecomposition", "SmoothingConfig", "SynthSpec", "WindowScheme", "decompose",
    "eigen_decompose", "export_panel", "generate", "inner_product", "interval_forecast",
    "lag_autocov", "load_panel", "long_run_cov", "mean_anova", "median_polish", "norm",
    "pipeline_point_forecast", "project_scores", "run_evaluation",
]
