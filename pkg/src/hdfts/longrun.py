"""Lag autocovariance surfaces and kernel-weighted long-run covariance.

Array helpers (``*_array``) accept series of shape ``(..., T, p)`` so that
many series can be handled in one call; the Curve-level functions wrap them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from hdfts.errors import LagOutOfRangeError, SeriesTooShortError
from hdfts.fda import as_series

KernelFamily = Literal["bartlett", "flat_top", "rectangular"]

# support cutoff c: W(x) = 0 for |x| > c
_CUTOFF = {"bartlett": 1.0, "flat_top": 1.0, "rectangular": 1.0}


def kernel_weight(x, family: KernelFamily = "bartlett"):
    """Lag-window weight ``W(x)``; symmetric with ``W(0) = 1``."""
    ax = np.abs(np.asarray(x, dtype=float))
    if family == "bartlett":
        w = np.maximum(0.0, 1.0 - ax)
    elif family == "flat_top":
        w = np.where(ax <= 0.5, 1.0, np.where(ax <= 1.0, 2.0 * (1.0 - ax), 0.0))
    elif family == "rectangular":
        w = np.where(ax <= 1.0, 1.0, 0.0)
    else:
        raise ValueError(f"unknown kernel family {family!r}")
    return w if w.ndim else float(w)


def rule_of_thumb_bandwidth(T: int, family: KernelFamily = "bartlett") -> float:
    """Fixed-rate bandwidth ``T ** (1/5)``."""
    if T < 4:
        raise SeriesTooShortError(f"bandwidth rule needs T >= 4, got {T}")
    if family not in _CUTOFF:
        raise ValueError(f"unknown kernel family {family!r}")
    return float(T) ** 0.2


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily = "bartlett"
    bandwidth: float | None = None  # used when bandwidth_rule == "fixed"
    bandwidth_rule: Literal["fixed", "rule_of_thumb"] = "rule_of_thumb"

    def __post_init__(self):
        if self.family not in _CUTOFF:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.bandwidth_rule not in ("fixed", "rule_of_thumb"):
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.bandwidth_rule == "fixed":
            if self.bandwidth is None or not self.bandwidth > 0:
                raise ValueError("a fixed bandwidth must be a positive number")

    @property
    def order(self) -> int:
        return {"bartlett": 1, "flat_top": 0, "rectangular": 0}[self.family]

    @property
    def cutoff(self) -> float:
        return _CUTOFF[self.family]

    def resolve(self, T: int) -> float:
        if self.bandwidth_rule == "fixed":
            return float(self.bandwidth)
        return rule_of_thumb_bandwidth(T, self.family)

    @classmethod
    def fixed(cls, bandwidth: float, family: KernelFamily = "bartlett") -> "KernelSpec":
        return cls(family=family, bandwidth=bandwidth, bandwidth_rule="fixed")


@dataclass(frozen=True, eq=False)
class LagAutocovariance:
    lag: int
    surface: np.ndarray


@dataclass(frozen=True, eq=False)
class LongRunCovariance:
    surface: np.ndarray
    kernel: KernelSpec
    lags_used: int
    bandwidth: float
    n_obs: int


def lag_autocov_array(x: np.ndarray, lag: int, centered: bool = False) -> np.ndarray:
    """``(1/T) sum_t (X_t - Xbar)(u) (X_{t+lag} - Xbar)(v)`` for series of shape (..., T, p)."""
    T = x.shape[-2]
    if abs(lag) >= T:
        raise LagOutOfRangeError(f"|lag| = {abs(lag)} must be below T = {T}")
    z = x if centered else x - x.mean(axis=-2, keepdims=True)
    l = abs(lag)
    g = np.einsum("...tu,...tv->...uv", z[..., : T - l, :], z[..., l:, :]) / T
    return g if lag >= 0 else np.swapaxes(g, -1, -2)


def lag_autocov(series, lag: int) -> LagAutocovariance:
    x, _ = as_series(series)
    return LagAutocovariance(lag, lag_autocov_array(x, lag))


def long_run_cov_array(
    x: np.ndarray, bandwidth: float, family: KernelFamily = "bartlett"
) -> tuple[np.ndarray, int]:
    """Kernel sandwich estimate for series of shape (..., T, p); returns (surface, L)."""
    T = x.shape[-2]
    if T < 4:
        raise SeriesTooShortError(f"long-run covariance needs T >= 4, got {T}")
    z = x - x.mean(axis=-2, keepdims=True)
    L = min(T - 1, math.ceil(_CUTOFF[family] * bandwidth))
    acc = lag_autocov_array(z, 0, centered=True)
    # ascending |l|, negative lag before positive
    for l in range(1, L + 1):
        w = kernel_weight(l / bandwidth, family)
        if w == 0.0:
            continue
        g = lag_autocov_array(z, l, centered=True)
        acc = acc + w * np.swapaxes(g, -1, -2)
        acc = acc + w * g
    return 0.5 * (acc + np.swapaxes(acc, -1, -2)), L


def long_run_cov(series, kernel: KernelSpec | None = None) -> LongRunCovariance:
    """``sum_{|l| <= L} W(l/b) gamma_l(u, v)``, symmetrized."""
    kernel = kernel or KernelSpec()
    x, _ = as_series(series)
    T = x.shape[0]
    if T < 4:
        raise SeriesTooShortError(f"long-run covariance needs T >= 4, got {T}")
    b = kernel.resolve(T)
    surface, L = long_run_cov_array(x, b, kernel.family)
    return LongRunCovariance(surface, kernel, L, b, T)


def sample_cov(series) -> LongRunCovariance:
    """Lag-0 covariance packaged like a long-run estimate (static FPCA)."""
    x, _ = as_series(series)
    T = x.shape[0]
    kernel = KernelSpec.fixed(1e-12, "rectangular")
    return LongRunCovariance(lag_autocov_array(x, 0), kernel, 0, kernel.bandwidth, T)
