"""Synthetic curve panels with known effects and residual dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from hdfts.anova import PolishDecomposition
from hdfts.errors import NonstationarySpecError
from hdfts.fda import AgeGrid, Curve, CurvePanel

BURN_IN = 200


@dataclass(frozen=True)
class SynthSpec:
    S: int = 6
    G: int = 2
    T: int = 40
    p: int = 21
    age_max: float = 100.0
    # grand effect: polynomial in x = u / age_max, lowest order first
    grand_coefs: tuple = (-3.5, 1.0, 2.0)
    row_scale: float = 0.3
    col_scale: float = 0.15
    centering: Literal["symmetric", "median", "mean"] = "symmetric"
    residual_process: Literal["iid_gaussian", "far1", "score_var1"] = "iid_gaussian"
    rho: float = 0.5
    var_matrix: tuple | None = None  # K_true x K_true, rows first; score_var1 only
    n_basis: int = 3
    score_decay: float = 0.5
    noise_scale: float = 0.1
    contamination: float = 0.0
    contamination_magnitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.S < 2 or self.G < 2 or self.T < 1 or self.p < 2:
            raise ValueError("need S >= 2, G >= 2, T >= 1 and p >= 2")
        if self.centering not in ("symmetric", "median", "mean"):
            raise ValueError(f"unknown centering {self.centering!r}")
        if self.residual_process not in ("iid_gaussian", "far1", "score_var1"):
            raise ValueError(f"unknown residual process {self.residual_process!r}")
        if not 1 <= self.n_basis <= self.p:
            raise ValueError("n_basis must lie in 1..p")
        if not 0 <= self.contamination <= 1:
            raise ValueError("contamination must be a fraction")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        if self.residual_process == "far1" and abs(self.rho) >= 1:
            raise NonstationarySpecError(f"|rho| = {abs(self.rho)} gives a nonstationary process")
        if self.residual_process == "score_var1":
            A = self.transition()
            radius = float(np.max(np.abs(np.linalg.eigvals(A))))
            if radius >= 1:
                raise NonstationarySpecError(f"VAR(1) spectral radius {radius:.3f} >= 1")

    @property
    def grid(self) -> AgeGrid:
        return AgeGrid.uniform(0.0, self.age_max, self.p)

    def transition(self) -> np.ndarray:
        K = self.n_basis
        if self.residual_process == "far1":
            return self.rho * np.eye(K)
        if self.var_matrix is None:
            A = 0.5 * np.eye(K)
            if K > 1:
                A[0, 1] = A[1, 0] = 0.2
            return A
        A = np.asarray(self.var_matrix, dtype=float)
        if A.shape != (K, K):
            raise ValueError(f"var_matrix must be {K}x{K}")
        return A


def orthonormal_basis(grid: AgeGrid, n: int) -> np.ndarray:
    """First n shifted cosines, orthonormalized under the quadrature inner product; (n, p)."""
    x = (grid.points - grid.points[0]) / (grid.points[-1] - grid.points[0])
    raw = np.vstack([np.cos(np.pi * k * x) for k in range(n)])
    sw = np.sqrt(grid.quad_weights)
    q, r = np.linalg.qr((raw * sw).T)
    q = q * np.sign(np.diag(r))
    return (q.T / sw)[:n]


def _center(raw: np.ndarray, how: str, rng) -> np.ndarray:
    n = raw.shape[0]
    if how == "median":
        return raw - np.median(raw, axis=0)
    if how == "mean":
        return raw - raw.mean(axis=0)
    half = raw[: n // 2]
    parts = [half, -half] if n % 2 == 0 else [half, np.zeros((1, raw.shape[1])), -half]
    out = np.vstack(parts)
    return out[rng.permutation(n)]


def _effect_shapes(rng, n: int, x: np.ndarray, scale: float) -> np.ndarray:
    amp = rng.normal(0.0, scale, size=(n, 1))
    slope = rng.normal(0.0, scale, size=(n, 1))
    centre = rng.uniform(0.2, 0.8, size=(n, 1))
    return amp * np.exp(-0.5 * ((x - centre) / 0.15) ** 2) + slope * x


def residual_scores(spec: SynthSpec, rng, T: int) -> np.ndarray:
    """Unit-scale latent scores of one cell, shape (T, n_basis)."""
    K = spec.n_basis
    if spec.residual_process == "iid_gaussian":
        return rng.standard_normal((T, K))
    A = spec.transition()
    e = rng.standard_normal((T + BURN_IN, K))
    if spec.residual_process == "far1":
        e = e * np.sqrt(1.0 - spec.rho**2)
    z = np.zeros((T + BURN_IN, K))
    for t in range(1, T + BURN_IN):
        z[t] = A @ z[t - 1] + e[t]
    return z[BURN_IN:]


def generate(spec: SynthSpec) -> tuple[CurvePanel, PolishDecomposition]:
    """Panel ``mu + alpha_s + beta_g + X`` and its exact components."""
    grid = spec.grid
    x = (grid.points - grid.points[0]) / (grid.points[-1] - grid.points[0])
    root = np.random.SeedSequence(spec.seed)
    effects_seq, process_seq, contam_seq = root.spawn(3)
    erng = np.random.default_rng(effects_seq)

    grand = np.polynomial.polynomial.polyval(x, spec.grand_coefs)
    rows = _center(_effect_shapes(erng, spec.S, x, spec.row_scale), spec.centering, erng)
    cols = _center(_effect_shapes(erng, spec.G, x, spec.col_scale), spec.centering, erng)

    phi = orthonormal_basis(grid, spec.n_basis)
    sds = spec.noise_scale * spec.score_decay ** np.arange(spec.n_basis)
    resid = np.empty((spec.S, spec.G, spec.T, spec.p))
    cell_seqs = process_seq.spawn(spec.S * spec.G)
    for i in range(spec.S):
        for j in range(spec.G):
            rng = np.random.default_rng(cell_seqs[i * spec.G + j])
            resid[i, j] = (residual_scores(spec, rng, spec.T) * sds) @ phi

    n_bad = int(round(spec.contamination * spec.S * spec.G * spec.T))
    if n_bad:
        crng = np.random.default_rng(contam_seq)
        flat = crng.choice(spec.S * spec.G * spec.T, size=n_bad, replace=False)
        s_idx, g_idx, t_idx = np.unravel_index(flat, (spec.S, spec.G, spec.T))
        resid[s_idx, g_idx, t_idx] += spec.contamination_magnitude

    data = grand + rows[:, None, None, :] + cols[None, :, None, :] + resid
    states = tuple(f"S{i + 1:02d}" for i in range(spec.S))
    genders = ("F", "M") if spec.G == 2 else tuple(f"G{j + 1}" for j in range(spec.G))
    years = tuple(range(2000, 2000 + spec.T))
    panel = CurvePanel(grid, states, genders, years, data)
    # truth residuals are defined so that the components add up to the panel exactly
    truth_resid = data - (grand + rows[:, None, None, :] + cols[None, :, None, :])
    truth = PolishDecomposition(
        grand=Curve(grid, grand),
        row_effects=tuple(Curve(grid, r) for r in rows),
        col_effects=tuple(Curve(grid, c) for c in cols),
        residuals=panel.with_data(truth_resid),
        method="means" if spec.centering == "mean" else "median_polish",
        iterations=0,
        converged=True,
    )
    return panel, truth
