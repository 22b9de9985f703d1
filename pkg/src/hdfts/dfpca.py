"""Eigen-decomposition of covariance surfaces and Karhunen-Loeve score maps.

Eigenfunctions are orthonormal under the grid's quadrature inner product: the
operator ``C W`` (W the diagonal of quadrature weights) is symmetrized as
``W^1/2 C W^1/2`` before calling ``eigh``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hdfts.errors import DimensionMismatchError, GridMismatchError, NotSymmetricError
from hdfts.fda import AgeGrid, Curve, as_series
from hdfts.longrun import LongRunCovariance

SIGN_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class EigenSystem:
    grid: AgeGrid
    eigenvalues: np.ndarray  # all p, descending, clipped at 0
    eigenfunctions: np.ndarray  # (K_max, p)
    K: int
    variance_threshold: float

    @property
    def k_max(self) -> int:
        return self.eigenfunctions.shape[0]

    def functions(self, k: int | None = None) -> list[Curve]:
        k = self.K if k is None else k
        return [Curve(self.grid, phi) for phi in self.eigenfunctions[:k]]

    def truncated(self, K: int) -> "EigenSystem":
        """Same eigenpairs with a different retained count (capped at K_max)."""
        K = max(1, min(int(K), self.k_max))
        return EigenSystem(self.grid, self.eigenvalues, self.eigenfunctions, K,
                           self.variance_threshold)


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    scores: np.ndarray  # (T, K)
    mean_curve: Curve


def select_k(eigenvalues: np.ndarray, threshold: float = 0.95) -> int:
    """Smallest K with cumulative share of the positive eigenvalues >= threshold."""
    theta = np.asarray(eigenvalues, dtype=float)
    positive = theta[theta > 0]
    total = positive.sum()
    if total <= 0:
        return 1
    share = np.cumsum(theta) / total
    # tiny slack so that exact ties (e.g. 9.5/10 at 0.95) count as reached
    hit = np.nonzero(share >= threshold - 1e-12)[0]
    return int(hit[0]) + 1 if hit.size else int(positive.size)


def select_k_array(eigenvalues: np.ndarray, threshold: float = 0.95) -> np.ndarray:
    """Vectorized :func:`select_k` over the leading axes of (..., p) eigenvalues."""
    theta = np.asarray(eigenvalues, dtype=float)
    total = np.where(theta > 0, theta, 0.0).sum(axis=-1, keepdims=True)
    share = np.cumsum(theta, axis=-1) / np.where(total > 0, total, 1.0)
    reached = share >= threshold - 1e-12
    K = np.argmax(reached, axis=-1) + 1
    K = np.where(reached.any(axis=-1), K, (theta > 0).sum(axis=-1))
    return np.maximum(K, 1)


def _normalize_signs(phi: np.ndarray) -> np.ndarray:
    """Flip each eigenfunction (last axis) so its first non-negligible value is positive."""
    mag = np.abs(phi)
    big = mag >= SIGN_RTOL * mag.max(axis=-1, keepdims=True)
    first = np.argmax(big, axis=-1)
    lead = np.take_along_axis(phi, first[..., None], axis=-1)
    return phi * np.where(lead < 0, -1.0, 1.0)


def weighted_eigh(C: np.ndarray, weights: np.ndarray):
    """Eigenpairs of the integral operator with kernel C; works on (..., p, p) stacks.

    Returns descending clipped eigenvalues and eigenfunctions on the last axis
    of an (..., p, p) array whose row k is the k-th eigenfunction.
    """
    sw = np.sqrt(weights)
    M = C * sw[:, None] * sw[None, :]
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    evals, evecs = np.linalg.eigh(M)
    evals = evals[..., ::-1]
    evecs = evecs[..., ::-1]
    phi = np.swapaxes(evecs, -1, -2) / sw
    return np.clip(evals, 0.0, None), _normalize_signs(phi)


def eigen_decompose(
    C: LongRunCovariance | np.ndarray,
    grid: AgeGrid,
    threshold: float = 0.95,
    k_max: int | None = None,
) -> EigenSystem:
    """Mercer decomposition of a covariance surface on ``grid``.

    ``k_max`` caps the number of stored eigenfunctions; by default it is
    ``min(T - 1, p)`` when the surface carries its sample size, else ``p``.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    surface = C.surface if isinstance(C, LongRunCovariance) else np.asarray(C, dtype=float)
    p = len(grid)
    if surface.shape != (p, p):
        raise DimensionMismatchError(f"surface shape {surface.shape} does not match grid p={p}")
    scale = max(1.0, float(np.max(np.abs(surface))))
    if np.max(np.abs(surface - surface.T)) > 1e-10 * scale:
        raise NotSymmetricError("covariance surface is not symmetric")
    if k_max is None:
        n_obs = getattr(C, "n_obs", None)
        k_max = p if n_obs is None else max(1, min(n_obs - 1, p))
    k_max = max(1, min(int(k_max), p))
    evals, phi = weighted_eigh(surface, grid.quad_weights)
    K = min(select_k(evals, threshold), k_max)
    evals.setflags(write=False)
    phi = phi[:k_max].copy()
    phi.setflags(write=False)
    return EigenSystem(grid, evals, phi, K, threshold)


def project_scores(series, basis: EigenSystem, K: int | None = None) -> ScoreMatrix:
    """Scores ``<X_t - Xbar, phi_k>`` for k < K (default: the retained count)."""
    x, grid = as_series(series, basis.grid)
    if grid is None and x.shape[1] != len(basis.grid):
        raise GridMismatchError("series width does not match the basis grid")
    K = basis.K if K is None else K
    if K > basis.k_max:
        raise DimensionMismatchError(f"requested {K} scores, basis holds {basis.k_max}")
    mean = x.mean(axis=0)
    scores = ((x - mean) * basis.grid.quad_weights) @ basis.eigenfunctions[:K].T
    return ScoreMatrix(scores, Curve(basis.grid, mean))


def reconstruct(scores: ScoreMatrix, basis: EigenSystem) -> list[Curve]:
    """``Xbar + sum_k score[t, k] phi_k`` for every row of the score matrix."""
    return [Curve(basis.grid, row) for row in reconstruct_array(scores, basis)]


def reconstruct_array(scores: ScoreMatrix, basis: EigenSystem) -> np.ndarray:
    sc = np.atleast_2d(scores.scores)
    if sc.shape[1] > basis.k_max:
        raise DimensionMismatchError(
            f"score width {sc.shape[1]} exceeds basis size {basis.k_max}"
        )
    return scores.mean_curve.values + sc @ basis.eigenfunctions[: sc.shape[1]]


def truncation_residuals(series, scores: ScoreMatrix, basis: EigenSystem) -> np.ndarray:
    """Truncation error ``X_t - Xbar - sum_k score[t, k] phi_k`` as a (T, p) array."""
    x, _ = as_series(series, basis.grid)
    return x - reconstruct_array(scores, basis)
