"""Self-contained numerical kernels for score calibration and projection.

Covers the standard-normal CDF, z-scoring, min-range normalization,
covariance, symmetric eigendecomposition (cyclic Jacobi), and the
contrastive projection used for semantic subspace filtering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import errors, kernels

CALIBRATION_RAW = "raw"
CALIBRATION_ZSCORE = "zscore"
CALIBRATION_CDF = "cdf"
CALIBRATION_MINRANGE = "minrange"

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL_FACTOR = 1e-12


@dataclass(frozen=True)
class ScoreVector:
    """Per-candidate scores, index-aligned with a candidate ID list."""

    values: np.ndarray
    calibration: str = CALIBRATION_RAW
    degenerate: bool = False

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise errors.DimensionMismatch(f"scores must be 1-d, got shape {values.shape}")
        if np.any(np.isnan(values)):
            raise errors.NonFiniteValue("score vector contains NaN")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.calibration == CALIBRATION_CDF and values.size:
            if values.min() < 0.0 or values.max() > 1.0:
                raise errors.NonFiniteValue("cdf-calibrated scores must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.values)


def std_normal_cdf(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Standard-normal CDF with absolute error <= 1e-7 on [-6, 6].

    Built from a rational erf approximation; symmetric by construction,
    so cdf(x) + cdf(-x) = 1 to within one ulp.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise errors.NonFiniteInput("std_normal_cdf requires finite input")
    out = kernels.normal_cdf_array(arr.ravel()).reshape(arr.shape)
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


def zscore(scores: ScoreVector) -> ScoreVector:
    """Standardize to zero mean, unit population standard deviation.

    Constant input yields all zeros with the degenerate flag set.
    """
    v = scores.values
    if v.size < 2:
        raise errors.TooShort(f"zscore needs at least 2 scores, got {v.size}")
    centered = v - np.mean(v)
    # second pass strips the rounding residue of the mean, which otherwise
    # dominates for score vectors clustered far from zero
    centered -= np.mean(centered)
    std = float(np.sqrt(np.mean(np.square(centered))))
    if std == 0.0:
        return ScoreVector(np.zeros_like(v), calibration=CALIBRATION_ZSCORE, degenerate=True)
    return ScoreVector(centered / std, calibration=CALIBRATION_ZSCORE)


def minrange_normalize(scores: ScoreVector) -> ScoreVector:
    """Map scores affinely onto [0, 1]; constant input maps to all 0.5."""
    v = scores.values
    if v.size < 1:
        raise errors.TooShort("minrange_normalize needs at least 1 score")
    lo = float(v.min())
    hi = float(v.max())
    if hi == lo:
        return ScoreVector(
            np.full_like(v, 0.5), calibration=CALIBRATION_MINRANGE, degenerate=True
        )
    return ScoreVector((v - lo) / (hi - lo), calibration=CALIBRATION_MINRANGE)


def covariance(samples: np.ndarray, centered: bool = False) -> np.ndarray:
    """Population covariance (1/m scaling) of row-sample data.

    When ``centered`` is false the mean is subtracted internally.  The
    result is explicitly symmetrized.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise errors.DimensionMismatch(f"samples must be 2-d, got shape {x.shape}")
    m = x.shape[0]
    if m < 2:
        raise errors.TooFewSamples(f"covariance needs at least 2 samples, got {m}")
    if not centered:
        x = x - x.mean(axis=0)
    sigma = (x.T @ x) / m
    return 0.5 * (sigma + sigma.T)


def sym_eigen(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric matrix via cyclic Jacobi.

    Returns (eigenvalues descending, eigenvectors as orthonormal rows).
    Sign convention: each eigenvector's largest-magnitude component is
    positive, ties resolved toward the lowest index.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise errors.DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if asym > 1e-8 * scale:
        raise errors.NotSymmetric(f"max asymmetry {asym:.3e} exceeds tolerance")
    work = 0.5 * (a + a.T)
    d = work.shape[0]
    fro = float(np.linalg.norm(work))
    v = np.eye(d)
    sweeps = kernels.jacobi_sweeps(work, v, JACOBI_TOL_FACTOR * fro, JACOBI_MAX_SWEEPS)
    if sweeps < 0:
        raise errors.NoConvergence(f"Jacobi did not converge within {JACOBI_MAX_SWEEPS} sweeps")
    vals = np.diagonal(work).copy()
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = v[:, order].T.copy()
    for i in range(d):
        pivot = int(np.argmax(np.abs(vecs[i])))
        if vecs[i, pivot] < 0.0:
            vecs[i] = -vecs[i]
    return vals, vecs


@dataclass(frozen=True)
class ProjectionBasis:
    """Orthonormal row basis of a p-dimensional score-relevant subspace."""

    basis: np.ndarray
    eigenvalues: np.ndarray
    alpha: float
    p: int = field(default=0)

    def __post_init__(self):
        basis = np.ascontiguousarray(self.basis, dtype=np.float64)
        eigenvalues = np.ascontiguousarray(self.eigenvalues, dtype=np.float64)
        basis.setflags(write=False)
        eigenvalues.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "eigenvalues", eigenvalues)
        object.__setattr__(self, "p", basis.shape[0])

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def contrastive_projection(
    c_plus, c_minus, alpha: float, p: int
) -> ProjectionBasis:
    """Top-p eigenbasis of cov(C+) - alpha * cov(C-).

    With alpha = 0 this is plain PCA of the positive corpus.  Inputs may
    be embedding stores or raw sample matrices.
    """
    x_plus = np.asarray(getattr(c_plus, "matrix", c_plus), dtype=np.float64)
    x_minus = np.asarray(getattr(c_minus, "matrix", c_minus), dtype=np.float64)
    if x_plus.ndim != 2 or x_minus.ndim != 2 or x_plus.shape[1] != x_minus.shape[1]:
        raise errors.DimensionMismatch(
            f"corpora dimensions disagree: {x_plus.shape} vs {x_minus.shape}"
        )
    d = x_plus.shape[1]
    if not 1 <= p <= d:
        raise errors.DimensionMismatch(f"p must be in [1, {d}], got {p}")
    if alpha < 0:
        raise errors.BadConfig(f"alpha must be >= 0, got {alpha}")
    m = covariance(x_plus) - alpha * covariance(x_minus)
    vals, vecs = sym_eigen(m)
    return ProjectionBasis(basis=vecs[:p], eigenvalues=vals[:p], alpha=float(alpha))


def project(basis: ProjectionBasis, v: np.ndarray) -> tuple[np.ndarray, bool]:
    """Orthogonally project onto the basis subspace, then renormalize.

    Returns (vector, degenerate).  If the projection is numerically zero
    (norm < 1e-10) the input is returned unchanged with the flag set.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (basis.dim,):
        raise errors.DimensionMismatch(f"vector shape {v.shape} vs basis dim {basis.dim}")
    w = basis.basis.T @ (basis.basis @ v)
    nrm = float(np.linalg.norm(w))
    if nrm < 1e-10:
        return v.copy(), True
    return w / nrm, False


def project_rows(basis: ProjectionBasis, matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`project`; returns (matrix, degenerate flags)."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != basis.dim:
        raise errors.DimensionMismatch(f"matrix shape {x.shape} vs basis dim {basis.dim}")
    w = (x @ basis.basis.T) @ basis.basis
    nrm = np.linalg.norm(w, axis=1)
    flags = nrm < 1e-10
    out = np.where(flags[:, None], x, w / np.where(flags, 1.0, nrm)[:, None])
    return out, flags
