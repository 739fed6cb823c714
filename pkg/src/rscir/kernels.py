"""Hot numeric kernels: JIT-compiled by default, pure numpy on demand.

Set ``RSCIR_PURE_NUMPY=1`` to skip numba and run the plain numpy
implementations (also used automatically when numba is not installed).
Both paths implement the same algorithms; ``benchmarks/bench_kernels.py``
compares them.
"""

from __future__ import annotations

import math
import os

import numpy as np


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


_FORCE_NUMPY = _env_flag("RSCIR_PURE_NUMPY")

if _FORCE_NUMPY:
    USING_NUMBA = False
else:
    try:
        from numba import njit

        USING_NUMBA = True
    except ImportError:
        USING_NUMBA = False

if not USING_NUMBA:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


# Rational approximation of erf (Abramowitz-Stegun 7.1.26 family),
# absolute error <= 1.5e-7.  The kernel produces the signed half-offset
# h(x) = Phi(x) - 1/2 = erf(x/sqrt(2)) / 2, which is antisymmetric
# bit-for-bit (h(-x) == -h(x), h(0) == 0), so Phi(x) + Phi(-x) = 1 holds
# to a rounding error and symmetric score fusions cancel exactly.
_INV_SQRT2 = 0.7071067811865476
_ERF_P = 0.3275911
_ERF_A1 = 0.254829592
_ERF_A2 = -0.284496736
_ERF_A3 = 1.421413741
_ERF_A4 = -1.453152027
_ERF_A5 = 1.061405429


@njit(cache=True)
def _cdf_half_kernel(x: np.ndarray, out: np.ndarray) -> None:
    for i in range(x.shape[0]):
        xi = x[i]
        if xi == 0.0:
            out[i] = 0.0
            continue
        y = abs(xi) * _INV_SQRT2
        t = 1.0 / (1.0 + _ERF_P * y)
        poly = t * (
            _ERF_A1 + t * (_ERF_A2 + t * (_ERF_A3 + t * (_ERF_A4 + t * _ERF_A5)))
        )
        h = 0.5 * (1.0 - poly * math.exp(-y * y))
        out[i] = h if xi > 0.0 else -h


def _cdf_half_numpy(x: np.ndarray, out: np.ndarray) -> None:
    y = np.abs(x) * _INV_SQRT2
    t = 1.0 / (1.0 + _ERF_P * y)
    poly = t * (_ERF_A1 + t * (_ERF_A2 + t * (_ERF_A3 + t * (_ERF_A4 + t * _ERF_A5))))
    h = 0.5 * (1.0 - poly * np.exp(-y * y))
    np.copyto(out, np.where(x == 0.0, 0.0, np.where(x > 0.0, h, -h)))


def normal_cdf_half_array(x: np.ndarray) -> np.ndarray:
    """Signed CDF half-offset h(x) = Phi(x) - 1/2, elementwise float64."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    if USING_NUMBA:
        _cdf_half_kernel(x, out)
    else:
        _cdf_half_numpy(x, out)
    return out


def normal_cdf_array(x: np.ndarray) -> np.ndarray:
    """Standard-normal CDF, elementwise over a float64 array."""
    return 0.5 + normal_cdf_half_array(x)


@njit(cache=True)
def _jacobi_kernel(a: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> int:
    d = a.shape[0]
    for sweep in range(max_sweeps):
        off2 = 0.0
        for i in range(d - 1):
            for j in range(i + 1, d):
                off2 += a[i, j] * a[i, j]
        if math.sqrt(2.0 * off2) <= tol:
            return sweep
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                h = a[q, q] - a[p, p]
                if abs(apq) < 1e-36 * abs(h):
                    # rotation angle underflows: zeroing the pivot directly
                    # perturbs the matrix by less than 1e-36 * |h|
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                theta = h / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                a[p, p] -= t * apq
                a[q, q] += t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(d):
                    if i != p and i != q:
                        aip = a[i, p]
                        aiq = a[i, q]
                        a[i, p] = c * aip - s * aiq
                        a[p, i] = a[i, p]
                        a[i, q] = c * aiq + s * aip
                        a[q, i] = a[i, q]
                for i in range(d):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - s * viq
                    v[i, q] = c * viq + s * vip
    off2 = 0.0
    for i in range(d - 1):
        for j in range(i + 1, d):
            off2 += a[i, j] * a[i, j]
    if math.sqrt(2.0 * off2) <= tol:
        return max_sweeps
    return -1


def _jacobi_numpy(a: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> int:
    d = a.shape[0]

    def off_norm() -> float:
        # summed directly over off-diagonal entries; a difference of the
        # full and diagonal sums cancels catastrophically near convergence
        off = a.copy()
        np.fill_diagonal(off, 0.0)
        return math.sqrt(float(np.sum(off * off)))

    for sweep in range(max_sweeps):
        if off_norm() <= tol:
            return sweep
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = float(a[p, q])
                if apq == 0.0:
                    continue
                h = float(a[q, q] - a[p, p])
                if abs(apq) < 1e-36 * abs(h):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                theta = h / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = c * col_q + s * col_p
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = c * row_q + s * row_p
                a[p, q] = 0.0
                a[q, p] = 0.0
                vcol_p = v[:, p].copy()
                vcol_q = v[:, q].copy()
                v[:, p] = c * vcol_p - s * vcol_q
                v[:, q] = c * vcol_q + s * vcol_p
    return max_sweeps if off_norm() <= tol else -1


def jacobi_sweeps(a: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> int:
    """Run cyclic Jacobi rotations in place until off(A) <= tol.

    ``a`` converges to a near-diagonal matrix, ``v`` (identity on entry)
    accumulates the eigenvectors as columns.  Returns the number of
    sweeps used, or -1 if the cap was hit before convergence.
    """
    if USING_NUMBA:
        return int(_jacobi_kernel(a, v, tol, max_sweeps))
    return _jacobi_numpy(a, v, tol, max_sweeps)


@njit(cache=True)
def _ap_kernel(hits: np.ndarray, n_pos: int) -> float:
    total = 0.0
    seen = 0
    for i in range(hits.shape[0]):
        if hits[i]:
            seen += 1
            total += seen / (i + 1.0)
    return total / n_pos


def _ap_numpy(hits: np.ndarray, n_pos: int) -> float:
    total = 0.0
    seen = 0
    for i in np.flatnonzero(hits).tolist():
        seen += 1
        total += seen / (i + 1.0)
    return total / n_pos


def ap_from_hits(hits: np.ndarray, n_pos: int) -> float:
    """Average precision from a 0/1 hit vector in rank order.

    Accumulation is strictly left to right in both paths so results are
    bit-stable across runs and thread counts.
    """
    hits = np.ascontiguousarray(hits, dtype=np.uint8)
    if USING_NUMBA:
        return float(_ap_kernel(hits, n_pos))
    return _ap_numpy(hits, n_pos)
