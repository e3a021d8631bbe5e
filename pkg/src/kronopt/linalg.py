"""Deterministic dense linear algebra on float64 numpy arrays.

This is the only numeric substrate the rest of the package uses.  Matrices
are 2-D C-contiguous float64 arrays (row-major), vectors are 1-D float64
arrays.  Summation-order sensitive kernels (``matmul``, ``mean_columns``)
accumulate in a fixed order, ascending over the contracted index, so their
results are bit-identical to a scalar triple loop with the same order.
Inverse and factorization routines are written here rather than delegated to
LAPACK so that pivoting and failure behavior are fully pinned down; the test
suite checks them against independent oracles.

No sparse formats, no complex numbers, no BLAS bindings beyond numpy's
elementwise kernels and small-vector dot products.
"""

from __future__ import annotations

import numpy as np

from . import counters


class LinalgError(Exception):
    """Base class for numeric-substrate failures."""


class DimensionMismatch(LinalgError):
    """Operands have incompatible shapes (contract violation)."""


class SingularMatrix(LinalgError):
    """Matrix is singular to working precision."""


# Relative pivot threshold: pivots below this times the input magnitude are
# treated as exact zeros.  Chosen so condition numbers up to ~1e8 still invert.
_PIVOT_RTOL = 1e-13


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the same seed yields the same stream everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(a) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {np.shape(a)}")
    return m


def as_vector(a) -> np.ndarray:
    v = np.ascontiguousarray(a, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {np.shape(a)}")
    return v


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product with pinned summation order.

    Entry (i, j) accumulates a[i, k] * b[k, j] for k ascending, one rounded
    multiply and one rounded add per term, exactly like the scalar triple
    loop with the inner loop over k.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"matmul: {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    tmp = np.empty((m, n), dtype=np.float64)
    for j in range(k):
        np.multiply(a[:, j : j + 1], b[j : j + 1, :], out=tmp)
        np.add(out, tmp, out=out)
    counters.add_flops(2.0 * m * n * k)
    return out


def matvec(m, v) -> np.ndarray:
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionMismatch(f"matvec: {m.shape} x {v.shape}")
    counters.add_flops(2.0 * m.shape[0] * m.shape[1])
    return m @ v


def dot(u, v) -> float:
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise DimensionMismatch(f"dot: {u.shape} vs {v.shape}")
    counters.add_flops(2.0 * u.shape[0])
    return float(np.dot(u, v))


def outer(u, v) -> np.ndarray:
    u = as_vector(u)
    v = as_vector(v)
    counters.add_flops(float(u.shape[0] * v.shape[0]))
    return np.outer(u, v)


def transpose(m) -> np.ndarray:
    return np.ascontiguousarray(as_matrix(m).T)


def scale(m, alpha: float) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    counters.add_flops(float(m.size))
    return m * float(alpha)


def add(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"add: {a.shape} vs {b.shape}")
    counters.add_flops(float(a.size))
    return a + b


def symmetrize(m) -> np.ndarray:
    """(M + M^T) / 2; absorbs roundoff drift before PD-sensitive operations."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"symmetrize: non-square {m.shape}")
    counters.add_flops(2.0 * m.size)
    return (m + m.T) * 0.5


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1)
    counters.add_flops(2.0 * flat.size)
    return float(np.sqrt(np.dot(flat, flat)))


def inf_norm(m) -> float:
    """Induced infinity norm: maximum absolute row sum (max |x| for vectors)."""
    m = np.asarray(m, dtype=np.float64)
    counters.add_flops(2.0 * m.size)
    if m.ndim == 1:
        return float(np.max(np.abs(m))) if m.size else 0.0
    return float(np.max(np.sum(np.abs(m), axis=1)))


def mean_columns(m) -> np.ndarray:
    """Row-wise mean over columns, accumulated column-by-column in order."""
    m = as_matrix(m)
    rows, cols = m.shape
    acc = np.zeros(rows, dtype=np.float64)
    for j in range(cols):
        np.add(acc, m[:, j], out=acc)
    counters.add_flops(float(rows * cols + rows))
    return acc / float(cols)


def direct_inverse(m) -> np.ndarray:
    """Dense inverse via Gauss-Jordan elimination with partial pivoting.

    Raises :class:`SingularMatrix` when a pivot falls below the relative
    threshold.  For condition numbers up to ~1e8 the residual satisfies
    ||m @ inv - I||_inf <= 1e-8 * n.
    """
    m = as_matrix(m)
    n = m.shape[0]
    if m.shape[1] != n:
        raise DimensionMismatch(f"direct_inverse: non-square {m.shape}")
    base = float(np.max(np.abs(m)))
    if base == 0.0:
        raise SingularMatrix("zero matrix")
    aug = np.concatenate([m, np.eye(n)], axis=1)
    tmp = np.empty_like(aug)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) <= _PIVOT_RTOL * base:
            raise SingularMatrix(f"pivot {aug[piv, col]:.3e} at column {col}")
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        factors = aug[:, col].copy()
        factors[col] = 0.0
        np.multiply(factors[:, None], aug[col][None, :], out=tmp)
        np.subtract(aug, tmp, out=aug)
    counters.add_flops(4.0 * n * n * n)
    return np.ascontiguousarray(aug[:, n:])


def cholesky(m) -> np.ndarray | None:
    """Lower-triangular C with C @ C.T ~= (M + M.T)/2, or None if not PD.

    Input is symmetrized first; failure (non-positive or non-finite diagonal
    during factorization) means "not positive-definite within tolerance".
    """
    m = as_matrix(m)
    n = m.shape[0]
    if m.shape[1] != n:
        raise DimensionMismatch(f"cholesky: non-square {m.shape}")
    s = symmetrize(m)
    c = np.zeros_like(s)
    for j in range(n):
        d = s[j, j] - float(np.dot(c[j, :j], c[j, :j]))
        if not np.isfinite(d) or d <= 0.0:
            return None
        c[j, j] = np.sqrt(d)
        if j + 1 < n:
            c[j + 1 :, j] = (s[j + 1 :, j] - c[j + 1 :, :j] @ c[j, :j]) / c[j, j]
    counters.add_flops(n * n * n / 3.0)
    return c


def is_positive_definite(m) -> bool:
    return cholesky(m) is not None


def _start_vector(n: int) -> np.ndarray:
    # Deterministic, generically non-orthogonal to any fixed eigenvector.
    v = 1.0 + np.arange(n, dtype=np.float64) / max(n, 1)
    return v / float(np.sqrt(np.dot(v, v)))


def _power_iterate(m: np.ndarray, iters: int) -> float:
    v = _start_vector(m.shape[0])
    lam = 0.0
    for _ in range(max(1, iters)):
        w = m @ v
        norm = float(np.sqrt(np.dot(w, w)))
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam = float(v @ (m @ v))
    counters.add_flops(2.0 * m.size * max(1, iters))
    return lam


def power_iteration_extremes(m, iters: int = 200) -> tuple[float, float]:
    """(lambda_max, lambda_min) estimates for a symmetric PSD matrix.

    lambda_max comes from power iteration on m; lambda_min from power
    iteration on direct_inverse(m + delta*I) with shift
    delta = 1e-12 * max(||m||_inf, 1e-30), corrected by subtracting delta.
    If the shifted matrix is still singular, lambda_min is reported as 0.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"power_iteration_extremes: non-square {m.shape}")
    lam_max = _power_iterate(m, iters)
    delta = 1e-12 * max(inf_norm(m), 1e-30)
    try:
        inv = direct_inverse(m + delta * np.eye(m.shape[0]))
    except SingularMatrix:
        return lam_max, 0.0
    mu = _power_iterate(symmetrize(inv), iters)
    if mu <= 0.0:
        return lam_max, 0.0
    return lam_max, 1.0 / mu - delta
