"""Independent oracles for the test suite: scalar reference implementations
and classic algorithms that never share code with the package paths they
check."""

from __future__ import annotations

import math

import numpy as np


def matmul_loops(a, b):
    """Scalar triple loop, inner loop over the contracted index in ascending
    order; the reference for bit-exact matmul comparisons."""
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for kk in range(k):
                acc += float(a[i][kk]) * float(b[kk][j])
            out[i][j] = acc
    return np.array(out)


def mean_columns_loops(m):
    rows, cols = m.shape
    out = []
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += float(m[i, j])
        out.append(acc / cols)
    return np.array(out)


def jacobi_eigenvalues(m, sweeps: int = 50, tol: float = 1e-13) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(m, dtype=float)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    for _ in range(sweeps):
        off = math.sqrt(float(np.sum(a * a) - np.sum(np.diag(a) ** 2)))
        if off <= tol * max(1.0, float(np.max(np.abs(a)))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def rank_via_minors(m, tol: float = 1e-12) -> bool:
    """True iff every 2x2 minor vanishes, i.e. the matrix has rank <= 1."""
    rows, cols = m.shape
    scale = max(1.0, float(np.max(np.abs(m))))
    for i in range(rows):
        for k in range(i + 1, rows):
            for j in range(cols):
                for l in range(j + 1, cols):
                    if abs(m[i, j] * m[k, l] - m[i, l] * m[k, j]) > tol * scale * scale:
                        return False
    return True


def scalar_two_layer_tanh(w1, b1, w2, b2, x):
    """Straight-line scalar forward pass for a 2-layer tanh/identity net."""
    h, batch = len(w1), len(x[0])
    outs = []
    for s in range(batch):
        hidden = []
        for i in range(h):
            acc = b1[i]
            for j in range(len(x)):
                acc += w1[i][j] * x[j][s]
            hidden.append(math.tanh(acc))
        row = []
        for i in range(len(w2)):
            acc = b2[i]
            for j in range(h):
                acc += w2[i][j] * hidden[j]
            row.append(acc)
        outs.append(row)
    return np.array(outs).T


def random_spd(rng: np.random.Generator, d: int, jitter: float = 1.0) -> np.ndarray:
    x = rng.standard_normal((d, d))
    return x @ x.T + jitter * np.eye(d)


def dense_kron_quadratic(delta_w, grad, left, right) -> float:
    """Brute-force evaluation of sum(dW.grad) + sum_{ijkl} dW[i,j] L[i,k]
    dW[k,l] R[l,j]; the dense oracle for the pruning surrogate."""
    first = float(np.sum(delta_w * grad))
    rows, cols = delta_w.shape
    quad = 0.0
    for i in range(rows):
        for j in range(cols):
            for k in range(rows):
                for l in range(cols):
                    quad += delta_w[i, j] * left[i, k] * delta_w[k, l] * right[l, j]
    return first + quad


def sngd_dense_update(a, g, grad, mu) -> np.ndarray:
    """Explicit d^2 x d^2 construction of (U U^T + mu I)^{-1} applied to
    vec(grad), where U's columns are the per-sample weight gradients."""
    d_out, b = g.shape
    d_in = a.shape[0]
    u = np.zeros((d_out * d_in, b))
    for i in range(b):
        u[:, i] = np.outer(g[:, i], a[:, i]).reshape(-1)
    fim = u @ u.T + mu * np.eye(d_out * d_in)
    return np.linalg.solve(fim, grad.reshape(-1)).reshape(d_out, d_in)
