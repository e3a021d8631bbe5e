import numpy as np
import pytest

from kronopt import linalg
from kronopt.linalg import (
    DimensionMismatch,
    SingularMatrix,
    cholesky,
    direct_inverse,
    inf_norm,
    make_rng,
    matmul,
    matvec,
    mean_columns,
    outer,
    power_iteration_extremes,
)

from oracles import jacobi_eigenvalues, matmul_loops, mean_columns_loops, rank_via_minors, random_spd


class TestMatmul:
    def test_identity(self):
        rng = make_rng(0)
        m = rng.standard_normal((5, 3))
        assert np.array_equal(matmul(np.eye(5), m), m)

    def test_permutation(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert np.array_equal(matmul(a, b), np.array([[2.0, 1.0], [4.0, 3.0]]))

    def test_matches_triple_loop_bitwise(self):
        rng = make_rng(42)
        a = rng.standard_normal((8, 8))
        b = rng.standard_normal((8, 8))
        got = matmul(a, b)
        want = matmul_loops(a, b)
        assert np.array_equal(got, want)  # 0 ULP, same summation order

    def test_rectangular_matches_loop(self):
        rng = make_rng(3)
        a = rng.standard_normal((4, 7))
        b = rng.standard_normal((7, 5))
        assert np.array_equal(matmul(a, b), matmul_loops(a, b))

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestOuter:
    def test_basis(self):
        e1 = np.array([1.0, 0.0, 0.0])
        m = outer(e1, e1)
        want = np.zeros((3, 3))
        want[0, 0] = 1.0
        assert np.array_equal(m, want)

    def test_hand_expansion(self):
        m = outer(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        assert np.array_equal(m, np.array([[3.0, 4.0], [6.0, 8.0]]))

    def test_rank_one_by_minor_check(self):
        rng = make_rng(7)
        m = outer(rng.standard_normal(16), rng.standard_normal(16))
        assert rank_via_minors(m, tol=1e-12)


class TestDirectInverse:
    def test_diagonal(self):
        inv = direct_inverse(np.diag([2.0, 4.0]))
        assert np.allclose(inv, np.diag([0.5, 0.25]), atol=1e-15)

    def test_identity(self):
        assert np.array_equal(direct_inverse(np.eye(4)), np.eye(4))

    def test_spd_residual(self):
        rng = make_rng(11)
        m = random_spd(rng, 32)
        inv = direct_inverse(m)
        residual = inf_norm(m @ inv - np.eye(32))
        assert residual < 1e-9

    def test_residual_bound_random_spd(self):
        rng = make_rng(5)
        for d in (4, 16, 64):
            m = random_spd(rng, d)
            residual = inf_norm(m @ direct_inverse(m) - np.eye(d))
            assert residual < 1e-8 * d

    def test_singular_raises(self):
        m = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrix):
            direct_inverse(m)

    def test_zero_raises(self):
        with pytest.raises(SingularMatrix):
            direct_inverse(np.zeros((3, 3)))

    def test_matches_numpy(self):
        rng = make_rng(13)
        m = rng.standard_normal((10, 10)) + 5 * np.eye(10)
        assert np.allclose(direct_inverse(m), np.linalg.inv(m), atol=1e-10)


class TestCholesky:
    def test_identity(self):
        assert np.array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_hand_factorization(self):
        c = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
        want = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
        assert np.allclose(c, want, atol=1e-15)

    def test_negative_definite_fails(self):
        assert cholesky(-np.eye(3)) is None

    def test_reconstruction(self):
        rng = make_rng(17)
        m = random_spd(rng, 12)
        c = cholesky(m)
        assert np.allclose(c @ c.T, m, atol=1e-10)

    def test_agrees_with_jacobi_sign(self):
        rng = make_rng(19)
        for _ in range(20):
            d = int(rng.integers(2, 10))
            base = random_spd(rng, d, jitter=0.0)
            eigs = jacobi_eigenvalues(base)
            shift_pd = base + (abs(eigs[0]) + 0.1) * np.eye(d)
            shift_nd = base - (eigs[-1] + 0.1) * np.eye(d)
            assert cholesky(shift_pd) is not None
            assert cholesky(shift_nd) is None

    def test_non_square_raises(self):
        with pytest.raises(DimensionMismatch):
            cholesky(np.ones((2, 3)))


class TestPowerIteration:
    def test_diag(self):
        lmax, lmin = power_iteration_extremes(np.diag([1.0, 10.0]))
        assert abs(lmax - 10.0) < 1e-8
        assert abs(lmin - 1.0) < 1e-8

    def test_identity(self):
        lmax, lmin = power_iteration_extremes(np.eye(4))
        assert abs(lmax - 1.0) < 1e-10
        assert abs(lmin - 1.0) < 1e-10

    def test_against_jacobi(self):
        rng = make_rng(23)
        m = random_spd(rng, 16)
        eigs = jacobi_eigenvalues(m)
        lmax, lmin = power_iteration_extremes(m, iters=500)
        assert abs(lmax - eigs[-1]) < 0.01 * eigs[-1]
        assert abs(lmin - eigs[0]) < 0.01 * eigs[0]


class TestPlumbing:
    def test_matvec_matches_loop(self):
        rng = make_rng(29)
        m = rng.standard_normal((6, 4))
        v = rng.standard_normal(4)
        want = np.array([sum(float(m[i, j]) * float(v[j]) for j in range(4)) for i in range(6)])
        assert np.allclose(matvec(m, v), want, rtol=1e-13)

    def test_mean_columns_bitwise(self):
        rng = make_rng(31)
        m = rng.standard_normal((8, 5))
        assert np.array_equal(mean_columns(m), mean_columns_loops(m))

    def test_mean_columns_hand(self):
        assert np.array_equal(
            mean_columns(np.array([[1.0, 3.0], [2.0, 4.0]])), np.array([2.0, 3.0])
        )

    def test_inf_norm_row_sums(self):
        m = np.array([[1.0, -2.0], [3.0, 4.0]])
        assert inf_norm(m) == 7.0

    def test_transpose_scale_add(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(linalg.transpose(m), m.T)
        assert np.array_equal(linalg.scale(m, 2.0), 2.0 * m)
        assert np.array_equal(linalg.add(m, m), 2.0 * m)

    def test_frobenius(self):
        assert abs(linalg.frobenius_norm(np.array([[3.0, 4.0]])) - 5.0) < 1e-15


class TestDeterminism:
    def test_rng_reproducible(self):
        a = make_rng(123).standard_normal(100)
        b = make_rng(123).standard_normal(100)
        assert np.array_equal(a, b)

    def test_ops_bitwise_repeatable(self):
        rng1, rng2 = make_rng(9), make_rng(9)
        a1, b1 = rng1.standard_normal((12, 12)), rng1.standard_normal((12, 12))
        a2, b2 = rng2.standard_normal((12, 12)), rng2.standard_normal((12, 12))
        assert np.array_equal(matmul(a1, b1), matmul(a2, b2))
        m1 = random_spd(make_rng(10), 8)
        m2 = random_spd(make_rng(10), 8)
        assert np.array_equal(direct_inverse(m1), direct_inverse(m2))
