import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from singleloop.errors import InputError, SingularHessian
from singleloop.numerics import finite_diff_grad, spd_solve, spectral_norm, sym_eig_extremes
import singleloop.numerics as numerics


def gauss_eliminate(M, rhs):
    """Textbook elimination with partial pivoting, kept independent of LAPACK."""
    a = [list(map(float, row)) + [float(r)] for row, r in zip(M, rhs)]
    n = len(a)
    for col in range(n):
        piv = max(range(col, n), key=lambda i: abs(a[i][col]))
        a[col], a[piv] = a[piv], a[col]
        for i in range(col + 1, n):
            f = a[i][col] / a[col][col]
            for j in range(col, n + 1):
                a[i][j] -= f * a[col][j]
    x = [0.0] * n
    for i in reversed(range(n)):
        x[i] = (a[i][n] - sum(a[i][j] * x[j] for j in range(i + 1, n))) / a[i][i]
    return x


def test_spd_solve_identity():
    np.testing.assert_array_equal(spd_solve(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_spd_solve_scalar():
    assert spd_solve([[2.0]], [6.0])[0] == pytest.approx(3.0, abs=1e-15)


def test_spd_solve_against_elimination():
    M = np.array([[4.0, 1.0], [1.0, 3.0]])
    rhs = np.array([1.0, 2.0])
    expected = gauss_eliminate(M, rhs)
    x = spd_solve(M, rhs)
    np.testing.assert_allclose(x, expected, rtol=1e-13)
    assert np.linalg.norm(M @ x - rhs) <= 1e-10 * (1 + np.linalg.norm(rhs))


def test_spd_solve_rejects_indefinite():
    with pytest.raises(SingularHessian):
        spd_solve([[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0])
    with pytest.raises(SingularHessian):
        spd_solve([[0.0]], [1.0])


def test_spd_solve_residual_random(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        G = rng.standard_normal((n, n))
        M = G.T @ G + np.eye(n)
        rhs = rng.standard_normal(n)
        x = spd_solve(M, rhs)
        assert np.linalg.norm(M @ x - rhs) <= 1e-10 * (1 + np.linalg.norm(rhs))


def test_spd_solve_iterative_branch(monkeypatch, rng):
    monkeypatch.setattr(numerics, "DIRECT_SOLVE_LIMIT", 4)
    G = rng.standard_normal((30, 30))
    M = G.T @ G + np.eye(30)
    rhs = rng.standard_normal(30)
    x = spd_solve(M, rhs)
    assert np.linalg.norm(M @ x - rhs) <= 1e-10 * (1 + np.linalg.norm(rhs))
    with pytest.raises(SingularHessian):
        spd_solve(-M, rhs)


def test_spectral_norm_simple():
    assert spectral_norm(np.eye(4)) == pytest.approx(1.0, rel=1e-12)
    assert spectral_norm(np.diag([3.0, -5.0])) == pytest.approx(5.0, rel=1e-12)
    assert spectral_norm(np.zeros((2, 3))) == 0.0


def test_spectral_norm_closed_form_2x2():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    s = float(np.sum(M**2))
    det = float(np.linalg.det(M))
    expected = math.sqrt((s + math.sqrt(s * s - 4 * det * det)) / 2)
    assert spectral_norm(M) == pytest.approx(expected, rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-100, 100)))
def test_spectral_norm_transpose_invariant(M):
    a, b = spectral_norm(M), spectral_norm(M.T)
    assert a == pytest.approx(b, rel=1e-8, abs=1e-300)


def test_sym_eig_extremes_examples():
    assert sym_eig_extremes(np.diag([1.0, 2.0, 7.0])) == pytest.approx((1.0, 7.0), rel=1e-12)
    assert sym_eig_extremes(np.eye(5)) == pytest.approx((1.0, 1.0), rel=1e-12)
    # characteristic polynomial (2 - t)^2 - 1 = 0
    assert sym_eig_extremes(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx((1.0, 3.0), rel=1e-12)


def test_sym_eig_extremes_rejects_asymmetric():
    with pytest.raises(InputError):
        sym_eig_extremes(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_rayleigh_quotient_within_extremes(rng):
    for _ in range(200):
        n = int(rng.integers(1, 12))
        G = rng.standard_normal((n, n))
        M = G + G.T
        lo, hi = sym_eig_extremes(M)
        x = rng.standard_normal(n)
        q = x @ M @ x / (x @ x)
        assert lo - 1e-12 * abs(lo) <= q + 1e-12 and q <= hi + 1e-12 * (1 + abs(hi))


def test_finite_diff_examples():
    g = finite_diff_grad(lambda x: x[0] ** 2, [3.0], 1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-8)
    np.testing.assert_array_equal(finite_diff_grad(lambda x: 7.0, [1.0, 2.0], 1e-3), [0.0, 0.0])
    np.testing.assert_allclose(finite_diff_grad(lambda x: x[0] * x[1], [2.0, 5.0], 1e-5), [5.0, 2.0], atol=1e-8)


def test_finite_diff_rejects_bad_step():
    with pytest.raises(InputError):
        finite_diff_grad(lambda x: 0.0, [1.0], 0.0)
