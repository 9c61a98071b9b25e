import numpy as np
import pytest
from hypothesis import given, strategies as st

from imaml.errors import CurvatureError, DimensionError
from imaml.linear_solver import LinearOperator, cg_solve


def dense(m):
    return LinearOperator(m.shape[0], lambda v: m @ v)


def spd(d, seed, kappa=20.0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (q * np.linspace(1.0, kappa, d)) @ q.T


def test_identity_one_iteration():
    rhs = np.array([1.0, -2.0, 3.0])
    res = cg_solve(dense(np.eye(3)), rhs, max_iters=10)
    np.testing.assert_array_equal(res.w, rhs)
    assert res.iterations == 1 and res.matvecs == 1 and res.converged


def test_two_by_two_finite_termination():
    m = np.array([[4.0, 1.0], [1.0, 3.0]])
    rhs = np.array([1.0, 2.0])
    res = cg_solve(dense(m), rhs, max_iters=2, residual_tol=0.0)
    np.testing.assert_allclose(res.w, np.linalg.solve(m, rhs), atol=1e-12)
    assert res.iterations == 2


def test_zero_rhs():
    res = cg_solve(dense(spd(4, 0)), np.zeros(4), max_iters=10)
    np.testing.assert_array_equal(res.w, np.zeros(4))
    assert res.iterations == 0 and res.matvecs == 0


@given(st.integers(2, 30), st.integers(0, 10 ** 6))
def test_reaches_tolerance_within_d_iterations(d, seed):
    m = spd(d, seed, kappa=10.0)
    rhs = np.random.default_rng(seed + 1).standard_normal(d)
    res = cg_solve(dense(m), rhs, max_iters=d, residual_tol=1e-10)
    assert res.converged and res.iterations <= d
    # reported residual is the recursive one; compare with the true residual
    assert abs(np.linalg.norm(m @ res.w - rhs) - res.residual_norm) < 1e-10


def test_energy_error_nonincreasing():
    m = spd(20, 3, kappa=100.0)
    rhs = np.random.default_rng(4).standard_normal(20)
    w_star = np.linalg.solve(m, rhs)
    errs = []
    for k in range(21):
        w = cg_solve(dense(m), rhs, max_iters=k, residual_tol=0.0).w
        e = w - w_star
        errs.append(e @ m @ e)
    assert all(b <= a * (1 + 1e-12) + 1e-20 for a, b in zip(errs, errs[1:]))


def test_warm_start_costs_one_matvec():
    m = spd(5, 1)
    rhs = np.ones(5)
    res = cg_solve(dense(m), rhs, max_iters=3, x0=np.full(5, 0.1), residual_tol=0.0)
    assert res.matvecs == res.iterations + 1


def test_indefinite_raises_with_partial():
    m = np.diag([1.0, -1.0])
    with pytest.raises(CurvatureError) as info:
        cg_solve(dense(m), np.array([0.0, 1.0]), max_iters=5)
    assert info.value.iteration == 0
    np.testing.assert_array_equal(info.value.partial, np.zeros(2))


def test_shape_checked():
    with pytest.raises(DimensionError):
        cg_solve(dense(np.eye(3)), np.ones(2), max_iters=3)
