"""Sparse assembly, direct solves, Newton, Dirichlet elimination."""

import os

import numpy as np
import pytest
import scipy.sparse as sp

from polyvem.la_core import (NewtonResult, NewtonSettings, SolverError,
                             assemble, eliminate_dirichlet, expand_dirichlet,
                             newton_solve, parallel_map, solve_direct)


def test_assemble_sums_duplicates():
    A = assemble([0, 0, 1], [0, 0, 2], [1.0, 2.5, -1.0], (2, 3))
    assert A.shape == (2, 3)
    assert A[0, 0] == 3.5
    assert A[1, 2] == -1.0
    assert A.nnz == 2


def test_assemble_rejects_out_of_range():
    with pytest.raises(ValueError):
        assemble([0, 2], [0, 0], [1.0, 1.0], (2, 2))
    with pytest.raises(ValueError):
        assemble([0], [-1], [1.0], (2, 2))


def test_solve_direct_matches_dense():
    rng = np.random.default_rng(11)
    n = 40
    B = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.3)
    A = sp.csr_matrix(B @ B.T + n * np.eye(n))
    b = rng.standard_normal(n)
    x = solve_direct(A, b)
    assert np.allclose(x, np.linalg.solve(A.toarray(), b), atol=1e-9)


def test_solve_direct_flags_singular():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError):
        solve_direct(A, np.array([1.0, 0.0]))


def test_newton_converges_quadratically():
    # scalar-ish system: x^2 = 2 componentwise
    def residual(x):
        return x * x - 2.0

    def jacobian(x):
        return sp.diags(2.0 * x).tocsr()

    res = newton_solve(residual, jacobian, np.array([1.0, 3.0]),
                       NewtonSettings(rel_tol=1e-12))
    assert isinstance(res, NewtonResult)
    assert res.converged
    assert np.allclose(res.x, np.sqrt(2.0), atol=1e-10)
    # superlinear tail
    tail = res.residual_norms[-3:]
    assert tail[2] < 1e-3 * tail[1]


def test_newton_frozen_jacobian_still_converges():
    def residual(x):
        return x * x - 2.0

    def jacobian(x):
        return sp.diags(2.0 * x).tocsr()

    res = newton_solve(residual, jacobian, np.array([1.4, 1.4]),
                       NewtonSettings(rel_tol=1e-10, max_iter=60),
                       freeze_jacobian=True)
    assert res.converged
    assert res.iterations > 2  # linear, not quadratic
    assert np.allclose(res.x, np.sqrt(2.0), atol=1e-8)


def test_newton_reports_failure():
    def residual(x):
        return np.array([1.0 + x[0] ** 2])

    def jacobian(x):
        return sp.csr_matrix(np.array([[2.0 * x[0]]]))

    with pytest.raises(SolverError):
        newton_solve(residual, jacobian, np.array([0.5]),
                     NewtonSettings(max_iter=8))


def test_eliminate_expand_round_trip():
    rng = np.random.default_rng(4)
    n = 12
    M = rng.standard_normal((n, n))
    A = sp.csr_matrix(M @ M.T + n * np.eye(n))
    x_ref = rng.standard_normal(n)
    b = A @ x_ref
    fixed = np.array([0, 3, 7])
    A_ff, b_f, free = eliminate_dirichlet(A, b, fixed, x_ref[fixed])
    x_f = np.linalg.solve(A_ff.toarray(), b_f)
    x = expand_dirichlet(x_f, free, n, fixed, x_ref[fixed])
    assert np.allclose(x, x_ref, atol=1e-10)


def test_eliminate_with_no_fixed_dofs():
    A = sp.eye(3, format="csr")
    b = np.array([1.0, 2.0, 3.0])
    A_ff, b_f, free = eliminate_dirichlet(A, b, np.array([], dtype=int))
    assert A_ff.shape == (3, 3)
    assert np.array_equal(free, [0, 1, 2])
    assert np.array_equal(b_f, b)


def test_parallel_map_matches_serial(monkeypatch):
    items = list(range(17))
    fn = lambda i: i * i
    monkeypatch.delenv("POLYVEM_THREADS", raising=False)
    serial = parallel_map(fn, items)
    monkeypatch.setenv("POLYVEM_THREADS", "4")
    threaded = parallel_map(fn, items)
    assert serial == threaded == [i * i for i in items]
    monkeypatch.setenv("POLYVEM_THREADS", "not-a-number")
    assert parallel_map(fn, items) == serial
