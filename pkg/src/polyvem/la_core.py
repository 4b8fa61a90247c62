"""Sparse assembly, direct solves, Newton iteration, constraint handling."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    """Raised when a factorization or a Newton iteration fails."""


def parallel_map(fn, items):
    """Map fn over items, threaded when POLYVEM_THREADS > 1.

    Cell-local element construction is independent, so a thread pool is
    safe; the default (unset or 1) stays serial.
    """
    try:
        nthreads = int(os.environ.get("POLYVEM_THREADS", "1"))
    except ValueError:
        nthreads = 1
    items = list(items)
    if nthreads <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        return list(pool.map(fn, items))


def assemble(rows, cols, values, shape) -> sp.csr_matrix:
    """Assemble a CSR matrix from triplets, summing duplicates.

    Raises ValueError if any index is out of range.
    """
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    values = np.asarray(values, dtype=float)
    if rows.size and (rows.min() < 0 or rows.max() >= shape[0]
                      or cols.min() < 0 or cols.max() >= shape[1]):
        raise ValueError("triplet index out of range")
    A = sp.coo_matrix((values, (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    return A


def solve_direct(A, b, check: bool = True) -> np.ndarray:
    """Sparse LU solve with a relative-residual check (<= 1e-10).

    One pass of iterative refinement is applied when the first solve
    leaves a residual above the threshold (pivot growth on badly scaled
    higher-order systems); a persistent failure raises SolverError.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    try:
        lu = spla.splu(A)
        x = lu.solve(b)
    except RuntimeError as exc:  # exactly singular
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("direct solve produced non-finite values")
    if check:
        nb = np.linalg.norm(b)
        if nb > 0:
            # backward error: residual against ||A|| ||x|| + ||b||, the
            # scale-invariant measure (a pure ||b|| denominator hits the
            # rounding floor of A @ x on stiff fourth-order systems)
            anorm = spla.norm(A, 1)
            resid = b - A @ x
            scale = anorm * np.linalg.norm(x) + nb
            if np.linalg.norm(resid) / scale > 1e-10:
                x = x + lu.solve(resid)
                resid = b - A @ x
                scale = anorm * np.linalg.norm(x) + nb
            rel = np.linalg.norm(resid) / scale
            if rel > 1e-10:
                raise SolverError(f"direct solve residual {rel:.3e} exceeds 1e-10")
    return x


@dataclass
class NewtonSettings:
    rel_tol: float = 1e-6
    abs_tol: float = 0.0
    max_iter: int = 30
    max_halvings: int = 8


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norms: list


def newton_solve(residual, jacobian, x0, settings: NewtonSettings | None = None,
                 freeze_jacobian: bool = False) -> NewtonResult:
    """Damped Newton iteration for residual(x) = 0.

    jacobian(x) must return something matrix-like accepted by
    solve_direct.  A step is halved (up to max_halvings times) while it
    does not reduce the residual norm.  With freeze_jacobian=True the
    Jacobian is factorized once at x0 and reused (modified Newton).

    Raises SolverError when the iteration fails to converge.
    """
    st = settings or NewtonSettings()
    x = np.array(x0, dtype=float)
    r = np.asarray(residual(x), dtype=float)
    norm0 = np.linalg.norm(r)
    norms = [norm0]
    target = max(st.rel_tol * norm0, st.abs_tol)
    if norm0 <= target:
        return NewtonResult(x, 0, True, norms)
    lu = None
    if freeze_jacobian:
        lu = spla.splu(sp.csc_matrix(jacobian(x)))
    for it in range(1, st.max_iter + 1):
        if freeze_jacobian:
            dx = -lu.solve(r)
        else:
            dx = -solve_direct(jacobian(x), r, check=False)
        step = 1.0
        for _ in range(st.max_halvings + 1):
            r_new = np.asarray(residual(x + step * dx), dtype=float)
            n_new = np.linalg.norm(r_new)
            if np.isfinite(n_new) and n_new < norms[-1]:
                break
            step *= 0.5
        else:
            raise SolverError("Newton line search failed to reduce the residual")
        x = x + step * dx
        r = r_new
        norms.append(n_new)
        if n_new <= target:
            return NewtonResult(x, it, True, norms)
    raise SolverError(
        f"Newton did not converge in {st.max_iter} iterations "
        f"(last residual {norms[-1]:.3e}, target {target:.3e})")


def eliminate_dirichlet(A, b, fixed_idx, fixed_vals=None):
    """Row/column elimination of constrained unknowns.

    Returns (A_ff, b_f, free_idx): the reduced operator on free unknowns
    and the right-hand side corrected symmetrically by the constrained
    values.  Use expand_dirichlet to scatter a reduced solution back.
    """
    n = A.shape[0]
    fixed_idx = np.asarray(fixed_idx, dtype=int)
    if fixed_vals is None:
        fixed_vals = np.zeros(len(fixed_idx))
    fixed_vals = np.asarray(fixed_vals, dtype=float)
    mask = np.ones(n, dtype=bool)
    mask[fixed_idx] = False
    free = np.nonzero(mask)[0]
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    b_f = b[free]
    if len(fixed_idx):
        b_f = b_f - A[free][:, fixed_idx] @ fixed_vals
    A_ff = A[free][:, free]
    return A_ff, b_f, free


def expand_dirichlet(x_free, free_idx, n, fixed_idx=None, fixed_vals=None):
    """Scatter a reduced solution into the full vector of n unknowns."""
    x = np.zeros(n)
    x[free_idx] = x_free
    if fixed_idx is not None and fixed_vals is not None:
        x[np.asarray(fixed_idx, dtype=int)] = fixed_vals
    return x
