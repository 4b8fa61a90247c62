"""Backward Euler integration of the C1 VEM Cahn-Hilliard scheme.

At every time level the nonlinear system

    (1/dt) A0 (u - u_prev) + gamma^2 Adelta u + r_h(u) = b(t)

is solved by Newton with a direct sparse factorization.  The semilinear
term r_h freezes phi'(u) at its discrete cell average, so its residual
and Jacobian reduce to dense per-cell matrix products which are batched
with einsum over groups of equally sized cells.

Boundary conditions (zero normal derivative) remove the normal gradient
DOF at each boundary vertex; with f = 0 the constant test function is in
the space, making the scheme conserve the discrete mass A0-pairing of u
with 1 exactly up to the Newton tolerance.  After convergence a few
extra iterations with the factored Jacobian push the per-step drift to
the 1e-12 scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .la_core import SolverError
from .mesh import PolygonalMesh
from .poly_basis import polygon_quadrature
from .vem_c1 import (C1LocalSpace, cell_dofs_c1, interpolate_c1,
                     normal_constraint_dofs, ones_dof_vector)

__all__ = [
    "CHProblem", "CHSystem", "step_backward_euler", "manufactured_ch",
    "run_manufactured_convergence", "run_spinodal", "write_ch_csv",
    "SpinodalResult",
]


@dataclass
class CHProblem:
    """Setup for one Cahn-Hilliard run."""
    mesh: PolygonalMesh
    gamma: float
    dt: float
    t_end: float
    u0: np.ndarray
    f: Optional[Callable] = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"interface parameter gamma={self.gamma} "
                             "must be positive")
        if self.dt <= 0:
            raise ValueError(f"time step dt={self.dt} must be positive")
        self.u0 = np.asarray(self.u0, dtype=float)
        want = 3 * self.mesh.n_vertices
        if self.u0.shape != (want,):
            raise ValueError(f"u0 has length {self.u0.size}, expected {want}")


class CHSystem:
    """Assembled global machinery for one mesh and one gamma."""

    def __init__(self, mesh: PolygonalMesh, gamma: float,
                 load: Optional[Callable] = None, quad_degree: int = 5):
        self.mesh = mesh
        self.gamma = float(gamma)
        self.load = load
        self.ndof = 3 * mesh.n_vertices
        self.constrained = normal_constraint_dofs(mesh)
        self.free = np.setdiff1d(np.arange(self.ndof), self.constrained)
        self.ones = ones_dof_vector(mesh)

        groups = {}
        for ci in range(mesh.n_cells):
            groups.setdefault(len(mesh.cells[ci]), []).append(ci)
        self.groups = []
        rows0, cols0, vals0 = [], [], []
        rowsd, colsd, valsd = [], [], []
        jrows, jcols = [], []
        for nv, cidx in sorted(groups.items()):
            d = 3 * nv
            idx = np.array([cell_dofs_c1(mesh, ci) for ci in cidx])
            An = np.empty((len(cidx), d, d))
            A0 = np.empty_like(An)
            piD = np.empty((len(cidx), 6, d))
            areas = np.empty(len(cidx))
            qpts, qw = [], []
            for k, ci in enumerate(cidx):
                geom = mesh.geometry(ci)
                spc = C1LocalSpace(geom)
                An[k] = spc.a_nabla
                A0[k] = spc.a_zero
                piD[k] = spc.pi_delta
                areas[k] = geom.area
                rowsd.append(np.repeat(idx[k], d))
                colsd.append(np.tile(idx[k], d))
                valsd.append(spc.a_delta.ravel())
                rows0.append(rowsd[-1])
                cols0.append(colsd[-1])
                vals0.append(spc.a_zero.ravel())
                pts, wts = polygon_quadrature(geom.vertices, quad_degree)
                qpts.append(pts)
                qw.append(wts * (spc.basis.eval(pts) @ spc.pi_delta).T)
            nq = max(len(p) for p in qpts)
            X = np.zeros((len(cidx), nq))
            Y = np.zeros_like(X)
            WL = np.zeros((len(cidx), d, nq))
            for k, (pts, wl) in enumerate(zip(qpts, qw)):
                X[k, :len(pts)] = pts[:, 0]
                Y[k, :len(pts)] = pts[:, 1]
                WL[k, :, :len(pts)] = wl
            self.groups.append({
                "idx": idx, "An": An, "A0": A0, "piD": piD, "areas": areas,
                "X": X, "Y": Y, "WL": WL,
            })
            jrows.append(np.concatenate([np.repeat(r, d) for r in idx]))
            jcols.append(np.concatenate([np.tile(r, d) for r in idx]))
        self._jrows = np.concatenate(jrows)
        self._jcols = np.concatenate(jcols)
        shape = (self.ndof, self.ndof)
        self.A0 = sps.coo_matrix(
            (np.concatenate(vals0),
             (np.concatenate(rows0), np.concatenate(cols0))),
            shape=shape).tocsr()
        self.Adelta = sps.coo_matrix(
            (np.concatenate(valsd),
             (np.concatenate(rowsd), np.concatenate(colsd))),
            shape=shape).tocsr()
        self._mass_row = self.A0 @ self.ones
        self._a0_norm = float(np.max(np.abs(self.A0).sum(axis=1)))
        self._ad_norm = float(np.max(np.abs(self.Adelta).sum(axis=1)))

    # -- pointwise machinery ------------------------------------------------

    def mass(self, u) -> float:
        """Discrete mass: the A0 pairing of u with the constant 1."""
        return float(self._mass_row @ u)

    def _w_hats(self, u):
        out = []
        for g in self.groups:
            uc = u[g["idx"]]
            out.append(3.0 / g["areas"]
                       * np.einsum("cd,cde,ce->c", uc, g["A0"], uc) - 1.0)
        return out

    def nonlinear_residual(self, u) -> np.ndarray:
        r = np.zeros(self.ndof)
        for g, w in zip(self.groups, self._w_hats(u)):
            uc = u[g["idx"]]
            contrib = w[:, None] * np.einsum("cde,ce->cd", g["An"], uc)
            np.add.at(r, g["idx"].ravel(), contrib.ravel())
        return r

    def nonlinear_jacobian_values(self, u) -> np.ndarray:
        chunks = []
        for g, w in zip(self.groups, self._w_hats(u)):
            uc = u[g["idx"]]
            anu = np.einsum("cde,ce->cd", g["An"], uc)
            a0u = np.einsum("cde,ce->cd", g["A0"], uc)
            vals = w[:, None, None] * g["An"]
            vals += anu[:, :, None] * (6.0 / g["areas"][:, None, None]
                                       * a0u[:, None, :])
            chunks.append(vals.ravel())
        return np.concatenate(chunks)

    def jacobian(self, u, dt) -> sps.csr_matrix:
        Jnl = sps.coo_matrix(
            (self.nonlinear_jacobian_values(u), (self._jrows, self._jcols)),
            shape=(self.ndof, self.ndof)).tocsr()
        return (1.0 / dt) * self.A0 + self.gamma ** 2 * self.Adelta + Jnl

    def load_vector(self, t: float) -> np.ndarray:
        b = np.zeros(self.ndof)
        if self.load is None:
            return b
        for g in self.groups:
            F = self.load(g["X"], g["Y"], t)
            contrib = np.einsum("cdq,cq->cd", g["WL"], F)
            np.add.at(b, g["idx"].ravel(), contrib.ravel())
        return b

    def energy(self, u) -> float:
        """Ginzburg-Landau energy with the cell-averaged double well."""
        e = 0.5 * self.gamma ** 2 * float(u @ (self.Adelta @ u))
        for g in self.groups:
            uc = u[g["idx"]]
            s_hat = np.einsum("cd,cde,ce->c", uc, g["A0"], uc) / g["areas"]
            e += float(np.sum(g["areas"] * (1.0 - s_hat) ** 2 / 4.0))
        return e

    def residual(self, u, u_prev, dt, b) -> np.ndarray:
        return ((1.0 / dt) * (self.A0 @ (u - u_prev))
                + self.gamma ** 2 * (self.Adelta @ u)
                + self.nonlinear_residual(u) - b)

    # -- time stepping ------------------------------------------------------

    def step(self, u_prev, t_new, dt, tol=1e-6, max_iter=30,
             reuse: Optional[dict] = None):
        """One backward Euler step; returns (u, newton_iters).

        With reuse=None this is plain Newton (fresh Jacobian every
        iteration).  reuse, if given, is a dict carrying a factorization
        across steps (chord iterations); it is then refreshed only when
        convergence stalls.
        """
        b = self.load_vector(t_new)
        free = self.free
        u = u_prev.copy()
        u[self.constrained] = 0.0
        r = self.residual(u, u_prev, dt, b)[free]
        scale = np.linalg.norm(r)
        # roundoff floor: the residual of an exact solution evaluates to
        # matrix-norm-scaled rounding noise, not to zero
        unorm = max(1.0, float(np.max(np.abs(u_prev))))
        floor = 1e-12 * unorm * (self._a0_norm / dt
                                 + self.gamma ** 2 * self._ad_norm)
        if scale <= floor:
            return u, 0
        target = max(tol * scale, floor)
        state = reuse if reuse is not None else {}

        def refresh():
            J = self.jacobian(u, dt)[free][:, free].tocsc()
            state["lu"] = spla.splu(J)

        if "lu" not in state:
            refresh()
        rnorm = scale
        it = 0
        while rnorm > target:
            if it >= max_iter:
                raise SolverError(
                    f"Newton stalled at t={t_new:.6g}: residual "
                    f"{rnorm:.3e} vs target {target:.3e} "
                    f"after {it} iterations")
            if reuse is None and it > 0:
                refresh()
            du = state["lu"].solve(-r)
            u[free] += du
            r = self.residual(u, u_prev, dt, b)[free]
            prev, rnorm = rnorm, np.linalg.norm(r)
            it += 1
            if reuse is not None and rnorm > target and rnorm > 0.25 * prev:
                refresh()
        if self.load is None:
            # polish the mass component of the residual; the factored
            # Jacobian makes these extra solves nearly free
            m_scale = max(1.0, abs(self.mass(u_prev)))
            for _ in range(4):
                if dt * abs(self.ones[free] @ r) <= 1e-13 * m_scale:
                    break
                u[free] += state["lu"].solve(-r)
                r = self.residual(u, u_prev, dt, b)[free]
        return u, it

    def run(self, problem: CHProblem, tol=1e-6, chord=False,
            callback=None):
        """March problem.u0 to problem.t_end; returns (u, max_newton_iters)."""
        n_steps = int(round(problem.t_end / problem.dt))
        if abs(n_steps * problem.dt - problem.t_end) > 1e-9 * problem.t_end:
            raise ValueError("t_end must be an integer number of time steps")
        u = problem.u0.copy()
        u[self.constrained] = 0.0
        state = {} if chord else None
        worst = 0
        for i in range(1, n_steps + 1):
            t = i * problem.dt
            try:
                u_new, its = self.step(u, t, problem.dt, tol=tol, reuse=state)
            except SolverError:
                # one retry with a halved step, taken twice
                half = 0.5 * problem.dt
                u_mid, its1 = self.step(u, t - half, half, tol=tol)
                u_new, its2 = self.step(u_mid, t, half, tol=tol)
                its = max(its1, its2)
            worst = max(worst, its)
            if callback is not None:
                callback(i, t, u_new, u)
            u = u_new
        return u, worst


def step_backward_euler(system: CHSystem, u_prev, dt, t_new=None,
                        tol=1e-6):
    """One implicit step of the Cahn-Hilliard scheme."""
    if t_new is None:
        t_new = dt
    return system.step(np.asarray(u_prev, dtype=float), t_new, dt, tol=tol)


def manufactured_ch(gamma: float):
    """Closed-form solution t cos(2 pi x) cos(2 pi y) and its load.

    Returns a dict of vectorized callables: u, ux, uy, uxx, uxy, uyy take
    (x, y, t); f takes (x, y, t) and equals du/dt - Lap(u^3 - u) +
    gamma^2 Lap^2 u.
    """
    import sympy as sy

    x, y, t = sy.symbols("x y t")
    u = t * sy.cos(2 * sy.pi * x) * sy.cos(2 * sy.pi * y)
    phi = u ** 3 - u
    lap = lambda w: sy.diff(w, x, 2) + sy.diff(w, y, 2)
    f = sy.diff(u, t) - lap(phi) + gamma ** 2 * lap(lap(u))
    names = {
        "u": u, "ux": sy.diff(u, x), "uy": sy.diff(u, y),
        "uxx": sy.diff(u, x, 2), "uxy": sy.diff(u, x, y),
        "uyy": sy.diff(u, y, 2), "f": sy.simplify(f),
    }
    out = {}
    for k, expr in names.items():
        fn = sy.lambdify((x, y, t), expr, modules="numpy")
        out[k] = (lambda g: lambda xx, yy, tt: np.broadcast_to(
            np.asarray(g(xx, yy, tt), dtype=float),
            np.broadcast(xx, yy).shape).copy())(fn)
    return out


def errors_ch(system: CHSystem, u, exact, t, quad_degree=8):
    """Broken H2, H1 seminorm and L2 errors against the projections."""
    mesh = system.mesh
    e2 = e1 = e0 = 0.0
    for ci in range(mesh.n_cells):
        geom = mesh.geometry(ci)
        spc = C1LocalSpace(geom)
        coeffs = spc.pi_delta @ u[cell_dofs_c1(mesh, ci)]
        pts, wts = polygon_quadrature(geom.vertices, quad_degree)
        xs, ys = pts[:, 0], pts[:, 1]
        B = spc.basis
        d0 = exact["u"](xs, ys, t) - B.eval(pts) @ coeffs
        dx = exact["ux"](xs, ys, t) - B.eval(pts, dx=1) @ coeffs
        dy = exact["uy"](xs, ys, t) - B.eval(pts, dy=1) @ coeffs
        dxx = exact["uxx"](xs, ys, t) - B.eval(pts, dx=2) @ coeffs
        dxy = exact["uxy"](xs, ys, t) - B.eval(pts, dx=1, dy=1) @ coeffs
        dyy = exact["uyy"](xs, ys, t) - B.eval(pts, dy=2) @ coeffs
        e0 += wts @ d0 ** 2
        e1 += wts @ (dx ** 2 + dy ** 2)
        e2 += wts @ (dxx ** 2 + 2 * dxy ** 2 + dyy ** 2)
    return np.sqrt(e2), np.sqrt(e1), np.sqrt(e0)


def run_manufactured_convergence(meshes, gamma=0.1, dt=1e-4, t_end=0.1,
                                 tol=1e-6, chord=True, verbose=False):
    """Errors and rates at t_end for the manufactured solution.

    Returns rows of (h, errH2, rateH2, errH1, rateH1, errL2, rateL2);
    rates are None on the first mesh.
    """
    exact = manufactured_ch(gamma)
    rows = []
    prev = None
    for mesh in meshes:
        system = CHSystem(mesh, gamma, load=exact["f"])
        u0 = np.zeros(3 * mesh.n_vertices)
        problem = CHProblem(mesh=mesh, gamma=gamma, dt=dt, t_end=t_end,
                            u0=u0, f=exact["f"])
        u, _ = system.run(problem, tol=tol, chord=chord)
        e2, e1, e0 = errors_ch(system, u, exact, t_end)
        h = mesh.h_max()
        if prev is None:
            rates = (None, None, None)
        else:
            hp, p2, p1, p0 = prev
            den = np.log(hp / h)
            rates = tuple(np.log(pe / e) / den for pe, e in
                          ((p2, e2), (p1, e1), (p0, e0)))
        rows.append((h, e2, rates[0], e1, rates[1], e0, rates[2]))
        prev = (h, e2, e1, e0)
        if verbose:
            print(f"h={h:.4e} errH2={e2:.4e} errH1={e1:.4e} errL2={e0:.4e}")
    return rows


@dataclass
class SpinodalResult:
    times: np.ndarray
    snapshots: list
    energies: np.ndarray
    masses: np.ndarray
    newton_iters: list = field(default_factory=list)


def run_spinodal(mesh: PolygonalMesh, gamma=0.1, dt=1e-5, n_steps=200,
                 seed=0, tol=1e-6, snapshot_every=0):
    """Phase separation from a seeded uniform(-1, 1) vertex perturbation.

    Gradient DOFs start at zero.  Returns the time series of energies,
    masses and Newton iteration counts, plus snapshots of the DOF vector
    every snapshot_every steps (0 keeps only first and last).
    """
    rng = np.random.default_rng(seed)
    u0 = np.zeros(3 * mesh.n_vertices)
    u0[0::3] = rng.uniform(-1.0, 1.0, mesh.n_vertices)
    system = CHSystem(mesh, gamma)
    u = u0.copy()
    u[system.constrained] = 0.0
    times = [0.0]
    energies = [system.energy(u)]
    masses = [system.mass(u)]
    snapshots = [(0.0, u.copy())]
    iters = []
    for i in range(1, n_steps + 1):
        t = i * dt
        u, its = system.step(u, t, dt, tol=tol)
        iters.append(its)
        times.append(t)
        energies.append(system.energy(u))
        masses.append(system.mass(u))
        if snapshot_every and i % snapshot_every == 0:
            snapshots.append((t, u.copy()))
    if not snapshot_every or (n_steps % snapshot_every):
        snapshots.append((times[-1], u.copy()))
    return SpinodalResult(times=np.array(times), snapshots=snapshots,
                          energies=np.array(energies),
                          masses=np.array(masses), newton_iters=iters)


def write_ch_csv(rows, path):
    """CSV with columns h,errH2,rateH2,errH1,rateH1,errL2,rateL2."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["h", "errH2", "rateH2", "errH1", "rateH1",
                     "errL2", "rateL2"])
        for row in rows:
            wr.writerow(["" if v is None else f"{v:.17g}" for v in row])


def write_snapshot(mesh: PolygonalMesh, u, path):
    """Vertex coordinates and values, one line per vertex."""
    vals = u[0::3]
    with open(path, "w") as fh:
        fh.write("# x y u\n")
        for (x, y), v in zip(mesh.vertices, vals):
            fh.write(f"{x:.17g} {y:.17g} {v:.17g}\n")
