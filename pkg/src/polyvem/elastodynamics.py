"""Vector order-k VEM for linear elastodynamics with leap-frog stepping.

The displacement lives in two copies of the scalar conforming space;
the DOF vector stacks all x-components first, then all y-components.
Mass pairs the order-k L2 projections with a rho |P|/ndof dofi-dofi
stabilization; stiffness pairs the projected strains through Hooke's
law D eps = 2 mu eps + lambda tr(eps) I with an O(1) dofi-dofi term per
component scaled by 2 mu + lambda.  Time marching is the explicit
leap-frog scheme with the constrained mass block factorized once.

The body-force functional pairs f with the order-k L2 projection of the
test function, the same enhanced projection the mass term is built
from, so the load keeps the full consistency order of the scheme.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .la_core import SolverError, parallel_map
from .mesh import PolygonalMesh
from .poly_basis import dim_poly, edge_quadrature, polygon_quadrature
from .vem_h1 import H1DofMap, H1LocalSpace, interpolate_h1, n_local_dofs

__all__ = [
    "Material", "ElastoState", "wave_speeds", "ElastoSystem",
    "assemble_mass", "assemble_stiffness", "cfl_dt", "critical_dt",
    "manufactured_elasto", "mesh_family", "run_benchmark_convergence",
    "run_p_refinement", "write_elasto_csv", "write_prefine_csv",
]


@dataclass
class Material:
    """Isotropic material data; fields may be per-cell arrays."""
    rho: float | np.ndarray = 1.0
    lam: float | np.ndarray = 1.0
    mu: float | np.ndarray = 1.0

    def __post_init__(self):
        for name in ("rho", "lam", "mu"):
            v = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, v if v.ndim else float(v))
        if np.any(np.asarray(self.rho) <= 0):
            raise ValueError("density rho must be strictly positive")
        if np.any(np.asarray(self.lam) < 0) or np.any(np.asarray(self.mu) < 0):
            raise ValueError("Lame coefficients must be nonnegative")

    def cell(self, ci: int):
        pick = lambda v: float(v[ci]) if isinstance(v, np.ndarray) else v
        return pick(self.rho), pick(self.lam), pick(self.mu)


@dataclass
class ElastoState:
    """Last two displacement levels of the leap-frog recursion."""
    u_prev: np.ndarray
    u_curr: np.ndarray
    n: int
    dt: float

    def velocity(self) -> np.ndarray:
        """Central difference at the half step t_n - dt/2."""
        return (self.u_curr - self.u_prev) / self.dt


def wave_speeds(material: Material):
    """Compressional and shear velocities (c_P, c_S)."""
    cp = np.sqrt((material.lam + 2.0 * material.mu) / material.rho)
    cs = np.sqrt(material.mu / material.rho)
    if np.ndim(cp) == 0:
        return float(cp), float(cs)
    return cp, cs


class ElastoSystem:
    """Assembled mass, stiffness and load machinery on one mesh."""

    def __init__(self, mesh: PolygonalMesh, k: int,
                 material: Optional[Material] = None,
                 orthonormal: bool = False, dirichlet: bool = True,
                 quad_degree: Optional[int] = None):
        self.mesh = mesh
        self.k = int(k)
        self.material = material if material is not None else Material()
        self.orthonormal = orthonormal
        self.dof_map = H1DofMap(mesh, k)
        ns = self.dof_map.ndof
        self.ns = ns
        self.ndof = 2 * ns

        spaces = parallel_map(
            lambda ci: H1LocalSpace(mesh.geometry(ci), k,
                                    orthonormal=orthonormal),
            range(mesh.n_cells))
        self.spaces = spaces
        rows, cols, mvals, kvals = [], [], [], []
        self._cell_idx = []
        for ci, sp in enumerate(spaces):
            rho, lam, mu = self.material.cell(ci)
            idx, sgn = self.dof_map.cell_dofs(ci)
            d = len(idx)
            gi = np.concatenate([idx, idx + ns])
            gs = np.concatenate([sgn, sgn])
            self._cell_idx.append((gi, gs))

            Mloc = sp.mass(rho)
            Hm1 = sp.H[:sp.nkm1, :sp.nkm1]
            Px, Py = sp.Px, sp.Py
            z = np.zeros_like(Px)
            Exx = np.hstack([Px, z])
            Eyy = np.hstack([z, Py])
            Exy = 0.5 * np.hstack([Py, Px])
            Div = np.hstack([Px, Py])
            Kloc = (2.0 * mu * (Exx.T @ Hm1 @ Exx + Eyy.T @ Hm1 @ Eyy
                                + 2.0 * Exy.T @ Hm1 @ Exy)
                    + lam * Div.T @ Hm1 @ Div)
            S = np.eye(d) - sp.D @ sp.PiN
            SS = (2.0 * mu + lam) * (S.T @ S)
            Kloc[:d, :d] += SS
            Kloc[d:, d:] += SS
            Mv = np.zeros((2 * d, 2 * d))
            Mv[:d, :d] = Mloc
            Mv[d:, d:] = Mloc
            sg = np.outer(gs, gs)
            rows.append(np.repeat(gi, 2 * d))
            cols.append(np.tile(gi, 2 * d))
            mvals.append((Mv * sg).ravel())
            kvals.append((Kloc * sg).ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        shape = (self.ndof, self.ndof)
        self.M = sps.coo_matrix((np.concatenate(mvals), (rows, cols)),
                                shape=shape).tocsr()
        self.K = sps.coo_matrix((np.concatenate(kvals), (rows, cols)),
                                shape=shape).tocsr()

        if dirichlet:
            bd = self.dof_map.boundary_dofs()
            self.fixed = np.concatenate([bd, bd + ns])
        else:
            self.fixed = np.array([], dtype=int)
        self.free = np.setdiff1d(np.arange(self.ndof), self.fixed)
        self._lu = None
        self._build_load_ops(quad_degree if quad_degree is not None
                             else 2 * k + 4)

    def _build_load_ops(self, qd: int):
        """Stacked quadrature points and pairing operators for the load.

        Cells with the same vertex count share one einsum batch, so the
        forcing is evaluated in a single vectorized call per time step.
        """
        mesh, k = self.mesh, self.k
        groups: dict = {}
        for ci in range(mesh.n_cells):
            groups.setdefault(len(mesh.cells[ci]), []).append(ci)
        self._load_groups = []
        all_pts = []
        offset = 0
        for nloc, cells in sorted(groups.items()):
            d = n_local_dofs(nloc, k)
            ops, idxs, sgns = [], [], []
            npts = None
            for ci in cells:
                sp = self.spaces[ci]
                geom = mesh.geometry(ci)
                pts, wts = polygon_quadrature(geom.vertices, qd)
                npts = len(pts)
                op = sp.Pi0.T @ (wts[None, :] * sp.poly_eval(pts).T)
                ops.append(op)
                gi, gs = self._cell_idx[ci]
                idxs.append(gi)
                sgns.append(gs)
                all_pts.append(pts)
            self._load_groups.append({
                "ops": np.array(ops),               # (nc, d, npts)
                "idx": np.array(idxs),              # (nc, 2d)
                "sgn": np.array(sgns),
                "slice": slice(offset, offset + len(cells) * npts),
                "npts": npts,
            })
            offset += len(cells) * npts
        self._load_pts = np.vstack(all_pts) if all_pts else np.zeros((0, 2))

    # -- operators ----------------------------------------------------------

    def load_vector(self, f: Callable, t: float,
                    g_neumann: Optional[Callable] = None) -> np.ndarray:
        """Global load at time t; f(x, y, t) -> (fx, fy) vectorized."""
        F = np.zeros(self.ndof)
        xs, ys = self._load_pts[:, 0], self._load_pts[:, 1]
        fx, fy = f(xs, ys, t)
        fx = np.broadcast_to(np.asarray(fx, dtype=float), xs.shape)
        fy = np.broadcast_to(np.asarray(fy, dtype=float), xs.shape)
        for grp in self._load_groups:
            nc, d, npts = grp["ops"].shape
            fxg = fx[grp["slice"]].reshape(nc, npts)
            fyg = fy[grp["slice"]].reshape(nc, npts)
            bx = np.einsum("cdq,cq->cd", grp["ops"], fxg)
            by = np.einsum("cdq,cq->cd", grp["ops"], fyg)
            contrib = grp["sgn"] * np.concatenate([bx, by], axis=1)
            np.add.at(F, grp["idx"].ravel(), contrib.ravel())
        if g_neumann is not None:
            F += self.neumann_vector(g_neumann, t)
        return F

    def neumann_vector(self, g: Callable, t: float) -> np.ndarray:
        """Edge tractions on "N"-marked edges against the trace DOFs."""
        from numpy.polynomial import legendre as npleg
        mesh, k = self.mesh, self.k
        F = np.zeros(self.ndof)
        marked = [e for e in mesh.boundary_edges()
                  if mesh.edge_markers[e] == "N"]
        A = np.zeros((k + 1, k + 1))
        A[0] = npleg.legvander(np.array([-1.0]), k)[0]
        A[1] = 1.0
        for d in range(k - 1):
            A[2 + d, d] = 1.0 / (2 * d + 1)
        Ainv = np.linalg.inv(A)
        for e in marked:
            a, b = mesh.edge_vertices[e]
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            pts, wts = edge_quadrature(pa, pb, 2 * k + 2)
            ts = 2.0 * np.linalg.norm(pts - pa[None, :], axis=1) \
                / np.linalg.norm(pb - pa) - 1.0
            gx, gy = g(pts[:, 0], pts[:, 1], t)
            vals = npleg.legvander(ts, k) @ Ainv
            dof_ids = [int(a), int(b)] + [self.dof_map.edge_dof(e, d)
                                          for d in range(k - 1)]
            for kk, dof in enumerate(dof_ids):
                wv = wts * vals[:, kk]
                F[dof] += wv @ np.broadcast_to(gx, wv.shape)
                F[dof + self.ns] += wv @ np.broadcast_to(gy, wv.shape)
        return F

    def _factorize(self):
        if self._lu is None:
            Mff = self.M[self.free][:, self.free].tocsc()
            self._lu = spla.splu(Mff)
        return self._lu

    def solve_static(self, f: Optional[Callable] = None,
                     g_neumann: Optional[Callable] = None,
                     u_dirichlet: Optional[np.ndarray] = None,
                     t: float = 0.0) -> np.ndarray:
        """Equilibrium solve K u = F with optional Dirichlet lifting."""
        from .la_core import solve_direct
        u = np.zeros(self.ndof) if u_dirichlet is None \
            else np.asarray(u_dirichlet, dtype=float).copy()
        u[self.free] = 0.0
        F = np.zeros(self.ndof) if f is None else self.load_vector(f, t)
        if g_neumann is not None:
            F += self.neumann_vector(g_neumann, t)
        r = (F - self.K @ u)[self.free]
        u[self.free] = solve_direct(self.K[self.free][:, self.free], r)
        return u

    # -- time stepping ------------------------------------------------------

    def leapfrog(self, u0, v0, f: Optional[Callable], dt: float,
                 n_steps: int, g_neumann: Optional[Callable] = None,
                 on_step: Optional[Callable] = None) -> ElastoState:
        """March n_steps of size dt from full DOF vectors u0, v0 at t = 0.

        The first update uses the one-sided Taylor start; subsequent
        steps are the three-level central recursion.  on_step(n, t,
        state) is invoked after every update.  Raises SolverError when
        the iterates blow up, the signature of an unstable step size.
        """
        lu = self._factorize()
        free = self.free
        u0 = np.asarray(u0, dtype=float).copy()
        v0 = np.asarray(v0, dtype=float)
        u0[self.fixed] = 0.0
        scale0 = max(1.0, np.linalg.norm(u0) + dt * np.linalg.norm(v0))

        def residual(u, t):
            r = self.K @ u
            if f is not None:
                r = r - self.load_vector(f, t)
            if g_neumann is not None:
                r = r - self.neumann_vector(g_neumann, t)
            return r

        u1 = u0.copy()
        u1[free] += dt * v0[free] \
            - 0.5 * dt ** 2 * lu.solve(residual(u0, 0.0)[free])
        prev, curr = u0, u1
        if on_step is not None:
            on_step(1, dt, ElastoState(prev, curr, 1, dt))
        n = n_steps
        for n in range(1, n_steps):
            t = n * dt
            nxt = curr.copy()
            nxt[free] = 2.0 * curr[free] - prev[free] \
                - dt ** 2 * lu.solve(residual(curr, t)[free])
            if not np.all(np.isfinite(nxt)) \
                    or np.linalg.norm(nxt) > 1e6 * scale0:
                raise SolverError(
                    f"leap-frog blow-up at step {n + 1} (t={t + dt:.6g}); "
                    f"time step {dt:.3e} violates the stability limit")
            prev, curr = curr, nxt
            if on_step is not None:
                on_step(n + 1, t + dt, ElastoState(prev, curr, n + 1, dt))
        return ElastoState(prev, curr, n_steps, dt)

    def midpoint_energy(self, u_n, u_np1, dt: float) -> float:
        """Leap-frog invariant 1/2 |du/dt|_M^2 + 1/2 u_np1 . K u_n."""
        du = (u_np1 - u_n) / dt
        return 0.5 * float(du @ (self.M @ du)) \
            + 0.5 * float(u_np1 @ (self.K @ u_n))

    def energy_norm(self, u, v) -> float:
        """sqrt(|rho^1/2 v|_0^2 + |u|_1^2) through the cell projections."""
        acc = 0.0
        for ci, sp in enumerate(self.spaces):
            rho, _, _ = self.material.cell(ci)
            gi, gs = self._cell_idx[ci]
            d = len(gi) // 2
            Hm1 = sp.H[:sp.nkm1, :sp.nkm1]
            for comp in range(2):
                sl = slice(comp * d, (comp + 1) * d)
                vloc = gs[sl] * v[gi[sl]]
                uloc = gs[sl] * u[gi[sl]]
                pv = sp.Pi0 @ vloc
                acc += rho * float(pv @ sp.H @ pv)
                px, py = sp.Px @ uloc, sp.Py @ uloc
                acc += float(px @ Hm1 @ px + py @ Hm1 @ py)
        return float(np.sqrt(acc))

    def error_norms(self, u, exact, t: float,
                    quad_degree: Optional[int] = None):
        """Relative L2 and H1 errors against exact displacement fields.

        exact supplies callables u1, u2 and the gradients u1x, u1y, u2x,
        u2y, each with signature (x, y, t).
        """
        qd = quad_degree if quad_degree is not None else 2 * self.k + 4
        e0 = e1 = n0 = n1 = 0.0
        for ci, sp in enumerate(self.spaces):
            geom = self.mesh.geometry(ci)
            pts, wts = polygon_quadrature(geom.vertices, qd)
            xs, ys = pts[:, 0], pts[:, 1]
            gi, gs = self._cell_idx[ci]
            d = len(gi) // 2
            V = sp.poly_eval(pts)
            Vm1 = V[:, :sp.nkm1]
            fields = ((exact["u1"], exact["u1x"], exact["u1y"]),
                      (exact["u2"], exact["u2x"], exact["u2y"]))
            for comp, (uf, ufx, ufy) in enumerate(fields):
                sl = slice(comp * d, (comp + 1) * d)
                uloc = gs[sl] * u[gi[sl]]
                uv = np.broadcast_to(uf(xs, ys, t), xs.shape)
                gxv = np.broadcast_to(ufx(xs, ys, t), xs.shape)
                gyv = np.broadcast_to(ufy(xs, ys, t), xs.shape)
                dv = uv - V @ (sp.Pi0 @ uloc)
                dgx = gxv - Vm1 @ (sp.Px @ uloc)
                dgy = gyv - Vm1 @ (sp.Py @ uloc)
                e0 += wts @ dv ** 2
                e1 += wts @ (dgx ** 2 + dgy ** 2)
                n0 += wts @ uv ** 2
                n1 += wts @ (gxv ** 2 + gyv ** 2)
        return float(np.sqrt(e0 / n0)), float(np.sqrt(e1 / n1))

    def interpolate(self, fx: Callable, fy: Callable) -> np.ndarray:
        """Stacked DOF vector of the componentwise interpolant."""
        ux = interpolate_h1(self.mesh, self.k, fx, dof_map=self.dof_map,
                            orthonormal=self.orthonormal)
        uy = interpolate_h1(self.mesh, self.k, fy, dof_map=self.dof_map,
                            orthonormal=self.orthonormal)
        return np.concatenate([ux, uy])


def assemble_mass(mesh: PolygonalMesh, k: int, rho=1.0,
                  orthonormal: bool = False) -> sps.csr_matrix:
    """Global vector mass matrix without boundary reduction."""
    sysm = ElastoSystem(mesh, k, Material(rho=rho), orthonormal=orthonormal,
                        dirichlet=False)
    return sysm.M


def assemble_stiffness(mesh: PolygonalMesh, k: int, material: Material,
                       orthonormal: bool = False) -> sps.csr_matrix:
    sysm = ElastoSystem(mesh, k, material, orthonormal=orthonormal,
                        dirichlet=False)
    return sysm.K


def cfl_dt(mesh: PolygonalMesh, k: int, material: Material,
           c_cfl: float = 0.1) -> float:
    """Empirical stability bound c_cfl h_min / (k^2 c_P)."""
    cp, _ = wave_speeds(material)
    cp = float(np.max(cp))
    return c_cfl * mesh.h_min_edge() / (k ** 2 * cp)


def critical_dt(system: ElastoSystem, n_iter: int = 60) -> float:
    """Sharp explicit limit 2/sqrt(lambda_max(M^-1 K)) by power iteration."""
    lu = system._factorize()
    free = system.free
    Kff = system.K[free][:, free]
    rng = np.random.default_rng(0)
    x = rng.standard_normal(len(free))
    x /= np.linalg.norm(x)
    lam = 1.0
    for _ in range(n_iter):
        y = lu.solve(Kff @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return np.inf
        lam = float(x @ y)
        x = y / ny
    return 2.0 / np.sqrt(abs(lam))


# -- benchmark harness -------------------------------------------------------

def manufactured_elasto(material: Material, period: float = 0.25):
    """Standing-wave solution and its load on the unit square.

    u = cos(2 pi t / period) (sin^2(pi x) sin(2 pi y),
                              sin(2 pi x) sin^2(pi y)),
    which vanishes on the boundary; f = rho u_tt - div sigma(u).
    """
    import sympy as sy

    x, y, t = sy.symbols("x y t")
    rho = float(np.max(np.asarray(material.rho)))
    lam = float(np.max(np.asarray(material.lam)))
    mu = float(np.max(np.asarray(material.mu)))
    ct = sy.cos(2 * sy.pi * t / period)
    u1 = ct * sy.sin(sy.pi * x) ** 2 * sy.sin(2 * sy.pi * y)
    u2 = ct * sy.sin(2 * sy.pi * x) * sy.sin(sy.pi * y) ** 2
    exx = sy.diff(u1, x)
    eyy = sy.diff(u2, y)
    exy = (sy.diff(u1, y) + sy.diff(u2, x)) / 2
    sxx = 2 * mu * exx + lam * (exx + eyy)
    syy = 2 * mu * eyy + lam * (exx + eyy)
    sxy = 2 * mu * exy
    f1 = rho * sy.diff(u1, t, 2) - sy.diff(sxx, x) - sy.diff(sxy, y)
    f2 = rho * sy.diff(u2, t, 2) - sy.diff(sxy, x) - sy.diff(syy, y)
    exprs = {
        "u1": u1, "u2": u2,
        "u1x": sy.diff(u1, x), "u1y": sy.diff(u1, y),
        "u2x": sy.diff(u2, x), "u2y": sy.diff(u2, y),
        "v1": sy.diff(u1, t), "v2": sy.diff(u2, t),
        "f1": f1, "f2": f2,
    }
    fns = {key: sy.lambdify((x, y, t), e, modules="numpy")
           for key, e in exprs.items()}

    def f(xx, yy, tt):
        return fns["f1"](xx, yy, tt), fns["f2"](xx, yy, tt)

    fns["f"] = f
    return fns


def mesh_family(name, n: int, seed: int = 1) -> PolygonalMesh:
    """Benchmark families: 1 randomized quads, 2 distorted hexagons,
    3 nonconvex octagons (n is the resolution parameter of each
    generator)."""
    from . import mesh as mg
    name = str(name)
    if name in ("1", "quads", "quads-random"):
        return mg.generate_randomized_quads(n, seed=seed)
    if name in ("2", "hexagons"):
        return mg.generate_hexagons(n)
    if name in ("3", "octagons"):
        return mg.generate_nonconvex_octagons(n)
    raise ValueError(f"unknown mesh family {name!r}")


def benchmark_dt(system: ElastoSystem, k: int, h: float,
                 t_end: float, dt_cap: float = 5e-4,
                 c_time: float = 0.05) -> float:
    """Step size for the convergence study: half the measured explicit
    limit, capped, and shrunk like h^((k+1)/2) so the O(dt^2) phase
    error stays below the O(h^(k+1)) spatial error on every level."""
    dt = min(dt_cap, 0.5 * critical_dt(system),
             c_time * t_end * h ** ((k + 1) / 2.0))
    n = max(int(np.ceil(t_end / dt)), 1)
    return t_end / n


def run_benchmark_convergence(family, k: int, sizes,
                              material: Optional[Material] = None,
                              t_end: float = 0.25, dt_cap: float = 5e-4,
                              c_time: float = 0.05, seed: int = 1,
                              verbose: bool = False):
    """Relative errors and rates at t_end for the standing-wave problem.

    Returns rows (h, dofs, errL2, errH1, rateL2, rateH1).  h is the root
    mean cell area, which tracks the refinement ratio exactly; the
    maximum cell diameter of a jittered family is a biased sample of the
    mesh scale (its ratio between levels drifts with the cell count) and
    would skew the observed rates.
    """
    material = material if material is not None else Material()
    exact = manufactured_elasto(material, period=t_end)
    rows = []
    prev = None
    for n in sizes:
        mesh = mesh_family(family, n, seed=seed)
        sysm = ElastoSystem(mesh, k, material)
        u0 = sysm.interpolate(lambda xx, yy: exact["u1"](xx, yy, 0.0),
                              lambda xx, yy: exact["u2"](xx, yy, 0.0))
        v0 = np.zeros_like(u0)
        h = float(np.sqrt(mesh.total_area() / mesh.n_cells))
        dt = benchmark_dt(sysm, k, mesh.h_max(), t_end,
                          dt_cap=dt_cap, c_time=c_time)
        n_steps = int(round(t_end / dt))
        state = sysm.leapfrog(u0, v0, exact["f"], dt, n_steps)
        e0, e1 = sysm.error_norms(state.u_curr, exact, t_end)
        if prev is None:
            r0 = r1 = None
        else:
            den = np.log(prev[0] / h)
            r0 = float(np.log(prev[1] / e0) / den)
            r1 = float(np.log(prev[2] / e1) / den)
        rows.append((h, sysm.ndof, e0, e1, r0, r1))
        prev = (h, e0, e1)
        if verbose:
            print(f"family {family} k={k} n={n}: h={h:.4f} "
                  f"dofs={sysm.ndof} errL2={e0:.3e} errH1={e1:.3e} "
                  f"steps={n_steps}", flush=True)
    return rows


def run_p_refinement(n: int = 5, k_max: int = 6, basis: str = "monomial",
                     material: Optional[Material] = None,
                     t_end: float = 0.05, period: float = 0.25,
                     dt: float = 2e-5, seed: int = 1,
                     verbose: bool = False):
    """Errors and stiffness conditioning for k = 1..k_max on one mesh.

    The mesh is a fixed n x n randomized-quad grid; basis selects the
    plain scaled monomials or the orthonormalized cell polynomials.
    Returns rows (k, dofs, errL2, errH1, cond) where cond is the 2-norm
    condition number of the Dirichlet-reduced stiffness.  A breakdown at
    some k (possible for the monomial basis at high order) is recorded
    as a row of None entries and does not abort the sweep.
    """
    material = material if material is not None else Material()
    exact = manufactured_elasto(material, period=period)
    mesh = mesh_family("1", n, seed=seed)
    orth = basis == "orthonormal"
    rows = []
    for k in range(1, k_max + 1):
        try:
            sysm = ElastoSystem(mesh, k, material, orthonormal=orth)
            u0 = sysm.interpolate(lambda xx, yy: exact["u1"](xx, yy, 0.0),
                                  lambda xx, yy: exact["u2"](xx, yy, 0.0))
            v0 = np.zeros_like(u0)
            dt_k = min(dt, 0.5 * critical_dt(sysm))
            n_steps = max(int(round(t_end / dt_k)), 1)
            state = sysm.leapfrog(u0, v0, exact["f"], t_end / n_steps,
                                  n_steps)
            e0, e1 = sysm.error_norms(state.u_curr, exact, t_end)
            Kff = sysm.K[sysm.free][:, sysm.free].toarray()
            cond = float(np.linalg.cond(Kff))
            rows.append((k, sysm.ndof, e0, e1, cond))
            if verbose:
                print(f"{basis} k={k}: dofs={sysm.ndof} errL2={e0:.3e} "
                      f"errH1={e1:.3e} cond={cond:.3e}", flush=True)
        except (np.linalg.LinAlgError, SolverError, RuntimeError) as exc:
            rows.append((k, None, None, None, None))
            if verbose:
                print(f"{basis} k={k}: failed ({exc})", flush=True)
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(v)
    return f"{v:.17g}"


def write_elasto_csv(rows, path):
    """CSV columns h,dofs,errL2,errH1,rateL2,rateH1."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["h", "dofs", "errL2", "errH1", "rateL2", "rateH1"])
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


def write_prefine_csv(rows, path):
    """CSV columns k,dofs,errL2,errH1,cond."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "dofs", "errL2", "errH1", "cond"])
        for row in rows:
            wr.writerow([_fmt(v) for v in row])
