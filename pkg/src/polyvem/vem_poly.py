"""Conforming virtual element discretization of (-Delta)^p u = f.

Supports the Laplace (p=1) and biharmonic (p=2) operators with clamped
boundary conditions (u and its normal derivatives up to order p-1 vanish
on the boundary), at polynomial degrees r = 2p-1 and r = 2p.

Local degrees of freedom on a cell with n vertices:

* vertex derivatives h_V^{|nu|} D^nu v(V) for |nu| <= p-1 (p=1: the value;
  p=2: value plus both scaled gradient components);
* edge moments (1/h_e) int_e v P_d for d <= r-2p, with P_d the Legendre
  polynomial in the normalized arclength t in [-1, 1];
* edge normal-derivative moments int_e (dv/dn) P_d for d <= r-2p+1 (p=2);
* interior moments h_P^{-2} int_P v m_a against the scaled monomials of
  degree <= r-2p.

Everything a solver needs is driven by the elliptic projector onto P_r,
computed per cell by integration by parts from these data alone.  For
p=2 the local energy pairing is the full Hessian contraction
int_P D2u : D2v, whose only polynomial kernel is P_1; summed over any
C^1-conforming decomposition it coincides with the biharmonic form.
"""

from __future__ import annotations

import csv

import numpy as np
from numpy.polynomial import legendre as npleg

from .la_core import (assemble, eliminate_dirichlet, expand_dirichlet,
                      parallel_map, solve_direct)
from .mesh import CellGeometry, PolygonalMesh
from .poly_basis import (MonomialBasis, dim_poly, l2_project, mass_gram,
                         polygon_quadrature)

__all__ = [
    "PolyharmonicLocalSpace", "PolyDofMap", "dof_count", "vertex_average",
    "interpolate_poly", "assemble_polyharmonic", "solve_polyharmonic",
    "error_norms_poly", "manufactured_polyharmonic", "converge_polyharmonic",
    "write_poly_csv",
]


def _check_pr(p: int, r: int):
    if p not in (1, 2):
        raise ValueError(f"operator order p={p} not supported (only p=1, 2)")
    if r not in (2 * p - 1, 2 * p):
        raise ValueError(f"degree r={r} not supported for p={p} "
                         f"(need r in {{{2 * p - 1}, {2 * p}}})")


def dof_count(n_vertices: int, p: int, r: int) -> int:
    """Dimension of the local space on a polygon with n_vertices corners."""
    _check_pr(p, r)
    per_edge = sum(max(r - 2 * p + j + 1, 0) for j in range(p))
    return (p * (p + 1) // 2 + per_edge) * n_vertices + dim_poly(r - 2 * p)


def vertex_average(values) -> float:
    """Arithmetic mean over the cell vertices (the hat projector)."""
    return float(np.mean(np.asarray(values, dtype=float)))


def _edge_gauss(p0, p1, degree):
    """Gauss points on segment p0-p1 with the reference coordinate t."""
    npts = max((int(degree) + 2) // 2, 1)
    t, w = npleg.leggauss(npts)
    pts = p0[None, :] + 0.5 * (t[:, None] + 1.0) * (p1 - p0)[None, :]
    wts = 0.5 * np.linalg.norm(p1 - p0) * w
    return pts, wts, t


def _leg_endpoint_rows(deg):
    """Values and derivatives of P_0..P_deg at t = -1 and t = +1."""
    tt = np.array([-1.0, 1.0])
    V = npleg.legvander(tt, deg)
    dV = np.zeros_like(V)
    for j in range(deg + 1):
        c = np.zeros(j + 1)
        c[j] = 1.0
        dV[:, j] = npleg.legval(tt, npleg.legder(c)) if j else 0.0
    return V, dV


class PolyharmonicLocalSpace:
    """Projector and stabilized local matrix of V^p_r on one cell."""

    def __init__(self, geom: CellGeometry, p: int, r: int):
        _check_pr(p, r)
        self.geom = geom
        self.p = int(p)
        self.r = int(r)
        n = len(geom.vertices)
        self.n = n
        self.nvd = p * (p + 1) // 2
        self.nD2 = max(r - 2 * p + 1, 0)
        self.nD3 = max(r - 2 * p + 2, 0) if p == 2 else 0
        self.eblk = self.nD2 + self.nD3
        self.nD4 = dim_poly(r - 2 * p)
        self.vb = n * self.nvd
        self.ib = self.vb + n * self.eblk
        self.ndof = self.ib + self.nD4
        self.nr = dim_poly(r)
        self.basis = MonomialBasis(geom.centroid, geom.diameter, r)
        self._build()

    # -- DOF layout -------------------------------------------------------

    def vertex_dof(self, i: int, comp: int = 0) -> int:
        return i * self.nvd + comp

    def edge_value_dof(self, e: int, d: int) -> int:
        return self.vb + e * self.eblk + d

    def edge_normal_dof(self, e: int, d: int) -> int:
        return self.vb + e * self.eblk + self.nD2 + d

    def interior_dof(self, a: int) -> int:
        return self.ib + a

    # -- construction -----------------------------------------------------

    def _grad_dof_rows(self, i, vec):
        """Selection row extracting vec . grad v(V_i) from the DOF vector."""
        row = np.zeros(self.ndof)
        hv = self.geom.h_vertex[i]
        row[self.vertex_dof(i, 1)] = vec[0] / hv
        row[self.vertex_dof(i, 2)] = vec[1] / hv
        return row

    def _build(self):
        geom, p, r, n = self.geom, self.p, self.r, self.n
        verts = geom.vertices
        h = geom.diameter
        basis = self.basis
        nr = self.nr
        ndof = self.ndof

        H = mass_gram(basis, verts)
        self.H = H

        Dx1 = basis.diff_matrix(1, 0)
        Dy1 = basis.diff_matrix(0, 1)
        if p == 1:
            n1 = dim_poly(r - 1)
            G = Dx1.T @ H[:n1, :n1] @ Dx1 + Dy1.T @ H[:n1, :n1] @ Dy1
        else:
            Dxx = basis.diff_matrix(2, 0)
            Dxy = basis.diff_matrix(1, 1)
            Dyy = basis.diff_matrix(0, 2)
            n2 = dim_poly(r - 2)
            H2 = H[:n2, :n2]
            G = Dxx.T @ H2 @ Dxx + 2.0 * Dxy.T @ H2 @ Dxy + Dyy.T @ H2 @ Dyy
        self.G = G

        # Trace reconstruction per edge: Legendre coefficients of v|_e
        # (degree r) and, for p=2, of (dv/dn)|_e (degree r-1), as linear
        # maps on the local DOF vector.
        Vend, dVend = _leg_endpoint_rows(r)
        leg_int = np.zeros((self.nD2, r + 1))
        for d in range(self.nD2):
            leg_int[d, d] = 1.0 / (2 * d + 1)
        self._tval = []
        self._tnor = []
        for e in range(n):
            i0, i1 = e, (e + 1) % n
            he = geom.edge_lengths[e]
            tau = geom.tangents[e]
            nrm = geom.normals[e]
            nc = 2 * p + self.nD2
            A = np.zeros((nc, r + 1))
            E = np.zeros((nc, ndof))
            A[0] = Vend[0]
            A[1] = Vend[1]
            E[0, self.vertex_dof(i0)] = 1.0
            E[1, self.vertex_dof(i1)] = 1.0
            row = 2
            if p == 2:
                A[2] = (2.0 / he) * dVend[0]
                A[3] = (2.0 / he) * dVend[1]
                E[2] = self._grad_dof_rows(i0, tau)
                E[3] = self._grad_dof_rows(i1, tau)
                row = 4
            for d in range(self.nD2):
                A[row + d] = leg_int[d]
                E[row + d, self.edge_value_dof(e, d)] = 1.0
            self._tval.append(np.linalg.solve(A, E))
            if p == 2:
                An = np.zeros((r, r))
                En = np.zeros((r, ndof))
                An[0] = Vend[0, :r]
                An[1] = Vend[1, :r]
                En[0] = self._grad_dof_rows(i0, nrm)
                En[1] = self._grad_dof_rows(i1, nrm)
                for d in range(self.nD3):
                    An[2 + d, d] = he / (2 * d + 1)
                    En[2 + d, self.edge_normal_dof(e, d)] = 1.0
                self._tnor.append(np.linalg.solve(An, En))

        # D: DOFs of the monomial basis functions.
        D = np.zeros((ndof, nr))
        D[[self.vertex_dof(i) for i in range(n)]] = basis.eval(verts)
        if p == 2:
            gx = basis.eval(verts, dx=1)
            gy = basis.eval(verts, dy=1)
            hv = geom.h_vertex
            for i in range(n):
                D[self.vertex_dof(i, 1)] = hv[i] * gx[i]
                D[self.vertex_dof(i, 2)] = hv[i] * gy[i]
        self._edge_quad = []
        for e in range(n):
            i0, i1 = e, (e + 1) % n
            pts, wts, t = _edge_gauss(verts[i0], verts[i1], 2 * r + 2)
            self._edge_quad.append((pts, wts, t))
            he = geom.edge_lengths[e]
            nrm = geom.normals[e]
            M = basis.eval(pts)
            P = npleg.legvander(t, max(r, 1))
            for d in range(self.nD2):
                D[self.edge_value_dof(e, d)] = (P[:, d] * wts) @ M / he
            if self.nD3:
                dn = basis.eval(pts, dx=1) * nrm[0] + basis.eval(pts, dy=1) * nrm[1]
                for d in range(self.nD3):
                    D[self.edge_normal_dof(e, d)] = (P[:, d] * wts) @ dn
        if self.nD4:
            D[self.ib:] = H[:self.nD4, :] / h ** 2
        self.D = D

        # B: a_P(m_beta, .) on the local DOFs, by integration by parts.
        B = np.zeros((nr, ndof))
        if p == 1:
            Lap = basis.laplacian_matrix()
            if self.nD4:
                B[:, self.ib:] -= h ** 2 * Lap.T[:, :self.nD4]
            for e in range(n):
                pts, wts, t = self._edge_quad[e]
                nrm = geom.normals[e]
                dn_m = basis.eval(pts, dx=1) * nrm[0] + basis.eval(pts, dy=1) * nrm[1]
                vtr = npleg.legvander(t, self.r) @ self._tval[e]
                B += dn_m.T @ (wts[:, None] * vtr)
        else:
            basis2 = MonomialBasis(geom.centroid, h, r - 2)
            Lap = basis.laplacian_matrix()
            if self.nD4:
                LL = basis2.laplacian_matrix() @ Lap
                B[:, self.ib:] += h ** 2 * LL.T[:, :self.nD4]
            for e in range(n):
                pts, wts, t = self._edge_quad[e]
                he = geom.edge_lengths[e]
                nx, ny = geom.normals[e]
                tx, ty = geom.tangents[e]
                lap_x = basis2.eval(pts, dx=1) @ Lap
                lap_y = basis2.eval(pts, dy=1) @ Lap
                dn_lap = lap_x * nx + lap_y * ny
                mxx = basis2.eval(pts) @ Dxx
                mxy = basis2.eval(pts) @ Dxy
                myy = basis2.eval(pts) @ Dyy
                ann = nx * nx * mxx + 2.0 * nx * ny * mxy + ny * ny * myy
                atn = tx * nx * mxx + (tx * ny + ty * nx) * mxy + ty * ny * myy
                vtr = npleg.legvander(t, self.r) @ self._tval[e]
                ntr = npleg.legvander(t, self.r - 1) @ self._tnor[e]
                dtau = npleg.legvander(t, self.r - 1) @ \
                    ((2.0 / he) * npleg.legder(self._tval[e], axis=0))
                B += (-dn_lap.T @ (wts[:, None] * vtr)
                      + ann.T @ (wts[:, None] * ntr)
                      + atn.T @ (wts[:, None] * dtau))

        # Kernel of the energy pairing (P_{p-1}) fixed by vertex averages.
        Gmod = G.copy()
        Bmod = B.copy()
        Gmod[0] = basis.eval(verts).mean(axis=0)
        Bmod[0] = 0.0
        Bmod[0, [self.vertex_dof(i) for i in range(n)]] = 1.0 / n
        if p == 2:
            Gmod[1] = basis.eval(verts, dx=1).mean(axis=0)
            Gmod[2] = basis.eval(verts, dy=1).mean(axis=0)
            Bmod[1] = 0.0
            Bmod[2] = 0.0
            hv = geom.h_vertex
            for i in range(n):
                Bmod[1, self.vertex_dof(i, 1)] = 1.0 / (n * hv[i])
                Bmod[2, self.vertex_dof(i, 2)] = 1.0 / (n * hv[i])
        try:
            self.Pi = np.linalg.solve(Gmod, Bmod)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"singular projector system on cell at {geom.centroid} "
                f"(p={p}, r={r}, n={n})") from exc
        self.B = B

    # -- local operators --------------------------------------------------

    def stiffness(self) -> np.ndarray:
        """Stabilized local matrix of the energy form."""
        resid = np.eye(self.ndof) - self.D @ self.Pi
        scale = self.geom.diameter ** (2 - 2 * self.p)
        return self.Pi.T @ self.G @ self.Pi + scale * resid.T @ resid

    def poly_eval(self, pts, dx: int = 0, dy: int = 0) -> np.ndarray:
        return self.basis.eval(pts, dx=dx, dy=dy)

    def load_term(self, f) -> np.ndarray:
        """Local load vector int_P f Pi0_{r-p} v_h per DOF.

        Moments of degree <= r-2p come straight from the interior DOFs;
        the remaining moments up to degree r-p are taken from the
        elliptic projection.
        """
        s = self.r - self.p
        ns = dim_poly(s)
        _, fc = l2_project(f, self.geom.vertices, s, exactness=2 * self.r + 2)
        mom = np.zeros((ns, self.ndof))
        low = self.nD4
        if low:
            mom[:low, self.ib:] = self.geom.diameter ** 2 * np.eye(low)
        if ns > low:
            mom[low:] = self.H[low:ns, :] @ self.Pi
        return mom.T @ fc


class PolyDofMap:
    """Global numbering: vertex blocks, canonical edge blocks, cell blocks."""

    def __init__(self, mesh: PolygonalMesh, p: int, r: int):
        _check_pr(p, r)
        self.mesh = mesh
        self.p = p
        self.r = r
        self.nvd = p * (p + 1) // 2
        self.nD2 = max(r - 2 * p + 1, 0)
        self.nD3 = max(r - 2 * p + 2, 0) if p == 2 else 0
        self.eblk = self.nD2 + self.nD3
        self.nD4 = dim_poly(r - 2 * p)
        self.ebase = mesh.n_vertices * self.nvd
        self.cbase = self.ebase + mesh.n_edges * self.eblk
        self.ndof = self.cbase + mesh.n_cells * self.nD4

    def vertex_dof(self, iv: int, comp: int = 0) -> int:
        return iv * self.nvd + comp

    def cell_dofs(self, ci: int):
        """Global indices and orientation signs for the cell's local DOFs.

        Moment DOFs live on the canonical (low-to-high vertex index) edge
        orientation; a cell traversing an edge the other way sees the
        reversed parameter and the flipped normal, so value moments pick
        up (-1)^d and normal moments (-1)^(d+1).
        """
        mesh = self.mesh
        cell = mesh.cells[ci]
        m = len(cell)
        nloc = self.nvd * m + self.eblk * m + self.nD4
        idx = np.empty(nloc, dtype=int)
        sgn = np.ones(nloc)
        for i, iv in enumerate(cell):
            for c in range(self.nvd):
                idx[i * self.nvd + c] = iv * self.nvd + c
        vb = self.nvd * m
        for j, (e, side) in enumerate(mesh.cell_edges[ci]):
            base = self.ebase + e * self.eblk
            for d in range(self.nD2):
                k = vb + j * self.eblk + d
                idx[k] = base + d
                if side < 0:
                    sgn[k] = (-1.0) ** d
            for d in range(self.nD3):
                k = vb + j * self.eblk + self.nD2 + d
                idx[k] = base + self.nD2 + d
                if side < 0:
                    sgn[k] = (-1.0) ** (d + 1)
        for a in range(self.nD4):
            idx[vb + self.eblk * m + a] = self.cbase + ci * self.nD4 + a
        return idx, sgn

    def boundary_dofs(self) -> np.ndarray:
        """All DOFs carrying trace data on the boundary (clamped set)."""
        mesh = self.mesh
        out = []
        for iv in mesh.boundary_vertices():
            out.extend(iv * self.nvd + c for c in range(self.nvd))
        for e in mesh.boundary_edges():
            base = self.ebase + e * self.eblk
            out.extend(base + d for d in range(self.eblk))
        return np.array(sorted(out), dtype=int)


def interpolate_poly(mesh: PolygonalMesh, p: int, r: int, u, grad=None,
                     dof_map: PolyDofMap | None = None) -> np.ndarray:
    """DOF vector of a smooth function (grad = (ux, uy) needed for p=2)."""
    dm = dof_map or PolyDofMap(mesh, p, r)
    if p == 2 and grad is None:
        raise ValueError("p=2 interpolation needs the gradient callables")
    vec = np.zeros(dm.ndof)
    xv, yv = mesh.vertices[:, 0], mesh.vertices[:, 1]
    vals = np.asarray(u(xv, yv), dtype=float)
    hv = mesh.h_vertex()
    for iv in range(mesh.n_vertices):
        vec[dm.vertex_dof(iv)] = vals[iv]
    if p == 2:
        gx = np.asarray(grad[0](xv, yv), dtype=float)
        gy = np.asarray(grad[1](xv, yv), dtype=float)
        for iv in range(mesh.n_vertices):
            vec[dm.vertex_dof(iv, 1)] = hv[iv] * gx[iv]
            vec[dm.vertex_dof(iv, 2)] = hv[iv] * gy[iv]
    if dm.eblk:
        for e, (a, b) in enumerate(mesh.edge_vertices):
            p0, p1 = mesh.vertices[a], mesh.vertices[b]
            he = np.linalg.norm(p1 - p0)
            tvec = (p1 - p0) / he
            nvec = np.array([tvec[1], -tvec[0]])
            pts, wts, t = _edge_gauss(p0, p1, 2 * r + 2)
            P = npleg.legvander(t, max(r, 1))
            uv = np.asarray(u(pts[:, 0], pts[:, 1]), dtype=float)
            base = dm.ebase + e * dm.eblk
            for d in range(dm.nD2):
                vec[base + d] = (P[:, d] * wts) @ uv / he
            if dm.nD3:
                dn = (np.asarray(grad[0](pts[:, 0], pts[:, 1]), dtype=float) * nvec[0]
                      + np.asarray(grad[1](pts[:, 0], pts[:, 1]), dtype=float) * nvec[1])
                for d in range(dm.nD3):
                    vec[base + dm.nD2 + d] = (P[:, d] * wts) @ dn
    if dm.nD4:
        for ci in range(mesh.n_cells):
            geom = mesh.geometry(ci)
            b4 = MonomialBasis(geom.centroid, geom.diameter, r - 2 * p)
            pts, wts = polygon_quadrature(geom.vertices, 2 * r)
            uv = np.asarray(u(pts[:, 0], pts[:, 1]), dtype=float)
            mm = b4.eval(pts).T @ (wts * uv) / geom.diameter ** 2
            vec[dm.cbase + ci * dm.nD4:dm.cbase + (ci + 1) * dm.nD4] = mm
    return vec


def assemble_polyharmonic(mesh: PolygonalMesh, p: int, r: int, f=None):
    """Global stabilized matrix and load vector (before constraints)."""
    dm = PolyDofMap(mesh, p, r)

    def build(ci):
        ls = PolyharmonicLocalSpace(mesh.geometry(ci), p, r)
        load = ls.load_term(f) if f is not None else None
        return ls.stiffness(), load

    built = parallel_map(build, range(mesh.n_cells))
    rows, cols, vals = [], [], []
    b = np.zeros(dm.ndof)
    for ci, (K, load) in enumerate(built):
        idx, sgn = dm.cell_dofs(ci)
        Ks = sgn[:, None] * K * sgn[None, :]
        ii, jj = np.meshgrid(idx, idx, indexing="ij")
        rows.append(ii.ravel())
        cols.append(jj.ravel())
        vals.append(Ks.ravel())
        if load is not None:
            np.add.at(b, idx, sgn * load)
    A = assemble(np.concatenate(rows), np.concatenate(cols),
                 np.concatenate(vals), (dm.ndof, dm.ndof))
    return A, b, dm


def solve_polyharmonic(mesh: PolygonalMesh, p: int, r: int, f,
                       exact=None, exact_grad=None):
    """Solve the clamped problem; boundary data from exact if given."""
    A, b, dm = assemble_polyharmonic(mesh, p, r, f)
    fixed = dm.boundary_dofs()
    if exact is None:
        fixed_vals = np.zeros(len(fixed))
    else:
        full = interpolate_poly(mesh, p, r, exact, exact_grad, dm)
        fixed_vals = full[fixed]
    A_ff, b_f, free = eliminate_dirichlet(A, b, fixed, fixed_vals)
    x = solve_direct(A_ff, b_f)
    u = expand_dirichlet(x, free, dm.ndof, fixed, fixed_vals)
    return u, dm


def error_norms_poly(mesh: PolygonalMesh, p: int, r: int, u_h, exact):
    """Broken L2 / H1 / (H2 for p=2) errors of exact - Pi u_h.

    exact is a dict of callables with keys u, ux, uy and, for p=2,
    uxx, uxy, uyy.
    """
    dm = PolyDofMap(mesh, p, r)
    e0 = e1 = e2 = 0.0
    for ci in range(mesh.n_cells):
        geom = mesh.geometry(ci)
        ls = PolyharmonicLocalSpace(geom, p, r)
        idx, sgn = dm.cell_dofs(ci)
        c = ls.Pi @ (sgn * u_h[idx])
        pts, wts = polygon_quadrature(geom.vertices, 2 * r + 2)
        x, y = pts[:, 0], pts[:, 1]
        d0 = exact["u"](x, y) - ls.poly_eval(pts) @ c
        dx = exact["ux"](x, y) - ls.poly_eval(pts, dx=1) @ c
        dy = exact["uy"](x, y) - ls.poly_eval(pts, dy=1) @ c
        e0 += wts @ d0 ** 2
        e1 += wts @ (dx ** 2 + dy ** 2)
        if p == 2:
            dxx = exact["uxx"](x, y) - ls.poly_eval(pts, dx=2) @ c
            dxy = exact["uxy"](x, y) - ls.poly_eval(pts, dx=1, dy=1) @ c
            dyy = exact["uyy"](x, y) - ls.poly_eval(pts, dy=2) @ c
            e2 += wts @ (dxx ** 2 + 2.0 * dxy ** 2 + dyy ** 2)
    if p == 2:
        return np.sqrt(e0), np.sqrt(e1), np.sqrt(e2)
    return np.sqrt(e0), np.sqrt(e1)


def manufactured_polyharmonic(p: int) -> dict:
    """Smooth manufactured solution with clamped data on the unit square.

    p=1: u = sin(pi x) sin(pi y); p=2: u = (sin(pi x) sin(pi y))^2, which
    has vanishing value and gradient on the boundary.  The load is the
    symbolic (-Delta)^p u.
    """
    import sympy as sp

    x, y = sp.symbols("x y")
    if p == 1:
        u = sp.sin(sp.pi * x) * sp.sin(sp.pi * y)
    else:
        u = (sp.sin(sp.pi * x) * sp.sin(sp.pi * y)) ** 2
    lap = sp.diff(u, x, 2) + sp.diff(u, y, 2)
    if p == 1:
        f = -lap
    else:
        f = sp.diff(lap, x, 2) + sp.diff(lap, y, 2)
    names = {"u": u, "ux": sp.diff(u, x), "uy": sp.diff(u, y),
             "uxx": sp.diff(u, x, 2), "uxy": sp.diff(u, x, y),
             "uyy": sp.diff(u, y, 2), "f": f}
    out = {}
    for key, expr in names.items():
        fn = sp.lambdify((x, y), expr, "numpy")
        out[key] = (lambda g: lambda xx, yy: np.broadcast_to(
            np.asarray(g(xx, yy), dtype=float), np.shape(xx)).copy())(fn)
    return out


def _rates(hs, errs):
    out = [None]
    for i in range(1, len(hs)):
        out.append(np.log(errs[i - 1] / errs[i]) / np.log(hs[i - 1] / hs[i]))
    return out


def converge_polyharmonic(p: int, r: int, meshes, exact=None) -> list[dict]:
    """Solve on a refinement sequence and tabulate errors and rates."""
    exact = exact or manufactured_polyharmonic(p)
    grad = (exact["ux"], exact["uy"])
    rows = []
    for mesh in meshes:
        u_h, dm = solve_polyharmonic(mesh, p, r, exact["f"],
                                     exact=exact["u"], exact_grad=grad)
        errs = error_norms_poly(mesh, p, r, u_h, exact)
        row = {"h": mesh.h_max(), "dofs": dm.ndof,
               "errL2": errs[0], "errH1": errs[1],
               "errH2": errs[2] if p == 2 else None}
        rows.append(row)
    hs = [row["h"] for row in rows]
    for key in ("L2", "H1", "H2"):
        errs = [row["err" + key] for row in rows]
        if errs[0] is None:
            rates = [None] * len(rows)
        else:
            rates = _rates(hs, errs)
        for row, rate in zip(rows, rates):
            row["rate" + key] = rate
    return rows


def write_poly_csv(rows, path):
    """Convergence table: h,dofs,errL2,errH1,errH2,rateL2,rateH1,rateH2."""
    cols = ["h", "dofs", "errL2", "errH1", "errH2",
            "rateL2", "rateH1", "rateH2"]

    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return "%.17g" % v

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in cols])
