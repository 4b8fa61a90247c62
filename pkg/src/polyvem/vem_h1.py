"""Conforming H1 virtual element space of order k on a polygon.

Local degrees of freedom on a cell with n vertices:

* values at the n vertices,
* per edge, k-1 moments (1/h_e) int_e v P_d(t) ds against Legendre
  polynomials in the edge parameter t in [-1, 1] (cell traversal
  orientation),
* interior moments (1/|P|) int_P v q against a basis of P_{k-2}.

The space is the enhanced one: moments of degree k-1 and k of a member
equal those of its energy projection, which makes the L2 projector Pi0_k
computable.  Projectors live in a scaled monomial basis centered at the
centroid, or an L2-orthonormalized variant of it (used to tame Gram
conditioning at high k; with it the interior moment functionals are taken
against the orthonormal polynomials instead).
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.linalg import solve_triangular

from .mesh import CellGeometry, PolygonalMesh
from .poly_basis import (MonomialBasis, dim_poly, edge_quadrature,
                         orthonormalize_gram, polygon_quadrature)


def n_local_dofs(n_vertices: int, k: int) -> int:
    return n_vertices * k + k * (k - 1) // 2


class H1LocalSpace:
    """Projectors and stabilized matrices of the order-k space on one cell."""

    def __init__(self, geom: CellGeometry, k: int, orthonormal: bool = False):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.geom = geom
        self.k = k
        self.n = len(geom.vertices)
        self.orthonormal = orthonormal
        self.nk = dim_poly(k)
        self.nkm1 = dim_poly(k - 1)
        self.nkm2 = dim_poly(k - 2)
        self.ndof = n_local_dofs(self.n, k)
        self.basis = MonomialBasis(geom.centroid, geom.diameter, k)
        self._build()

    # local layout helpers -------------------------------------------------
    def vertex_dof(self, i: int) -> int:
        return i

    def edge_dof(self, e: int, d: int) -> int:
        return self.n + e * (self.k - 1) + d

    def interior_dof(self, a: int) -> int:
        return self.n + self.n * (self.k - 1) + a

    # evaluation of the polynomial family ----------------------------------
    def poly_eval(self, pts, dx: int = 0, dy: int = 0) -> np.ndarray:
        vals = self.basis.eval(pts, dx, dy)
        return vals @ self.Q if self.orthonormal else vals

    def _family_map(self, M, rows: int):
        """Transform a monomial coefficient map into family coordinates."""
        if not self.orthonormal:
            return M
        return solve_triangular(self.Q[:rows, :rows], M @ self.Q, lower=False)

    def _build(self):
        g = self.geom
        k, n = self.k, self.n
        area = g.area
        pts, wts = polygon_quadrature(g.vertices, 2 * k + 2)
        mono = self.basis.eval(pts)
        H_mono = mono.T @ (wts[:, None] * mono)
        if self.orthonormal:
            self.Q = orthonormalize_gram(H_mono)
        else:
            self.Q = np.eye(self.nk)
        V = self.poly_eval(pts)
        self.H = V.T @ (wts[:, None] * V)          # mass Gram, full degree k
        gx = self.poly_eval(pts, 1, 0)
        gy = self.poly_eval(pts, 0, 1)
        self.Gt = gx.T @ (wts[:, None] * gx) + gy.T @ (wts[:, None] * gy)

        # edge quadrature, Legendre values and trace matrices
        self._edge_pts = []
        self._edge_wts = []
        self._edge_leg = []
        self.edge_trace = []
        for e in range(n):
            a = g.vertices[e]
            b = g.vertices[(e + 1) % n]
            ep, ew = edge_quadrature(a, b, 2 * k + 2)
            t = 2.0 * np.linalg.norm(ep - a[None, :], axis=1) / g.edge_lengths[e] - 1.0
            leg = npleg.legvander(t, k)
            self._edge_pts.append(ep)
            self._edge_wts.append(ew)
            self._edge_leg.append(leg)
            # trace system: endpoint values + k-1 Legendre moments
            A = np.zeros((k + 1, k + 1))
            A[0] = npleg.legvander(np.array([-1.0]), k)[0]
            A[1] = 1.0
            for d in range(k - 1):
                A[2 + d, d] = 1.0 / (2 * d + 1)
            Ainv = np.linalg.inv(A)
            T = np.zeros((k + 1, self.ndof))
            T[:, self.vertex_dof(e)] = Ainv[:, 0]
            T[:, self.vertex_dof((e + 1) % n)] = Ainv[:, 1]
            for d in range(k - 1):
                T[:, self.edge_dof(e, d)] = Ainv[:, 2 + d]
            self.edge_trace.append(T)

        # DOF matrix D of the polynomial family
        D = np.zeros((self.ndof, self.nk))
        D[:n] = self.poly_eval(g.vertices)
        for e in range(n):
            Ve = self.poly_eval(self._edge_pts[e])
            for d in range(k - 1):
                w = self._edge_wts[e] * self._edge_leg[e][:, d] / g.edge_lengths[e]
                D[self.edge_dof(e, d)] = Ve.T @ w
        if self.nkm2:
            D[self.ndof - self.nkm2:] = self.H[:self.nkm2, :] / area
        self.D = D

        # elliptic projector Pi^nabla
        G = self.Gt.copy()
        B = np.zeros((self.nk, self.ndof))
        if self.nkm2:
            Lap = self._family_map(self.basis.laplacian_matrix(), self.nkm2)
            B -= (Lap.T * area) @ self._interior_rows()
        for e in range(n):
            ne = g.normals[e]
            gpx = self.poly_eval(self._edge_pts[e], 1, 0)
            gpy = self.poly_eval(self._edge_pts[e], 0, 1)
            dn = gpx * ne[0] + gpy * ne[1]
            trace_vals = self._edge_leg[e][:, :k + 1] @ self.edge_trace[e]
            B += dn.T @ (self._edge_wts[e][:, None] * trace_vals)
        if k == 1:
            f0_poly = self.poly_eval(g.vertices).mean(axis=0)
            f0_dofs = np.zeros(self.ndof)
            f0_dofs[:n] = 1.0 / n
        else:
            f0_poly = self.H[0] / area
            f0_dofs = np.zeros(self.ndof)
            f0_dofs[self.interior_dof(0)] = 1.0
        G[0] = f0_poly
        B[0] = f0_dofs
        self.PiN = np.linalg.solve(G, B)

        # L2 projector Pi0_k via enhancement
        rhs = np.zeros((self.nk, self.ndof))
        if self.nkm2:
            rhs[:self.nkm2] = area * self._interior_rows()
        rhs[self.nkm2:] = self.H[self.nkm2:] @ self.PiN
        self.Pi0 = np.linalg.solve(self.H, rhs)

        # projected gradient Pi0_{k-1} grad
        Hm1 = self.H[:self.nkm1, :self.nkm1]
        Dx = self._family_map(self.basis.diff_matrix(1, 0), self.nkm1)
        Dy = self._family_map(self.basis.diff_matrix(0, 1), self.nkm1)
        self.Px = np.linalg.solve(Hm1, self._grad_rhs(Dx, 0))
        self.Py = np.linalg.solve(Hm1, self._grad_rhs(Dy, 1))

    def _interior_rows(self) -> np.ndarray:
        """Rows selecting the interior moment DOFs, shape (nkm2, ndof)."""
        R = np.zeros((self.nkm2, self.ndof))
        for a in range(self.nkm2):
            R[a, self.interior_dof(a)] = 1.0
        return R

    def _grad_rhs(self, Dmat, axis: int) -> np.ndarray:
        g = self.geom
        r = np.zeros((self.nkm1, self.ndof))
        if self.nkm2:
            r[:] = -(Dmat[: self.nkm2, : self.nkm1].T * g.area) @ self._interior_rows()
        for e in range(len(g.vertices)):
            comp = g.normals[e][axis]
            Ve = self.poly_eval(self._edge_pts[e])[:, :self.nkm1]
            trace_vals = self._edge_leg[e][:, :self.k + 1] @ self.edge_trace[e]
            r += comp * Ve.T @ (self._edge_wts[e][:, None] * trace_vals)
        return r

    # stabilized local matrices --------------------------------------------
    def stiffness(self, diffusion: float = 1.0) -> np.ndarray:
        """Scalar diffusion matrix: consistency + dofi-dofi stabilization."""
        S = np.eye(self.ndof) - self.D @ self.PiN
        return diffusion * (self.PiN.T @ self.Gt @ self.PiN + S.T @ S)

    def mass(self, density: float = 1.0) -> np.ndarray:
        """Mass matrix: consistency + (rho |P| / ndof) dofi-dofi term."""
        S = np.eye(self.ndof) - self.D @ self.Pi0
        scale = density * self.geom.area / self.ndof
        return density * (self.Pi0.T @ self.H @ self.Pi0) + scale * (S.T @ S)


def local_matrices(geom: CellGeometry, k: int, diffusion: float = 1.0,
                   density: float = 1.0, orthonormal: bool = False):
    """Stabilized local stiffness and mass matrices (K, M) on one cell."""
    sp = H1LocalSpace(geom, k, orthonormal=orthonormal)
    return sp.stiffness(diffusion), sp.mass(density)


class H1DofMap:
    """Global DOF layout of the scalar order-k space on a mesh.

    Ordering: vertex values, then (k-1) moments per canonical edge, then
    interior moments cell by cell.  Edge moments are stored for the
    canonical edge orientation (low vertex index -> high); a cell
    traversing an edge the other way sees the moment of odd Legendre
    degree with a flipped sign.
    """

    def __init__(self, mesh: PolygonalMesh, k: int):
        self.mesh = mesh
        self.k = k
        self.n_vertex = mesh.n_vertices
        self.n_edge = mesh.n_edges * (k - 1)
        self.cell_offsets = np.cumsum(
            [0] + [dim_poly(k - 2)] * mesh.n_cells)[:-1]
        self.n_interior = dim_poly(k - 2) * mesh.n_cells
        self.ndof = self.n_vertex + self.n_edge + self.n_interior

    def edge_dof(self, e: int, d: int) -> int:
        return self.n_vertex + e * (self.k - 1) + d

    def interior_dof(self, ci: int, a: int) -> int:
        return self.n_vertex + self.n_edge + self.cell_offsets[ci] + a

    def cell_dofs(self, ci: int):
        """Global indices and orientation signs of cell ci's local DOFs."""
        mesh, k = self.mesh, self.k
        cell = mesh.cells[ci]
        n = len(cell)
        idx = np.empty(n_local_dofs(n, k), dtype=int)
        sgn = np.ones(len(idx))
        idx[:n] = cell
        p = n
        for (e, ori) in mesh.cell_edges[ci]:
            for d in range(k - 1):
                idx[p] = self.edge_dof(e, d)
                if ori < 0 and d % 2 == 1:
                    sgn[p] = -1.0
                p += 1
        for a in range(dim_poly(k - 2)):
            idx[p] = self.interior_dof(ci, a)
            p += 1
        return idx, sgn

    def boundary_dofs(self, markers=("D",)) -> np.ndarray:
        """Vertex and edge DOFs on boundary edges carrying given markers."""
        mesh, k = self.mesh, self.k
        out = set()
        for e in mesh.boundary_edges():
            if mesh.edge_markers[e] not in markers:
                continue
            a, b = mesh.edge_vertices[e]
            out.add(int(a))
            out.add(int(b))
            for d in range(k - 1):
                out.add(self.edge_dof(e, d))
        return np.array(sorted(out), dtype=int)


def interpolate_h1(mesh: PolygonalMesh, k: int, func, dof_map: H1DofMap | None = None,
                   orthonormal: bool = False):
    """Global DOF vector of the order-k interpolant of a smooth function.

    With orthonormal=True the interior moments are taken against the same
    orthonormalized cell polynomials that H1LocalSpace uses.
    """
    dm = dof_map or H1DofMap(mesh, k)
    u = np.zeros(dm.ndof)
    u[:mesh.n_vertices] = func(mesh.vertices[:, 0], mesh.vertices[:, 1])
    for e in range(mesh.n_edges):
        a, b = mesh.edge_vertices[e]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        he = np.linalg.norm(pb - pa)
        ep, ew = edge_quadrature(pa, pb, 2 * k + 2)
        t = 2.0 * np.linalg.norm(ep - pa[None, :], axis=1) / he - 1.0
        leg = npleg.legvander(t, max(k - 2, 0))
        fv = func(ep[:, 0], ep[:, 1])
        for d in range(k - 1):
            u[dm.edge_dof(e, d)] = np.sum(ew * leg[:, d] * fv) / he
    nint = dim_poly(k - 2)
    if nint:
        for ci in range(mesh.n_cells):
            g = mesh.geometry(ci)
            cell_basis = MonomialBasis(g.centroid, g.diameter, k)
            pts, wts = polygon_quadrature(g.vertices, 2 * k + 2)
            vals = cell_basis.eval(pts)
            if orthonormal:
                Q = orthonormalize_gram(vals.T @ (wts[:, None] * vals))
                vals = vals @ Q
            fv = func(pts[:, 0], pts[:, 1])
            moms = vals[:, :nint].T @ (wts * fv) / g.area
            for a in range(nint):
                u[dm.interior_dof(ci, a)] = moms[a]
    return u
