"""Reduced C1 virtual elements with three degrees of freedom per vertex.

Every mesh vertex V carries v(V) and the scaled gradient components
h_V dv/dx(V), h_V dv/dy(V).  On each edge the value trace is the cubic
Hermite interpolant of the endpoint values and tangential derivatives,
and the normal-derivative trace is linear between the endpoint normal
derivatives, so functions and gradients glue continuously across cells.

Three quadratic projectors drive the discretization:

* Pi_delta: elliptic projector for the Hessian pairing int_P D2v : D2q,
  with the P_1 kernel fixed by matching vertex-value sums against 1, x, y;
* Pi_zero: the L2 projector, which the space is built to make equal to
  Pi_delta (same moments up to degree 2);
* Pi_nabla: elliptic projector for the gradient pairing, its constant
  part fixed by the cell mean (available through Pi_delta).

From these we assemble three stabilized local matrices A_delta, A_nabla,
A_zero scaled like h^-2, 1, h^2 respectively, plus the cell-averaged
semilinear form used by the Cahn-Hilliard solver.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre as npleg

from .mesh import CellGeometry, PolygonalMesh
from .poly_basis import MonomialBasis, mass_gram
from .vem_poly import _edge_gauss, _leg_endpoint_rows

__all__ = [
    "C1LocalSpace", "build_pi_delta", "build_pi_nabla2", "local_forms_c1",
    "semilinear_rh", "rh_jacobian", "cell_dofs_c1", "interpolate_c1",
    "normal_constraint_dofs", "ones_dof_vector",
]


class C1LocalSpace:
    """Projectors and stabilized forms of the C1 space on one cell.

    DOF layout: vertex-major blocks [v(V_i), h_V dv/dx(V_i), h_V dv/dy(V_i)]
    for i = 0..n-1, giving ndof = 3n.
    """

    def __init__(self, geom: CellGeometry):
        self.geom = geom
        n = len(geom.vertices)
        self.n = n
        self.ndof = 3 * n
        self.basis = MonomialBasis(geom.centroid, geom.diameter, 2)
        self._build()

    def vertex_dof(self, i: int, comp: int = 0) -> int:
        return 3 * i + comp

    def _grad_rows(self, i, vec):
        """Row extracting vec . grad v(V_i) from the DOF vector."""
        row = np.zeros(self.ndof)
        hv = self.geom.h_vertex[i]
        row[3 * i + 1] = vec[0] / hv
        row[3 * i + 2] = vec[1] / hv
        return row

    def edge_value_trace(self, e: int) -> np.ndarray:
        """Legendre coefficients of v on edge e (4 x ndof), t in [-1, 1]."""
        return self._tval[e]

    def edge_normal_trace(self, e: int) -> np.ndarray:
        """Legendre coefficients of dv/dn on edge e (2 x ndof)."""
        return self._tnor[e]

    def _build(self):
        geom = self.geom
        n, ndof = self.n, self.ndof
        verts = geom.vertices
        basis = self.basis
        nm = 6

        H = mass_gram(basis, verts)
        Dx1 = basis.diff_matrix(1, 0)
        Dy1 = basis.diff_matrix(0, 1)
        basis1 = MonomialBasis(geom.centroid, geom.diameter, 1)
        H1 = mass_gram(basis1, verts)
        Gn = Dx1.T @ H1 @ Dx1 + Dy1.T @ H1 @ Dy1
        # second derivatives of quadratic scaled monomials are constants
        dxx = basis.diff_matrix(2, 0)[0]
        dxy = basis.diff_matrix(1, 1)[0]
        dyy = basis.diff_matrix(0, 2)[0]
        area = geom.area
        Gd = area * (np.outer(dxx, dxx) + 2.0 * np.outer(dxy, dxy)
                     + np.outer(dyy, dyy))
        self.H, self.Gn, self.Gd = H, Gn, Gd

        # DOF matrix: rows are the degrees of freedom applied to monomials
        D = np.zeros((ndof, nm))
        mv = basis.eval(verts)
        mgx = basis.eval(verts, dx=1)
        mgy = basis.eval(verts, dy=1)
        for i in range(n):
            hv = geom.h_vertex[i]
            D[3 * i] = mv[i]
            D[3 * i + 1] = hv * mgx[i]
            D[3 * i + 2] = hv * mgy[i]
        self.D = D

        # Hermite edge traces in the Legendre basis
        Vh, dVh = _leg_endpoint_rows(3)
        herm = np.vstack([Vh, dVh])          # rows: p(-1), p(1), p'(-1), p'(1)
        self._tval = []
        self._tnor = []
        for e in range(n):
            i, j = e, (e + 1) % n
            tau = geom.tangents[e]
            nor = geom.normals[e]
            he = geom.edge_lengths[e]
            rhs = np.zeros((4, ndof))
            rhs[0, 3 * i] = 1.0
            rhs[1, 3 * j] = 1.0
            rhs[2] = 0.5 * he * self._grad_rows(i, tau)
            rhs[3] = 0.5 * he * self._grad_rows(j, tau)
            self._tval.append(np.linalg.solve(herm, rhs))
            dn0 = self._grad_rows(i, nor)
            dn1 = self._grad_rows(j, nor)
            self._tnor.append(np.vstack([0.5 * (dn0 + dn1),
                                         0.5 * (dn1 - dn0)]))

        # Pi_delta: int_P D2(Pi v) : D2 q = boundary integral of
        # grad v . (H_q n) for q quadratic; P_1 kernel fixed by matching
        # the vertex-value products against 1, x, y.
        B = np.zeros((nm, ndof))
        for a in range(3, nm):
            Hq = np.array([[dxx[a], dxy[a]], [dxy[a], dyy[a]]])
            row = np.zeros(ndof)
            for e in range(n):
                i, j = e, (e + 1) % n
                w = Hq @ geom.normals[e]
                ct = w @ geom.tangents[e]
                cn = w @ geom.normals[e]
                row[3 * j] += ct
                row[3 * i] -= ct
                he = geom.edge_lengths[e]
                row += 0.5 * cn * he * (self._grad_rows(i, geom.normals[e])
                                        + self._grad_rows(j, geom.normals[e]))
            B[a] = row
        Gmod = Gd.copy()
        Bmod = B.copy()
        for q in range(3):
            Gmod[q] = mv[:, q] @ mv
            row = np.zeros(ndof)
            row[0::3] = mv[:, q]
            Bmod[q] = row
        try:
            self.pi_delta = np.linalg.solve(Gmod, Bmod)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"singular Pi_delta system on cell with {n} vertices, "
                f"area {area:.3e}, diameter {geom.diameter:.3e}") from exc
        self.pi_zero = self.pi_delta

        # Pi_nabla: int_P grad(Pi v) . grad q = -int_P v Lap(q)
        #           + int_dP v dq/dn, with int_P v from the enhancement.
        lap = basis.laplacian_matrix()[0]
        cellmean = H[0] @ self.pi_delta
        Bn = -np.outer(lap, cellmean)
        for e in range(n):
            i, j = e, (e + 1) % n
            pts, wts, t = _edge_gauss(verts[i], verts[j], 5)
            dn = (basis.eval(pts, dx=1) * geom.normals[e][0]
                  + basis.eval(pts, dy=1) * geom.normals[e][1])
            vtr = npleg.legvander(t, 3) @ self._tval[e]
            Bn += dn.T @ (wts[:, None] * vtr)
        Gnmod = Gn.copy()
        Bnmod = Bn.copy()
        Gnmod[0] = H[0]
        Bnmod[0] = cellmean
        self.pi_nabla = np.linalg.solve(Gnmod, Bnmod)

        # stabilized forms; with the h_V-scaled gradient DOFs the vertex
        # stabilization is the plain euclidean product of DOF residuals
        hP = geom.diameter
        Rd = np.eye(ndof) - D @ self.pi_delta
        Rn = np.eye(ndof) - D @ self.pi_nabla
        self.a_delta = (self.pi_delta.T @ Gd @ self.pi_delta
                        + Rd.T @ Rd / hP ** 2)
        self.a_nabla = self.pi_nabla.T @ Gn @ self.pi_nabla + Rn.T @ Rn
        self.a_zero = (self.pi_zero.T @ H @ self.pi_zero
                       + hP ** 2 * (Rd.T @ Rd))

    def poly_eval(self, coeffs, points, dx=0, dy=0):
        return self.basis.eval(points, dx=dx, dy=dy) @ coeffs


def build_pi_delta(cell: CellGeometry) -> np.ndarray:
    """Hessian-energy projector onto quadratics (6 x 3n)."""
    return C1LocalSpace(cell).pi_delta


def build_pi_nabla2(cell: CellGeometry) -> np.ndarray:
    """Gradient-energy projector onto quadratics (6 x 3n)."""
    return C1LocalSpace(cell).pi_nabla


def local_forms_c1(cell: CellGeometry):
    """The three stabilized local matrices (A_delta, A_nabla, A_zero)."""
    sp = C1LocalSpace(cell)
    return sp.a_delta, sp.a_nabla, sp.a_zero


def semilinear_rh(cell: CellGeometry, z_dofs, a_nabla, a_zero):
    """Cell-averaged phi'(z) weight and the local semilinear action.

    The square of z is replaced by its cell average computed through the
    discrete L2 form, giving w_hat = 3|P|^-1 z' A0 z - 1 and the local
    contribution w_hat * A_nabla.
    """
    z = np.asarray(z_dofs, dtype=float)
    w_hat = 3.0 / cell.area * float(z @ a_zero @ z) - 1.0
    return w_hat, w_hat * a_nabla


def rh_jacobian(cell: CellGeometry, u_dofs, a_nabla, a_zero) -> np.ndarray:
    """Exact derivative of z -> w_hat(z) A_nabla z at z = u_dofs."""
    u = np.asarray(u_dofs, dtype=float)
    w_hat = 3.0 / cell.area * float(u @ a_zero @ u) - 1.0
    return w_hat * a_nabla + np.outer(a_nabla @ u,
                                      (6.0 / cell.area) * (a_zero @ u))


# -- mesh-level helpers ----------------------------------------------------

def cell_dofs_c1(mesh: PolygonalMesh, ci: int) -> np.ndarray:
    """Global DOF indices of cell ci (vertex-major, 3 per vertex)."""
    vs = np.asarray(mesh.cells[ci], dtype=int)
    return (3 * vs[:, None] + np.arange(3)[None, :]).ravel()


def interpolate_c1(mesh: PolygonalMesh, u, grad) -> np.ndarray:
    """DOF vector of a smooth function from its values and gradient.

    u(x, y) -> value, grad(x, y) -> (du/dx, du/dy), both vectorized.
    """
    xs = mesh.vertices[:, 0]
    ys = mesh.vertices[:, 1]
    hv = mesh.h_vertex()
    out = np.zeros(3 * mesh.n_vertices)
    out[0::3] = u(xs, ys)
    gx, gy = grad(xs, ys)
    out[1::3] = hv * np.broadcast_to(gx, xs.shape)
    out[2::3] = hv * np.broadcast_to(gy, ys.shape)
    return out


def normal_constraint_dofs(mesh: PolygonalMesh) -> np.ndarray:
    """Gradient DOFs pinned by the zero-normal-derivative condition.

    At each boundary vertex the gradient component along every outward
    boundary normal is constrained.  Axis-aligned normals pin a single
    component; a corner (two independent normals) pins both.  An oblique
    normal also pins both components, which over-constrains slightly but
    keeps the elimination diagonal; the meshes used here have their
    boundaries on the axis-aligned unit square.
    """
    edges = mesh.boundary_edges()
    pinned = {}
    for e in edges:
        a, b = mesh.edge_vertices[e]
        t = mesh.vertices[b] - mesh.vertices[a]
        t = t / np.linalg.norm(t)
        nor = np.array([t[1], -t[0]])
        for v in (a, b):
            comps = pinned.setdefault(v, set())
            if abs(nor[0]) > 1.0 - 1e-8:
                comps.add(1)
            elif abs(nor[1]) > 1.0 - 1e-8:
                comps.add(2)
            else:
                comps.update((1, 2))
    idx = [3 * v + c for v, comps in pinned.items() for c in sorted(comps)]
    return np.array(sorted(idx), dtype=int)


def ones_dof_vector(mesh: PolygonalMesh) -> np.ndarray:
    """DOF vector of the constant function 1."""
    out = np.zeros(3 * mesh.n_vertices)
    out[0::3] = 1.0
    return out
