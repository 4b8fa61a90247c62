"""Scaled monomial bases, polygon quadrature and L2 projection.

The polynomial space P_l on a cell is spanned by scaled monomials

    m_ab(x, y) = ((x - cx)/h)^a * ((y - cy)/h)^b,   a + b <= l,

ordered graded lexicographically: 1, X, Y, X^2, XY, Y^2, ...  with
X = (x-cx)/h, Y = (y-cy)/h.  P_{-1} is the zero space.

Quadrature on polygons is built by fanning triangles from the centroid
(with an ear-clipping fallback for cells that are not star shaped with
respect to it) and applying symmetric triangle rules; high exactness
degrees use a collapsed tensor-product Gauss rule.  All weights are
positive.
"""

from __future__ import annotations

import numpy as np


def dim_poly(degree: int) -> int:
    """Dimension of the space of bivariate polynomials of total degree <= degree."""
    if degree < 0:
        return 0
    return (degree + 1) * (degree + 2) // 2


def monomial_exponents(degree: int) -> np.ndarray:
    """Exponent pairs (a, b) of P_degree in graded lexicographic order."""
    if degree < 0:
        return np.zeros((0, 2), dtype=int)
    exps = [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]
    return np.array(exps, dtype=int)


def _falling(a: np.ndarray, k: int) -> np.ndarray:
    """Falling factorial a*(a-1)*...*(a-k+1) with the empty product equal to 1."""
    out = np.ones_like(a)
    for i in range(k):
        out = out * (a - i)
    return out


class MonomialBasis:
    """Scaled monomials of total degree <= degree centered at a point.

    Parameters
    ----------
    center : array_like, shape (2,)
        Scaling center, usually the cell centroid.
    hscale : float
        Characteristic length, usually the cell diameter.
    degree : int
        Maximal total degree (may be -1 for the empty basis).
    """

    def __init__(self, center, hscale: float, degree: int):
        self.center = np.asarray(center, dtype=float)
        self.h = float(hscale)
        self.degree = int(degree)
        self.exponents = monomial_exponents(degree)

    @property
    def ndim(self) -> int:
        return len(self.exponents)

    def eval(self, points, dx: int = 0, dy: int = 0) -> np.ndarray:
        """Evaluate the basis (or a partial derivative d^dx_x d^dy_y of it).

        Returns an array of shape (npoints, ndim).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        X = (pts[:, 0] - self.center[0]) / self.h
        Y = (pts[:, 1] - self.center[1]) / self.h
        a = self.exponents[:, 0]
        b = self.exponents[:, 1]
        ca = _falling(a, dx).astype(float)
        cb = _falling(b, dy).astype(float)
        coef = ca * cb / self.h ** (dx + dy)
        ea = np.where(ca == 0, 0, a - dx)
        eb = np.where(cb == 0, 0, b - dy)
        vals = coef * X[:, None] ** ea[None, :] * Y[:, None] ** eb[None, :]
        return vals

    def diff_matrix(self, dx: int = 0, dy: int = 0) -> np.ndarray:
        """Matrix mapping coefficients to coefficients of the derivative.

        The result has shape (dim_poly(degree - dx - dy), ndim) and expands
        d^dx_x d^dy_y (sum_j c_j m_j) in the basis of degree - dx - dy with
        the same center and scale.
        """
        k = dx + dy
        lower = monomial_exponents(self.degree - k)
        index = {(p, q): i for i, (p, q) in enumerate(map(tuple, lower))}
        D = np.zeros((len(lower), self.ndim))
        for j, (a, b) in enumerate(self.exponents):
            ca = _falling(np.array(a), dx) * _falling(np.array(b), dy)
            if ca == 0:
                continue
            D[index[(a - dx, b - dy)], j] = float(ca) / self.h ** k
        return D

    def laplacian_matrix(self) -> np.ndarray:
        """Coefficient map of the Laplacian into the degree-2 lower basis."""
        return self.diff_matrix(2, 0) + self.diff_matrix(0, 2)


# ----------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------

# Symmetric positive-weight rules on the reference triangle (0,0),(1,0),(0,1).
# Stored as (barycentric-style interior coordinate groups); weights sum to 1
# and are later multiplied by the triangle area.
def _tri_rule_points(groups):
    pts, wts = [], []
    for w, coords in groups:
        for (l1, l2, l3) in coords:
            pts.append((l2, l3))
            wts.append(w)
    return np.array(pts), np.array(wts)


def _perm3(a, b, c):
    seen = []
    for t in {(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)}:
        seen.append(t)
    return sorted(seen)


_SQRT15 = np.sqrt(15.0)
_TRI_TABLE = {
    1: [(1.0, [(1 / 3, 1 / 3, 1 / 3)])],
    2: [(1 / 3, _perm3(2 / 3, 1 / 6, 1 / 6))],
    4: [
        (0.223381589678011, _perm3(0.108103018168070, 0.445948490915965, 0.445948490915965)),
        (0.109951743655322, _perm3(0.816847572980459, 0.091576213509771, 0.091576213509771)),
    ],
    5: [
        (9 / 40, [(1 / 3, 1 / 3, 1 / 3)]),
        ((155 + _SQRT15) / 1200,
         _perm3(1 - 2 * (6 + _SQRT15) / 21, (6 + _SQRT15) / 21, (6 + _SQRT15) / 21)),
        ((155 - _SQRT15) / 1200,
         _perm3(1 - 2 * (6 - _SQRT15) / 21, (6 - _SQRT15) / 21, (6 - _SQRT15) / 21)),
    ],
}
_TRI_TABLE[3] = _TRI_TABLE[4]
_TRI_CACHE: dict = {}


def triangle_rule(degree: int):
    """Points and weights exact for P_degree on the reference triangle.

    Weights sum to 1/2 (the reference area) and are all positive.
    """
    degree = max(int(degree), 1)
    if degree in _TRI_CACHE:
        return _TRI_CACHE[degree]
    if degree <= 5:
        pts, wts = _tri_rule_points(_TRI_TABLE[degree])
        wts = wts * 0.5
    else:
        # collapsed tensor-product Gauss rule; the map (u, v) -> (u, v(1-u))
        # has Jacobian (1-u), so one extra degree is needed in u
        n = (degree + 3) // 2
        x, w = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (x + 1.0)
        wu = 0.5 * w
        U, V = np.meshgrid(u, u, indexing="ij")
        WU, WV = np.meshgrid(wu, wu, indexing="ij")
        pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
        wts = (WU * WV * (1.0 - U)).ravel()
    _TRI_CACHE[degree] = (pts, wts)
    return pts, wts


def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def polygon_centroid(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    cross = x * np.roll(y, -1) - np.roll(x, -1) * y
    area = 0.5 * np.sum(cross)
    cx = np.sum((x + np.roll(x, -1)) * cross) / (6.0 * area)
    cy = np.sum((y + np.roll(y, -1)) * cross) / (6.0 * area)
    return np.array([cx, cy])


def polygon_diameter(vertices) -> float:
    v = np.asarray(vertices, dtype=float)
    d2 = np.sum((v[:, None, :] - v[None, :, :]) ** 2, axis=-1)
    return float(np.sqrt(d2.max()))


def _ear_clip(vertices) -> list:
    """Triangulate a simple CCW polygon by ear clipping; returns index triples."""
    idx = list(range(len(vertices)))
    v = np.asarray(vertices, dtype=float)
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(v):
            raise ValueError("ear clipping failed; polygon may not be simple")
        n = len(idx)
        clipped = False
        for k in range(n):
            i0, i1, i2 = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            a, b, c = v[i0], v[i1], v[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= 0:
                continue
            # no other vertex inside the candidate ear
            ok = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = v[j]
                s1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
                s2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
                s3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
                if s1 > 0 and s2 > 0 and s3 > 0:
                    ok = False
                    break
            if ok:
                tris.append((i0, i1, i2))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            raise ValueError("ear clipping failed; polygon may not be simple")
    tris.append(tuple(idx))
    return tris


def polygon_quadrature(vertices, degree: int):
    """Quadrature points and weights exact for P_degree on a simple polygon.

    Fans triangles from the centroid when the polygon is star shaped with
    respect to it, otherwise falls back to an ear-clipping triangulation.
    Weights are positive and sum to the polygon area.
    """
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    area = polygon_area(v)
    if area <= 0:
        raise ValueError("polygon must be counterclockwise with positive area")
    c = polygon_centroid(v)
    tris = []
    fan_ok = True
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        t_area = 0.5 * ((a[0] - c[0]) * (b[1] - c[1]) - (a[1] - c[1]) * (b[0] - c[0]))
        if t_area <= 1e-14 * abs(area):
            fan_ok = False
            break
        tris.append(np.array([c, a, b]))
    if not fan_ok:
        tris = [v[list(t)] for t in _ear_clip(v)]
    rp, rw = triangle_rule(degree)
    pts_out, wts_out = [], []
    for t in tris:
        jac = (t[1] - t[0])[0] * (t[2] - t[0])[1] - (t[1] - t[0])[1] * (t[2] - t[0])[0]
        pts = t[0] + np.outer(rp[:, 0], t[1] - t[0]) + np.outer(rp[:, 1], t[2] - t[0])
        pts_out.append(pts)
        wts_out.append(rw * (jac / 0.5) * 0.5)
    return np.vstack(pts_out), np.concatenate(wts_out)


def edge_quadrature(p0, p1, degree: int):
    """Gauss points and weights on the segment p0-p1, exact for P_degree."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    n = max((int(degree) + 2) // 2, 1)
    x, w = np.polynomial.legendre.leggauss(n)
    pts = p0[None, :] + 0.5 * (x[:, None] + 1.0) * (p1 - p0)[None, :]
    wts = 0.5 * np.linalg.norm(p1 - p0) * w
    return pts, wts


# ----------------------------------------------------------------------
# projection and orthonormalization
# ----------------------------------------------------------------------

def mass_gram(basis: MonomialBasis, vertices, extra_degree: int = 0) -> np.ndarray:
    """Gram matrix of the basis in L2 over the polygon."""
    pts, wts = polygon_quadrature(vertices, 2 * max(basis.degree, 0) + extra_degree)
    V = basis.eval(pts)
    return V.T @ (wts[:, None] * V)


def l2_project(func, vertices, degree: int, exactness: int | None = None):
    """L2 projection of a callable onto P_degree over a polygon.

    Returns (basis, coefficients).  The Gram matrix is integrated exactly;
    the right-hand side uses the requested exactness (default 2*degree + 2).
    """
    v = np.asarray(vertices, dtype=float)
    basis = MonomialBasis(polygon_centroid(v), polygon_diameter(v), degree)
    H = mass_gram(basis, v)
    if exactness is None:
        exactness = 2 * degree + 2
    pts, wts = polygon_quadrature(v, max(exactness, 2 * degree))
    fvals = np.asarray(func(pts[:, 0], pts[:, 1]), dtype=float)
    rhs = basis.eval(pts).T @ (wts * fvals)
    coeffs = np.linalg.solve(H, rhs)
    return basis, coeffs


def orthonormalize_gram(H: np.ndarray, max_tries: int = 2) -> np.ndarray:
    """Change-of-basis matrix Q with Q^T H Q = I, from a Cholesky factor.

    Raises numpy.linalg.LinAlgError if H is not numerically positive
    definite; callers that built H by quadrature should increase the
    exactness and retry once before giving up.
    """
    L = np.linalg.cholesky(H)
    Q = np.linalg.inv(L).T
    return Q


def orthonormal_basis(vertices, degree: int):
    """An L2-orthonormal polynomial basis transform on a polygon.

    Returns (basis, Q) where the columns of Q expand the orthonormal
    functions in the scaled monomial basis.  For degree 0 the single
    function is 1/sqrt(area).
    """
    v = np.asarray(vertices, dtype=float)
    basis = MonomialBasis(polygon_centroid(v), polygon_diameter(v), degree)
    H = mass_gram(basis, v)
    try:
        Q = orthonormalize_gram(H)
    except np.linalg.LinAlgError:
        H = mass_gram(basis, v, extra_degree=2)
        Q = orthonormalize_gram(H)  # second failure propagates
    return basis, Q
