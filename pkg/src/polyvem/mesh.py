"""Polygonal meshes of the unit square: types, generators, checking, I/O.

A mesh is a conforming partition of [0,1]^2 into simple polygons with
counterclockwise vertex cycles.  Connectivity is derived once at
construction: canonical edges (low vertex index first), per-edge incident
cells, per-cell edge loops with orientation signs, and boundary markers
('D' Dirichlet by default, 'N' Neumann).

Generators: structured and randomized quadrilaterals, a distorted
hexagonal tiling, interlocking nonconvex octagons with quad fillers, and
clipped Voronoi diagrams with Lloyd relaxation.  All randomness flows
through a seeded numpy Generator, so meshes are reproducible.

The text format::

    POLYMESH 1
    <nv> <nc>
    x y                 (nv vertex lines)
    m v1 ... vm         (nc cell lines, 0-based CCW)
    BOUNDARY <ne>
    va vb D|N           (optional marker block)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Voronoi

from .poly_basis import polygon_area, polygon_centroid, polygon_diameter

_SNAP = 1e-9


class MeshFormatError(ValueError):
    """Raised for malformed POLYMESH files or invalid mesh data."""


@dataclass
class CellGeometry:
    """Geometric data of one cell, in traversal order."""

    vertices: np.ndarray          # (m, 2)
    area: float
    centroid: np.ndarray
    diameter: float
    edge_lengths: np.ndarray      # (m,)
    edge_midpoints: np.ndarray    # (m, 2)
    tangents: np.ndarray          # (m, 2) unit, along traversal
    normals: np.ndarray           # (m, 2) unit outward
    h_vertex: np.ndarray          # (m,) characteristic length per vertex


class PolygonalMesh:
    """Conforming polygonal mesh with derived edge connectivity.

    Parameters
    ----------
    vertices : (nv, 2) float array
    cells : sequence of integer index sequences, each a CCW vertex cycle
    markers : optional (ne,) array of 'D'/'N' for boundary edges; interior
        edges are marked 'I'.  Defaults to all-Dirichlet boundaries.
    """

    def __init__(self, vertices, cells, markers=None):
        self.vertices = np.array(vertices, dtype=float)
        self.vertices.setflags(write=False)
        self.cells = [np.array(c, dtype=int) for c in cells]
        for c in self.cells:
            c.setflags(write=False)
        self._build_edges()
        self._validate()
        if markers is None:
            markers = np.where((self.edge_cells < 0).any(axis=1), "D", "I")
        self.edge_markers = np.asarray(markers, dtype="<U1")
        self._check_markers()
        self._geometry_cache: list = [None] * len(self.cells)
        self._h_vertex = None

    # -- construction helpers -------------------------------------------

    def _build_edges(self):
        edge_ids: dict = {}
        edge_list = []
        edge_cells = []
        self.cell_edges = []
        for ci, cell in enumerate(self.cells):
            loc = []
            m = len(cell)
            for k in range(m):
                a, b = int(cell[k]), int(cell[(k + 1) % m])
                key = (min(a, b), max(a, b))
                if key not in edge_ids:
                    edge_ids[key] = len(edge_list)
                    edge_list.append(key)
                    edge_cells.append([-1, -1])
                e = edge_ids[key]
                side = 0 if a < b else 1
                if edge_cells[e][side] != -1:
                    raise MeshFormatError(
                        f"edge {key} traversed twice in the same direction; "
                        "cells overlap or are misoriented")
                edge_cells[e][side] = ci
                loc.append((e, 1 if a < b else -1))
            self.cell_edges.append(loc)
        self.edge_vertices = np.array(edge_list, dtype=int).reshape(-1, 2)
        self.edge_cells = np.array(edge_cells, dtype=int).reshape(-1, 2)

    def _validate(self):
        nv = len(self.vertices)
        for ci, cell in enumerate(self.cells):
            if len(cell) < 3:
                raise MeshFormatError(f"cell {ci} has fewer than 3 vertices")
            if len(set(cell.tolist())) != len(cell):
                raise MeshFormatError(f"cell {ci} repeats a vertex")
            if cell.min() < 0 or cell.max() >= nv:
                raise MeshFormatError(f"cell {ci} references a missing vertex")
            if polygon_area(self.vertices[cell]) <= 0:
                raise MeshFormatError(f"cell {ci} is not CCW with positive area")

    def _check_markers(self):
        if len(self.edge_markers) != self.n_edges:
            raise MeshFormatError("marker array length mismatch")
        boundary = (self.edge_cells < 0).any(axis=1)
        bad = ~np.isin(self.edge_markers[boundary], ("D", "N"))
        if bad.any() or (self.edge_markers[~boundary] != "I").any():
            raise MeshFormatError("markers must be D/N on boundary, I inside")

    # -- basic queries ---------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edge_vertices)

    def boundary_edges(self) -> np.ndarray:
        return np.nonzero((self.edge_cells < 0).any(axis=1))[0]

    def boundary_vertices(self) -> np.ndarray:
        be = self.boundary_edges()
        return np.unique(self.edge_vertices[be].ravel())

    def set_boundary_markers(self, markers):
        """Replace the marker array (same validation as the constructor)."""
        self.edge_markers = np.asarray(markers, dtype="<U1")
        self._check_markers()

    def h_vertex(self) -> np.ndarray:
        """Characteristic vertex length: average diameter of incident cells."""
        if self._h_vertex is None:
            acc = np.zeros(self.n_vertices)
            cnt = np.zeros(self.n_vertices)
            for ci, cell in enumerate(self.cells):
                d = polygon_diameter(self.vertices[cell])
                acc[cell] += d
                cnt[cell] += 1
            self._h_vertex = acc / np.maximum(cnt, 1)
            self._h_vertex.setflags(write=False)
        return self._h_vertex

    def h_max(self) -> float:
        return max(polygon_diameter(self.vertices[c]) for c in self.cells)

    def h_min_edge(self) -> float:
        ev = self.edge_vertices
        return float(np.linalg.norm(
            self.vertices[ev[:, 0]] - self.vertices[ev[:, 1]], axis=1).min())

    def geometry(self, ci: int) -> CellGeometry:
        g = self._geometry_cache[ci]
        if g is None:
            cell = self.cells[ci]
            v = self.vertices[cell]
            d = v[np.roll(np.arange(len(cell)), -1)] - v
            lengths = np.linalg.norm(d, axis=1)
            tang = d / lengths[:, None]
            norm = np.column_stack([tang[:, 1], -tang[:, 0]])
            g = CellGeometry(
                vertices=v,
                area=polygon_area(v),
                centroid=polygon_centroid(v),
                diameter=polygon_diameter(v),
                edge_lengths=lengths,
                edge_midpoints=0.5 * (v + v[np.roll(np.arange(len(cell)), -1)]),
                tangents=tang,
                normals=norm,
                h_vertex=self.h_vertex()[cell],
            )
            self._geometry_cache[ci] = g
        return g

    def total_area(self) -> float:
        return sum(self.geometry(i).area for i in range(self.n_cells))


# ----------------------------------------------------------------------
# generators
# ----------------------------------------------------------------------

def generate_structured_quads(n: int) -> PolygonalMesh:
    """n-by-n uniform quadrilateral mesh of the unit square."""
    if n < 1:
        raise ValueError("n must be positive")
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    cells = [
        [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
        for i in range(n) for j in range(n)
    ]
    return PolygonalMesh(verts, cells)


def generate_randomized_quads(n: int, jitter: float = 0.2, seed: int = 0,
                              max_attempts: int = 10) -> PolygonalMesh:
    """Structured quads with interior vertices jittered by up to jitter*h.

    Retries the whole jitter draw (at most max_attempts times) if any cell
    becomes degenerate or inverted.
    """
    base = generate_structured_quads(n)
    h = 1.0 / n
    interior = np.setdiff1d(np.arange(base.n_vertices), base.boundary_vertices())
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        verts = np.array(base.vertices)
        verts[interior] += jitter * h * rng.uniform(-1.0, 1.0, (len(interior), 2))
        try:
            mesh = PolygonalMesh(verts, [c.copy() for c in base.cells])
        except MeshFormatError:
            continue
        if min(mesh.geometry(i).area for i in range(mesh.n_cells)) > 1e-12:
            return mesh
    raise RuntimeError(f"failed to draw a valid jittered mesh in {max_attempts} attempts")


def _clip_halfplane(poly, axis, bound, keep_low):
    """Sutherland-Hodgman clip of a polygon against one side of the square."""
    out = []
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        fa = a[axis] - bound
        fb = b[axis] - bound
        if keep_low:
            ina, inb = fa <= 0, fb <= 0
        else:
            ina, inb = fa >= 0, fb >= 0
        if ina:
            out.append(a)
        if ina != inb:
            t = fa / (fa - fb)
            p = a + t * (b - a)
            p[axis] = bound
            out.append(p)
    return out


def _clip_to_square(poly):
    p = [np.array(q, dtype=float) for q in poly]
    for axis, bound, keep_low in ((0, 0.0, False), (0, 1.0, True),
                                  (1, 0.0, False), (1, 1.0, True)):
        p = _clip_halfplane(p, axis, bound, keep_low)
        if not p:
            return []
    return p


def _pool_cells(raw_cells, snap=_SNAP):
    """Merge per-cell coordinate lists into a shared vertex pool."""
    pool: dict = {}
    verts = []
    cells = []
    for poly in raw_cells:
        idx = []
        for q in poly:
            key = (round(q[0] / snap), round(q[1] / snap))
            if key not in pool:
                pool[key] = len(verts)
                verts.append(q)
            k = pool[key]
            if not idx or (idx[-1] != k and k != idx[0]):
                idx.append(k)
        if len(idx) >= 3:
            cells.append(idx)
    verts = np.array(verts)
    # snap coordinates onto the square sides
    for bound in (0.0, 1.0):
        for axis in (0, 1):
            sel = np.abs(verts[:, axis] - bound) < snap
            verts[sel, axis] = bound
    keep = [c for c in cells if abs(polygon_area(verts[np.array(c)])) > 1e-12]
    return verts, keep


def generate_hexagons(n: int, distortion: float = 0.05) -> PolygonalMesh:
    """Hexagonal tiling clipped to the unit square, then smoothly distorted.

    n is the approximate number of columns.  The distortion map moves each
    vertex by distortion * sin(2 pi x) sin(2 pi y) in both coordinates; it
    fixes the square boundary, so the mesh still partitions [0,1]^2.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    R = 1.0 / (1.5 * n)
    dy = np.sqrt(3.0) * R
    ang = np.arange(6) * np.pi / 3.0
    offs = R * np.column_stack([np.cos(ang), np.sin(ang)])
    raw = []
    ncols = int(np.ceil(1.0 / (1.5 * R))) + 1
    nrows = int(np.ceil(1.0 / dy)) + 1
    for i in range(0, ncols + 1):
        cx = 1.5 * R * i
        for j in range(-1, nrows + 1):
            cy = dy * (j + 0.5 * (i % 2))
            hexagon = np.array([cx, cy]) + offs
            clipped = _clip_to_square(hexagon)
            if clipped:
                raw.append(clipped)
    verts, cells = _pool_cells(raw)
    s = distortion * np.sin(2 * np.pi * verts[:, 0]) * np.sin(2 * np.pi * verts[:, 1])
    verts = verts + s[:, None]
    return PolygonalMesh(verts, cells)


def generate_nonconvex_octagons(n: int) -> PolygonalMesh:
    """n-by-n blocks, each a central nonconvex (star) octagon + 8 quads.

    Every octagon has four reflex vertices; blocks share corner and
    midside vertices, so the tiling is conforming.
    """
    if n < 1:
        raise ValueError("n must be positive")
    s = 1.0 / n
    # block-local template (fractions of the block)
    corner = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    mid = [(0.5, 0.0), (1.0, 0.5), (0.5, 1.0), (0.0, 0.5)]
    outer = [(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)]
    inner = [(0.5, 0.35), (0.65, 0.5), (0.5, 0.65), (0.35, 0.5)]
    octagon = [outer[0], inner[0], outer[1], inner[1],
               outer[2], inner[2], outer[3], inner[3]]
    quads = [
        (corner[0], mid[0], inner[0], outer[0]),
        (mid[0], corner[1], outer[1], inner[0]),
        (corner[1], mid[1], inner[1], outer[1]),
        (mid[1], corner[2], outer[2], inner[1]),
        (corner[2], mid[2], inner[2], outer[2]),
        (mid[2], corner[3], outer[3], inner[2]),
        (corner[3], mid[3], inner[3], outer[3]),
        (mid[3], corner[0], outer[0], inner[3]),
    ]
    raw = []
    for bi in range(n):
        for bj in range(n):
            org = np.array([bi * s, bj * s])
            raw.append([org + s * np.array(p) for p in octagon])
            for q in quads:
                raw.append([org + s * np.array(p) for p in q])
    verts, cells = _pool_cells(raw)
    return PolygonalMesh(verts, cells)


def _mirror_points(pts):
    m = [pts]
    for axis, bound in ((0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0)):
        r = pts.copy()
        r[:, axis] = 2.0 * bound - r[:, axis]
        m.append(r)
    return np.vstack(m)


def _clipped_voronoi_cells(pts):
    """Voronoi cells of pts clipped to the unit square via mirrored seeds.

    Inside the square no mirrored seed is ever closer than its original,
    so the cells of the original seeds partition the square exactly and
    share qhull vertices, which keeps the mesh conforming.
    """
    vor = Voronoi(_mirror_points(pts))
    cells = []
    for i in range(len(pts)):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or not region:
            raise RuntimeError("unbounded Voronoi cell despite mirroring")
        poly = vor.vertices[region]
        if polygon_area(poly) < 0:
            poly = poly[::-1]
        cells.append(poly)
    return cells


def lloyd_relax(points, iterations: int):
    """Lloyd relaxation in the unit square; returns (points, max_moves)."""
    pts = np.array(points, dtype=float)
    moves = []
    for _ in range(iterations):
        cells = _clipped_voronoi_cells(pts)
        cents = np.array([polygon_centroid(c) for c in cells])
        moves.append(float(np.linalg.norm(cents - pts, axis=1).max()))
        pts = cents
    return pts, moves


def generate_voronoi(n_seeds: int, seed: int = 0, lloyd_iters: int = 0) -> PolygonalMesh:
    """Clipped Voronoi mesh from uniform random seeds, optionally relaxed."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be positive")
    rng = np.random.default_rng(seed)
    pts = rng.random((n_seeds, 2))
    # deterministic nudge of duplicate seeds
    for i in range(1, n_seeds):
        d = np.linalg.norm(pts[:i] - pts[i], axis=1)
        if d.min() < 1e-9:
            pts[i] = 0.5 + (pts[i] - 0.5) * (1.0 - 1e-6 * (i + 1))
    if n_seeds == 1:
        return PolygonalMesh(np.array([[0., 0.], [1., 0.], [1., 1.], [0., 1.]]),
                             [[0, 1, 2, 3]])
    if lloyd_iters > 0:
        pts, _ = lloyd_relax(pts, lloyd_iters)
    cells = _clipped_voronoi_cells(pts)
    verts, idx_cells = _pool_cells(cells)
    return PolygonalMesh(verts, idx_cells)


# ----------------------------------------------------------------------
# checking
# ----------------------------------------------------------------------

def reflex_vertices(vertices) -> np.ndarray:
    """Indices of reflex vertices (interior angle > pi) of a CCW polygon."""
    v = np.asarray(vertices, dtype=float)
    prev = v - np.roll(v, 1, axis=0)
    nxt = np.roll(v, -1, axis=0) - v
    cross = prev[:, 0] * nxt[:, 1] - prev[:, 1] * nxt[:, 0]
    scale = np.linalg.norm(prev, axis=1) * np.linalg.norm(nxt, axis=1)
    return np.nonzero(cross < -1e-12 * scale)[0]


def _point_segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t * ab))


@dataclass
class RegularityReport:
    """Outcome of mesh-regularity checks against a threshold gamma."""

    gamma: float
    edge_ratio: np.ndarray        # per cell, min_e h_e / h_P
    kernel_ratio: np.ndarray      # per cell, dist(centroid, boundary) / h_P
    star_shaped: np.ndarray       # per cell, star shaped wrt centroid
    m1_pass: np.ndarray = field(init=False)
    m2_pass: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m1_pass = self.star_shaped & (self.kernel_ratio >= self.gamma)
        self.m2_pass = self.edge_ratio >= self.gamma

    @property
    def all_pass(self) -> bool:
        return bool(self.m1_pass.all() and self.m2_pass.all())

    @property
    def measured_gamma(self) -> float:
        """Largest gamma the mesh would pass with."""
        return float(min(self.edge_ratio.min(),
                         self.kernel_ratio[self.star_shaped].min()
                         if self.star_shaped.all() else 0.0))


def check_regularity(mesh: PolygonalMesh, gamma: float = 0.1) -> RegularityReport:
    """Star-shapedness (wrt centroid), kernel-radius and edge-length ratios."""
    nc = mesh.n_cells
    edge_ratio = np.zeros(nc)
    kernel_ratio = np.zeros(nc)
    star = np.zeros(nc, dtype=bool)
    for i in range(nc):
        g = mesh.geometry(i)
        hP = g.diameter
        edge_ratio[i] = g.edge_lengths.min() / hP
        c = g.centroid
        v = g.vertices
        m = len(v)
        fan = [(v[k, 0] - c[0]) * (v[(k + 1) % m, 1] - c[1])
               - (v[k, 1] - c[1]) * (v[(k + 1) % m, 0] - c[0])
               for k in range(m)]
        star[i] = min(fan) > 1e-14 * g.area
        kernel_ratio[i] = min(
            _point_segment_distance(c, v[k], v[(k + 1) % m]) for k in range(m)) / hP
    return RegularityReport(gamma, edge_ratio, kernel_ratio, star)


def find_hanging_nodes(mesh: PolygonalMesh, tol: float = 1e-9) -> list:
    """Vertices lying strictly inside another cell's edge (conformity defects)."""
    bad = []
    v = mesh.vertices
    for e in range(mesh.n_edges):
        a, b = mesh.edge_vertices[e]
        pa, pb = v[a], v[b]
        ab = pb - pa
        L2 = ab @ ab
        t = ((v - pa) @ ab) / L2
        proj = pa + np.outer(t, ab)
        d = np.linalg.norm(v - proj, axis=1)
        hit = np.nonzero((d < tol) & (t > tol) & (t < 1 - tol))[0]
        for w in hit:
            if w != a and w != b:
                bad.append((int(w), int(e)))
    return bad


# ----------------------------------------------------------------------
# text I/O
# ----------------------------------------------------------------------

def write_mesh(mesh: PolygonalMesh, path_or_file):
    """Write the POLYMESH 1 text format (full 17-digit precision)."""
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        f = open(path_or_file, "w")
        close = True
    else:
        f = path_or_file
    try:
        f.write("POLYMESH 1\n")
        f.write(f"{mesh.n_vertices} {mesh.n_cells}\n")
        for x, y in mesh.vertices:
            f.write("%.17g %.17g\n" % (x, y))
        for cell in mesh.cells:
            f.write(" ".join([str(len(cell))] + [str(int(v)) for v in cell]) + "\n")
        be = mesh.boundary_edges()
        f.write(f"BOUNDARY {len(be)}\n")
        for e in be:
            a, b = mesh.edge_vertices[e]
            f.write(f"{a} {b} {mesh.edge_markers[e]}\n")
    finally:
        if close:
            f.close()


def read_mesh(path_or_file) -> PolygonalMesh:
    """Read the POLYMESH 1 text format; raises MeshFormatError on bad input."""
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        f = open(path_or_file)
        close = True
    else:
        f = path_or_file
    try:
        lines = [ln.strip() for ln in f if ln.strip()]
    finally:
        if close:
            f.close()
    if not lines or lines[0].split() != ["POLYMESH", "1"]:
        raise MeshFormatError("missing or unsupported POLYMESH header")
    try:
        nv, nc = (int(t) for t in lines[1].split())
    except (IndexError, ValueError) as exc:
        raise MeshFormatError("malformed count line") from exc
    if nv < 3 or nc < 1 or len(lines) < 2 + nv + nc:
        raise MeshFormatError("vertex/cell counts do not match file length")
    try:
        verts = np.array([[float(t) for t in lines[2 + i].split()] for i in range(nv)])
    except ValueError as exc:
        raise MeshFormatError("malformed vertex line") from exc
    if verts.shape != (nv, 2):
        raise MeshFormatError("vertex lines must contain two coordinates")
    cells = []
    for i in range(nc):
        toks = lines[2 + nv + i].split()
        try:
            m = int(toks[0])
            idx = [int(t) for t in toks[1:]]
        except (IndexError, ValueError) as exc:
            raise MeshFormatError("malformed cell line") from exc
        if len(idx) != m:
            raise MeshFormatError("cell vertex count mismatch")
        cells.append(idx)
    mesh = PolygonalMesh(verts, cells)
    pos = 2 + nv + nc
    if pos < len(lines):
        toks = lines[pos].split()
        if toks[0] != "BOUNDARY" or len(toks) != 2:
            raise MeshFormatError("expected BOUNDARY block")
        ne = int(toks[1])
        if len(lines) < pos + 1 + ne:
            raise MeshFormatError("BOUNDARY block truncated")
        lookup = {tuple(sorted(mesh.edge_vertices[e])): e for e in mesh.boundary_edges()}
        markers = np.array(mesh.edge_markers)
        for i in range(ne):
            toks = lines[pos + 1 + i].split()
            try:
                a, b, mk = int(toks[0]), int(toks[1]), toks[2]
            except (IndexError, ValueError) as exc:
                raise MeshFormatError("malformed boundary line") from exc
            key = (min(a, b), max(a, b))
            if key not in lookup or mk not in ("D", "N"):
                raise MeshFormatError(f"bad boundary edge {a} {b} {mk}")
            markers[lookup[key]] = mk
        mesh.set_boundary_markers(markers)
    return mesh
