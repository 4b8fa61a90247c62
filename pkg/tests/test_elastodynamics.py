"""Vector VEM for elastodynamics: statics oracles and leap-frog dynamics."""

import csv

import numpy as np
import pytest

from polyvem.elastodynamics import (ElastoSystem, Material, assemble_mass,
                                    assemble_stiffness, benchmark_dt, cfl_dt,
                                    critical_dt, manufactured_elasto,
                                    mesh_family, wave_speeds,
                                    write_elasto_csv, write_prefine_csv)
from polyvem.la_core import SolverError
from polyvem.mesh import generate_structured_quads, generate_voronoi
from polyvem.poly_basis import polygon_quadrature

MAT = Material(rho=1.0, lam=1.3, mu=0.8)


def test_material_validation():
    with pytest.raises(ValueError):
        Material(rho=0.0, lam=1.0, mu=1.0)
    with pytest.raises(ValueError):
        Material(rho=1.0, lam=-0.1, mu=1.0)
    with pytest.raises(ValueError):
        Material(rho=1.0, lam=1.0, mu=-1.0)
    m = Material(rho=np.array([1.0, 2.0]), lam=0.0, mu=1.0)
    rho1, lam1, mu1 = m.cell(1)
    assert rho1 == 2.0 and lam1 == 0.0 and mu1 == 1.0


def test_wave_speeds():
    cp, cs = wave_speeds(MAT)
    assert abs(cp - np.sqrt((MAT.lam + 2 * MAT.mu) / MAT.rho)) < 1e-14
    assert abs(cs - np.sqrt(MAT.mu / MAT.rho)) < 1e-14


@pytest.mark.parametrize("k", [1, 2])
def test_rigid_motions_in_stiffness_kernel(k):
    mesh = generate_voronoi(14, seed=2, lloyd_iters=1)
    sysm = ElastoSystem(mesh, k, MAT, dirichlet=False)
    scale = abs(sysm.K).max()
    for fx, fy in [
        (lambda x, y: np.ones(np.shape(x)), lambda x, y: np.zeros(np.shape(x))),
        (lambda x, y: np.zeros(np.shape(x)), lambda x, y: np.ones(np.shape(x))),
        (lambda x, y: -y, lambda x, y: x),
    ]:
        z = sysm.interpolate(fx, fy)
        assert np.max(np.abs(sysm.K @ z)) < 1e-11 * scale


def test_quadratic_strain_energy_exact():
    mesh = generate_voronoi(10, seed=4, lloyd_iters=1)
    sysm = ElastoSystem(mesh, 2, MAT, dirichlet=False)
    u1 = lambda x, y: x * x - 0.5 * y * y + x * y
    u2 = lambda x, y: -2.0 * x * y + y * y
    z = sysm.interpolate(u1, u2)
    got = z @ sysm.K @ z
    want = 0.0
    for ci in range(mesh.n_cells):
        g = mesh.geometry(ci)
        pts, wts = polygon_quadrature(g.vertices, 4)
        x, y = pts[:, 0], pts[:, 1]
        exx = 2 * x + y
        eyy = -2 * x + 2 * y
        exy = 0.5 * ((x - y) + (-2 * y))
        tr = exx + eyy
        want += np.sum(wts * (2 * MAT.mu * (exx ** 2 + eyy ** 2
                                            + 2 * exy ** 2)
                              + MAT.lam * tr ** 2))
    assert abs(got - want) < 1e-11 * want


def test_total_mass():
    mesh = generate_voronoi(12, seed=1, lloyd_iters=1)
    rho = 2.5
    M = assemble_mass(mesh, 2, rho=rho)
    ones = np.ones(M.shape[0])
    # both displacement components integrate rho over the unit square
    assert abs(ones @ M @ ones - 2 * rho) < 1e-12
    K = assemble_stiffness(mesh, 1, MAT)
    assert K.shape[0] == 2 * mesh.n_vertices


def test_static_patch_with_mixed_boundary():
    # linear displacement, constant stress; right side is a traction
    # boundary, the rest is lifted Dirichlet data
    mesh = generate_structured_quads(4)
    markers = np.array(mesh.edge_markers)
    right = [e for e in mesh.boundary_edges()
             if np.allclose(mesh.vertices[mesh.edge_vertices[e], 0], 1.0)]
    markers[right] = "N"
    mesh.set_boundary_markers(markers)

    a1, b1, c1 = 0.4, -0.3, 0.2
    a2, b2, c2 = -0.1, 0.25, 0.35
    u1 = lambda x, y: a1 + b1 * x + c1 * y
    u2 = lambda x, y: a2 + b2 * x + c2 * y
    exx, eyy, exy = b1, c2, 0.5 * (c1 + b2)
    sxx = 2 * MAT.mu * exx + MAT.lam * (exx + eyy)
    syy = 2 * MAT.mu * eyy + MAT.lam * (exx + eyy)
    sxy = 2 * MAT.mu * exy

    def g(x, y, t):
        # traction sigma . n with n = (1, 0) on the right side
        return (np.full(np.shape(x), sxx), np.full(np.shape(x), sxy))

    sysm = ElastoSystem(mesh, 2, MAT)
    uI = sysm.interpolate(u1, u2)
    u = sysm.solve_static(f=None, g_neumann=g, u_dirichlet=uI)
    assert np.max(np.abs(u - uI)) < 1e-12


def test_load_vector_pairs_with_interpolants():
    mesh = generate_voronoi(9, seed=3, lloyd_iters=1)
    sysm = ElastoSystem(mesh, 2, MAT, dirichlet=False)
    f = lambda x, y, t: (np.full(np.shape(x), 2.0), x)
    F = sysm.load_vector(f, 0.0)
    # test function (1, 0): integral of f_x over the square
    v = sysm.interpolate(lambda x, y: np.ones(np.shape(x)),
                         lambda x, y: np.zeros(np.shape(x)))
    assert abs(v @ F - 2.0) < 1e-12
    # test function (0, x): integral of x * f_y = int x^2
    w = sysm.interpolate(lambda x, y: np.zeros(np.shape(x)),
                         lambda x, y: x)
    assert abs(w @ F - 1.0 / 3.0) < 1e-12


def test_leapfrog_conserves_midpoint_energy():
    mesh = generate_voronoi(20, seed=5, lloyd_iters=2)
    sysm = ElastoSystem(mesh, 1, MAT)
    dt = 0.9 * critical_dt(sysm)
    rng = np.random.default_rng(0)
    u0 = np.zeros(sysm.ndof)
    u0[sysm.free] = 0.01 * rng.standard_normal(len(sysm.free))
    energies = []

    def track(n, t, state):
        energies.append(sysm.midpoint_energy(state.u_prev, state.u_curr, dt))

    sysm.leapfrog(u0, np.zeros(sysm.ndof), None, dt, 400, on_step=track)
    energies = np.array(energies)
    drift = np.max(np.abs(energies - energies[0])) / energies[0]
    assert drift < 1e-10


def test_leapfrog_detects_instability():
    mesh = generate_voronoi(16, seed=6, lloyd_iters=1)
    sysm = ElastoSystem(mesh, 1, MAT)
    dt = 2.5 * critical_dt(sysm)
    rng = np.random.default_rng(1)
    u0 = np.zeros(sysm.ndof)
    u0[sysm.free] = 0.01 * rng.standard_normal(len(sysm.free))
    with pytest.raises(SolverError, match="leap-frog|unstable|blew up"):
        sysm.leapfrog(u0, np.zeros(sysm.ndof), None, dt, 2000)


def test_critical_dt_above_cfl_heuristic():
    mesh = generate_voronoi(16, seed=7, lloyd_iters=2)
    sysm = ElastoSystem(mesh, 1, MAT)
    sharp = critical_dt(sysm)
    safe = cfl_dt(mesh, 1, MAT)
    assert 0 < safe < sharp
    dt = benchmark_dt(sysm, 1, 0.25, t_end=0.25)
    assert dt <= min(5e-4, 0.5 * sharp) + 1e-15
    # t_end is an integer number of steps
    assert abs(round(0.25 / dt) * dt - 0.25) < 1e-12


def test_error_norms_vanish_on_interpolated_solution():
    mesh = generate_voronoi(10, seed=8, lloyd_iters=1)
    sysm = ElastoSystem(mesh, 2, MAT, dirichlet=False)
    exact = {
        "u1": lambda x, y, t: x * x - y,
        "u2": lambda x, y, t: x * y + 0.5,
        "u1x": lambda x, y, t: 2 * x,
        "u1y": lambda x, y, t: np.full(np.shape(x), -1.0),
        "u2x": lambda x, y, t: y,
        "u2y": lambda x, y, t: x,
    }
    z = sysm.interpolate(lambda x, y: x * x - y,
                         lambda x, y: x * y + 0.5)
    e0, e1 = sysm.error_norms(z, exact, 0.0)
    assert e0 < 1e-13 and e1 < 1e-12


def test_manufactured_solution_structure():
    ex = manufactured_elasto(MAT, period=0.25)
    xs = np.linspace(0.0, 1.0, 7)
    zeros = np.zeros_like(xs)
    # boundary values vanish
    assert np.max(np.abs(ex["u1"](zeros, xs, 0.1))) < 1e-14
    assert np.max(np.abs(ex["u2"](xs, np.ones_like(xs), 0.1))) < 1e-14
    # starts from rest
    assert np.max(np.abs(ex["v1"](xs, xs, 0.0))) < 1e-14
    assert np.max(np.abs(ex["v2"](xs, xs, 0.0))) < 1e-14
    # load is consistent with rho u_tt - div sigma by finite differences
    h = 1e-4
    x0, y0, t0 = np.array([0.31]), np.array([0.47]), 0.13
    f1, f2 = ex["f"](x0, y0, t0)
    utt = (ex["u1"](x0, y0, t0 + h) - 2 * ex["u1"](x0, y0, t0)
           + ex["u1"](x0, y0, t0 - h)) / h ** 2
    dx = lambda g: (g(x0 + h, y0, t0) - g(x0 - h, y0, t0)) / (2 * h)
    dy = lambda g: (g(x0, y0 + h, t0) - g(x0, y0 - h, t0)) / (2 * h)
    sxx = lambda x, y, t: (2 * MAT.mu + MAT.lam) * ex["u1x"](x, y, t) \
        + MAT.lam * ex["u2y"](x, y, t)
    sxy = lambda x, y, t: MAT.mu * (ex["u1y"](x, y, t) + ex["u2x"](x, y, t))
    div1 = dx(sxx)[0] + dy(sxy)[0]
    assert abs(f1[0] - (MAT.rho * utt[0] - div1)) < 1e-5 * max(1.0, abs(f1[0]))


def test_mesh_family_dispatch():
    assert mesh_family("1", 4).n_cells == 16
    sizes = {len(c) for c in mesh_family("2", 3).cells}
    assert 6 in sizes
    assert mesh_family("3", 2).n_cells == 36
    with pytest.raises(ValueError):
        mesh_family("9", 4)


def test_csv_writers(tmp_path):
    rows = [(0.25, 50, 1e-2, 1e-1, None, None),
            (0.125, 180, 2.5e-3, 5e-2, 2.0, 1.0)]
    p1 = tmp_path / "elasto.csv"
    write_elasto_csv(rows, p1)
    with open(p1) as f:
        table = list(csv.reader(f))
    assert table[0] == ["h", "dofs", "errL2", "errH1", "rateL2", "rateH1"]
    assert table[1][4] == ""
    assert float(table[2][4]) == 2.0

    prows = [(1, 72, 1e-1, 2e-1, 8.0), (2, 242, 1e-2, 5e-2, 320.0)]
    p2 = tmp_path / "pref.csv"
    write_prefine_csv(prows, p2)
    with open(p2) as f:
        table = list(csv.reader(f))
    assert table[0] == ["k", "dofs", "errL2", "errH1", "cond"]
    assert float(table[2][2]) == 1e-2
