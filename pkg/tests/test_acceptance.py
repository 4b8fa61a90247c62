"""Acceptance gate: the eight headline checks of the package.

Each test exercises one advertised capability end to end, prints a
single PASS/FAIL line with the measured numbers, and asserts the stated
tolerance and time budget.  The runs are deterministic (fixed seeds),
so the measured values are reproducible bit for bit on one platform.

The suite is slower than the unit tests (about twenty minutes total);
run it with `pytest tests/test_acceptance.py -v`.
"""

import time

import numpy as np
import sympy as sym

from polyvem.la_core import assemble
from polyvem.mesh import (PolygonalMesh, generate_hexagons,
                          generate_nonconvex_octagons,
                          generate_randomized_quads,
                          generate_structured_quads, generate_voronoi)
from polyvem.poly_basis import monomial_exponents, polygon_quadrature
from polyvem.vem_h1 import H1DofMap, H1LocalSpace
from polyvem.vem_c1 import local_forms_c1, rh_jacobian, semilinear_rh
from polyvem.vem_poly import (converge_polyharmonic, error_norms_poly,
                              solve_polyharmonic)
from polyvem.cahn_hilliard import (CHSystem, run_manufactured_convergence,
                                   run_spinodal)
from polyvem.elastodynamics import (ElastoSystem, Material, critical_dt,
                                    run_benchmark_convergence,
                                    run_p_refinement)

X, Y = sym.symbols("x y")

# generic dense coefficient sets used for polynomial patch data
COEF_A = [0.3, 1.2, -0.7, 0.5, -0.9, 0.4, 0.8, -0.6, 0.35, 0.25,
          -0.15, 0.45, 0.2, -0.3, 0.1]
COEF_B = [-0.2, 0.9, 0.6, -0.4, 0.7, -0.55, 0.3, 0.85, -0.25, 0.15,
          0.5, -0.35, 0.05, 0.6, -0.45]


def poly_expr(deg, coefs):
    expo = monomial_exponents(deg)
    return sum(c * X ** int(a) * Y ** int(b)
               for c, (a, b) in zip(coefs, expo))


def wrap_xy(expr):
    g = sym.lambdify((X, Y), expr, "numpy")
    return lambda xx, yy: np.broadcast_to(
        np.asarray(g(xx, yy), dtype=float), np.shape(xx)).copy()


def wrap_xyt(expr):
    g = sym.lambdify((X, Y), expr, "numpy")
    return lambda xx, yy, tt: np.broadcast_to(
        np.asarray(g(xx, yy), dtype=float), np.shape(xx)).copy()


def patch_meshes():
    """One small mesh per generator family."""
    return {
        "randquads": generate_randomized_quads(3, jitter=0.2, seed=1),
        "hexagons": generate_hexagons(3),
        "octagons": generate_nonconvex_octagons(1),
        "voronoi": generate_voronoi(16, seed=2, lloyd_iters=1),
    }


def ls_slope(hs, errs):
    """Least-squares convergence rate of errs ~ C h^s."""
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def report(n, ok, text):
    print(f"\nACCEPTANCE {n} [{'PASS' if ok else 'FAIL'}] {text}",
          flush=True)


# -- 1: polynomial patch tests -------------------------------------------------

def test_criterion_1_patch_tests():
    t0 = time.time()
    fams = patch_meshes()
    lap = lambda e: sym.diff(e, X, 2) + sym.diff(e, Y, 2)
    worst = 0.0

    for p in (1, 2):
        for r in (2 * p - 1, 2 * p):
            u = poly_expr(r, COEF_A)
            fsym = u
            for _ in range(p):
                fsym = -lap(fsym)
            exact = {"u": wrap_xy(u), "ux": wrap_xy(sym.diff(u, X)),
                     "uy": wrap_xy(sym.diff(u, Y))}
            if p == 2:
                exact.update(uxx=wrap_xy(sym.diff(u, X, 2)),
                             uxy=wrap_xy(sym.diff(u, X, Y)),
                             uyy=wrap_xy(sym.diff(u, Y, 2)))
            fload = wrap_xy(sym.expand(fsym))
            grad = (exact["ux"], exact["uy"]) if p == 2 else None
            for mesh in fams.values():
                uh, _ = solve_polyharmonic(mesh, p, r, fload,
                                           exact["u"], grad)
                worst = max(worst, max(error_norms_poly(mesh, p, r,
                                                        uh, exact)))

    mat = Material(rho=1.0, lam=1.3, mu=0.8)
    for k in (1, 2, 3, 4):
        u1 = poly_expr(k, COEF_A)
        u2 = poly_expr(k, COEF_B)
        e11, e22 = sym.diff(u1, X), sym.diff(u2, Y)
        e12 = (sym.diff(u1, Y) + sym.diff(u2, X)) / 2
        tr = e11 + e22
        s11 = 2 * mat.mu * e11 + mat.lam * tr
        s22 = 2 * mat.mu * e22 + mat.lam * tr
        s12 = 2 * mat.mu * e12
        f1 = wrap_xyt(sym.expand(-(sym.diff(s11, X) + sym.diff(s12, Y))))
        f2 = wrap_xyt(sym.expand(-(sym.diff(s12, X) + sym.diff(s22, Y))))
        fload = lambda xs, ys, tt, f1=f1, f2=f2: (f1(xs, ys, tt),
                                                  f2(xs, ys, tt))
        exact = {"u1": wrap_xyt(u1), "u2": wrap_xyt(u2),
                 "u1x": wrap_xyt(sym.diff(u1, X)),
                 "u1y": wrap_xyt(sym.diff(u1, Y)),
                 "u2x": wrap_xyt(sym.diff(u2, X)),
                 "u2y": wrap_xyt(sym.diff(u2, Y))}
        fx, fy = wrap_xy(u1), wrap_xy(u2)
        for mesh in fams.values():
            sysm = ElastoSystem(mesh, k, mat)
            uh = sysm.solve_static(f=fload,
                                   u_dirichlet=sysm.interpolate(fx, fy))
            worst = max(worst, *sysm.error_norms(uh, exact, 0.0))

    dt = time.time() - t0
    ok = worst < 1e-8 and dt < 60
    report(1, ok, f"patch tests (polyharmonic p=1,2 at r=2p-1,2p and "
                  f"elasticity k=1..4 on four families): worst error "
                  f"{worst:.2e} < 1e-8, {dt:.1f}s < 60s")
    assert ok


# -- 2: polyharmonic convergence rates -----------------------------------------

def test_criterion_2_polyharmonic_rates():
    t0 = time.time()

    def exact_dict(u, p):
        lap = sym.diff(u, X, 2) + sym.diff(u, Y, 2)
        f = -lap if p == 1 else sym.diff(lap, X, 2) + sym.diff(lap, Y, 2)
        keys = {"u": u, "ux": sym.diff(u, X), "uy": sym.diff(u, Y),
                "uxx": sym.diff(u, X, 2), "uxy": sym.diff(u, X, Y),
                "uyy": sym.diff(u, Y, 2), "f": f}
        return {k: wrap_xy(v) for k, v in keys.items()}

    # quartic with every monomial active, and a harmonic quintic (f = 0)
    u4 = (-0.15 * X ** 4 + 0.45 * X ** 3 * Y + 0.2 * X ** 2 * Y ** 2
          - 0.3 * X * Y ** 3 + 0.1 * Y ** 4 + 0.8 * X ** 3
          - 0.6 * X ** 2 * Y + 0.35 * X * Y ** 2 + 0.25 * Y ** 3
          + 0.5 * X ** 2 - 0.9 * X * Y + 0.4 * Y ** 2
          + 1.2 * X - 0.7 * Y + 0.3)
    u5 = X ** 5 - 10 * X ** 3 * Y ** 2 + 5 * X * Y ** 4
    cases = [(1, 1, None), (1, 2, None),
             (2, 3, exact_dict(u4, 2)), (2, 4, exact_dict(u5, 2))]

    lines = []
    ok = True
    for p, r, exact in cases:
        base = 8 if p == 1 else 4
        sizes = [base * 2 ** i for i in range(4)]
        for fam in ("structured", "randomized"):
            if fam == "structured":
                meshes = [generate_structured_quads(n) for n in sizes]
            else:
                meshes = [generate_randomized_quads(n, jitter=0.2, seed=i)
                          for i, n in enumerate(sizes)]
            hs = [np.sqrt(m.total_area() / m.n_cells) for m in meshes]
            rows = converge_polyharmonic(p, r, meshes, exact=exact)
            s_l2 = ls_slope(hs, [row["errL2"] for row in rows])
            s_en = ls_slope(hs, [row["errH1" if p == 1 else "errH2"]
                                 for row in rows])
            ok_en = abs(s_en - (r - (p - 1))) <= 0.15
            ok_l2 = abs(s_l2 - (r + 1)) <= 0.2
            ok = ok and ok_en and ok_l2
            lines.append(f"p={p} r={r} {fam[:4]}: energy {s_en:.2f} "
                         f"(want {r - (p - 1)}±0.15) L2 {s_l2:.2f} "
                         f"(want {r + 1}±0.2)")

    dt = time.time() - t0
    ok = ok and dt < 600
    report(2, ok, "polyharmonic rates on structured and randomized quads, "
                  f"4 levels, {dt:.0f}s < 600s | " + "; ".join(lines))
    assert ok


# -- 3: Cahn-Hilliard manufactured convergence ---------------------------------

def test_criterion_3_ch_manufactured_rates_and_dt_robustness():
    t0 = time.time()
    sizes = [16, 32, 64, 128]
    meshes = [generate_structured_quads(n) for n in sizes]
    rows = run_manufactured_convergence(meshes, gamma=0.1, dt=1e-4,
                                        t_end=0.1, chord=True)
    _, e2, r2, e1, r1, e0, r0 = rows[-1]
    ok_rates = (abs(r2 - 1) <= 0.2 and abs(r1 - 2) <= 0.2
                and abs(r0 - 2) <= 0.2)

    # halved time step on the third mesh: spatial error must dominate
    half = run_manufactured_convergence([meshes[2]], gamma=0.1, dt=5e-5,
                                        t_end=0.1, chord=True)
    base = np.array([rows[2][1], rows[2][3], rows[2][5]])
    fine = np.array([half[0][1], half[0][3], half[0][5]])
    changes = np.abs(fine - base) / base
    ok_dt = changes.max() < 0.05

    dt = time.time() - t0
    ok = ok_rates and ok_dt and dt < 1200
    report(3, ok, f"Cahn-Hilliard rates at finest pair: H2 {r2:.2f} "
                  f"(want 1±0.2), H1 {r1:.2f} (want 2±0.2), L2 {r0:.2f} "
                  f"(want 2±0.2); dt/2 changes errors by "
                  f"{100 * changes.max():.2f}% < 5%; {dt:.0f}s < 1200s")
    assert ok


# -- 4: spinodal decomposition run ---------------------------------------------

def test_criterion_4_spinodal_mass_and_newton():
    t0 = time.time()
    mesh = generate_voronoi(64, seed=0, lloyd_iters=2)
    res = run_spinodal(mesh, gamma=0.1, dt=1e-5, n_steps=200, seed=0,
                       tol=1e-6)
    drift = float(np.abs(np.diff(res.masses)).max())
    iters = int(max(res.newton_iters))
    dt = time.time() - t0
    ok = drift <= 1e-10 and iters <= 10 and dt < 120
    report(4, ok, f"spinodal 200 steps on 64-cell Voronoi: mass drift "
                  f"{drift:.1e}/step <= 1e-10, worst Newton {iters} <= 10, "
                  f"{dt:.1f}s < 120s")
    assert ok


# -- 5: elastodynamics convergence ---------------------------------------------

def test_criterion_5_elastodynamics_rates():
    t0 = time.time()
    schedule = [("1", 1, [16, 32, 64]), ("2", 1, [16, 32, 64]),
                ("3", 1, [8, 16, 32]), ("1", 2, [8, 16, 32]),
                ("2", 2, [8, 16, 32]), ("3", 2, [2, 4, 8]),
                ("1", 3, [8, 16, 32])]
    ok = True
    lines = []
    for family, k, sizes in schedule:
        rows = run_benchmark_convergence(family, k, sizes, t_end=0.25)
        hs = [row[0] for row in rows]
        s_l2 = ls_slope(hs, [row[2] for row in rows])
        s_h1 = ls_slope(hs, [row[3] for row in rows])
        good = abs(s_h1 - k) <= 0.25 and abs(s_l2 - (k + 1)) <= 0.25
        ok = ok and good
        lines.append(f"mesh{family} k={k}: L2 {s_l2:.2f} H1 {s_h1:.2f}")

    dt = time.time() - t0
    ok = ok and dt < 1800
    report(5, ok, f"elastodynamic rates within ±0.25 of (k+1, k), "
                  f"{dt:.0f}s < 1800s | " + "; ".join(lines))
    assert ok


# -- 6: leap-frog energy conservation ------------------------------------------

def test_criterion_6_leapfrog_energy_conservation():
    t0 = time.time()
    drifts = []
    for k in (1, 2):
        mesh = generate_voronoi(20, seed=5, lloyd_iters=2)
        sysm = ElastoSystem(mesh, k, Material())
        step = 0.9 * critical_dt(sysm)
        rng = np.random.default_rng(0)
        u0 = np.zeros(sysm.ndof)
        u0[sysm.free] = 0.01 * rng.standard_normal(len(sysm.free))
        energies = []

        def track(n, t, state, energies=energies, step=step, sysm=sysm):
            energies.append(sysm.midpoint_energy(state.u_prev,
                                                 state.u_curr, step))

        sysm.leapfrog(u0, np.zeros(sysm.ndof), None, step, 1000,
                      on_step=track)
        energies = np.array(energies)
        drifts.append(float(np.max(np.abs(energies - energies[0]))
                            / energies[0]))

    dt = time.time() - t0
    ok = max(drifts) < 1e-6 and dt < 60
    report(6, ok, f"unforced leap-frog midpoint energy over 1000 steps: "
                  f"relative drift {drifts[0]:.1e} (k=1), {drifts[1]:.1e} "
                  f"(k=2), both < 1e-6; {dt:.1f}s < 60s")
    assert ok


# -- 7: independent-route cross checks -----------------------------------------

def _fem_p1_stiffness(tri):
    x, y = tri[:, 0], tri[:, 1]
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    area = 0.5 * abs(x @ b)
    return (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)


def _green_monomial_integral(v, a, b):
    """integral of x^a y^b over the polygon via the divergence theorem.

    Each straight edge contributes a 1D Gauss integral of
    x^(a+1) y^b / (a+1) against n_x ds = dy, an independent route from
    the triangulated area rule under test.
    """
    gx, gw = np.polynomial.legendre.leggauss((a + b) // 2 + 2)
    total = 0.0
    for i in range(len(v)):
        p0, p1 = v[i], v[(i + 1) % len(v)]
        xm = 0.5 * (p0[0] + p1[0]) + 0.5 * (p1[0] - p0[0]) * gx
        ym = 0.5 * (p0[1] + p1[1]) + 0.5 * (p1[1] - p0[1]) * gx
        total += 0.5 * (p1[1] - p0[1]) \
            * np.sum(gw * xm ** (a + 1) * ym ** b) / (a + 1)
    return total


def test_criterion_7_cross_checks():
    t0 = time.time()

    # (a) order-1 stiffness on a triangulation equals linear FEM
    quads = generate_structured_quads(4)
    cells = []
    for c in quads.cells:
        cells.append([c[0], c[1], c[2]])
        cells.append([c[0], c[2], c[3]])
    tris = PolygonalMesh(quads.vertices.copy(), cells)
    dof = H1DofMap(tris, 1)
    r_i, c_i, v_vem, v_fem = [], [], [], []
    for ci in range(tris.n_cells):
        idx, _ = dof.cell_dofs(ci)
        K = H1LocalSpace(tris.geometry(ci), 1).stiffness()
        F = _fem_p1_stiffness(tris.vertices[tris.cells[ci]])
        for i in range(3):
            for j in range(3):
                r_i.append(idx[i])
                c_i.append(idx[j])
                v_vem.append(K[i, j])
                v_fem.append(F[i, j])
    shape = (dof.ndof, dof.ndof)
    diff = assemble(r_i, c_i, v_vem, shape) \
        - assemble(r_i, c_i, v_fem, shape)
    fem_gap = np.max(np.abs(diff.toarray()))
    ok_fem = fem_gap < 1e-12

    # (b) hand-coded Jacobians against central differences
    mesh = generate_structured_quads(4)
    system = CHSystem(mesh, gamma=0.1)
    rng = np.random.default_rng(7)
    u = rng.standard_normal(system.ndof) * 0.3
    u_prev = rng.standard_normal(system.ndof) * 0.3
    bvec = np.zeros(system.ndof)
    J = system.jacobian(u, 1e-3).toarray()
    h = 1e-6
    jac_gap = 0.0
    for _ in range(4):
        w = rng.standard_normal(system.ndof)
        w /= np.linalg.norm(w)
        num = (system.residual(u + h * w, u_prev, 1e-3, bvec)
               - system.residual(u - h * w, u_prev, 1e-3, bvec)) / (2 * h)
        jac_gap = max(jac_gap, np.linalg.norm(J @ w - num)
                      / np.linalg.norm(num))

    pent = PolygonalMesh(np.array([[0.0, 0.0], [0.9, -0.1], [1.2, 0.7],
                                   [0.4, 1.1], [-0.3, 0.6]]),
                         [[0, 1, 2, 3, 4]]).geometry(0)
    _, an, a0 = local_forms_c1(pent)
    z = rng.standard_normal(15) * 0.4
    Jc = rh_jacobian(pent, z, an, a0)
    Jfd = np.empty_like(Jc)
    for j in range(15):
        e = np.zeros(15)
        e[j] = h
        _, mp = semilinear_rh(pent, z + e, an, a0)
        _, mm = semilinear_rh(pent, z - e, an, a0)
        Jfd[:, j] = (mp @ (z + e) - mm @ (z - e)) / (2 * h)
    jac_gap = max(jac_gap,
                  np.max(np.abs(Jc - Jfd)) / np.max(np.abs(Jfd)))
    ok_jac = jac_gap < 1e-5

    # (c) quadrature exactness on every cell of every generator family
    fams = {"structured": generate_structured_quads(2),
            "randquads": generate_randomized_quads(3, jitter=0.2, seed=1),
            "hexagons": generate_hexagons(2),
            "octagons": generate_nonconvex_octagons(1),
            "voronoi": generate_voronoi(12, seed=3, lloyd_iters=1)}
    quad_gap = 0.0
    for m in fams.values():
        for ci in range(m.n_cells):
            verts = m.vertices[m.cells[ci]]
            for deg in (2, 4, 7):
                pts, wts = polygon_quadrature(verts, deg)
                assert np.all(wts > 0)
                for a, b in monomial_exponents(deg):
                    got = float(wts @ (pts[:, 0] ** a * pts[:, 1] ** b))
                    want = _green_monomial_integral(verts, a, b)
                    quad_gap = max(quad_gap, abs(got - want))
    ok_quad = quad_gap < 1e-13

    dt = time.time() - t0
    ok = ok_fem and ok_jac and ok_quad and dt < 60
    report(7, ok, f"cross checks: VEM-vs-FEM stiffness gap {fem_gap:.1e} "
                  f"< 1e-12, Jacobian-vs-FD gap {jac_gap:.1e} < 1e-5, "
                  f"quadrature-vs-divergence-theorem gap {quad_gap:.1e} "
                  f"< 1e-13; {dt:.1f}s < 60s")
    assert ok


# -- 8: p-refinement and the orthonormal basis ---------------------------------

def test_criterion_8_p_refinement_and_conditioning():
    t0 = time.time()
    rows_m = run_p_refinement(n=5, k_max=6, basis="monomial",
                              t_end=0.05, dt=2e-5, seed=1)
    rows_o = run_p_refinement(n=5, k_max=6, basis="orthonormal",
                              t_end=0.05, dt=2e-5, seed=1)
    err_m = [row[2] for row in rows_m]
    err_o = [row[2] for row in rows_o]
    ok_mono = (all(e is not None for e in err_m + err_o)
               and all(b < a for a, b in zip(err_m, err_m[1:]))
               and all(b < a for a, b in zip(err_o, err_o[1:])))
    cond_m = np.array([row[4] for row in rows_m])
    cond_o = np.array([row[4] for row in rows_o])
    ok_cond = bool(np.all(cond_o[2:] <= cond_m[2:]))  # k >= 3

    dt = time.time() - t0
    ok = ok_mono and ok_cond and dt < 600
    report(8, ok, f"p-refinement k=1..6: errors decay monotonically "
                  f"({err_m[0]:.1e} -> {err_m[-1]:.1e} monomial, "
                  f"{err_o[0]:.1e} -> {err_o[-1]:.1e} orthonormal); "
                  f"conditioning at k=6: {cond_o[-1]:.1e} orthonormal vs "
                  f"{cond_m[-1]:.1e} monomial, orthonormal never worse for "
                  f"k>=3; {dt:.0f}s < 600s")
    assert ok
