"""Command-line front end: mesh generation, solvers, convergence tables.

Every subcommand is driven by a flat set of options that can also be
supplied through a line-oriented ``key = value`` config file; explicit
flags override file values.  The effective configuration is echoed as a
manifest into the output directory, and re-running with that manifest
as the config reproduces the outputs bit for bit.  All numeric output
is written with 17 significant digits.

Exit codes: 0 success, 2 usage error, 3 invalid (p, r) or k parameters,
4 file I/O failure, 1 any other runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARAMS = 3
EXIT_IO = 4
EXIT_FAIL = 1

FMT = "%.17g"


def _fnum(v) -> str:
    return FMT % float(v)


# one row per option: (flag, type, default, help)
SCHEMAS = {
    "mesh-gen": [
        ("family", str, "quads-random",
         "quads | quads-random | hexagons | octagons | voronoi"),
        ("n", int, 16, "resolution (seed count for voronoi)"),
        ("jitter", float, 0.2, "vertex jitter of quads-random"),
        ("distortion", float, 0.05, "sinusoidal distortion of hexagons"),
        ("lloyd-iters", int, 0, "Lloyd relaxation sweeps for voronoi"),
        ("seed", int, 0, "RNG seed"),
        ("out", str, "mesh.txt", "output mesh file"),
    ],
    "check-mesh": [
        ("mesh", str, None, "mesh file to inspect"),
        ("gamma", float, 0.1, "shape-regularity threshold"),
    ],
    "solve-poly": [
        ("p", int, 1, "operator order (1 or 2)"),
        ("r", int, 1, "polynomial degree (2p-1 or 2p)"),
        ("mesh", str, None, "mesh file (overrides --family/--n)"),
        ("family", str, "structured", "structured | randomized"),
        ("n", int, 16, "cells per side"),
        ("seed", int, 0, "RNG seed for randomized meshes"),
        ("out-dir", str, ".", "output directory"),
    ],
    "converge-poly": [
        ("p", int, 1, "operator order (1 or 2)"),
        ("r", int, 1, "polynomial degree (2p-1 or 2p)"),
        ("levels", int, 4, "number of refinements"),
        ("family", str, "structured", "structured | randomized"),
        ("seed", int, 0, "RNG seed for randomized meshes"),
        ("out-dir", str, ".", "output directory"),
    ],
    "converge-ch": [
        ("gamma", float, 0.1, "interface parameter"),
        ("dt", float, 1e-4, "time step"),
        ("t-end", float, 0.1, "final time"),
        ("levels", int, 4, "refinements starting at h = 1/16"),
        ("tol", float, 1e-6, "Newton tolerance"),
        ("out-dir", str, ".", "output directory"),
    ],
    "spinodal": [
        ("n-cells", int, 64, "Voronoi seed count"),
        ("steps", int, 200, "number of time steps"),
        ("dt", float, 1e-5, "time step"),
        ("gamma", float, 0.1, "interface parameter"),
        ("seed", int, 0, "RNG seed (mesh and initial data)"),
        ("lloyd-iters", int, 2, "Lloyd sweeps for the mesh"),
        ("snapshot-every", int, 0, "write a field snapshot every m steps"),
        ("out-dir", str, ".", "output directory"),
    ],
    "converge-elasto": [
        ("k", int, 1, "polynomial degree"),
        ("family", str, "1", "mesh family 1 | 2 | 3"),
        ("sizes", str, "", "comma list of resolutions (default by k)"),
        ("t-end", float, 0.25, "final time"),
        ("dt-cap", float, 5e-4, "upper bound on the time step"),
        ("rho", float, 1.0, "density"),
        ("lam", float, 2.0, "first Lame coefficient"),
        ("mu", float, 1.0, "second Lame coefficient"),
        ("seed", int, 1, "RNG seed for family 1"),
        ("out-dir", str, ".", "output directory"),
    ],
    "p-refine": [
        ("n", int, 5, "cells per side of the fixed mesh"),
        ("k-max", int, 6, "largest polynomial degree"),
        ("basis", str, "monomial", "monomial | orthonormal"),
        ("t-end", float, 0.05, "final time of the short run"),
        ("dt", float, 2e-5, "time step of the short run"),
        ("seed", int, 1, "RNG seed of the fixed mesh"),
        ("out-dir", str, ".", "output directory"),
    ],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyvem",
        description="Polygonal VEM solvers and convergence harnesses.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="key = value file; flags override it")
        for flag, typ, default, hlp in schema:
            p.add_argument(f"--{flag}", type=typ, default=default,
                           help=hlp, dest=flag.replace("-", "_"))
    return parser


def load_config(path: str) -> dict:
    cfg = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(
                    f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, val = line.split("=", 1)
            cfg[key.strip().replace("-", "_")] = val.strip()
    return cfg


def apply_config(args, argv, schema) -> None:
    """Fill args fields from the config file unless given on the line."""
    cfg = load_config(args.config)
    given = set()
    for tok in argv:
        if tok.startswith("--"):
            given.add(tok[2:].split("=", 1)[0].replace("-", "_"))
    types = {flag.replace("-", "_"): typ for flag, typ, _, _ in schema}
    for key, val in cfg.items():
        if key == "subcommand":
            continue
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        if key not in given:
            setattr(args, key, types[key](val))


def write_manifest(args, schema, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{args.subcommand}-manifest.txt")
    with open(path, "w") as fh:
        fh.write(f"# polyvem {args.subcommand}\n")
        fh.write(f"subcommand = {args.subcommand}\n")
        for flag, typ, _, _ in schema:
            v = getattr(args, flag.replace("-", "_"))
            if isinstance(v, float):
                v = _fnum(v)
            fh.write(f"{flag} = {v}\n")
    return path


# -- subcommand bodies -------------------------------------------------------

def _poly_meshes(family: str, sizes, seed: int):
    from . import mesh as mg
    if family == "structured":
        return [mg.generate_structured_quads(n) for n in sizes]
    if family == "randomized":
        return [mg.generate_randomized_quads(n, seed=seed) for n in sizes]
    raise ValueError(f"unknown quad family {family!r}")


def cmd_mesh_gen(args) -> int:
    from . import mesh as mg
    fam = args.family
    if fam == "quads":
        m = mg.generate_structured_quads(args.n)
    elif fam == "quads-random":
        m = mg.generate_randomized_quads(args.n, jitter=args.jitter,
                                         seed=args.seed)
    elif fam == "hexagons":
        m = mg.generate_hexagons(args.n, distortion=args.distortion)
    elif fam == "octagons":
        m = mg.generate_nonconvex_octagons(args.n)
    elif fam == "voronoi":
        m = mg.generate_voronoi(args.n, seed=args.seed,
                                lloyd_iters=args.lloyd_iters)
    else:
        raise ValueError(f"unknown mesh family {args.family!r}")
    mg.write_mesh(m, args.out)
    m2 = mg.read_mesh(args.out)
    if m2.n_cells != m.n_cells or m2.n_vertices != m.n_vertices:
        raise RuntimeError("mesh file failed to round-trip")
    print(f"wrote {args.out}: {m.n_vertices} vertices, "
          f"{m.n_cells} cells, {m.n_edges} edges")
    return EXIT_OK


def cmd_check_mesh(args) -> int:
    from . import mesh as mg
    if args.mesh is None:
        raise ValueError("--mesh is required")
    m = mg.read_mesh(args.mesh)
    rep = mg.check_regularity(m, gamma=args.gamma)
    hang = mg.find_hanging_nodes(m)
    print(f"cells {m.n_cells}  vertices {m.n_vertices}  edges {m.n_edges}")
    print(f"h_max {_fnum(m.h_max())}  gamma_measured "
          f"{_fnum(rep.measured_gamma)}")
    print(f"star-shaped {'yes' if rep.star_shaped.all() else 'no'}  "
          f"edge-ratio-ok {'yes' if rep.m2_pass.all() else 'no'}  "
          f"hanging-nodes {len(hang)}")
    ok = rep.all_pass and not hang
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_solve_poly(args) -> int:
    from . import mesh as mg
    from .vem_poly import (error_norms_poly, manufactured_polyharmonic,
                           solve_polyharmonic, PolyDofMap)
    if args.mesh is not None:
        m = mg.read_mesh(args.mesh)
    else:
        m = _poly_meshes(args.family, [args.n], args.seed)[0]
    exact = manufactured_polyharmonic(args.p)
    u_h, dm = solve_polyharmonic(m, args.p, args.r, exact["f"],
                                 exact=exact["u"],
                                 exact_grad=(exact["ux"], exact["uy"]))
    errs = error_norms_poly(m, args.p, args.r, u_h, exact)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir,
                       f"solve-poly-p{args.p}r{args.r}.txt")
    vals = np.array([u_h[dm.vertex_dof(iv)] for iv in range(m.n_vertices)])
    with open(out, "w") as fh:
        fh.write("# x y u\n")
        for (x, y), v in zip(m.vertices, vals):
            fh.write(f"{_fnum(x)} {_fnum(y)} {_fnum(v)}\n")
    names = ("errL2", "errH1", "errH2")
    print("  ".join(f"{nm}={_fnum(e)}" for nm, e in zip(names, errs)))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_converge_poly(args) -> int:
    from .vem_poly import converge_polyharmonic, write_poly_csv
    base = 8 if args.p == 1 else 4
    sizes = [base * 2 ** i for i in range(args.levels)]
    meshes = _poly_meshes(args.family, sizes, args.seed)
    rows = converge_polyharmonic(args.p, args.r, meshes)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir,
                       f"converge-poly-p{args.p}r{args.r}.csv")
    write_poly_csv(rows, out)
    for row in rows:
        print(f"h={_fnum(row['h'])} dofs={row['dofs']} "
              f"errL2={_fnum(row['errL2'])}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_converge_ch(args) -> int:
    from . import mesh as mg
    from .cahn_hilliard import run_manufactured_convergence, write_ch_csv
    sizes = [16 * 2 ** i for i in range(args.levels)]
    meshes = [mg.generate_structured_quads(n) for n in sizes]
    rows = run_manufactured_convergence(
        meshes, gamma=args.gamma, dt=args.dt, t_end=args.t_end,
        tol=args.tol, chord=True, verbose=True)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "converge-ch.csv")
    write_ch_csv(rows, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_spinodal(args) -> int:
    from . import mesh as mg
    from .cahn_hilliard import run_spinodal, write_snapshot
    m = mg.generate_voronoi(args.n_cells, seed=args.seed,
                            lloyd_iters=args.lloyd_iters)
    res = run_spinodal(m, gamma=args.gamma, dt=args.dt,
                       n_steps=args.steps, seed=args.seed,
                       snapshot_every=args.snapshot_every)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "spinodal-energy.csv")
    with open(out, "w") as fh:
        fh.write("step,time,energy,mass,newton_iters\n")
        for i, t in enumerate(res.times):
            its = 0 if i == 0 else res.newton_iters[i - 1]
            fh.write(f"{i},{_fnum(t)},{_fnum(res.energies[i])},"
                     f"{_fnum(res.masses[i])},{its}\n")
    for j, (_, snap) in enumerate(res.snapshots):
        write_snapshot(m, snap, os.path.join(args.out_dir,
                                             f"spinodal-snap{j:03d}.txt"))
    drift = np.abs(np.diff(res.masses)).max() if args.steps else 0.0
    print(f"mass drift per step max {_fnum(drift)}  "
          f"worst newton iters {max(res.newton_iters)}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_converge_elasto(args) -> int:
    from .elastodynamics import (Material, run_benchmark_convergence,
                                 write_elasto_csv)
    if args.k < 1:
        raise ValueError(f"invalid degree k={args.k}; k must be >= 1")
    if args.sizes:
        sizes = [int(s) for s in args.sizes.split(",")]
    else:
        base = 16 if args.k == 1 else 8
        if args.family == "3":
            # octagon meshes carry 9 n^2 cells, so start much coarser
            base //= 2 if args.k == 1 else 4
        sizes = [base, 2 * base, 4 * base]
    mat = Material(rho=args.rho, lam=args.lam, mu=args.mu)
    rows = run_benchmark_convergence(
        args.family, args.k, sizes, material=mat, t_end=args.t_end,
        dt_cap=args.dt_cap, seed=args.seed, verbose=True)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir,
                       f"converge-elasto-k{args.k}-mesh{args.family}.csv")
    write_elasto_csv(rows, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_p_refine(args) -> int:
    from .elastodynamics import run_p_refinement, write_prefine_csv
    if args.basis not in ("monomial", "orthonormal"):
        raise ValueError(f"unknown basis {args.basis!r}")
    rows = run_p_refinement(n=args.n, k_max=args.k_max, basis=args.basis,
                            t_end=args.t_end, dt=args.dt, seed=args.seed,
                            verbose=True)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, f"p-refine-{args.basis}.csv")
    write_prefine_csv(rows, out)
    print(f"wrote {out}")
    return EXIT_OK


HANDLERS = {
    "mesh-gen": cmd_mesh_gen,
    "check-mesh": cmd_check_mesh,
    "solve-poly": cmd_solve_poly,
    "converge-poly": cmd_converge_poly,
    "converge-ch": cmd_converge_ch,
    "spinodal": cmd_spinodal,
    "converge-elasto": cmd_converge_elasto,
    "p-refine": cmd_p_refine,
}

# subcommands whose run is archived with a manifest in the out dir
MANIFEST_CMDS = {"solve-poly", "converge-poly", "converge-ch", "spinodal",
                 "converge-elasto", "p-refine"}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    schema = SCHEMAS[args.subcommand]
    from .la_core import SolverError
    from .mesh import MeshFormatError
    try:
        if args.config is not None:
            apply_config(args, argv, schema)
        if args.subcommand in ("solve-poly", "converge-poly"):
            from .vem_poly import _check_pr
            try:
                _check_pr(args.p, args.r)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_PARAMS
        if args.subcommand in ("converge-elasto", "p-refine"):
            kval = args.k if args.subcommand == "converge-elasto" \
                else args.k_max
            if kval < 1 or kval > 10:
                print(f"error: invalid degree k={kval}", file=sys.stderr)
                return EXIT_PARAMS
        status = HANDLERS[args.subcommand](args)
        if status == EXIT_OK and args.subcommand in MANIFEST_CMDS:
            manifest = write_manifest(args, schema, args.out_dir)
            print(f"manifest {manifest}")
        return status
    except (OSError, MeshFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, SolverError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
