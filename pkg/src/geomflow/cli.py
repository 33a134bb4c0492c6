"""Batch front end: run, sweep, distance, check-mesh subcommands.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import argparse
import os
import sys

import numpy as np

from .config import config_hash, load_config
from .diagnostics import LEDGER_HEADER, eoc, mesh_distance, sphere_error
from .elements import lagrange_element
from .errors import ConfigError, GeomflowError
from .fields import SpaceField, map_initial_geometry
from .refmesh import (
    POLYGON_HEADER,
    load_mesh,
    make_circle_mesh,
    make_cuboid_mesh,
    make_icosphere_mesh,
    write_obj,
    write_polygon,
)
from .residual import FlowSpec
from .solver import NewtonConfig, march, read_checkpoint, write_checkpoint


def build_mesh(cfg, refinements=None, segments=None):
    kind = cfg["mesh.kind"]
    if kind == "icosphere":
        return make_icosphere_mesh(refinements if refinements is not None else cfg["mesh.refinements"])
    if kind == "circle":
        return make_circle_mesh(segments if segments is not None else cfg["mesh.segments"])
    if kind == "cuboid":
        return make_cuboid_mesh(
            cfg["mesh.lx"], cfg["mesh.ly"], cfg["mesh.lz"], cfg["mesh.density"]
        )
    return load_mesh(cfg["mesh.path"])


def spec_from_config(cfg, timestep=None) -> FlowSpec:
    overrides = {}
    if cfg["quadrature.time_points"]:
        overrides["time_rule_points"] = cfg["quadrature.time_points"]
    overrides["elevation_points"] = cfg["quadrature.elevation_points"]
    if cfg["quadrature.spatial_degree"]:
        overrides["spatial_degree"] = cfg["quadrature.spatial_degree"]
    overrides["spatial_elevation"] = cfg["quadrature.spatial_elevation"]
    return FlowSpec(
        flow=cfg["run.flow"],
        degree=cfg["run.degree"],
        stages=cfg["run.stages"],
        timestep=timestep if timestep is not None else cfg["run.timestep"],
        final_time=cfg["run.final_time"],
        geometry=cfg["run.geometry"],
        policy_overrides=overrides,
    )


def newton_from_config(cfg) -> NewtonConfig:
    return NewtonConfig(
        abs_tol=cfg["newton.abs_tol"],
        rel_tol=cfg["newton.rel_tol"],
        max_iterations=cfg["newton.max_iterations"],
        backtrack_factor=cfg["newton.backtrack_factor"],
        max_backtracks=cfg["newton.max_backtracks"],
        fd_jacobian=cfg["newton.fd_jacobian"],
    )


# -- snapshots ------------------------------------------------------------------


def _subtriangulate(degree: int):
    """Lattice sub-triangles of one reference triangle, as local node indices."""
    el = lagrange_element(2, degree)
    k = degree
    index = {}
    for l, (u, v) in enumerate(el.nodes):
        index[(int(round(u * k)), int(round(v * k)))] = l
    tris = []
    for i in range(k):
        for j in range(k - i):
            tris.append([index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]])
            if i + j < k - 1:
                tris.append([index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]])
    return np.array(tris)


def write_snapshot(path_base: str, field: SpaceField) -> str:
    """Linearized snapshot: OBJ for surfaces, closed-polygon text for curves."""
    if field.mesh.dim == 1:
        path = path_base + ".txt"
        order = []
        cn = field.dofmap.cell_nodes
        for row in cn:
            order.append(row[0])
            order.extend(row[2:])
        write_polygon(path, field.dofs[order])
        return path
    path = path_base + ".obj"
    if field.degree == 1:
        write_obj(path, field.dofs, field.mesh.cells)
        return path
    sub = _subtriangulate(field.degree)
    cn = field.dofmap.cell_nodes
    faces = cn[:, sub].reshape(-1, 3)
    write_obj(path, field.dofs, faces)
    return path


# -- subcommands ------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg["run.output_dir"] = args.output_dir
    chash = config_hash(cfg)
    out = cfg["run.output_dir"]
    os.makedirs(out, exist_ok=True)

    mesh = build_mesh(cfg)
    spec = spec_from_config(cfg)
    X0 = map_initial_geometry(mesh, cfg["run.geometry"], spec.degree)
    newton = newton_from_config(cfg)

    start_slab, start_state = 0, None
    if args.resume:
        start_state, last_slab, saved_hash = read_checkpoint(args.resume, mesh)
        if saved_hash and saved_hash != chash:
            raise ConfigError(
                f"checkpoint hash {saved_hash} does not match config hash {chash}"
            )
        start_slab = last_slab + 1

    snap_every = cfg["run.snapshot_interval"]
    ckpt_every = cfg["run.checkpoint_interval"]
    ckpt_path = os.path.join(out, "run.ckpt")

    mode = "a" if args.resume else "w"
    with open(os.path.join(out, "ledger.csv"), mode) as ledger:
        if not args.resume:
            ledger.write(f"# config {chash}\n")
            ledger.write(LEDGER_HEADER + "\n")
            if snap_every:
                write_snapshot(os.path.join(out, "snapshot_000000"), X0)

        def on_slab(n, row, state):
            ledger.write(row.to_csv() + "\n")
            ledger.flush()
            if state is not None and snap_every and (n + 1) % snap_every == 0:
                write_snapshot(os.path.join(out, f"snapshot_{n + 1:06d}"), state.end_field())

        record = march(
            spec, X0, newton=newton,
            start_slab=start_slab, start_state=start_state,
            on_slab=on_slab,
            checkpoint_interval=ckpt_every, checkpoint_path=ckpt_path,
            config_hash=chash,
        )

    if record.final_state is not None:
        write_checkpoint(
            os.path.join(out, "final.ckpt"),
            record.final_state,
            start_slab + record.slabs_accepted - 1,
            chash,
        )
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write(f"config {chash}\n")
        f.write(f"termination {record.termination}\n")
        f.write(f"final_time {record.final_time:.17g}\n")
        f.write(f"slabs {record.slabs_accepted}\n")
        if record.failure_message:
            f.write(f"message {record.failure_message}\n")
    print(f"{record.termination} at t = {record.final_time:.8g} ({record.slabs_accepted} slabs)")
    return 0


def _exact_radius(d: int, flow: str, T: float):
    """Closed-form shrinking radius for the unit sphere/circle, where known."""
    if flow != "mcf":
        return None
    r2 = 1.0 - 2.0 * d * T
    return np.sqrt(r2) if r2 > 0 else None


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    axis = args.axis or cfg["sweep.axis"]
    levels = args.levels or cfg["sweep.levels"]
    if levels < 3:
        raise ConfigError("key 'sweep.levels': need at least 3 levels")
    out = cfg["run.output_dir"]
    os.makedirs(out, exist_ok=True)
    newton = newton_from_config(cfg)
    T = cfg["run.final_time"]
    k = cfg["run.degree"]

    steps, finals, errors, failed = [], [], [], []
    for lev in range(levels):
        try:
            if axis == "space":
                if cfg["mesh.kind"] == "circle":
                    n = cfg["mesh.segments"] * 2**lev
                    mesh = build_mesh(cfg, segments=n)
                else:
                    mesh = build_mesh(cfg, refinements=cfg["sweep.base_refinement"] + lev)
                h = mesh.max_edge_length()
                # timestep coupling tau ~ h^((k+2)/2), snapped to divide T
                scale = (h / steps[0]) ** ((k + 2) / 2.0) if steps else 1.0
                tau = T / max(1, int(np.ceil(T / (cfg["run.timestep"] * scale))))
                step = h
            else:
                mesh = build_mesh(cfg)
                tau = cfg["run.timestep"] / 2**lev
                step = tau
            spec = spec_from_config(cfg, timestep=tau)
            X0 = map_initial_geometry(mesh, cfg["run.geometry"], spec.degree)
            record = march(spec, X0, newton=newton)
            if record.termination != "reached_T":
                raise GeomflowError(f"terminated early: {record.termination}")
            Xf = record.final_state.end_field()
            steps.append(step)
            finals.append(Xf)
            R = _exact_radius(mesh.dim, cfg["run.flow"], T)
            errors.append(sphere_error(Xf, R) if cfg["run.geometry"] == "sphere" and R else None)
        except GeomflowError as exc:
            failed.append((lev, str(exc)))
            print(f"level {lev}: FAILED ({exc})", file=sys.stderr)

    if len(steps) < 2:
        raise GeomflowError("sweep produced fewer than two successful levels")

    if any(e is None for e in errors):
        # no closed-form reference: adjacent-level mesh distance
        errors = [mesh_distance(finals[i], finals[i + 1]) for i in range(len(finals) - 1)]
        esteps = steps[:-1]
    else:
        esteps = steps

    dat = os.path.join(out, f"sweep_{axis}.dat")
    with open(dat, "w") as f:
        f.write("# step error\n")
        for hstep, err in zip(esteps, errors):
            f.write("%.17g %.17g\n" % (hstep, err))

    print(f"sweep axis={axis} levels={levels} flow={cfg['run.flow']}")
    if axis == "time":
        print(f"spatial degree fixed at k={k} for the temporal sweep")
    print(f"{'step':>14} {'error':>14} {'eoc':>8}")
    slopes = eoc(errors, esteps) if len(errors) >= 2 and min(errors) > 0 else []
    for i, (hstep, err) in enumerate(zip(esteps, errors)):
        tail = f" {slopes[i - 1]:8.3f}" if i and len(slopes) >= i else ""
        print(f"{hstep:14.6e} {err:14.6e}{tail}")
    for lev, msg in failed:
        print(f"level {lev} failed: {msg}")
    print(f"wrote {dat}")
    return 0


def _field_from_file(path) -> SpaceField:
    mesh = load_mesh(path)
    return SpaceField(mesh, 1, mesh.vertices.copy())


def cmd_distance(args) -> int:
    A = _field_from_file(args.mesh_a)
    B = _field_from_file(args.mesh_b)
    s = args.samples
    dab = mesh_distance(A, B, samples_per_cell=s)
    dba = mesh_distance(B, A, samples_per_cell=s)
    print(f"E_M(A,B) = {dab:.12e}   (samples_per_cell={s}, quadrature degree {2 * A.degree + 2})")
    print(f"E_M(B,A) = {dba:.12e}   (samples_per_cell={s}, quadrature degree {2 * B.degree + 2})")
    return 0


def cmd_check_mesh(args) -> int:
    mesh = load_mesh(args.mesh)  # validation happens on construction
    kind = "closed polygon" if mesh.dim == 1 else "closed triangle surface"
    print(f"{args.mesh}: valid {kind}")
    print(f"vertices {mesh.nvertices}  cells {mesh.ncells}  edges {len(mesh.edges)}")
    print(f"max edge length {mesh.max_edge_length():.8g}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geomflow", description="Evolving-surface finite elements")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="march one configured problem")
    r.add_argument("config")
    r.add_argument("--output-dir", default=None)
    r.add_argument("--resume", default=None, help="checkpoint file to restart from")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="refinement sweep with EOC table")
    s.add_argument("config")
    s.add_argument("--axis", choices=("space", "time"), default=None)
    s.add_argument("--levels", type=int, default=None)
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("distance", help="area-averaged distance between two mesh files")
    d.add_argument("mesh_a")
    d.add_argument("mesh_b")
    d.add_argument("--samples", type=int, default=3)
    d.set_defaults(func=cmd_distance)

    c = sub.add_parser("check-mesh", help="validate a mesh file")
    c.add_argument("mesh")
    c.set_defaults(func=cmd_check_mesh)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GeomflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
