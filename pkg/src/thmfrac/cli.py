"""Command-line entry points.

    thmfrac run <config>            execute a configured scenario
    thmfrac converge <config>       manufactured-solution convergence study
    thmfrac dfm --fluid ... --scheme ... [--vgradp] --mesh M
    thmfrac check-equivalence <config>
    thmfrac validate-mesh <file>
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io as iomod
from . import scenarios
from .coupler import check_equivalence, run_simulation
from .errors import ThmFracError
from .mesh import load_mesh


def _bool(s) -> bool:
    return str(s).strip().lower() in ("1", "true", "yes", "on")


def _write_outputs(result, problem, outdir, vtk_stride=0):
    os.makedirs(outdir, exist_ok=True)
    iomod.write_csv(result.series, os.path.join(outdir, "series.csv"))
    reports = {
        "t": [r.t for r in result.reports],
        "dt": [r.dt for r in result.reports],
        "outer_iterations": [r.outer_iterations for r in result.reports],
        "flow_newton": [r.flow_newton for r in result.reports],
        "contact_newton": [r.contact_newton for r in result.reports],
        "slack": [r.slack for r in result.reports],
        "budget_residual": [r.budget_residual for r in result.reports],
        "darcy_dissipation": [r.darcy_dissipation for r in result.reports],
        "fourier_dissipation": [r.fourier_dissipation for r in result.reports],
        "friction_dissipation": [r.friction_dissipation for r in result.reports],
    }
    iomod.write_csv(reports, os.path.join(outdir, "reports.csv"))
    state = result.final_state
    if state is not None:
        mesh = problem.mesh
        nc = mesh.n_cells
        iomod.write_vtk(mesh, os.path.join(outdir, "final.vtk"),
                        cell_data={"p": state.flow.pressure[:nc],
                                   "T": state.flow.temperature[:nc],
                                   "porosity": state.flow.porosity},
                        point_data={"u": state.mech.vertex_displacement()})
        if mesh.n_fracture_faces:
            iomod.write_fracture_vtk(
                mesh, os.path.join(outdir, "final_fractures.vtk"),
                face_data={"aperture": state.flow.aperture,
                           "lambda_n": state.mech.lambda_n,
                           "lambda_t": state.mech.lambda_t,
                           "status": state.mech.status.astype(float)})


def _vtk_hook(problem, outdir, stride):
    if stride <= 0:
        return None
    os.makedirs(outdir, exist_ok=True)
    counter = {"n": 0, "written": 0}

    def hook(state, report):
        if counter["n"] % stride == 0:
            mesh = problem.mesh
            nc = mesh.n_cells
            iomod.write_vtk(mesh, os.path.join(outdir, f"step_{counter['written']:05d}.vtk"),
                            cell_data={"p": state.flow.pressure[:nc],
                                       "T": state.flow.temperature[:nc],
                                       "porosity": state.flow.porosity},
                            point_data={"u": state.mech.vertex_displacement()})
            counter["written"] += 1
        counter["n"] += 1
    return hook


def cmd_run(args) -> int:
    cfg = iomod.parse_config(args.config)
    scen = cfg["scenario"]
    out = cfg["output"]
    stride = int(out.get("vtk_stride", 0))
    if scen["kind"] == "manufactured":
        res = scenarios.run_manufactured(
            int(scen.get("mesh_index", 3)), scheme=scen["scheme"],
            convection=scen["convection"],
            permeability=float(scen.get("permeability", 1.0)),
            t_final=float(scen.get("t_final", 0.05)),
            dt=float(scen.get("dt", 1e-4)))
        if not res.completed:
            print(f"run failed: {res.failure_message}")
            return 1
        print("relative space-time errors:")
        for k, v in res.errors.items():
            print(f"  {k}: {v:.6e}")
        return 0
    problem, grid, init_bcs = scenarios.dfm_problem(
        scen["fluid"], scen["scheme"], _bool(scen["vgradp_correction"]),
        int(scen["mesh_index"]))
    hook = _vtk_hook(problem, out["directory"], stride)
    initial = problem.initialize(1.0e5, 300.0, initial_bcs=init_bcs)
    res = run_simulation(problem, grid, initial, snapshot_hook=hook)
    _write_outputs(res, problem, out["directory"])
    if res.failed:
        print(f"run failed: {res.failure_message} (partial outputs written)")
        return 1
    print(f"completed {len(res.reports)} steps; outputs in {out['directory']}")
    return 0


def cmd_converge(args) -> int:
    cfg = iomod.parse_config(args.config)
    scen = cfg["scenario"]
    out = cfg["output"]
    meshes = [int(v) for v in scen.get("mesh_indices", "3 4 5").split()]
    rows, orders = scenarios.run_convergence_study(
        meshes, scheme=scen["scheme"], convection=scen["convection"],
        permeability=float(scen.get("permeability", 1.0)),
        t_final=float(scen.get("t_final", 0.05)),
        dt=float(scen.get("dt", 1e-4)))
    os.makedirs(out["directory"], exist_ok=True)
    table = {"mesh_index": [r.mesh_index for r in rows],
             "h": [r.h for r in rows],
             "completed": [int(r.completed) for r in rows]}
    for key in ("p", "T", "u", "gp", "gT", "gu"):
        table[f"err_{key}"] = [r.errors.get(key, float("nan")) for r in rows]
    iomod.write_csv(table, os.path.join(out["directory"], "convergence.csv"))
    failed = [r for r in rows if not r.completed]
    for r in failed:
        print(f"mesh {r.mesh_index}: solver failure ({r.failure_message})")
    print("fitted orders:")
    for k, v in orders.items():
        print(f"  {k}: {v:.3f}")
    return 0 if not failed else 1


def cmd_dfm(args) -> int:
    res = scenarios.run_dfm(args.fluid, args.scheme, args.vgradp, args.mesh)
    problem, _, _ = scenarios.dfm_problem(args.fluid, args.scheme, args.vgradp,
                                          args.mesh)
    _write_outputs(res, problem, args.output)
    if res.failed:
        print(f"run failed: {res.failure_message} (partial outputs written)")
        return 1
    print(f"completed {len(res.reports)} steps; outputs in {args.output}")
    return 0


def cmd_check_equivalence(args) -> int:
    cfg = iomod.parse_config(args.config)
    scen = cfg["scenario"]
    problem, grid, init_bcs = scenarios.dfm_problem(
        scen["fluid"], "S", _bool(scen["vgradp_correction"]),
        int(scen["mesh_index"]))
    from .flow import FlowSystem, LevelState
    mesh = problem.mesh
    rng = np.random.default_rng(int(scen.get("seed", 0)))
    N = mesh.n_entities
    worst = 0.0
    n_states = int(scen.get("states", 10))
    for _ in range(n_states):
        prev = LevelState(
            pressure=rng.uniform(1e5, 5e6, N), temperature=rng.uniform(285, 315, N),
            porosity=np.full(mesh.n_cells, problem.rock.initial_porosity),
            entropy=np.zeros(mesh.n_cells),
            aperture=np.full(mesh.n_fracture_faces, problem.rock.contact_aperture),
            div_mean=np.zeros(mesh.n_cells))
        system = FlowSystem(mesh, problem.ops, problem.rock, problem.fluid,
                            problem.flow_config, 1.0, 1.0, prev, prev.aperture,
                            prev.div_mean, base_perm_matrices=problem.base_perm,
                            base_unit_matrices=problem.base_unit)
        p = rng.uniform(1e5, 5e6, N)
        T = rng.uniform(285, 315, N)
        worst = max(worst, check_equivalence(system, p, T))
    print(f"max per-row identity residual over {n_states} random states: {worst:.3e}")
    return 0 if worst <= 1e-10 else 1


def cmd_validate_mesh(args) -> int:
    mesh = load_mesh(args.file)
    mesh.validate()
    print(f"valid mesh: {mesh.n_cells} cells, {mesh.n_faces} faces, "
          f"{mesh.n_fracture_faces} fracture faces, "
          f"{mesh.n_fracture_edges} fracture edges")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="thmfrac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured scenario")
    p_run.add_argument("config")
    p_run.set_defaults(fn=cmd_run)

    p_conv = sub.add_parser("converge", help="manufactured convergence study")
    p_conv.add_argument("config")
    p_conv.set_defaults(fn=cmd_converge)

    p_dfm = sub.add_parser("dfm", help="three-stage fractured-domain run")
    p_dfm.add_argument("--fluid", choices=["liquid", "gas"], default="liquid")
    p_dfm.add_argument("--scheme", choices=["H", "S"], default="H")
    p_dfm.add_argument("--vgradp", action="store_true")
    p_dfm.add_argument("--mesh", type=int, default=0)
    p_dfm.add_argument("--output", default="out")
    p_dfm.set_defaults(fn=cmd_dfm)

    p_eq = sub.add_parser("check-equivalence",
                          help="row identity between the scheme variants")
    p_eq.add_argument("config")
    p_eq.set_defaults(fn=cmd_check_equivalence)

    p_vm = sub.add_parser("validate-mesh", help="load and validate a mesh file")
    p_vm.add_argument("file")
    p_vm.set_defaults(fn=cmd_validate_mesh)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ThmFracError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
