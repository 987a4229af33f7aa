"""Command-line entry point, level tables, run metadata and VTK output."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import AdaptError, AdaptParams, adaptive_loop
from .cases import BUILTIN, case_to_text, convergence_study, load_case
from .fespace import FESpace
from .goals import eval_goal

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4


@dataclasses.dataclass
class RunConfig:
    case: str
    mode: str = "adaptive"
    tol: float | None = None
    max_levels: int | None = None
    alpha: float | None = None
    estimator: str | None = None
    weights: list | None = None
    out: Path = Path("mgfsi-out")
    vtk: bool = False
    seed: int = 0

    def adapt_params(self, base: AdaptParams):
        kw = {k: getattr(self, k) for k in ("tol", "max_levels", "alpha", "estimator")
              if getattr(self, k) is not None}
        kw["mode"] = self.mode
        return dataclasses.replace(base, **kw)


# ----------------------------------------------------------------------
# tables
def _fmt(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "nan"
    return "%.8e" % v


def levels_table(reports, goal_names):
    """CSV text with one row per level; fixed ``%.8e`` formatting."""
    head = ["level", "dofs"] + [f"J_{n}" for n in goal_names]
    head += ["J_c", "true_error", "eta_h", "sum_abs_eta", "i_eff", "i_ind"]
    rows = [",".join(head)]
    for r in reports:
        cols = [str(r.level), str(r.n_dofs)] + [_fmt(float(v)) for v in r.values]
        cols += [_fmt(r.j_c), _fmt(r.true_error), _fmt(r.eta_h), _fmt(r.sum_abs),
                 _fmt(r.i_eff), _fmt(r.i_ind)]
        rows.append(",".join(cols))
    return "\n".join(rows) + "\n"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    return v


def run_metadata(case, params, reports, monitors=None):
    return {
        "software": {"name": "mgfsi", "version": __version__},
        "case": case.name,
        "materials": case.params.as_dict(),
        "adapt": dataclasses.asdict(params),
        "goals": [g.name for g in case.goals],
        "omega": case.omega,
        "reference_j_c": case.jc_reference_value(),
        "levels": [{k: _jsonable(v) for k, v in dataclasses.asdict(r).items()} for r in reports],
        "monitors": monitors or {},
    }


# ----------------------------------------------------------------------
# VTK
CORNERS = {k: (0, k, k * (k + 1) + k, k * (k + 1)) for k in (1, 2, 3, 4)}


def vertex_values(space: FESpace, x_full, comp):
    """Values of component ``comp`` at the mesh vertices (nan where unused)."""
    mesh = space.mesh
    x = space.apply_constraints(np.asarray(x_full, dtype=float))
    k = space.comp_degree[comp]
    out = np.full(len(mesh.vertices), np.nan)
    dofs = space.cell_dofs(comp)[:, CORNERS[k]]
    out[mesh.cell_vertices[mesh.active]] = x[dofs]
    return out


def write_vtk(mesh, states, indicators, path, level=None):
    """Legacy ASCII unstructured grid with point and cell data.

    Parameters
    ----------
    mesh : QuadMesh
    states : dict
        ``prefix -> (space, x_full)``; fields ``v``, ``u`` (vectors) and
        ``p`` are written as ``<prefix>v`` etc.  Use ``""`` for the primal
        state and ``"z_"`` for an adjoint.
    indicators : array of one value per active cell, or None
    path : output file
    """
    used = np.unique(mesh.cell_vertices[mesh.active])
    new_id = np.full(len(mesh.vertices), -1)
    new_id[used] = np.arange(len(used))
    pts = mesh.vertices[used]
    cells = new_id[mesh.cell_vertices[mesh.active]]
    lines = ["# vtk DataFile Version 3.0", "mgfsi output", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(pts)} double"]
    lines += [f"{x:.10e} {y:.10e} 0" for x, y in pts]
    lines.append(f"CELLS {len(cells)} {5 * len(cells)}")
    lines += ["4 " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += ["9"] * len(cells)
    if states:
        lines.append(f"POINT_DATA {len(pts)}")
        for prefix, (space, x) in states.items():
            vx, vy, ux, uy, p = (vertex_values(space, x, c)[used] for c in range(5))
            for name, (a, b) in (("v", (vx, vy)), ("u", (ux, uy))):
                lines.append(f"VECTORS {prefix}{name} double")
                lines += [f"{s:.10e} {t:.10e} 0" for s, t in zip(a, b)]
            lines.append(f"SCALARS {prefix}p double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [f"{s:.10e}" for s in p]
    lines.append(f"CELL_DATA {len(cells)}")
    lines += ["SCALARS material int 1", "LOOKUP_TABLE default"]
    lines += [str(int(m)) for m in mesh.cell_material[mesh.active]]
    lines += ["SCALARS level int 1", "LOOKUP_TABLE default"]
    lines += [str(int(lv)) for lv in mesh.cell_level[mesh.active]]
    if indicators is not None:
        lines += ["SCALARS eta double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.10e}" for v in np.asarray(indicators, dtype=float)]
    Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# CLI
def _parser():
    ap = argparse.ArgumentParser(prog="mgfsi", description=(
        "Adaptive finite elements for stationary fluid-structure interaction "
        "with multigoal error estimation."))
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="adaptive or uniform refinement run")
    run.add_argument("--case", required=True,
                     help=f"builtin case ({', '.join(sorted(BUILTIN))}) or config file")
    run.add_argument("--mode", choices=("adaptive", "uniform"), default="adaptive")
    run.add_argument("--max-levels", type=int)
    run.add_argument("--tol", type=float)
    run.add_argument("--alpha", type=float)
    run.add_argument("--estimator", choices=("primal", "full"))
    run.add_argument("--weights", help="comma separated goal weights")
    run.add_argument("--out", default="mgfsi-out", type=Path)
    run.add_argument("--vtk", action="store_true", help="write solution and indicator files")
    run.add_argument("--seed", type=int, default=0)
    cfg = sub.add_parser("config", help="print the config file of a builtin case")
    cfg.add_argument("--case", required=True)
    ver = sub.add_parser("verify", help="manufactured-solution convergence study")
    ver.add_argument("--case", default="verify_stokes",
                     choices=("verify_stokes", "verify_elasticity"))
    ver.add_argument("--levels", type=int, default=4)
    return ap


def run_case(cfg: RunConfig):
    """Execute a run and write ``levels.csv``, ``run.json`` and optional VTK files."""
    case = load_case(cfg.case)
    if cfg.weights is not None:
        if len(cfg.weights) != len(case.goals):
            raise ValueError(f"{len(cfg.weights)} weights given for {len(case.goals)} goals")
        # a directly given J_c reference only holds for the bundled weights
        case = dataclasses.replace(case, omega=list(cfg.weights), jc_reference=None)
    params = cfg.adapt_params(case.adapt)
    np.random.seed(cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    monitors = {}

    def on_level(rep, data):
        if case.monitors:
            monitors[rep.level] = {g.name: eval_goal(g, data["problem"], data["x"])
                                   for g in case.monitors}
        if cfg.vtk:
            states = {"": (data["problem"].space, data["x"])}
            write_vtk(data["mesh"], states, data["cell_eta"], out / f"solution_{rep.level}.vtk")
            if data["adjoint"] is not None:
                zs = {"z_": (data["enriched"].space, data["adjoint"].z)}
                write_vtk(data["mesh"], zs, data["cell_eta"], out / f"indicators_{rep.level}.vtk")
        print(f"level {rep.level}: {rep.n_dofs} dofs, J_c {rep.j_c:.8e}, "
              f"eta {_fmt(rep.eta_h)}, error {_fmt(rep.true_error)}", flush=True)

    try:
        reports = adaptive_loop(case, params, callback=on_level)
    finally:
        (out / "case.cfg").write_text(case_to_text(case))
    (out / "levels.csv").write_text(levels_table(reports, [g.name for g in case.goals]))
    meta = run_metadata(case, params, reports, monitors)
    (out / "run.json").write_text(json.dumps(meta, indent=2, default=_jsonable))
    return reports


def run(argv=None):
    """CLI entry point; returns the process exit code."""
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "config":
        try:
            sys.stdout.write(case_to_text(load_case(args.case)))
        except (KeyError, OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    if args.command == "verify":
        res = convergence_study(args.case, args.levels)
        for h, e0, e1, n in zip(res["h"], res["l2"], res["h1"], res["dofs"]):
            print(f"h={h:.4e} dofs={n} L2={e0:.4e} H1={e1:.4e}")
        print(f"orders: L2 {_fmt(res['l2_order'])} H1 {_fmt(res['h1_order'])}")
        return EXIT_OK
    try:
        weights = None
        if args.weights:
            weights = [float(t) for t in args.weights.split(",")]
        cfg = RunConfig(case=args.case, mode=args.mode, tol=args.tol,
                        max_levels=args.max_levels, alpha=args.alpha, estimator=args.estimator,
                        weights=weights, out=args.out, vtk=args.vtk, seed=args.seed)
        load_case(cfg.case)
    except (KeyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_case(cfg)
    except AdaptError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (KeyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main():
    sys.exit(run())


__all__ = ["RunConfig", "levels_table", "main", "run", "run_case", "write_vtk"]
