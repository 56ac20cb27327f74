"""Command-line front end: ``run``, ``convergence``, ``verify`` and ``mesh-info``.

Exit codes: 0 success, 1 validation error (or a failed verification), 2 solver
non-convergence, 3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import yaml

from fracbiot.errors import (
    ContractViolation,
    FracBiotError,
    InvalidParameterError,
    NonConvergenceError,
    ScenarioError,
    SolverError,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NONCONVERGENCE = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors (argparse would exit with 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _param(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key, yaml.safe_load(value)


def _add_source(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset", help="built-in scenario (ex1, ex2, ex3, ex4, appendix, consolidation)")
    g.add_argument("--config", type=Path, help="scenario YAML file")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                   help="preset keyword argument, e.g. n=20 (repeatable)")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=float, help="Newton tolerance on the relative update")
    p.add_argument("--dt", type=float, help="time step [s]")
    p.add_argument("--c", type=float, help="contact parameter c [Pa/m]")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracbiot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write VTK, CSV and a report")
    _add_source(p)
    _add_overrides(p)
    p.add_argument("--output", type=Path, default=Path("output"), help="output directory")

    p = sub.add_parser("convergence", help="mesh convergence study of a preset family")
    p.add_argument("--preset", required=True, help="preset family")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--levels", type=float, nargs="+", required=True, help="resolutions to compare")
    p.add_argument("--reference", type=float, required=True, help="resolution of the reference")
    _add_overrides(p)
    p.add_argument("--output", type=Path, default=Path("output"), help="output directory")

    p = sub.add_parser("verify", help="run the verification oracles")
    p.add_argument("--full", action="store_true", help="20 probe states per set and a finer KKT run")
    p.add_argument("--output", type=Path, help="directory for the metrics CSV")

    p = sub.add_parser("mesh-info", help="print mesh statistics")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--preset")
    g.add_argument("--config", type=Path)
    g.add_argument("--mesh", type=Path, help="gmsh 2.2 ASCII file")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE")
    return parser


def apply_overrides(config, delta=None, dt=None, c=None):
    """Return ``config`` with the solver tolerance, time step and ``c`` replaced."""
    solver = config.solver
    if delta is not None:
        solver = dataclasses.replace(solver, tol=float(delta))
    if c is not None:
        solver = dataclasses.replace(solver, c=float(c))
    time_ = config.time if dt is None else dataclasses.replace(config.time, dt=float(dt))
    out = dataclasses.replace(config, solver=solver, time=time_)
    # re-validate through the dictionary form
    from fracbiot.scenarios import ScenarioConfig

    ScenarioConfig.from_dict(out.to_dict(), base_dir=out.base_dir)
    return out


def _load(args):
    from fracbiot.scenarios import preset, read_scenario

    if getattr(args, "config", None) is not None:
        if args.param:
            raise ScenarioError("--param applies to presets only")
        if not args.config.is_file():
            raise FileNotFoundError(f"scenario file {args.config} not found")
        return read_scenario(args.config)
    try:
        return preset(args.preset, **dict(args.param))
    except TypeError as err:
        raise ScenarioError(f"bad preset parameter: {err}") from err


def _cmd_run(args) -> int:
    from fracbiot.scenarios import run_scenario

    cfg = apply_overrides(_load(args), args.delta, args.dt, args.c)
    result = run_scenario(cfg, output_dir=args.output)
    print(result.report.to_text(), end="")
    return EXIT_OK


def _cmd_convergence(args) -> int:
    from fracbiot.convergence import CONVERGENCE_TABLE_HEADER, RESOLUTION_PARAM, run_convergence_study
    from fracbiot.io import write_csv
    from fracbiot.scenarios import preset

    if args.preset not in RESOLUTION_PARAM:
        raise ScenarioError(f"no convergence family for preset {args.preset!r}")
    key = RESOLUTION_PARAM[args.preset]
    extra = dict(args.param)

    def family(level):
        cfg = preset(args.preset, **{**extra, key: int(level)})
        return apply_overrides(cfg, args.delta, args.dt, args.c)

    table = run_convergence_study(family, args.levels, args.reference)
    print(table.to_text(), end="")
    write_csv(args.output / f"{args.preset}_convergence.csv", CONVERGENCE_TABLE_HEADER, table.rows())
    return EXIT_OK


def _cmd_verify(args) -> int:
    from fracbiot.io import write_csv
    from fracbiot.oracle import verification_suite

    checks = verification_suite(quick=not args.full)
    for ch in checks:
        print(ch.line())
    if args.output is not None:
        write_csv(args.output / "verification.csv", ["check", "value", "tolerance", "passed"],
                  [[c.name, float(c.value), float(c.tolerance), c.passed] for c in checks])
    ok = all(c.passed for c in checks)
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_VALIDATION


def _cmd_mesh_info(args) -> int:
    from fracbiot.io import read_gmsh
    from fracbiot.mesh import build_mesh, build_subgrid
    from fracbiot.scenarios import build_problem

    if args.mesh is not None:
        mesh = build_mesh(read_gmsh(args.mesh))
        names = []
    else:
        pb = build_problem(_load(args))
        mesh, names = pb.mesh, pb.fracture_names
    sg = build_subgrid(mesh)
    print(f"dimension {mesh.dim}")
    print(f"cells {mesh.num_cells}")
    print(f"faces {mesh.num_faces}")
    print(f"nodes {mesh.num_nodes}")
    print(f"subfaces {sg.num_subfaces}")
    print(f"fracture faces {mesh.num_fracture_faces}")
    print(f"volume {mesh.domain_volume():.6g}")
    for g in mesh.group_names:
        print(f"group {g}: {mesh.faces_in_group(g).size} faces")
    for name in names:
        print(f"fracture {name}")
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "convergence": _cmd_convergence,
    "verify": _cmd_verify,
    "mesh-info": _cmd_mesh_info,
}


def main(argv=None) -> int:
    from fracbiot.io import MeshFormatError, OutputError

    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (NonConvergenceError, SolverError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except MeshFormatError as err:
        # unreadable file: I/O; malformed content: validation
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO if isinstance(err.__cause__, OSError) else EXIT_VALIDATION
    except (OutputError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ScenarioError, ContractViolation, InvalidParameterError, FracBiotError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
