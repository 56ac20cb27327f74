"""Scenario configuration, presets and the run loop.

A scenario is a YAML document with a ``schema_version`` field. It selects a mesh
(built-in generator or gmsh file), material constants, fractures with their friction
coefficient and gap, boundary conditions per face group with optional time ramps,
solver settings, the time loop and output selections.

Example::

    schema_version: 1
    name: shear
    mesh: {generator: rectangle, cells: [8, 8], lengths: [1.0, 1.0]}
    material: {E: 4.0e9, nu: 0.2}
    fractures:
      - {name: f, shape: polyline, points: [[0.25, 0.25], [0.75, 0.75]]}
    mechanics:
      ymin: {type: dirichlet, value: [0.0, 0.0]}
      ymax: {type: dirichlet, value: [0.0, -0.002]}
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from fracbiot import generators
from fracbiot.assembly import (
    BoundaryValues,
    Discretization,
    NewtonConfig,
    TimeStepState,
    advance_time_step,
    final_contact_state,
    final_labels,
    solve_newton,
)
from fracbiot.contact import ContactState, set_counts
from fracbiot.errors import FracBiotError, NonConvergenceError, ScenarioError
from fracbiot.fvm_local import BoundaryTypes, MaterialField
from fracbiot.io import read_gmsh, write_csv, write_vtk
from fracbiot.mesh import FACE_BOUNDARY, Mesh, RawMesh, build_mesh, build_subgrid, pair_fracture_sides
from fracbiot.postprocess import FRACTURE_TABLE_HEADER, fracture_summary, fracture_table

SCHEMA_VERSION = 1
AXES = {"x": 0, "y": 1, "z": 2}
# largest exponent used for the radius-regularized friction coefficient
_MAX_EXPONENT = 700.0


def _err(where: str, msg: str) -> ScenarioError:
    return ScenarioError(f"{where}: {msg}" if where else msg)


def _tuple(x, where, length=None, dtype=float):
    if isinstance(x, (int, float)) and length is None:
        x = [x]
    try:
        t = tuple(dtype(v) for v in x)
    except (TypeError, ValueError):
        raise _err(where, f"expected a list of numbers, got {x!r}") from None
    if length is not None and len(t) != length:
        raise _err(where, f"expected {length} entries, got {len(t)}")
    return t


def _points(x, where):
    try:
        pts = tuple(tuple(float(v) for v in p) for p in x)
    except (TypeError, ValueError):
        raise _err(where, f"expected a list of points, got {x!r}") from None
    return pts


def _take(d: dict, where: str, allowed: set[str], required: set[str] = frozenset()):
    if not isinstance(d, dict):
        raise _err(where, f"expected a mapping, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise _err(where, f"unknown field(s) {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise _err(where, f"missing field(s) {sorted(missing)}")
    return d


@dataclass(frozen=True)
class MeshSpec:
    """Built-in generator (``rectangle`` or ``box``) or a gmsh 2.2 file."""

    generator: str | None = "rectangle"
    file: str | None = None
    cells: tuple[int, ...] = (4, 4)
    lengths: tuple[float, ...] = (1.0, 1.0)
    origin: tuple[float, ...] | None = None
    pattern: str = "diagonal"
    perturb: float = 0.0
    seed: int = 0

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @classmethod
    def from_dict(cls, d, where="mesh"):
        allowed = {f.name for f in fields(cls)}
        _take(d, where, allowed)
        if "file" in d:
            return cls(generator=None, file=str(d["file"]), cells=(), lengths=(), origin=None)
        gen = d.get("generator", "rectangle")
        if gen not in ("rectangle", "box"):
            raise _err(f"{where}.generator", f"unknown generator {gen!r}")
        dim = 2 if gen == "rectangle" else 3
        cells = _tuple(d.get("cells", (4,) * dim), f"{where}.cells", dim, int)
        lengths = _tuple(d.get("lengths", (1.0,) * dim), f"{where}.lengths", dim)
        origin = _tuple(d["origin"], f"{where}.origin", dim) if d.get("origin") is not None else None
        if min(cells) < 1 or min(lengths) <= 0:
            raise _err(where, "cells and lengths must be positive")
        pattern = str(d.get("pattern", "diagonal"))
        if pattern not in ("diagonal", "crossed"):
            raise _err(f"{where}.pattern", f"unknown pattern {pattern!r}")
        perturb = float(d.get("perturb", 0.0))
        if not 0 <= perturb < 0.5:
            raise _err(f"{where}.perturb", "must be in [0, 0.5)")
        return cls(gen, None, cells, lengths, origin, pattern, perturb, int(d.get("seed", 0)))

    def to_dict(self):
        if self.file is not None:
            return {"file": self.file}
        out = {
            "generator": self.generator,
            "cells": list(self.cells),
            "lengths": list(self.lengths),
            "pattern": self.pattern,
            "perturb": self.perturb,
            "seed": self.seed,
        }
        if self.origin is not None:
            out["origin"] = list(self.origin)
        return out


@dataclass(frozen=True)
class FrictionSpec:
    """Friction coefficient on a fracture.

    Kinds:
        ``constant``: ``F = value``.
        ``tip_gaussian``: ``F = value * (1 + amplitude * exp(-D^2 / width2))`` with
            ``D`` the distance to the nearest fracture tip.
        ``radius_exp``: ``F = value * exp(length / (R - D) - length / R)`` with ``D``
            the distance to the disc centre and ``R`` its radius.
    """

    kind: str = "constant"
    value: float = 0.5
    amplitude: float = 1.0
    width2: float = 0.005
    length: float = 10.0

    @classmethod
    def from_dict(cls, d, where):
        _take(d, where, {f.name for f in fields(cls)})
        kind = str(d.get("kind", "constant"))
        if kind not in ("constant", "tip_gaussian", "radius_exp"):
            raise _err(f"{where}.kind", f"unknown friction kind {kind!r}")
        spec = cls(
            kind,
            float(d.get("value", 0.5)),
            float(d.get("amplitude", 1.0)),
            float(d.get("width2", 0.005)),
            float(d.get("length", 10.0)),
        )
        if spec.value <= 0 or spec.amplitude < 0 or spec.width2 <= 0 or spec.length < 0:
            raise _err(where, "friction parameters must be positive")
        return spec

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class FractureSpec:
    """A fracture: a polyline (2d), a disc (3d) or a tagged face group of a file mesh.

    ``tips`` default to the polyline end points; for tagged fractures they must be
    given when the friction law needs them.
    """

    name: str
    shape: str = "polyline"
    points: tuple = ()
    tips: tuple | None = None
    center: tuple | None = None
    normal: tuple | None = None
    radius: float | None = None
    friction: FrictionSpec = FrictionSpec()
    gap: float = 0.0

    @classmethod
    def from_dict(cls, d, where):
        _take(d, where, {f.name for f in fields(cls)}, {"name"})
        shape = str(d.get("shape", "polyline"))
        kw: dict[str, Any] = {"name": str(d["name"]), "shape": shape}
        if shape == "polyline":
            kw["points"] = _points(d.get("points", ()), f"{where}.points")
            if len(kw["points"]) < 2:
                raise _err(f"{where}.points", "a polyline needs at least two points")
        elif shape == "disc":
            for key in ("center", "normal", "radius"):
                if key not in d:
                    raise _err(where, f"disc fracture needs {key!r}")
            kw["center"] = _tuple(d["center"], f"{where}.center", 3)
            kw["normal"] = _tuple(d["normal"], f"{where}.normal", 3)
            kw["radius"] = float(d["radius"])
            if kw["radius"] <= 0 or np.linalg.norm(kw["normal"]) == 0:
                raise _err(where, "disc needs a positive radius and a non-zero normal")
        elif shape != "tagged":
            raise _err(f"{where}.shape", f"unknown fracture shape {shape!r}")
        if d.get("tips") is not None:
            kw["tips"] = _points(d["tips"], f"{where}.tips")
        kw["friction"] = FrictionSpec.from_dict(d.get("friction", {}), f"{where}.friction")
        kw["gap"] = float(d.get("gap", 0.0))
        if kw["gap"] < 0:
            raise _err(f"{where}.gap", "gap must be non-negative")
        spec = cls(**kw)
        if spec.friction.kind == "tip_gaussian" and not spec.tip_points():
            raise _err(where, "tip_gaussian friction needs tips")
        if spec.friction.kind == "radius_exp" and spec.shape != "disc":
            raise _err(where, "radius_exp friction needs a disc fracture")
        return spec

    def tip_points(self):
        if self.tips is not None:
            return self.tips
        if self.shape == "polyline":
            return (self.points[0], self.points[-1])
        return ()

    def to_dict(self):
        out: dict[str, Any] = {"name": self.name, "shape": self.shape}
        if self.shape == "polyline":
            out["points"] = [list(p) for p in self.points]
        if self.shape == "disc":
            out.update(center=list(self.center), normal=list(self.normal), radius=self.radius)
        if self.tips is not None:
            out["tips"] = [list(p) for p in self.tips]
        out["friction"] = self.friction.to_dict()
        out["gap"] = self.gap
        return out

    def predicate(self, tol: float):
        if self.shape == "polyline":
            return generators.on_polyline(self.points, tol)
        return generators.on_disc(self.center, self.normal, self.radius, tol)

    def friction_at(self, x: np.ndarray) -> np.ndarray:
        f = self.friction
        if f.kind == "constant":
            return np.full(x.shape[0], f.value)
        if f.kind == "tip_gaussian":
            tips = np.asarray(self.tip_points(), dtype=float)
            D = np.min(np.linalg.norm(x[:, None, :] - tips[None, :, : x.shape[1]], axis=2), axis=1)
            return f.value * (1.0 + f.amplitude * np.exp(-(D**2) / f.width2))
        R = self.radius
        D = np.linalg.norm(x - np.asarray(self.center)[: x.shape[1]], axis=1)
        with np.errstate(divide="ignore"):
            arg = np.where(D < R, f.length / np.maximum(R - D, 0.0) - f.length / R, _MAX_EXPONENT)
        return f.value * np.exp(np.minimum(arg, _MAX_EXPONENT))


@dataclass(frozen=True)
class RampSpec:
    """Time factor of boundary values: ``constant`` or ``linear`` up to ``t_ramp``."""

    kind: str = "constant"
    t_ramp: float = 0.0

    @classmethod
    def from_dict(cls, d, where):
        _take(d, where, {"kind", "t_ramp"})
        kind = str(d.get("kind", "constant"))
        if kind not in ("constant", "linear"):
            raise _err(f"{where}.kind", f"unknown ramp {kind!r}")
        t_ramp = float(d.get("t_ramp", 0.0))
        if kind == "linear" and t_ramp <= 0:
            raise _err(f"{where}.t_ramp", "linear ramp needs t_ramp > 0")
        return cls(kind, t_ramp)

    def factor(self, t: float) -> float:
        if self.kind == "constant":
            return 1.0
        return min(max(t, 0.0) / self.t_ramp, 1.0)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BoundarySpec:
    """Condition on one face group.

    Mechanics types: ``dirichlet`` (displacement), ``neumann`` (traction density),
    ``rolling`` (zero normal displacement, zero tangential traction). Flow types:
    ``dirichlet`` (pressure), ``neumann`` (outward flux density).
    """

    group: str
    type: str = "neumann"
    value: tuple[float, ...] = (0.0,)
    ramp: RampSpec = RampSpec()

    @classmethod
    def from_dict(cls, group, d, where, kinds, width):
        _take(d, where, {"type", "value", "ramp"}, {"type"})
        kind = str(d["type"])
        if kind not in kinds:
            raise _err(f"{where}.type", f"unknown boundary type {kind!r}")
        default = (0.0,) * width
        value = _tuple(d.get("value", default), f"{where}.value", width)
        ramp = RampSpec.from_dict(d.get("ramp", {}), f"{where}.ramp")
        return cls(str(group), kind, value, ramp)

    def to_dict(self):
        return {"type": self.type, "value": list(self.value), "ramp": self.ramp.to_dict()}


@dataclass(frozen=True)
class MaterialSpec:
    """Homogeneous material. Either ``E``, ``nu`` or ``mu``, ``lam`` must be given."""

    E: float | None = 4e9
    nu: float | None = 0.2
    mu: float | None = None
    lam: float | None = None
    alpha: float = 0.0
    c0: float = 0.0
    perm: float = 1.0
    body_force: tuple[float, ...] | None = None
    source: float = 0.0

    @classmethod
    def from_dict(cls, d, where="material"):
        _take(d, where, {f.name for f in fields(cls)})
        has_e = "E" in d or "nu" in d
        has_l = "mu" in d or "lam" in d
        if has_e and has_l:
            raise _err(where, "give either E, nu or mu, lam")
        kw: dict[str, Any] = {}
        if has_l:
            if not {"mu", "lam"} <= set(d):
                raise _err(where, "mu and lam must both be given")
            kw.update(E=None, nu=None, mu=float(d["mu"]), lam=float(d["lam"]))
        else:
            kw.update(E=float(d.get("E", 4e9)), nu=float(d.get("nu", 0.2)))
        for key in ("alpha", "c0", "perm", "source"):
            if key in d:
                kw[key] = float(d[key])
        if d.get("body_force") is not None:
            kw["body_force"] = _tuple(d["body_force"], f"{where}.body_force")
        spec = cls(**kw)
        if spec.E is not None and (spec.E <= 0 or not -1 < spec.nu < 0.5):
            raise _err(where, "need E > 0 and -1 < nu < 0.5")
        if spec.mu is not None and (spec.mu <= 0 or spec.lam + 2 * spec.mu / 3 <= 0):
            raise _err(where, "need mu > 0 and a positive bulk modulus")
        if spec.alpha < 0 or spec.c0 < 0 or spec.perm <= 0:
            raise _err(where, "need alpha >= 0, c0 >= 0 and perm > 0")
        return spec

    def to_dict(self):
        out = {k: v for k, v in asdict(self).items() if v is not None}
        if self.body_force is not None:
            out["body_force"] = list(self.body_force)
        return out

    def field(self, num_cells: int, dim: int) -> MaterialField:
        kw = dict(E=self.E, nu=self.nu) if self.E is not None else dict(mu=self.mu, lam=self.lam)
        bf = np.zeros(dim) if self.body_force is None else np.asarray(self.body_force[:dim])
        return MaterialField.homogeneous(
            num_cells, dim, alpha=self.alpha, c0=self.c0, perm=self.perm,
            body_force=bf, source=self.source, **kw,
        )


@dataclass(frozen=True)
class SolverSpec:
    c: float = 100e9
    tol: float = 1e-10
    max_iter: int = 50
    dynamic: bool = False
    regularize: bool = True
    gate_lam: bool = False
    gate_p: bool = False
    initial_lam_n: float = -100.0

    @classmethod
    def from_dict(cls, d, where="solver"):
        _take(d, where, {f.name for f in fields(cls)})
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = type(f.default)(d[f.name])
        spec = cls(**kw)
        if spec.c <= 0 or spec.tol <= 0 or spec.max_iter < 1:
            raise _err(where, "need c > 0, tol > 0 and max_iter >= 1")
        return spec

    def to_dict(self):
        return asdict(self)

    def config(self) -> NewtonConfig:
        return NewtonConfig(
            tol=self.tol, max_iter=self.max_iter, c=self.c, dynamic=self.dynamic,
            regularize=self.regularize, gate_lam=self.gate_lam, gate_p=self.gate_p,
        )


@dataclass(frozen=True)
class TimeSpec:
    """Time loop; ``steps = 0`` means a single static solve."""

    dt: float = 1.0
    steps: int = 0

    @classmethod
    def from_dict(cls, d, where="time"):
        _take(d, where, {"dt", "steps"})
        spec = cls(float(d.get("dt", 1.0)), int(d.get("steps", 0)))
        if spec.dt <= 0 or spec.steps < 0:
            raise _err(where, "need dt > 0 and steps >= 0")
        return spec

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class OutputSpec:
    vtk: bool = True
    csv: bool = True
    every: int = 1

    @classmethod
    def from_dict(cls, d, where="output"):
        _take(d, where, {"vtk", "csv", "every"})
        spec = cls(bool(d.get("vtk", True)), bool(d.get("csv", True)), int(d.get("every", 1)))
        if spec.every < 1:
            raise _err(f"{where}.every", "must be at least 1")
        return spec

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario. ``flow`` switches the pressure unknowns on."""

    name: str
    mesh: MeshSpec
    material: MaterialSpec = MaterialSpec()
    fractures: tuple[FractureSpec, ...] = ()
    mechanics: tuple[BoundarySpec, ...] = ()
    flow_bc: tuple[BoundarySpec, ...] = ()
    flow: bool = False
    solver: SolverSpec = SolverSpec()
    time: TimeSpec = TimeSpec()
    output: OutputSpec = OutputSpec()
    base_dir: str = "."
    schema_version: int = SCHEMA_VERSION

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ScenarioConfig":
        allowed = {
            "schema_version", "name", "mesh", "material", "fractures", "mechanics",
            "flow", "flow_bc", "solver", "time", "output",
        }
        _take(d, "", allowed, {"schema_version", "mesh"})
        if int(d["schema_version"]) != SCHEMA_VERSION:
            raise _err("schema_version", f"unsupported version {d['schema_version']}, expected {SCHEMA_VERSION}")
        mesh = MeshSpec.from_dict(d["mesh"])
        fr = d.get("fractures") or []
        if not isinstance(fr, list):
            raise _err("fractures", "expected a list")
        fractures = tuple(FractureSpec.from_dict(f, f"fractures[{i}]") for i, f in enumerate(fr))
        names = [f.name for f in fractures]
        if len(set(names)) != len(names):
            raise _err("fractures", "fracture names must be unique")
        dim = mesh.dim if mesh.file is None else None
        mech = d.get("mechanics") or {}
        _take(mech, "mechanics", set(mech))
        mechanics = []
        for g, spec in mech.items():
            where = f"mechanics.{g}"
            width = dim if dim is not None else len(spec.get("value", (0.0, 0.0)))
            mechanics.append(
                BoundarySpec.from_dict(g, spec, where, ("dirichlet", "neumann", "rolling"), width)
            )
        flow_bc = []
        fbc = d.get("flow_bc") or {}
        _take(fbc, "flow_bc", set(fbc))
        for g, spec in fbc.items():
            flow_bc.append(BoundarySpec.from_dict(g, spec, f"flow_bc.{g}", ("dirichlet", "neumann"), 1))
        return cls(
            name=str(d.get("name", "scenario")),
            mesh=mesh,
            material=MaterialSpec.from_dict(d.get("material", {})),
            fractures=fractures,
            mechanics=tuple(mechanics),
            flow_bc=tuple(flow_bc),
            flow=bool(d.get("flow", False)),
            solver=SolverSpec.from_dict(d.get("solver", {})),
            time=TimeSpec.from_dict(d.get("time", {})),
            output=OutputSpec.from_dict(d.get("output", {})),
            base_dir=str(base_dir),
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "mesh": self.mesh.to_dict(),
            "material": self.material.to_dict(),
            "fractures": [f.to_dict() for f in self.fractures],
            "mechanics": {b.group: b.to_dict() for b in self.mechanics},
            "flow": self.flow,
            "flow_bc": {b.group: b.to_dict() for b in self.flow_bc},
            "solver": self.solver.to_dict(),
            "time": self.time.to_dict(),
            "output": self.output.to_dict(),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def parse_scenario(text: str, base_dir: str = ".") -> ScenarioConfig:
    """Parse and validate a YAML scenario document."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ScenarioError(f"malformed scenario document: {err}") from err
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a mapping")
    return ScenarioConfig.from_dict(data, base_dir=base_dir)


def read_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ScenarioError(f"cannot read scenario {path}: {err}") from err
    return parse_scenario(text, base_dir=str(path.parent))


# --------------------------------------------------------------------------------------
# Problem construction


@dataclass
class Problem:
    """Everything needed to solve a scenario."""

    config: ScenarioConfig
    mesh: Mesh
    disc: Discretization
    fracture_names: list[str]
    bc_at: Any

    @property
    def subgrid(self):
        return self.disc.subgrid

    @property
    def pairing(self):
        return self.disc.pairing


def build_raw_mesh(config: ScenarioConfig) -> RawMesh:
    m = config.mesh
    if m.file is not None:
        path = Path(config.base_dir) / m.file
        return read_gmsh(path)
    scale = max(m.lengths)
    preds = {f.name: f.predicate(1e-9 * scale) for f in config.fractures if f.shape != "tagged"}
    if any(f.shape == "tagged" for f in config.fractures):
        raise ScenarioError("tagged fractures need a mesh file")
    if m.generator == "rectangle":
        if any(f.shape != "polyline" for f in config.fractures):
            raise ScenarioError("2d meshes take polyline fractures")
        return generators.rectangle(
            *m.cells, lengths=m.lengths, origin=m.origin or (0.0, 0.0), pattern=m.pattern,
            fractures=preds, perturb=m.perturb, seed=m.seed,
        )
    if any(f.shape != "disc" for f in config.fractures):
        raise ScenarioError("3d meshes take disc fractures")
    return generators.box(
        *m.cells, lengths=m.lengths, origin=m.origin or (0.0, 0.0, 0.0),
        fractures=preds, perturb=m.perturb, seed=m.seed,
    )


def load_scenario(text: str, base_dir: str = ".") -> tuple[ScenarioConfig, Mesh]:
    """Parse a scenario document and build its validated, fracture-split mesh."""
    config = parse_scenario(text, base_dir)
    mesh = build_problem(config).mesh
    return config, mesh


def _rolling_axis(mesh: Mesh, faces: np.ndarray, group: str) -> int:
    n = np.abs(mesh.face_normals[faces])
    ax = np.argmax(n, axis=1)
    if np.any(ax != ax[0]) or np.any(n[np.arange(faces.size), ax] < 1 - 1e-9):
        raise ScenarioError(f"rolling condition on {group!r} needs an axis-aligned planar group")
    return int(ax[0])


def build_problem(config: ScenarioConfig) -> Problem:
    """Mesh, subgrid, pairing, boundary types and condensed discretization."""
    raw = build_raw_mesh(config)
    frac_names = [f.name for f in config.fractures]
    for name in frac_names:
        if name not in raw.face_groups or raw.face_groups[name].size == 0:
            raise ScenarioError(f"fracture {name!r} does not match any mesh face")
    try:
        mesh = build_mesh(raw, frac_names)
    except FracBiotError as err:
        raise ScenarioError(f"invalid mesh: {err}") from err
    d = mesh.dim
    if config.mesh.file is None and d != config.dim:
        raise ScenarioError("mesh dimension does not match the scenario")
    subgrid = build_subgrid(mesh)
    gap = np.zeros(subgrid.num_plus)
    pairing = pair_fracture_sides(subgrid, 0.0)
    for i, f in enumerate(config.fractures):
        gap[pairing.fracture == i] = f.gap
    if np.any(gap > 0):
        pairing = pair_fracture_sides(subgrid, gap)
    sf_group = mesh.face_group[subgrid.sf_face]
    is_bnd = mesh.face_kind[subgrid.sf_face] == FACE_BOUNDARY
    bnd = BoundaryTypes.all_neumann(subgrid)
    ns = subgrid.num_subfaces
    mech_items = []
    for b in config.mechanics:
        if b.group not in mesh.group_names:
            raise ScenarioError(f"mechanics: unknown face group {b.group!r}")
        sel = is_bnd & (sf_group == mesh.group_names.index(b.group))
        if len(b.value) != d:
            raise ScenarioError(f"mechanics.{b.group}: value needs {d} components")
        if b.type == "dirichlet":
            bnd.mech_dirichlet[sel] = True
        elif b.type == "rolling":
            ax = _rolling_axis(mesh, mesh.faces_in_group(b.group), b.group)
            bnd.mech_dirichlet[sel, ax] = True
        mech_items.append((b, sel))
    flow_items = []
    for b in config.flow_bc:
        if b.group not in mesh.group_names:
            raise ScenarioError(f"flow_bc: unknown face group {b.group!r}")
        sel = is_bnd & (sf_group == mesh.group_names.index(b.group))
        if b.type == "dirichlet":
            bnd.flow_dirichlet[sel] = True
        flow_items.append((b, sel))
    material = config.material.field(mesh.num_cells, d)
    xp = subgrid.sf_point[pairing.plus]
    friction = np.ones(pairing.size)
    for i, f in enumerate(config.fractures):
        sel = pairing.fracture == i
        friction[sel] = f.friction_at(xp[sel])
    disc = Discretization(mesh, subgrid, pairing, material, bnd, friction, with_flow=config.flow)

    def bc_at(t: float) -> BoundaryValues:
        mech = np.zeros((ns, d))
        flow = np.zeros(ns)
        for b, sel in mech_items:
            v = np.asarray(b.value) * b.ramp.factor(t)
            if b.type == "rolling":
                continue
            mech[sel] = v
        for b, sel in flow_items:
            flow[sel] = b.value[0] * b.ramp.factor(t)
        return BoundaryValues(flow=flow, mech=mech.ravel())

    return Problem(config=config, mesh=mesh, disc=disc, fracture_names=frac_names, bc_at=bc_at)


# --------------------------------------------------------------------------------------
# Running


@dataclass
class StepRecord:
    """Outcome of one time level (step 0 is the static solve in static runs)."""

    step: int
    t: float
    iterations: int
    counts: dict
    fractures: dict
    seconds: float


@dataclass
class RunReport:
    """Per-step Newton counts, set populations, fracture summaries and timings."""

    scenario: str
    steps: list[StepRecord] = field(default_factory=list)
    setup_seconds: float = 0.0
    failed: bool = False
    message: str = ""
    outputs: list[str] = field(default_factory=list)

    @property
    def iterations(self) -> list[int]:
        return [s.iterations for s in self.steps]

    def max_slip(self, fracture: str | None = None) -> list[float]:
        """Maximum slip per step, over one or all fractures."""
        out = []
        for s in self.steps:
            vals = [v["max_slip"] for k, v in s.fractures.items() if fracture in (None, k)]
            out.append(max(vals, default=0.0))
        return out

    def to_text(self) -> str:
        lines = [f"scenario {self.scenario}", f"setup {self.setup_seconds:.2f} s"]
        for s in self.steps:
            c = s.counts
            lines.append(
                f"step {s.step:3d} t={s.t:.6g} newton={s.iterations} "
                f"open={c.get('open', 0)} stick={c.get('stick', 0)} slide={c.get('slide', 0)} "
                f"time={s.seconds:.2f}s"
            )
            for name, f in s.fractures.items():
                lines.append(
                    f"    {name}: max_slip={f['max_slip']:.6e} max_opening={f['max_opening']:.6e}"
                )
        lines.append("FAILED: " + self.message if self.failed else "completed")
        return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    report: RunReport
    problem: Problem
    state: TimeStepState
    bc: BoundaryValues
    contact: ContactState | None
    labels: np.ndarray
    states: list = field(default_factory=list)


def _record(problem, state, bc, cfg, step, seconds, iterations) -> tuple[StepRecord, ContactState | None, np.ndarray]:
    disc = problem.disc
    if disc.n_lam:
        cs = final_contact_state(disc, state, bc, cfg)
        labels = final_labels(disc, state, bc, cfg)
        fr = fracture_summary(disc.pairing, cs, labels, problem.fracture_names)
    else:
        cs, labels, fr = None, np.zeros(0, dtype=np.int64), {}
    rec = StepRecord(step, state.t, iterations, set_counts(labels), fr, seconds)
    return rec, cs, labels


def write_outputs(problem: Problem, state: TimeStepState, contact, labels, directory, step: int, selections: OutputSpec) -> list[str]:
    """Write the VTK cell fields and the CSV fracture table of one step."""
    directory = Path(directory)
    name = problem.config.name
    written = []
    d = problem.mesh.dim
    if selections.vtk:
        data = {"u": state.u.reshape(-1, d)}
        if problem.disc.with_flow:
            data["p"] = state.p
        path = directory / f"{name}_{step:04d}.vtk"
        write_vtk(path, problem.mesh, data, title=f"{name} t={state.t!r}")
        written.append(str(path))
    if selections.csv and problem.disc.n_lam:
        rows = fracture_table(problem.subgrid, problem.pairing, contact, labels, problem.fracture_names)
        path = directory / f"{name}_fractures_{step:04d}.csv"
        write_csv(path, FRACTURE_TABLE_HEADER, rows)
        written.append(str(path))
    return written


def run_scenario(
    config: ScenarioConfig,
    output_dir=None,
    problem: Problem | None = None,
    keep_states: bool = False,
) -> RunResult:
    """Run the static solve or the time loop of ``config``.

    Outputs are written to ``output_dir`` when given. Non-convergence is recorded in
    the report (``failed``) and the exception is re-raised with the report attached
    as ``err.report``.
    """
    t0 = time.perf_counter()
    problem = problem or build_problem(config)
    report = RunReport(scenario=config.name, setup_seconds=time.perf_counter() - t0)
    disc = problem.disc
    cfg = config.solver.config()
    dt = config.time.dt
    state = disc.initial_state(lam_n=config.solver.initial_lam_n, dt=dt)
    states = []
    result = None
    bc = problem.bc_at(0.0)
    try:
        if config.time.steps == 0:
            t1 = time.perf_counter()
            state, rep = solve_newton(disc, state, bc, cfg)
            rec, cs, labels = _record(problem, state, bc, cfg, 0, time.perf_counter() - t1, rep.iterations)
            report.steps.append(rec)
            if output_dir is not None:
                report.outputs += write_outputs(problem, state, cs, labels, output_dir, 0, config.output)
            if keep_states:
                states.append(state)
        else:
            bc_now = BoundaryValues.zeros(disc.subgrid.num_subfaces, disc.dim)
            cs, labels = None, np.zeros(0, dtype=np.int64)
            for k in range(1, config.time.steps + 1):
                t1 = time.perf_counter()
                state, rep, bc_now = advance_time_step(disc, state, problem.bc_at, dt, cfg, bc_now)
                rec, cs, labels = _record(problem, state, bc_now, cfg, k, time.perf_counter() - t1, rep.iterations)
                report.steps.append(rec)
                if keep_states:
                    states.append(state)
                if output_dir is not None and (k % config.output.every == 0 or k == config.time.steps):
                    report.outputs += write_outputs(problem, state, cs, labels, output_dir, k, config.output)
            bc = bc_now
        result = RunResult(report, problem, state, bc, cs, labels, states)
    except NonConvergenceError as err:
        report.failed = True
        report.message = str(err)
        if output_dir is not None:
            _write_report(report, output_dir)
        err.report = report
        raise
    if output_dir is not None:
        _write_report(report, output_dir)
    return result


def _write_report(report: RunReport, directory) -> None:
    from fracbiot.io import _write_text

    path = Path(directory) / f"{report.scenario}_report.txt"
    _write_text(path, report.to_text())
    report.outputs.append(str(path))


# --------------------------------------------------------------------------------------
# Presets

E0 = 4e9
NU0 = 0.2
EX1_FRACTURES = {
    "f1": ((0.2, 0.2), (0.5, 0.5), (0.8, 0.5)),
    "f2": ((1.8, 0.1), (1.8, 0.3)),
    "f3": ((0.3, 0.9), (0.5, 0.7)),
    "f4": ((1.0, 0.2), (1.4, 0.6)),
    "f5": ((1.6, 0.4), (2.0, 0.8)),
    "f6": ((0.9, 0.9), (1.2, 0.9)),
}
# the kink of f1 and the boundary end of f5 are not tips
EX1_TIPS = {
    "f1": ((0.2, 0.2), (0.8, 0.5)),
    "f5": ((1.6, 0.4),),
}
EX2_CENTERS = {"f1": (-10.0, -30.0, -80.0), "f2": (15.0, 60.0, 80.0)}
EX2_PLANE_OFFSETS = {"f1": -100.0, "f2": 100.0}
EX2_RADIUS = 150.0
FLUID = {"alpha": 1.0, "c0": 1e-10, "perm": 1e-8}


def _ex1_fractures(friction: FrictionSpec):
    return tuple(
        FractureSpec(name=k, shape="polyline", points=v, tips=EX1_TIPS.get(k), friction=friction)
        for k, v in EX1_FRACTURES.items()
    )


def ex1(n: int = 10) -> ScenarioConfig:
    """2 m x 1 m with six fractures; ``n`` squares per metre, crossed triangles.

    The fracture end points lie on a 0.1 m grid, so ``n`` must be a multiple of 10.
    """
    if n < 10 or n % 10:
        raise ScenarioError(f"ex1 needs n to be a positive multiple of 10, got {n}")
    return ScenarioConfig(
        name="ex1",
        mesh=MeshSpec("rectangle", None, (2 * n, n), (2.0, 1.0), None, "crossed"),
        material=MaterialSpec(E=E0, nu=NU0),
        fractures=_ex1_fractures(FrictionSpec("tip_gaussian", 0.5, 1.0, 0.005)),
        mechanics=(
            BoundarySpec("ymin", "dirichlet", (0.0, 0.0)),
            BoundarySpec("ymax", "dirichlet", (0.005, -0.002)),
        ),
    )


def ex2_disc_center(name: str) -> tuple[float, float, float]:
    """Centre projected onto the mesh-resolved plane ``z - x = offset``."""
    c = np.asarray(EX2_CENTERS[name])
    shift = ((c[2] - c[0]) - EX2_PLANE_OFFSETS[name]) / 2.0
    return tuple(float(v) for v in c - shift * np.array([-1.0, 0.0, 1.0]))


def ex2(k: int = 1) -> ScenarioConfig:
    """Box (-200, 300) x (-200, 300) x (-300, 300) m with two disc fractures.

    ``k`` cells per 100 m. The fracture planes ``z - x = -100`` and ``z - x = 100`` are
    tessellated by the mesh; they approximate the tabulated strike and dip.
    """
    normal = (-1.0 / math.sqrt(2.0), 0.0, 1.0 / math.sqrt(2.0))
    fractures = tuple(
        FractureSpec(
            name=name, shape="disc", center=ex2_disc_center(name), normal=normal,
            radius=EX2_RADIUS, friction=FrictionSpec("radius_exp", 0.5, length=10.0),
        )
        for name in ("f1", "f2")
    )
    return ScenarioConfig(
        name="ex2",
        mesh=MeshSpec("box", None, (5 * k, 5 * k, 6 * k), (500.0, 500.0, 600.0), (-200.0, -200.0, -300.0)),
        material=MaterialSpec(E=E0, nu=NU0),
        fractures=fractures,
        mechanics=(
            BoundarySpec("zmin", "dirichlet", (0.0, 0.0, 0.0)),
            BoundarySpec("zmax", "neumann", (0.0, 0.0, -4.5e6)),
            BoundarySpec("xmin", "rolling", (0.0, 0.0, 0.0)),
            BoundarySpec("xmax", "rolling", (0.0, 0.0, 0.0)),
            BoundarySpec("ymin", "rolling", (0.0, 0.0, 0.0)),
            BoundarySpec("ymax", "rolling", (0.0, 0.0, 0.0)),
        ),
    )


def ex3(n: int = 10, steps: int = 10) -> ScenarioConfig:
    """Example 1 with fluid; the top displacement ramps up until ``T / 2``."""
    base = ex1(n)
    T = 5 * FLUID["c0"] * 1.0**2 / FLUID["perm"]
    ramp = RampSpec("linear", T / 2)
    return replace(
        base,
        name="ex3",
        material=MaterialSpec(E=E0, nu=NU0, **FLUID),
        mechanics=(
            BoundarySpec("ymin", "dirichlet", (0.0, 0.0)),
            BoundarySpec("ymax", "dirichlet", (0.005, -0.002), ramp),
        ),
        flow=True,
        flow_bc=(BoundarySpec("xmin", "dirichlet", (0.0,)),),
        solver=SolverSpec(dynamic=True),
        time=TimeSpec(dt=T / steps, steps=steps),
    )


def ex4(k: int = 1, steps: int = 20, t_end: float = 625 * 60.0) -> ScenarioConfig:
    """Example 2 with fluid drained at the top; ``steps`` steps to ``t_end``."""
    base = ex2(k)
    return replace(
        base,
        name="ex4",
        material=MaterialSpec(E=E0, nu=NU0, **FLUID),
        flow=True,
        flow_bc=(BoundarySpec("zmax", "dirichlet", (0.0,)),),
        solver=SolverSpec(dynamic=True),
        time=TimeSpec(dt=t_end / steps, steps=steps),
    )


APPENDIX_ENDS = ((0.25, 0.25), (0.75, 0.75))


def appendix(n: int = 16, regularized: bool = True, perturb: float = 0.25, seed: int = 1) -> ScenarioConfig:
    """Unit square, one 45 degree fracture, vertical compression.

    The regularized friction coefficient is ``0.5 (1 + 10 exp(-800 D^2))``; the
    unregularized one is ``0.5``. Interior nodes off the fracture are jittered so the
    meshes are unstructured.
    """
    friction = FrictionSpec("tip_gaussian", 0.5, 10.0, 1.0 / 800.0) if regularized else FrictionSpec("constant", 0.5)
    return ScenarioConfig(
        name="appendix_reg" if regularized else "appendix_const",
        mesh=MeshSpec("rectangle", None, (n, n), (1.0, 1.0), None, "crossed", perturb, seed),
        material=MaterialSpec(E=E0, nu=NU0),
        fractures=(FractureSpec("f", "polyline", APPENDIX_ENDS, friction=friction),),
        mechanics=(
            BoundarySpec("ymin", "dirichlet", (0.0, 0.0)),
            BoundarySpec("ymax", "dirichlet", (0.0, -0.002)),
        ),
    )


def consolidation(
    cells: int = 50,
    height: float = 1.0,
    load: float = 4.5e6,
    dt: float | None = None,
    steps: int = 100,
    E: float = E0,
    nu: float = NU0,
    alpha: float = 1.0,
    c0: float = 1e-10,
    perm: float = 1e-8,
) -> ScenarioConfig:
    """Confined drained-top column loaded on top; sealed rolling sides and base.

    ``dt`` defaults to ``1e-3 H^2 / c_v``.
    """
    mu = E / (2 * (1 + nu))
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    cv = perm / (c0 + alpha**2 / (lam + 2 * mu))
    if dt is None:
        dt = 1e-3 * height**2 / cv
    h = height / cells
    return ScenarioConfig(
        name="consolidation",
        mesh=MeshSpec("rectangle", None, (2, cells), (2 * h, height), None, "diagonal"),
        material=MaterialSpec(E=E, nu=nu, alpha=alpha, c0=c0, perm=perm),
        mechanics=(
            BoundarySpec("ymin", "dirichlet", (0.0, 0.0)),
            BoundarySpec("ymax", "neumann", (0.0, -load)),
            BoundarySpec("xmin", "rolling", (0.0, 0.0)),
            BoundarySpec("xmax", "rolling", (0.0, 0.0)),
        ),
        flow=True,
        flow_bc=(BoundarySpec("ymax", "dirichlet", (0.0,)),),
        time=TimeSpec(dt=dt, steps=steps),
    )


PRESETS = {
    "ex1": ex1,
    "ex2": ex2,
    "ex3": ex3,
    "ex4": ex4,
    "appendix": appendix,
    "consolidation": consolidation,
}


def preset(name: str, **kwargs) -> ScenarioConfig:
    """Built-in scenario by name (``ex1`` ... ``ex4``, ``appendix``, ``consolidation``)."""
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**kwargs)
