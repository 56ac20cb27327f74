"""File formats: ASCII gmsh 2.2 meshes, legacy ASCII VTK cell data and CSV tables.

Meshes use the version 2.2 layout with ``$PhysicalNames``. The highest-dimensional
elements are the cells; lower-dimensional elements carrying a named physical group
become face groups (boundary patches or fracture surfaces).
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from fracbiot.errors import FracBiotError, UnsupportedElementError
from fracbiot.mesh import Mesh, RawMesh

# gmsh element type -> (topological dimension, number of nodes)
GMSH_ELEMENTS = {15: (0, 1), 1: (1, 2), 2: (2, 3), 4: (3, 4)}
_GMSH_TYPE_OF = {(1, 2): 1, (2, 3): 2, (3, 4): 4}
VTK_CELL_TYPES = {2: 5, 3: 10}


class MeshFormatError(FracBiotError):
    """Malformed mesh file; the message carries the file and line."""

    def __init__(self, path, line: int | None, msg: str):
        loc = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{loc}: {msg}")
        self.path = path
        self.line = line


class OutputError(FracBiotError):
    """File could not be written."""

    def __init__(self, path, err: Exception):
        super().__init__(f"cannot write {path}: {err}")
        self.path = path


def _sections(lines, path):
    """Map section name -> (first content line number, content lines)."""
    out = {}
    i = 0
    while i < len(lines):
        tok = lines[i].strip()
        if tok.startswith("$") and not tok.startswith("$End"):
            name = tok[1:]
            end = "$End" + name
            j = i + 1
            while j < len(lines) and lines[j].strip() != end:
                j += 1
            if j == len(lines):
                raise MeshFormatError(path, i + 1, f"section ${name} is not closed by {end}")
            out[name] = (i + 2, lines[i + 1 : j])
            i = j + 1
        else:
            i += 1
    return out


def read_gmsh(path) -> RawMesh:
    """Read an ASCII gmsh 2.2 mesh.

    The spatial dimension is that of the highest element dimension. Face groups are
    named by their physical names; unnamed physical tags are called ``"tag<k>"``.

    Raises:
        MeshFormatError: on I/O or parse failures, with file and line.
        UnsupportedElementError: on element types other than points, lines,
            triangles and tetrahedra.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as err:
        raise MeshFormatError(path, None, f"cannot read file: {err}") from err
    sec = _sections(lines, path)
    for name in ("MeshFormat", "Nodes", "Elements"):
        if name not in sec:
            raise MeshFormatError(path, None, f"missing ${name} section")
    ln, body = sec["MeshFormat"]
    try:
        version, ftype = body[0].split()[:2]
    except (IndexError, ValueError):
        raise MeshFormatError(path, ln, "malformed $MeshFormat") from None
    if not version.startswith("2") or ftype != "0":
        raise MeshFormatError(path, ln, f"only ASCII version 2.x is supported, got {version} type {ftype}")

    names = {}
    if "PhysicalNames" in sec:
        ln, body = sec["PhysicalNames"]
        for k, row in enumerate(body[1:]):
            parts = row.split(maxsplit=2)
            if len(parts) != 3:
                raise MeshFormatError(path, ln + 1 + k, "malformed physical name")
            names[(int(parts[0]), int(parts[1]))] = parts[2].strip().strip('"')

    ln, body = sec["Nodes"]
    try:
        num = int(body[0])
        arr = np.array([row.split() for row in body[1 : num + 1]], dtype=float)
    except ValueError as err:
        raise MeshFormatError(path, ln, f"malformed node block: {err}") from None
    if arr.shape != (num, 4):
        raise MeshFormatError(path, ln, f"expected {num} nodes with 4 columns")
    node_ids = arr[:, 0].astype(np.int64)
    coords = arr[:, 1:]
    id_to_index = {int(t): i for i, t in enumerate(node_ids)}

    ln, body = sec["Elements"]
    try:
        num = int(body[0])
    except ValueError:
        raise MeshFormatError(path, ln, "malformed element count") from None
    if len(body) < num + 1:
        raise MeshFormatError(path, ln, f"expected {num} elements")
    elements = {0: [], 1: [], 2: [], 3: []}
    for k, row in enumerate(body[1 : num + 1]):
        parts = row.split()
        try:
            etype = int(parts[1])
            ntags = int(parts[2])
            phys = int(parts[3]) if ntags > 0 else 0
            nodes = [id_to_index[int(x)] for x in parts[3 + ntags :]]
        except (IndexError, ValueError, KeyError) as err:
            raise MeshFormatError(path, ln + 1 + k, f"malformed element: {err}") from None
        if etype not in GMSH_ELEMENTS:
            raise UnsupportedElementError(f"{path}:{ln + 1 + k}: unsupported element type {etype}")
        dim, nn = GMSH_ELEMENTS[etype]
        if len(nodes) != nn:
            raise MeshFormatError(path, ln + 1 + k, f"element type {etype} needs {nn} nodes")
        elements[dim].append((phys, nodes))
    d = max(k for k, v in elements.items() if v) if any(elements.values()) else 0
    if d < 2:
        raise MeshFormatError(path, None, "no triangles or tetrahedra found")
    cells = np.array([e[1] for e in elements[d]], dtype=np.int64)
    groups: dict[str, list] = {}
    for phys, nodes in elements[d - 1]:
        if phys == 0:
            continue
        groups.setdefault(names.get((d - 1, phys), f"tag{phys}"), []).append(nodes)
    nodes = coords[:, :d]
    if d == 2 and np.any(coords[:, 2] != 0):
        raise MeshFormatError(path, None, "2d mesh with non-zero z coordinates")
    return RawMesh(
        nodes=nodes,
        cells=cells,
        face_groups={k: np.array(v, dtype=np.int64) for k, v in groups.items()},
    )


def write_gmsh(path, raw: RawMesh) -> None:
    """Write ``raw`` as ASCII gmsh 2.2; face groups become physical groups.

    Coordinates are printed with 17 significant digits so reading the file back
    reproduces the nodes exactly.
    """
    path = Path(path)
    d = raw.nodes.shape[1]
    names = list(raw.face_groups)
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(names) + 1)]
    for k, name in enumerate(names):
        out.append(f'{d - 1} {k + 1} "{name}"')
    out.append(f'{d} {len(names) + 1} "domain"')
    out += ["$EndPhysicalNames", "$Nodes", str(raw.nodes.shape[0])]
    xyz = np.zeros((raw.nodes.shape[0], 3))
    xyz[:, :d] = raw.nodes
    out += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(xyz.tolist())]
    out += ["$EndNodes", "$Elements"]
    rows = []
    for k, name in enumerate(names):
        et = _GMSH_TYPE_OF[(d - 1, d)]
        for f in raw.face_groups[name]:
            rows.append((et, k + 1, f))
    et = _GMSH_TYPE_OF[(d, d + 1)]
    rows += [(et, len(names) + 1, c) for c in raw.cells]
    out.append(str(len(rows)))
    for i, (et, tag, nodes) in enumerate(rows):
        out.append(f"{i + 1} {et} 2 {tag} {tag} " + " ".join(str(int(n) + 1) for n in nodes))
    out.append("$EndElements")
    _write_text(path, "\n".join(out) + "\n")


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as err:
        raise OutputError(path, err) from err


def _pad3(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return a
    out = np.zeros((a.shape[0], 3))
    out[:, : a.shape[1]] = a
    return out


def write_vtk(path, mesh: Mesh, cell_data: dict[str, np.ndarray], title: str = "fracbiot") -> None:
    """Legacy ASCII VTK unstructured grid with cell data.

    Scalars are ``(n_cells,)`` arrays; vectors ``(n_cells, d)`` are padded to three
    components. The split (fracture-duplicated) nodes of ``mesh`` are written, so
    discontinuities across fractures are visible.
    """
    path = Path(path)
    nc = mesh.num_cells
    pts = _pad3(mesh.nodes)
    k = mesh.dim + 1
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {pts.shape[0]} double")
    out += [" ".join(repr(v) for v in row) for row in pts.tolist()]
    out.append(f"CELLS {nc} {nc * (k + 1)}")
    out += [f"{k} " + " ".join(str(int(n)) for n in row) for row in mesh.cell_nodes]
    out.append(f"CELL_TYPES {nc}")
    out += [str(VTK_CELL_TYPES[mesh.dim])] * nc
    if cell_data:
        out.append(f"CELL_DATA {nc}")
    for name, values in cell_data.items():
        v = np.asarray(values, dtype=float)
        if v.shape[0] != nc:
            raise ValueError(f"cell array {name!r} has {v.shape[0]} entries, expected {nc}")
        if v.ndim == 1:
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(x) for x in v.tolist()]
        else:
            out.append(f"VECTORS {name} double")
            out += [" ".join(repr(x) for x in row) for row in _pad3(v).tolist()]
    _write_text(path, "\n".join(out) + "\n")


def read_vtk_cell_data(path) -> dict[str, np.ndarray]:
    """Parse the cell data arrays of a file written by :func:`write_vtk`."""
    lines = Path(path).read_text().splitlines()
    data = {}
    try:
        i = next(k for k, ln in enumerate(lines) if ln.startswith("CELL_DATA"))
    except StopIteration:
        return data
    nc = int(lines[i].split()[1])
    i += 1
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "SCALARS":
            data[parts[1]] = np.array(lines[i + 2 : i + 2 + nc], dtype=float)
            i += 2 + nc
        elif parts[0] == "VECTORS":
            data[parts[1]] = np.array([r.split() for r in lines[i + 1 : i + 1 + nc]], dtype=float)
            i += 1 + nc
        else:
            i += 1
    return data


def write_csv(path, header: list[str], rows) -> None:
    """Write a table; floats are printed with ``repr`` so output is deterministic."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    except OSError as err:
        raise OutputError(path, err) from err


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
