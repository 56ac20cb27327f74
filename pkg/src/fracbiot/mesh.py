"""Simplicial mesh topology, fracture splitting, subcells/subfaces and side pairing.

The mesh is built from a neutral in-memory description (:class:`RawMesh`): node
coordinates, simplex connectivity and named groups of faces. Faces listed in a
fracture group are duplicated into a positive and a negative copy, and vertices on a
fracture are split wherever the fracture disconnects the cells around them. Fracture
tips keep a single vertex.

Conventions
-----------
* ``face_cells[f, 0]`` is the *primary* cell of face ``f``; ``face_normals[f]`` is the
  unit normal pointing out of the primary cell. For interior faces the second cell is
  ``face_cells[f, 1]``; for boundary and fracture faces it is ``-1``.
* Subface ``(f, v)`` has index ``f * d + j`` where ``v = face_nodes[f, j]``; simplicial
  faces have exactly ``d`` vertices so this indexing is dense.
* Subcell ``(K, v)`` is stored in ``subcell_volumes[K, i]`` with ``v = cell_nodes[K, i]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps
from scipy.spatial import cKDTree

from fracbiot.errors import (
    GeometryError,
    PairingError,
    TopologyError,
    UnsupportedElementError,
)

FACE_INTERIOR = 0
FACE_BOUNDARY = 1
FACE_FRAC_PLUS = 2
FACE_FRAC_MINUS = 3

SUBFACE_REMAINING = 0
SUBFACE_PLUS = 1
SUBFACE_MINUS = 2

PAIRING_RTOL = 1e-8


@dataclass
class RawMesh:
    """Neutral mesh description.

    Attributes:
        nodes: ``(n_nodes, d)`` coordinates.
        cells: ``(n_cells, k)`` node indices; ``k`` must be ``d + 1``.
        face_groups: name -> ``(n, d)`` node indices of tagged faces.
    """

    nodes: np.ndarray
    cells: np.ndarray
    face_groups: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        self.cells = np.atleast_2d(np.asarray(self.cells, dtype=np.int64))
        self.face_groups = {
            str(k): np.asarray(v, dtype=np.int64).reshape(-1, np.shape(v)[-1] if np.size(v) else 1)
            for k, v in self.face_groups.items()
        }


def _readonly(*arrays):
    for a in arrays:
        a.setflags(write=False)


def canonical_normal(n: np.ndarray) -> np.ndarray:
    """Flip each row of ``n`` so its largest-magnitude component is positive.

    Ties (within 1e-9) are resolved in favour of the lowest axis index, which makes
    the orientation identical for all faces lying in one plane.
    """
    n = np.atleast_2d(n)
    mag = np.abs(n)
    big = mag >= mag.max(axis=1, keepdims=True) - 1e-9
    idx = np.argmax(big, axis=1)
    sign = np.sign(n[np.arange(n.shape[0]), idx])
    sign[sign == 0] = 1.0
    return n * sign[:, None]


def _face_geometry(nodes: np.ndarray, face_nodes: np.ndarray):
    """Centroids, unnormalized-normal magnitudes (areas) and unit normals of faces."""
    d = nodes.shape[1]
    pts = nodes[face_nodes]
    centers = pts.mean(axis=1)
    if d == 2:
        t = pts[:, 1] - pts[:, 0]
        raw = np.column_stack([t[:, 1], -t[:, 0]])
        areas = np.linalg.norm(raw, axis=1)
    else:
        raw = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
        areas = 0.5 * np.linalg.norm(raw, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = raw / np.linalg.norm(raw, axis=1)[:, None]
    return centers, areas, normals


def _cell_geometry(nodes: np.ndarray, cell_nodes: np.ndarray):
    d = nodes.shape[1]
    pts = nodes[cell_nodes]
    centers = pts.mean(axis=1)
    edges = pts[:, 1:] - pts[:, :1]
    fact = 2.0 if d == 2 else 6.0
    volumes = np.abs(np.linalg.det(edges)) / fact
    return centers, volumes


class Mesh:
    """Cells, faces and vertices of a fracture-conforming simplicial mesh.

    Instances are immutable; all arrays are flagged read-only. Build them with
    :func:`build_mesh`.
    """

    def __init__(
        self,
        nodes,
        cell_nodes,
        cell_faces,
        face_nodes,
        face_cells,
        face_kind,
        face_group,
        group_names,
        face_fracture,
        fracture_names,
        face_twin,
        node_parent,
    ):
        self.dim = nodes.shape[1]
        self.nodes = nodes
        self.cell_nodes = cell_nodes
        self.cell_faces = cell_faces
        self.face_nodes = face_nodes
        self.face_cells = face_cells
        self.face_kind = face_kind
        self.face_group = face_group
        self.group_names = tuple(group_names)
        self.face_fracture = face_fracture
        self.fracture_names = tuple(fracture_names)
        self.face_twin = face_twin
        self.node_parent = node_parent

        self.cell_centers, self.cell_volumes = _cell_geometry(nodes, cell_nodes)
        self.face_centers, self.face_areas, normals = _face_geometry(nodes, face_nodes)
        # orient normals out of the primary cell
        prim = face_cells[:, 0]
        s = np.einsum("ij,ij->i", self.face_centers - self.cell_centers[prim], normals)
        normals = normals * np.where(s < 0, -1.0, 1.0)[:, None]
        self.face_normals = normals
        _readonly(
            self.nodes,
            self.cell_nodes,
            self.cell_faces,
            self.face_nodes,
            self.face_cells,
            self.face_kind,
            self.face_group,
            self.face_fracture,
            self.face_twin,
            self.node_parent,
            self.cell_centers,
            self.cell_volumes,
            self.face_centers,
            self.face_areas,
            self.face_normals,
        )

    @property
    def num_cells(self) -> int:
        return self.cell_nodes.shape[0]

    @property
    def num_faces(self) -> int:
        return self.face_nodes.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_fracture_faces(self) -> int:
        return int(np.count_nonzero(self.face_kind == FACE_FRAC_PLUS))

    @cached_property
    def node_cells(self) -> sps.csr_matrix:
        """Node-cell incidence, ``(n_nodes, n_cells)``."""
        nc, k = self.cell_nodes.shape
        rows = self.cell_nodes.ravel()
        cols = np.repeat(np.arange(nc), k)
        return sps.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.num_nodes, nc)
        )

    @cached_property
    def node_faces(self) -> sps.csr_matrix:
        """Node-face incidence, ``(n_nodes, n_faces)``."""
        nf, d = self.face_nodes.shape
        rows = self.face_nodes.ravel()
        cols = np.repeat(np.arange(nf), d)
        return sps.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.num_nodes, nf)
        )

    @cached_property
    def cell_face_sign(self) -> sps.csr_matrix:
        """Signed cell-face incidence: +1 for the primary cell, -1 for the second."""
        nf = self.num_faces
        fc = self.face_cells
        has2 = fc[:, 1] >= 0
        rows = np.concatenate([fc[:, 0], fc[has2, 1]])
        cols = np.concatenate([np.arange(nf), np.flatnonzero(has2)])
        vals = np.concatenate([np.ones(nf), -np.ones(int(has2.sum()))])
        return sps.csr_matrix((vals, (rows, cols)), shape=(self.num_cells, nf))

    def faces_in_group(self, name: str) -> np.ndarray:
        if name not in self.group_names:
            raise KeyError(name)
        return np.flatnonzero(self.face_group == self.group_names.index(name))

    def faces_in_fracture(self, name: str, side: int = FACE_FRAC_PLUS) -> np.ndarray:
        idx = self.fracture_names.index(name)
        return np.flatnonzero((self.face_fracture == idx) & (self.face_kind == side))

    def domain_volume(self) -> float:
        return float(self.cell_volumes.sum())


def _enumerate_faces(cells: np.ndarray):
    nc, k = cells.shape
    d = k - 1
    local = np.array([[j for j in range(k) if j != i] for i in range(k)])
    all_faces = cells[:, local].reshape(-1, d)
    keys = np.sort(all_faces, axis=1)
    uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    # keep the node ordering of the first occurrence (deterministic)
    face_nodes = all_faces[first].copy()
    cell_faces = inverse.reshape(nc, k)
    counts = np.bincount(inverse, minlength=uniq.shape[0])
    if counts.max(initial=0) > 2:
        bad = int(np.argmax(counts))
        raise TopologyError(
            f"face {tuple(uniq[bad])} is shared by {counts[bad]} cells (non-manifold)"
        )
    owner = np.repeat(np.arange(nc), k)
    order = np.argsort(inverse, kind="stable")
    face_cells = -np.ones((uniq.shape[0], 2), dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    face_cells[:, 0] = owner[order[starts]]
    two = counts == 2
    face_cells[two, 1] = owner[order[starts[two] + 1]]
    return face_nodes, face_cells, cell_faces, uniq


def build_mesh(raw: RawMesh, fracture_tags=()) -> Mesh:
    """Build a validated, fracture-split mesh.

    Parameters:
        raw: neutral mesh description.
        fracture_tags: names of face groups that are fractures. Every other face
            group tags boundary faces.

    Raises:
        UnsupportedElementError: if elements are not simplices.
        TopologyError: on non-manifold faces or fracture groups that are not made of
            interior mesh faces.
        GeometryError: on zero-measure cells or faces.
    """
    nodes = np.array(raw.nodes, dtype=float)
    cells = np.array(raw.cells, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
        raise UnsupportedElementError(f"nodes must be (n, 2) or (n, 3), got {nodes.shape}")
    d = nodes.shape[1]
    if cells.ndim != 2 or cells.shape[1] != d + 1:
        raise UnsupportedElementError(
            f"only simplices are supported in {d}d: expected {d + 1} nodes per cell, "
            f"got {cells.shape[1] if cells.ndim == 2 else cells.shape}"
        )
    if cells.size == 0:
        raise TopologyError("mesh has no cells")
    if cells.min() < 0 or cells.max() >= nodes.shape[0]:
        raise TopologyError("cell connectivity references unknown nodes")
    fracture_tags = tuple(fracture_tags)
    for t in fracture_tags:
        if t not in raw.face_groups:
            raise TopologyError(f"fracture tag {t!r} is not a face group of the mesh")

    _, vol = _cell_geometry(nodes, cells)
    if np.any(vol <= 1e-14 * np.max(vol)):
        raise GeometryError(f"cell {int(np.argmin(vol))} has zero volume")

    face_nodes, face_cells, cell_faces, keys = _enumerate_faces(cells)
    lookup = {tuple(k): i for i, k in enumerate(keys.tolist())}
    nf = face_nodes.shape[0]

    group_names = [g for g in raw.face_groups if g not in fracture_tags]
    face_group = -np.ones(nf, dtype=np.int64)
    face_fracture = -np.ones(nf, dtype=np.int64)

    def _resolve(name):
        faces = raw.face_groups[name]
        if faces.shape[1] != d:
            raise UnsupportedElementError(
                f"face group {name!r} has {faces.shape[1]}-node faces, expected {d}"
            )
        out = []
        for f in np.sort(faces, axis=1).tolist():
            i = lookup.get(tuple(f))
            if i is None:
                raise TopologyError(f"face {tuple(f)} of group {name!r} is not a mesh face")
            out.append(i)
        return np.array(out, dtype=np.int64)

    for gi, name in enumerate(group_names):
        idx = _resolve(name)
        if np.any(face_cells[idx, 1] >= 0):
            raise TopologyError(f"boundary group {name!r} contains interior faces")
        face_group[idx] = gi
    for fi, name in enumerate(fracture_tags):
        idx = _resolve(name)
        if np.any(face_cells[idx, 1] < 0):
            raise TopologyError(
                f"fracture {name!r} contains faces on the domain boundary; fractures must "
                "be internal surfaces"
            )
        if np.any(face_fracture[idx] >= 0):
            raise TopologyError(f"fracture {name!r} overlaps another fracture")
        face_fracture[idx] = fi

    face_kind = np.where(face_cells[:, 1] >= 0, FACE_INTERIOR, FACE_BOUNDARY)

    # duplicate fracture faces
    frac = np.flatnonzero(face_fracture >= 0)
    centers, areas, normals = _face_geometry(nodes, face_nodes)
    if np.any(areas <= 0):
        raise GeometryError(f"face {int(np.argmin(areas))} has zero area")
    cc, _ = _cell_geometry(nodes, cells)
    ncan = canonical_normal(normals[frac])
    a, b = face_cells[frac, 0], face_cells[frac, 1]
    sa = np.einsum("ij,ij->i", cc[a] - centers[frac], ncan)
    plus = np.where(sa > 0, a, b)
    minus = np.where(sa > 0, b, a)
    n_new = frac.size
    new_ids = nf + np.arange(n_new)
    face_nodes = np.vstack([face_nodes, face_nodes[frac]])
    face_cells = np.vstack([face_cells, np.column_stack([minus, -np.ones(n_new, np.int64)])])
    face_cells[frac] = np.column_stack([plus, -np.ones(n_new, np.int64)])
    face_kind = np.concatenate([face_kind, np.full(n_new, FACE_FRAC_MINUS)])
    face_kind[frac] = FACE_FRAC_PLUS
    face_group = np.concatenate([face_group, -np.ones(n_new, np.int64)])
    face_fracture = np.concatenate([face_fracture, face_fracture[frac]])
    face_twin = -np.ones(nf + n_new, dtype=np.int64)
    face_twin[frac] = new_ids
    face_twin[new_ids] = frac
    for f, fnew, m in zip(frac, new_ids, minus):
        row = cell_faces[m]
        row[row == f] = fnew

    # split vertices whose cell fan is disconnected by the fracture
    node_parent = np.arange(nodes.shape[0])
    frac_nodes = np.unique(face_nodes[frac])
    if frac_nodes.size:
        nodes, cells, face_nodes, node_parent = _split_vertices(
            nodes, cells, cell_faces, face_nodes, face_cells, frac_nodes
        )

    mesh = Mesh(
        nodes=nodes,
        cell_nodes=cells,
        cell_faces=cell_faces,
        face_nodes=face_nodes,
        face_cells=face_cells,
        face_kind=face_kind,
        face_group=face_group,
        group_names=group_names,
        face_fracture=face_fracture,
        fracture_names=fracture_tags,
        face_twin=face_twin,
        node_parent=node_parent,
    )
    return mesh


def _split_vertices(nodes, cells, cell_faces, face_nodes, face_cells, frac_nodes):
    nc, k = cells.shape
    rows = cells.ravel()
    cols = np.repeat(np.arange(nc), k)
    n2c = sps.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(nodes.shape[0], nc))
    new_coords = []
    parent = list(range(nodes.shape[0]))
    next_id = nodes.shape[0]
    cells = cells.copy()
    face_nodes = face_nodes.copy()
    for v in frac_nodes:
        fan = n2c.indices[n2c.indptr[v] : n2c.indptr[v + 1]]
        fan = np.sort(fan)
        pos = {int(c): i for i, c in enumerate(fan)}
        root = list(range(fan.size))

        def find(i):
            while root[i] != i:
                root[i] = root[root[i]]
                i = root[i]
            return i

        for c in fan:
            for f in cell_faces[c]:
                if v not in face_nodes[f]:
                    continue
                o = face_cells[f, 1] if face_cells[f, 0] == c else face_cells[f, 0]
                if o < 0:
                    continue
                ri, rj = find(pos[int(c)]), find(pos[int(o)])
                if ri != rj:
                    root[max(ri, rj)] = min(ri, rj)
        comp = np.array([find(i) for i in range(fan.size)])
        labels = np.unique(comp)
        for lab in labels[1:]:
            vid = next_id
            next_id += 1
            new_coords.append(nodes[v])
            parent.append(int(v))
            for c in fan[comp == lab]:
                cells[c][cells[c] == v] = vid
                for f in cell_faces[c]:
                    fn = face_nodes[f]
                    fn[fn == v] = vid
    if new_coords:
        nodes = np.vstack([nodes, np.array(new_coords)])
    return nodes, cells, face_nodes, np.array(parent, dtype=np.int64)


class SubGrid:
    """Subcells, subfaces, continuity points and the P/N/R subface partition."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        d = mesh.dim
        nf = mesh.num_faces
        self.dim = d
        self.sf_face = np.repeat(np.arange(nf), d)
        self.sf_node = mesh.face_nodes.ravel().copy()
        vpts = mesh.nodes[self.sf_node]
        xf = mesh.face_centers[self.sf_face]
        self.sf_point = xf - (xf - vpts) / 3.0
        if d == 2:
            self.sf_area = np.linalg.norm(xf - vpts, axis=1)
        else:
            fn = mesh.face_nodes
            pts = mesh.nodes[fn]
            area = np.zeros((nf, 3))
            for j in range(3):
                v = pts[:, j]
                m1 = 0.5 * (v + pts[:, (j + 1) % 3])
                m2 = 0.5 * (v + pts[:, (j + 2) % 3])
                c = mesh.face_centers
                area[:, j] = 0.5 * (
                    np.linalg.norm(np.cross(m1 - v, c - v), axis=1)
                    + np.linalg.norm(np.cross(c - v, m2 - v), axis=1)
                )
            self.sf_area = area.ravel()
        self.sf_normal = mesh.face_normals[self.sf_face]
        kind = mesh.face_kind[self.sf_face]
        self.sf_kind = np.full(self.sf_face.size, SUBFACE_REMAINING)
        self.sf_kind[kind == FACE_FRAC_PLUS] = SUBFACE_PLUS
        self.sf_kind[kind == FACE_FRAC_MINUS] = SUBFACE_MINUS
        self.plus_subfaces = np.flatnonzero(self.sf_kind == SUBFACE_PLUS)
        self.minus_subfaces = np.flatnonzero(self.sf_kind == SUBFACE_MINUS)
        self.plus_index = -np.ones(self.sf_face.size, dtype=np.int64)
        self.plus_index[self.plus_subfaces] = np.arange(self.plus_subfaces.size)

        # subcell volumes as cones from the cell centre over the subfaces
        nc, k = mesh.cell_nodes.shape
        vols = np.zeros((nc, k))
        height = np.abs(
            np.einsum(
                "ij,ij->i",
                mesh.face_centers[mesh.cell_faces.ravel()]
                - np.repeat(mesh.cell_centers, k, axis=0),
                mesh.face_normals[mesh.cell_faces.ravel()],
            )
        ).reshape(nc, k)
        for j in range(k):
            f = mesh.cell_faces[:, j]
            for l in range(d):
                w = mesh.face_nodes[f, l]
                s = f * d + l
                loc = np.argmax(mesh.cell_nodes == w[:, None], axis=1)
                np.add.at(vols, (np.arange(nc), loc), self.sf_area[s] * height[:, j] / d)
        self.subcell_volumes = vols

        dist = np.linalg.norm(self.sf_point - vpts, axis=1)
        scale = np.sqrt(mesh.face_areas[self.sf_face]) if d == 3 else mesh.face_areas[self.sf_face]
        if np.any(self.sf_area <= 1e-14 * scale ** (d - 1)) or np.any(dist <= 0):
            raise GeometryError("degenerate subface (zero area or zero distance to vertex)")
        if np.any(vols <= 1e-14 * mesh.cell_volumes[:, None]):
            raise GeometryError("degenerate subcell (zero volume)")
        _readonly(
            self.sf_face,
            self.sf_node,
            self.sf_point,
            self.sf_area,
            self.sf_normal,
            self.sf_kind,
            self.plus_subfaces,
            self.minus_subfaces,
            self.plus_index,
            self.subcell_volumes,
        )

    @property
    def num_subfaces(self) -> int:
        return self.sf_face.size

    @property
    def num_plus(self) -> int:
        return self.plus_subfaces.size

    @cached_property
    def node_subfaces(self) -> sps.csr_matrix:
        ns = self.num_subfaces
        return sps.csr_matrix(
            (np.ones(ns), (self.sf_node, np.arange(ns))),
            shape=(self.mesh.num_nodes, ns),
        )

    def subfaces_of_node(self, v: int) -> np.ndarray:
        m = self.node_subfaces
        return m.indices[m.indptr[v] : m.indptr[v + 1]]

    def cells_of_node(self, v: int) -> np.ndarray:
        m = self.mesh.node_cells
        return np.sort(m.indices[m.indptr[v] : m.indptr[v + 1]])

    def subcell_volume(self, cell: int, node: int) -> float:
        i = int(np.flatnonzero(self.mesh.cell_nodes[cell] == node)[0])
        return float(self.subcell_volumes[cell, i])


def build_subgrid(mesh: Mesh) -> SubGrid:
    """Split faces and cells into subfaces and subcells around each vertex."""
    return SubGrid(mesh)


@dataclass(frozen=True)
class FracturePairing:
    """Bijection between positive and negative fracture subfaces.

    Attributes:
        plus: positive subface indices (ascending), length ``n_plus``.
        minus: paired negative subface for each entry of ``plus``.
        gap: initial gap per positive subface.
        fracture: fracture index per positive subface.
        normal: contact normal (outward normal of the positive side).
        minus_to_plus: position in ``plus`` for every subface in ``minus``
            (dict keyed by negative subface index).
    """

    plus: np.ndarray
    minus: np.ndarray
    gap: np.ndarray
    fracture: np.ndarray
    normal: np.ndarray
    minus_to_plus: dict

    @property
    def size(self) -> int:
        return self.plus.size

    def plus_of_minus(self, s: int) -> int:
        """Index into ``plus`` of the positive partner of negative subface ``s``."""
        return self.minus_to_plus[int(s)]


def pair_fracture_sides(subgrid: SubGrid, initial_gap=None) -> FracturePairing:
    """Pair every positive subface with the negative subface facing it.

    Parameters:
        subgrid: the subgrid of a fracture-split mesh.
        initial_gap: ``None`` (geometric distance, zero for duplicated faces), a
            scalar, an array over positive subfaces, or a callable of the continuity
            points returning one value per point.
    """
    mesh = subgrid.mesh
    P = subgrid.plus_subfaces
    N = subgrid.minus_subfaces
    if P.size != N.size:
        raise PairingError(f"{P.size} positive subfaces but {N.size} negative subfaces")
    d = mesh.dim
    if P.size == 0:
        return FracturePairing(
            plus=P,
            minus=N,
            gap=np.zeros(0),
            fracture=np.zeros(0, dtype=np.int64),
            normal=np.zeros((0, d)),
            minus_to_plus={},
        )
    xp = subgrid.sf_point[P]
    xn = subgrid.sf_point[N]
    fn = mesh.face_nodes[subgrid.sf_face[P]]
    diam = np.max(
        [np.linalg.norm(mesh.nodes[fn[:, i]] - mesh.nodes[fn[:, j]], axis=1)
         for i in range(d) for j in range(i + 1, d)],
        axis=0,
    ) if d > 1 else np.ones(P.size)
    tol = PAIRING_RTOL * diam
    tree = cKDTree(xn)
    k = min(2, N.size)
    dist, idx = tree.query(xp, k=k)
    dist = np.atleast_2d(dist.T).T if k == 1 else dist
    idx = np.atleast_2d(idx.T).T if k == 1 else idx
    if k == 1:
        dist = dist.reshape(-1, 1)
        idx = idx.reshape(-1, 1)
    if np.any(dist[:, 0] > tol):
        bad = int(P[np.argmax(dist[:, 0] - tol)])
        raise PairingError(f"positive subface {bad} has no matching negative subface")
    if k > 1 and np.any(dist[:, 1] <= tol):
        bad = int(P[np.argmax(dist[:, 1] <= tol)])
        raise PairingError(f"ambiguous pairing for positive subface {bad}")
    minus = N[idx[:, 0]]
    if np.unique(minus).size != minus.size:
        raise PairingError("two positive subfaces map to the same negative subface")
    fp = mesh.face_fracture[subgrid.sf_face[P]]
    if np.any(fp != mesh.face_fracture[subgrid.sf_face[minus]]):
        raise PairingError("paired subfaces belong to different fractures")

    if initial_gap is None:
        gap = np.einsum(
            "ij,ij->i", subgrid.sf_point[minus] - xp, subgrid.sf_normal[P]
        )
        gap = np.abs(gap)
    elif callable(initial_gap):
        gap = np.asarray(initial_gap(xp), dtype=float).reshape(-1)
    else:
        gap = np.broadcast_to(np.asarray(initial_gap, dtype=float), (P.size,)).copy()
    if gap.shape != (P.size,):
        raise PairingError(f"gap has shape {gap.shape}, expected ({P.size},)")
    if np.any(gap < 0):
        raise PairingError("initial gap must be non-negative")
    normal = subgrid.sf_normal[P].copy()
    minus_to_plus = {int(m): i for i, m in enumerate(minus)}
    _readonly(minus, gap, fp, normal)
    return FracturePairing(
        plus=P,
        minus=minus,
        gap=gap,
        fracture=fp,
        normal=normal,
        minus_to_plus=minus_to_plus,
    )
