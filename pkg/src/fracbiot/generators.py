"""Structured simplex meshes of rectangles and boxes with embedded fractures.

Boundary face groups are named ``xmin``, ``xmax``, ``ymin``, ``ymax`` (and ``zmin``,
``zmax`` in 3d). Fractures are selected among mesh faces by predicates on the face
vertex coordinates, see :func:`on_polyline` and :func:`on_disc`.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from fracbiot.errors import InvalidParameterError
from fracbiot.mesh import RawMesh

FacePredicate = Callable[[np.ndarray], np.ndarray]


def _grid_nodes(lengths, counts, origin):
    axes = [o + np.linspace(0.0, L, n + 1) for o, L, n in zip(origin, lengths, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel(order="F") for m in mesh])


def _all_faces(cells):
    k = cells.shape[1]
    faces = [np.delete(cells, i, axis=1) for i in range(k)]
    faces = np.sort(np.vstack(faces), axis=1)
    return np.unique(faces, axis=0, return_counts=True)


def _boundary_groups(nodes, faces, origin, lengths, tol):
    d = nodes.shape[1]
    names = ("x", "y", "z")
    groups = {}
    pts = nodes[faces]
    for ax in range(d):
        for side, val in (("min", origin[ax]), ("max", origin[ax] + lengths[ax])):
            on = np.all(np.abs(pts[:, :, ax] - val) <= tol, axis=1)
            groups[names[ax] + side] = faces[on]
    return groups


def rectangle(
    nx: int,
    ny: int,
    lengths=(1.0, 1.0),
    origin=(0.0, 0.0),
    pattern: str = "diagonal",
    fractures: dict[str, FacePredicate] | None = None,
    perturb: float = 0.0,
    seed: int = 0,
) -> RawMesh:
    """Triangulated rectangle.

    Parameters:
        nx, ny: number of squares per axis.
        pattern: ``"diagonal"`` splits each square along the (+1, +1) diagonal;
            ``"crossed"`` adds the square centre and makes four triangles, so lines of
            slope 0, infinity and +-1 through grid points are all resolved.
        fractures: name -> predicate on face vertex coordinates ``(n, 2, 2)``.
        perturb: random displacement of interior non-fracture nodes, as a fraction of
            the smallest mesh size.
    """
    if nx < 1 or ny < 1:
        raise InvalidParameterError("nx and ny must be positive")
    lengths = tuple(float(x) for x in lengths)
    origin = tuple(float(x) for x in origin)
    nodes = _grid_nodes(lengths, (nx, ny), origin)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    i0 = idx[:-1, :-1].ravel()
    i1 = idx[:-1, 1:].ravel()
    i2 = idx[1:, 1:].ravel()
    i3 = idx[1:, :-1].ravel()
    if pattern == "diagonal":
        cells = np.vstack([np.column_stack([i0, i1, i2]), np.column_stack([i0, i2, i3])])
    elif pattern == "crossed":
        centers = 0.25 * (nodes[i0] + nodes[i1] + nodes[i2] + nodes[i3])
        ic = nodes.shape[0] + np.arange(i0.size)
        nodes = np.vstack([nodes, centers])
        cells = np.vstack(
            [
                np.column_stack([i0, i1, ic]),
                np.column_stack([i1, i2, ic]),
                np.column_stack([i2, i3, ic]),
                np.column_stack([i3, i0, ic]),
            ]
        )
    else:
        raise InvalidParameterError(f"unknown pattern {pattern!r}")
    h = min(lengths[0] / nx, lengths[1] / ny)
    return _finish(nodes, cells, origin, lengths, fractures, perturb, seed, h)


def box(
    nx: int,
    ny: int,
    nz: int,
    lengths=(1.0, 1.0, 1.0),
    origin=(0.0, 0.0, 0.0),
    fractures: dict[str, FacePredicate] | None = None,
    perturb: float = 0.0,
    seed: int = 0,
) -> RawMesh:
    """Box split into six tetrahedra per hexahedron (Kuhn subdivision).

    Every tetrahedron contains the main diagonal of its hexahedron, so with equal
    x and z spacing the planes ``z - x = const`` through grid points are tessellated
    by mesh faces.
    """
    if min(nx, ny, nz) < 1:
        raise InvalidParameterError("nx, ny, nz must be positive")
    lengths = tuple(float(x) for x in lengths)
    origin = tuple(float(x) for x in origin)
    nodes = _grid_nodes(lengths, (nx, ny, nz), origin)

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(order="F"), J.ravel(order="F"), K.ravel(order="F")
    corner = {}
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                corner[(a, b, c)] = nid(I + a, J + b, K + c)
    cells = []
    # paths from (0,0,0) to (1,1,1) through the 6 axis orderings
    for order in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        pos = [0, 0, 0]
        verts = [corner[tuple(pos)]]
        for ax in order:
            pos[ax] = 1
            verts.append(corner[tuple(pos)])
        cells.append(np.column_stack(verts))
    cells = np.vstack(cells)
    h = min(L / n for L, n in zip(lengths, (nx, ny, nz)))
    return _finish(nodes, cells, origin, lengths, fractures, perturb, seed, h)


def _finish(nodes, cells, origin, lengths, fractures, perturb, seed, h):
    d = nodes.shape[1]
    tol = 1e-9 * max(lengths)
    faces, counts = _all_faces(cells)
    groups = _boundary_groups(nodes, faces[counts == 1], origin, lengths, tol)
    frac_groups = {}
    for name, pred in (fractures or {}).items():
        sel = np.asarray(pred(nodes[faces]), dtype=bool)
        frac_groups[name] = faces[sel & (counts == 2)]
    if perturb > 0:
        rng = np.random.default_rng(seed)
        lo = np.asarray(origin)
        hi = lo + np.asarray(lengths)
        on_bnd = np.any((np.abs(nodes - lo) <= tol) | (np.abs(nodes - hi) <= tol), axis=1)
        fixed = on_bnd.copy()
        for f in frac_groups.values():
            fixed[np.unique(f)] = True
        shift = rng.uniform(-perturb * h, perturb * h, size=nodes.shape)
        nodes = nodes + np.where(fixed[:, None], 0.0, shift)
    # orient cells positively
    e = nodes[cells[:, 1:]] - nodes[cells[:, :1]]
    neg = np.linalg.det(e) < 0
    cells[neg, :2] = cells[neg, 1::-1]
    groups.update(frac_groups)
    return RawMesh(nodes=nodes, cells=cells, face_groups=groups)


def on_polyline(points, tol: float = 1e-9) -> FacePredicate:
    """Predicate selecting 2d faces lying on a polyline."""
    pts = np.asarray(points, dtype=float)

    def pred(face_pts: np.ndarray) -> np.ndarray:
        ok = np.zeros(face_pts.shape[0], dtype=bool)
        for a, b in zip(pts[:-1], pts[1:]):
            t = b - a
            L2 = t @ t
            good = np.ones(face_pts.shape[0], dtype=bool)
            for j in range(face_pts.shape[1]):
                r = face_pts[:, j] - a
                s = r @ t / L2
                dist = np.abs(r[:, 0] * t[1] - r[:, 1] * t[0]) / np.sqrt(L2)
                good &= (dist <= tol) & (s >= -tol) & (s <= 1 + tol)
            ok |= good
        return ok

    return pred


def on_disc(center, normal, radius: float, tol: float = 1e-9) -> FacePredicate:
    """Predicate selecting 3d faces in the plane through ``center`` with unit
    ``normal`` whose vertices all lie within ``radius`` of the centre."""
    c = np.asarray(center, dtype=float)
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)

    def pred(face_pts: np.ndarray) -> np.ndarray:
        r = face_pts - c
        dist = np.abs(r @ n)
        rad = np.linalg.norm(r, axis=2)
        scale = max(radius, 1.0)
        return np.all((dist <= tol * scale) & (rad <= radius * (1 + tol)), axis=1)

    return pred


def scattered(
    dim: int,
    num_interior: int,
    boundary_cells: int = 4,
    lengths=None,
    origin=None,
    seed: int = 0,
    min_spacing: float = 0.3,
) -> RawMesh:
    """Delaunay mesh of a rectangle or box from random interior points.

    The boundary carries a regular grid of ``boundary_cells`` intervals per edge.
    Interior points are drawn uniformly and rejected when closer than
    ``min_spacing`` times the boundary spacing to an accepted point, which keeps
    the tetrahedra away from slivers. There is no fracture support.
    """
    from scipy.spatial import Delaunay

    if dim not in (2, 3):
        raise InvalidParameterError("dim must be 2 or 3")
    lengths = tuple(float(x) for x in (lengths or (1.0,) * dim))
    origin = tuple(float(x) for x in (origin or (0.0,) * dim))
    grid = _grid_nodes(lengths, (boundary_cells,) * dim, origin)
    lo, hi = np.asarray(origin), np.asarray(origin) + np.asarray(lengths)
    tol = 1e-9 * max(lengths)
    on_bnd = np.any((np.abs(grid - lo) <= tol) | (np.abs(grid - hi) <= tol), axis=1)
    pts = [*grid[on_bnd]]
    h = min(lengths) / boundary_cells
    rng = np.random.default_rng(seed)
    accepted = []
    tries = 0
    while len(accepted) < num_interior and tries < 1000 * max(num_interior, 1):
        tries += 1
        x = lo + rng.random(dim) * (hi - lo)
        cand = np.array(pts + accepted)
        if np.min(np.linalg.norm(cand - x, axis=1)) >= min_spacing * h:
            accepted.append(x)
    nodes = np.array(pts + accepted)
    cells = Delaunay(nodes).simplices.astype(np.int64)
    vol = np.abs(np.linalg.det(nodes[cells[:, 1:]] - nodes[cells[:, :1]]))
    cells = cells[vol > 1e-12 * h**dim]
    return _finish(nodes, cells, origin, lengths, None, 0.0, seed, h)
