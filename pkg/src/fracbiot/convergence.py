"""Mesh convergence studies against the finest-level solution.

Fracture quantities are made face-piecewise constant (area-weighted averages of the
subface values) before comparison. Each face of the reference mesh takes the value
of the coarse face of the same fracture that contains its centroid; each reference
cell takes the value of the coarse cell containing its centroid. Errors are the
relative L2 errors ``||xi_h - xi|| / ||xi||`` over the reference mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from fracbiot.errors import ContractViolation
from fracbiot.mesh import Mesh
from fracbiot.postprocess import FaceValues, aggregate_to_faces

# resolution keyword of each preset family
RESOLUTION_PARAM = {
    "ex1": "n",
    "ex2": "k",
    "ex3": "n",
    "ex4": "k",
    "appendix": "n",
    "consolidation": "cells",
}
CONVERGENCE_TABLE_HEADER = ["variable", "domain", "level", "error", "order"]


def relative_error(approx, ref, weights=None) -> float:
    """Weighted relative L2 error ``||approx - ref|| / ||ref||``.

    Rows of 2d arrays are vectors. A zero reference gives 0 when ``approx`` is also
    zero and ``inf`` otherwise.
    """
    a = np.asarray(approx, dtype=float)
    r = np.asarray(ref, dtype=float)
    if a.shape != r.shape:
        raise ContractViolation(f"shapes {a.shape} and {r.shape} differ")
    a = a.reshape(a.shape[0], -1) if a.ndim else a.reshape(1, 1)
    r = r.reshape(a.shape)
    w = np.ones(a.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    num = np.sqrt(np.sum(w * np.sum((a - r) ** 2, axis=1)))
    den = np.sqrt(np.sum(w * np.sum(r**2, axis=1)))
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return float(num / den)


def observed_orders(errors: Sequence[float], resolutions: Sequence[float] | None = None) -> np.ndarray:
    """Pairwise orders ``log(e_i / e_{i+1}) / log(r_{i+1} / r_i)``.

    ``resolutions`` are proportional to ``1 / h``; the default is halving ``h`` at
    each level, which gives ``log2(e_h / e_{h/2})``.
    """
    e = np.asarray(errors, dtype=float)
    r = 2.0 ** np.arange(e.size) if resolutions is None else np.asarray(resolutions, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(e[:-1] / e[1:]) / np.log(r[1:] / r[:-1])


def fitted_order(errors: Sequence[float], resolutions: Sequence[float] | None = None) -> float:
    """Least-squares slope of ``-log e`` against ``log r`` over all levels."""
    e = np.asarray(errors, dtype=float)
    r = 2.0 ** np.arange(e.size) if resolutions is None else np.asarray(resolutions, dtype=float)
    if e.size < 2 or np.any(e <= 0) or not np.all(np.isfinite(e)):
        return float("nan")
    return float(-np.polyfit(np.log(r), np.log(e), 1)[0])


def locate_cells(mesh: Mesh, points: np.ndarray, candidates: int = 24) -> np.ndarray:
    """Index of a cell of ``mesh`` containing each point.

    Candidates are the cells with the nearest centroids; the one with the largest
    minimum barycentric coordinate is taken, so points slightly outside (round-off
    or a perturbed boundary) go to the nearest cell.
    """
    pts = np.asarray(points, dtype=float)
    d = mesh.dim
    k = min(candidates, mesh.num_cells)
    _, cand = cKDTree(mesh.cell_centers).query(pts, k=k)
    cand = cand.reshape(pts.shape[0], k)
    verts = mesh.nodes[mesh.cell_nodes[cand]]  # (n, k, d + 1, d)
    T = np.swapaxes(verts[:, :, 1:, :] - verts[:, :, :1, :], 2, 3)
    rhs = pts[:, None, :] - verts[:, :, 0, :]
    lam = np.linalg.solve(T, rhs[..., None])[..., 0]
    bary = np.concatenate([1.0 - lam.sum(axis=2, keepdims=True), lam], axis=2)
    best = np.argmax(bary.min(axis=2), axis=1)
    return cand[np.arange(pts.shape[0]), best]


def _segment_distance(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("...i,...i->...", p - a, ab) / np.einsum("...i,...i->...", ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def _triangle_distance(p, a, b, c):
    # in-plane barycentric excess plus distance to the plane; exact inside the prism
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n, axis=-1)
    plane = np.abs(np.einsum("...i,...i->...", p - a, n)) / nn
    edges = np.stack([_segment_distance(p, a, b), _segment_distance(p, b, c), _segment_distance(p, c, a)])
    T = np.stack([b - a, c - a], axis=-1)
    G =np.einsum("...ji,...jk->...ik", T, T)
    r = np.einsum("...ji,...j->...i", T, p - a)
    s = np.linalg.solve(G, r[..., None])[..., 0]
    inside = (s[..., 0] >= 0) & (s[..., 1] >= 0) & (s.sum(axis=-1) <= 1)
    return np.where(inside, plane, edges.min(axis=0))


def locate_faces(mesh: Mesh, faces: np.ndarray, points: np.ndarray, candidates: int = 8) -> np.ndarray:
    """Position in ``faces`` of the face of ``mesh`` nearest to each point."""
    faces = np.asarray(faces)
    pts = np.asarray(points, dtype=float)
    k = min(candidates, faces.size)
    _, cand = cKDTree(mesh.face_centers[faces]).query(pts, k=k)
    cand = cand.reshape(pts.shape[0], k)
    verts = mesh.nodes[mesh.face_nodes[faces[cand]]]  # (n, k, d, d)
    p = np.broadcast_to(pts[:, None, :], verts.shape[:2] + (mesh.dim,))
    if mesh.dim == 2:
        dist = _segment_distance(p, verts[:, :, 0], verts[:, :, 1])
    else:
        dist = _triangle_distance(p, verts[:, :, 0], verts[:, :, 1], verts[:, :, 2])
    return cand[np.arange(pts.shape[0]), np.argmin(dist, axis=1)]


@dataclass
class LevelSolution:
    """Fields of one refinement level used by the error evaluation."""

    level: float
    mesh: Mesh
    u: np.ndarray
    lam: FaceValues | None
    jump: FaceValues | None
    fracture_names: list[str]
    iterations: list[int] = field(default_factory=list)


def level_solution(result, level: float) -> LevelSolution:
    """Extract the comparison fields from a :class:`~fracbiot.scenarios.RunResult`."""
    pb = result.problem
    d = pb.mesh.dim
    lam = jump = None
    if pb.pairing.size:
        cs = result.contact
        lam = aggregate_to_faces(pb.subgrid, pb.pairing, cs.lam)
        jump = aggregate_to_faces(pb.subgrid, pb.pairing, cs.jump)
    return LevelSolution(
        level=level,
        mesh=pb.mesh,
        u=result.state.u.reshape(-1, d),
        lam=lam,
        jump=jump,
        fracture_names=list(pb.fracture_names),
        iterations=result.report.iterations,
    )


def compare_levels(coarse: LevelSolution, ref: LevelSolution) -> dict:
    """Relative errors of ``coarse`` against ``ref``.

    Keys are ``(variable, domain)`` with variable ``u`` on ``omega`` and ``lam``,
    ``jump`` on each fracture name.
    """
    out = {}
    cells = locate_cells(coarse.mesh, ref.mesh.cell_centers)
    out[("u", "omega")] = relative_error(coarse.u[cells], ref.u, ref.mesh.cell_volumes)
    if ref.lam is None:
        return out
    if coarse.fracture_names != ref.fracture_names:
        raise ContractViolation("levels have different fractures")
    for i, name in enumerate(ref.fracture_names):
        rsel = np.flatnonzero(ref.lam.fracture == i)
        csel = np.flatnonzero(coarse.lam.fracture == i)
        if rsel.size == 0 or csel.size == 0:
            continue
        pos = csel[locate_faces(coarse.mesh, coarse.lam.faces[csel], ref.lam.center[rsel])]
        area = ref.lam.area[rsel]
        for var in ("lam", "jump"):
            cv, rv = getattr(coarse, var), getattr(ref, var)
            out[(var, name)] = relative_error(cv.values[pos], rv.values[rsel], area)
    return out


@dataclass
class ConvergenceTable:
    """Errors per ``(variable, domain)`` over the compared levels, with orders."""

    levels: list
    reference_level: float
    errors: dict
    iterations: dict = field(default_factory=dict)

    def orders(self, key) -> np.ndarray:
        return observed_orders(self.errors[key], self.levels)

    def fitted(self, key) -> float:
        return fitted_order(self.errors[key], self.levels)

    def rows(self) -> list[list]:
        """Rows matching ``CONVERGENCE_TABLE_HEADER``; the order column of a level is
        the rate from the previous level (empty on the first) and ``fit`` rows hold
        the fitted slope."""
        rows = []
        for (var, dom), errs in self.errors.items():
            od = self.orders((var, dom))
            for i, (lvl, e) in enumerate(zip(self.levels, errs)):
                rows.append([var, dom, lvl, float(e), "" if i == 0 else float(od[i - 1])])
            rows.append([var, dom, "fit", "", self.fitted((var, dom))])
        return rows

    def to_text(self) -> str:
        lines = [f"reference level {self.reference_level}"]
        for (var, dom), errs in self.errors.items():
            es = " ".join(f"{e:.3e}" for e in errs)
            od = " ".join(f"{o:.2f}" for o in self.orders((var, dom)))
            lines.append(f"{var:5s} {dom:8s} errors [{es}] orders [{od}] fit {self.fitted((var, dom)):.2f}")
        for lvl, its in self.iterations.items():
            lines.append(f"level {lvl}: newton iterations {its}")
        return "\n".join(lines) + "\n"


def run_convergence_study(
    family: Callable[[float], object],
    levels: Sequence[float],
    reference_level: float,
    run=None,
) -> ConvergenceTable:
    """Run ``family(level)`` for every level and the reference, then tabulate errors.

    ``levels`` are resolutions proportional to ``1 / h``. ``run`` maps a scenario to
    a run result and defaults to :func:`~fracbiot.scenarios.run_scenario`.
    """
    if run is None:
        from fracbiot.scenarios import run_scenario as run
    levels = list(levels)
    if any(lvl >= reference_level for lvl in levels):
        raise ContractViolation("the reference level must be finer than every level")
    ref = level_solution(run(family(reference_level)), reference_level)
    sols = [level_solution(run(family(lvl)), lvl) for lvl in levels]
    errors: dict = {}
    for s in sols:
        for key, e in compare_levels(s, ref).items():
            errors.setdefault(key, []).append(e)
    iterations = {s.level: s.iterations for s in sols}
    iterations[reference_level] = ref.iterations
    return ConvergenceTable(levels=levels, reference_level=reference_level, errors=errors, iterations=iterations)
