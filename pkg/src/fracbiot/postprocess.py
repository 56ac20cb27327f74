"""Face aggregation of fracture quantities and per-fracture summaries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fracbiot.contact import LABEL_NAMES, ContactState
from fracbiot.mesh import FracturePairing, SubGrid


@dataclass
class FaceValues:
    """Face-piecewise-constant fields on the positive fracture faces.

    Attributes:
        faces: positive face indices.
        fracture: fracture index per face.
        area: face measure.
        center: face centroid ``(n, d)``.
        values: area-weighted averages of the subface values ``(n, k)``.
    """

    faces: np.ndarray
    fracture: np.ndarray
    area: np.ndarray
    center: np.ndarray
    values: np.ndarray


def aggregate_to_faces(subgrid: SubGrid, pairing: FracturePairing, values: np.ndarray) -> FaceValues:
    """Average subface values over each positive face, weighted by subface area."""
    vals = np.asarray(values, dtype=float).reshape(pairing.size, -1)
    faces = subgrid.sf_face[pairing.plus]
    uf, inv = np.unique(faces, return_inverse=True)
    ar = subgrid.sf_area[pairing.plus]
    area = np.bincount(inv, ar, minlength=uf.size)
    agg = np.column_stack(
        [np.bincount(inv, ar * vals[:, k], minlength=uf.size) for k in range(vals.shape[1])]
    ) / area[:, None] if uf.size else np.zeros((0, vals.shape[1]))
    mesh = subgrid.mesh
    return FaceValues(
        faces=uf,
        fracture=mesh.face_fracture[uf],
        area=area,
        center=mesh.face_centers[uf],
        values=agg,
    )


def face_labels(subgrid: SubGrid, pairing: FracturePairing, labels: np.ndarray) -> np.ndarray:
    """Label covering the largest area of each positive face; ties take the larger code."""
    faces = subgrid.sf_face[pairing.plus]
    uf, inv = np.unique(faces, return_inverse=True)
    ar = subgrid.sf_area[pairing.plus]
    weight = np.zeros((uf.size, len(LABEL_NAMES)))
    np.add.at(weight, (inv, labels), ar)
    best = weight.max(axis=1, keepdims=True)
    close = weight >= best * (1 - 1e-12)
    return (len(LABEL_NAMES) - 1 - np.argmax(close[:, ::-1], axis=1)).astype(np.int64)


FRACTURE_TABLE_HEADER = [
    "fracture", "face", "x", "y", "z", "area", "lam_n", "lam_t", "jump_n", "jump_t", "label",
]


def fracture_table(
    subgrid: SubGrid,
    pairing: FracturePairing,
    state: ContactState,
    labels: np.ndarray,
    fracture_names: list[str],
) -> list[list]:
    """Rows of the per-face fracture table (see ``FRACTURE_TABLE_HEADER``).

    ``lam_t`` and ``jump_t`` are magnitudes of the face-averaged tangential vectors.
    """
    if pairing.size == 0:
        return []
    lam = aggregate_to_faces(subgrid, pairing, state.lam)
    jump = aggregate_to_faces(subgrid, pairing, state.jump).values
    nrm = aggregate_to_faces(subgrid, pairing, state.normal).values
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    lam_n = np.einsum("ij,ij->i", lam.values, nrm)
    jump_n = np.einsum("ij,ij->i", jump, nrm)
    lam_t = np.linalg.norm(lam.values - lam_n[:, None] * nrm, axis=1)
    jump_t = np.linalg.norm(jump - jump_n[:, None] * nrm, axis=1)
    flab = face_labels(subgrid, pairing, labels)
    center = np.zeros((lam.faces.size, 3))
    center[:, : subgrid.dim] = lam.center
    rows = []
    for i in range(lam.faces.size):
        rows.append([
            fracture_names[int(lam.fracture[i])], int(lam.faces[i]),
            float(center[i, 0]), float(center[i, 1]), float(center[i, 2]), float(lam.area[i]),
            float(lam_n[i]), float(lam_t[i]), float(jump_n[i]), float(jump_t[i]),
            LABEL_NAMES[int(flab[i])],
        ])
    return rows


def fracture_summary(pairing: FracturePairing, state: ContactState, labels: np.ndarray, fracture_names):
    """Per fracture: maximum slip, maximum opening and set populations."""
    slip = np.linalg.norm(state.jump_t, axis=1) if pairing.size else np.zeros(0)
    opening = state.jump_n - pairing.gap if pairing.size else np.zeros(0)
    out = {}
    for i, name in enumerate(fracture_names):
        sel = pairing.fracture == i
        out[name] = {
            "max_slip": float(slip[sel].max(initial=0.0)),
            "max_opening": float(np.maximum(opening[sel], 0.0).max(initial=0.0)),
            "open": int(np.sum(labels[sel] == 0)),
            "stick": int(np.sum(labels[sel] == 1)),
            "slide": int(np.sum(labels[sel] == 2)),
        }
    return out
