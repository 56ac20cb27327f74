"""Per-vertex local gradient systems for MPFA-O (flow) and weakly symmetric MPSA
(mechanics), and their static condensation into subface stencils.

For every vertex ``v`` the subcell gradients of all cells around ``v`` are unknowns of
a small dense system. Its rows are flux/traction balance and pressure/displacement
continuity on each subface at ``v``, or boundary conditions. Eliminating the gradients
gives, for each subface, a linear stencil over cell unknowns, fracture multipliers and
boundary data.

Notation for the mechanics gradient of a cell: ``G[a, b] = du_a / dx_b`` stored
row-major, so component ``(a, b)`` sits at position ``a * d + b``. The isotropic
stiffness acts on the full (non-symmetric) gradient as ``2 mu G + lam tr(G) I``; weak
symmetry subtracts the vertex average of its skew part, which is ``mu (G - G^T)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from fracbiot.errors import ContractViolation, DegenerateGeometryError, InvalidParameterError
from fracbiot.mesh import (
    FACE_BOUNDARY,
    FACE_FRAC_MINUS,
    FACE_FRAC_PLUS,
    FACE_INTERIOR,
    FracturePairing,
    SubGrid,
)

SINGULAR_PIVOT_RTOL = 1e-12


@dataclass
class MaterialField:
    """Cell-wise material parameters (SI units).

    Attributes:
        mu: shear modulus ``G`` per cell [Pa].
        lam: first Lame parameter per cell [Pa].
        alpha: Biot coefficient per cell [-].
        c0: storage coefficient per cell [1/Pa].
        perm: permeability tensor per cell, ``(n_cells, d, d)`` [m^2/(Pa s)].
        body_force: ``(n_cells, d)`` [N/m^3].
        source: fluid source per cell [1/s].
    """

    mu: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    c0: np.ndarray
    perm: np.ndarray
    body_force: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        nc = self.mu.size
        self.lam = np.asarray(self.lam, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.c0 = np.asarray(self.c0, dtype=float)
        self.perm = np.asarray(self.perm, dtype=float)
        self.body_force = np.asarray(self.body_force, dtype=float)
        self.source = np.asarray(self.source, dtype=float)
        for name in ("lam", "alpha", "c0", "source"):
            if getattr(self, name).shape != (nc,):
                raise ContractViolation(f"{name} must have shape ({nc},)")
        if self.perm.ndim != 3 or self.perm.shape[0] != nc:
            raise ContractViolation("perm must have shape (n_cells, d, d)")
        if self.body_force.shape != (nc, self.perm.shape[1]):
            raise ContractViolation("body_force must have shape (n_cells, d)")
        self.validate()

    @property
    def num_cells(self) -> int:
        return self.mu.size

    def validate(self) -> None:
        d = self.perm.shape[1]
        if np.any(self.mu <= 0):
            raise InvalidParameterError("shear modulus must be positive")
        if np.any(self.lam <= -2.0 * self.mu / d):
            raise InvalidParameterError("Lame parameter must satisfy lam > -2 mu / d")
        if np.any(self.c0 < 0):
            raise InvalidParameterError("storage coefficient must be non-negative")
        if np.any((self.alpha < 0) | (self.alpha > 1)):
            raise InvalidParameterError("Biot coefficient must lie in [0, 1]")
        if not np.allclose(self.perm, np.swapaxes(self.perm, 1, 2)):
            raise InvalidParameterError("permeability must be symmetric")
        if np.any(np.linalg.eigvalsh(self.perm) <= 0):
            raise InvalidParameterError("permeability must be positive definite")

    @classmethod
    def homogeneous(
        cls,
        num_cells: int,
        dim: int,
        *,
        E: float | None = None,
        nu: float | None = None,
        mu: float | None = None,
        lam: float | None = None,
        alpha: float = 0.0,
        c0: float = 0.0,
        perm: float = 1.0,
        body_force=None,
        source: float = 0.0,
    ) -> "MaterialField":
        """Constant material given either (E, nu) or (mu, lam)."""
        if E is not None or nu is not None:
            if E is None or nu is None:
                raise InvalidParameterError("both E and nu are required")
            if E <= 0 or not -1.0 < nu < 0.5:
                raise InvalidParameterError(f"invalid E={E}, nu={nu}")
            mu = E / (2.0 * (1.0 + nu))
            lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        if mu is None or lam is None:
            raise InvalidParameterError("give (E, nu) or (mu, lam)")
        ones = np.ones(num_cells)
        bf = np.zeros((num_cells, dim)) if body_force is None else np.tile(
            np.asarray(body_force, dtype=float), (num_cells, 1)
        )
        return cls(
            mu=mu * ones,
            lam=lam * ones,
            alpha=alpha * ones,
            c0=c0 * ones,
            perm=perm * np.tile(np.eye(dim), (num_cells, 1, 1)),
            body_force=bf,
            source=source * ones,
        )


@dataclass
class BoundaryTypes:
    """Boundary condition types per subface.

    Only boundary subfaces are inspected. Fracture subfaces are always Neumann (the
    multiplier for mechanics, no-flow for the fluid).

    Attributes:
        flow_dirichlet: ``(n_subfaces,)`` bool, Dirichlet pressure where True.
        mech_dirichlet: ``(n_subfaces, d)`` bool, Dirichlet displacement component
            (global axes) where True.
    """

    flow_dirichlet: np.ndarray
    mech_dirichlet: np.ndarray

    @classmethod
    def all_neumann(cls, subgrid: SubGrid) -> "BoundaryTypes":
        ns = subgrid.num_subfaces
        return cls(np.zeros(ns, dtype=bool), np.zeros((ns, subgrid.dim), dtype=bool))

    @classmethod
    def all_dirichlet(cls, subgrid: SubGrid) -> "BoundaryTypes":
        ns = subgrid.num_subfaces
        bnd = subgrid.mesh.face_kind[subgrid.sf_face] == FACE_BOUNDARY
        return cls(bnd.copy(), np.tile(bnd[:, None], (1, subgrid.dim)))


@dataclass
class LocalSystem:
    """Local gradient system around one vertex.

    The system reads ``matrix @ grad = sum_k rhs[k] @ data[k]`` where ``data[k]`` are
    the global entries listed in ``cols[k]`` of the block ``k`` (``"u"``, ``"p"``,
    ``"lam"``, ``"bc"``). Outputs per subface are ``out[name] @ grad`` plus direct
    terms ``direct[name][k] @ data[k]``.
    """

    kind: str
    vertex: int
    cells: np.ndarray
    subfaces: np.ndarray
    matrix: np.ndarray
    rhs: dict
    cols: dict
    out: dict
    direct: dict
    weights: np.ndarray
    symmetrized: bool = True
    equations: list = field(default_factory=list)

    @property
    def num_unknowns(self) -> int:
        return self.matrix.shape[1]

    def solve_gradients(self, data: dict) -> np.ndarray:
        """Subcell gradients for given global data vectors (keyed like ``cols``)."""
        b = np.zeros(self.matrix.shape[0])
        for k, r in self.rhs.items():
            if r.shape[1]:
                b += r @ np.asarray(data[k])[self.cols[k]]
        return np.linalg.solve(self.matrix, b)


class _Geometry:
    """Per-subface geometry lookups shared by all local assemblies."""

    def __init__(self, subgrid: SubGrid, pairing: FracturePairing | None):
        mesh = subgrid.mesh
        self.subgrid = subgrid
        self.d = mesh.dim
        f = subgrid.sf_face
        self.face = f
        self.kind = mesh.face_kind[f]
        self.prim = mesh.face_cells[f, 0]
        self.sec = mesh.face_cells[f, 1]
        self.normal = subgrid.sf_normal
        self.area = subgrid.sf_area
        self.point = subgrid.sf_point
        self.xc = mesh.cell_centers
        self.lam_index = -np.ones(subgrid.num_subfaces, dtype=np.int64)
        if pairing is not None and pairing.size:
            self.lam_index[pairing.plus] = np.arange(pairing.size)
            self.lam_index[pairing.minus] = np.arange(pairing.size)
        elif subgrid.num_plus:
            raise ContractViolation("fractured mesh requires a FracturePairing")
        nc, k = mesh.cell_nodes.shape
        self.cell_nodes = mesh.cell_nodes
        self.subcell_volumes = subgrid.subcell_volumes


def _local_patch(subgrid: SubGrid, v: int):
    cells = subgrid.cells_of_node(v)
    subs = np.sort(subgrid.subfaces_of_node(v))
    return cells, subs


def _subcell_vol(geo: _Geometry, cell: int, v: int) -> float:
    i = int(np.flatnonzero(geo.cell_nodes[cell] == v)[0])
    return float(geo.subcell_volumes[cell, i])


def _equilibrate(A: np.ndarray, rhs: dict) -> tuple[np.ndarray, dict]:
    s = np.max(np.abs(A), axis=1)
    s[s == 0] = 1.0
    A = A / s[:, None]
    return A, {k: r / s[:, None] for k, r in rhs.items()}


def _factor(A: np.ndarray):
    """LU factorization, or ``None`` if the matrix is numerically singular."""
    n = A.shape[0]
    if n == 0:
        return None
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or diag.min() <= SINGULAR_PIVOT_RTOL * max(diag.max(), 1e-300):
        return None
    if n <= 36:
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] <= SINGULAR_PIVOT_RTOL * sv[0]:
            return None
    return lu, piv


def assemble_flow_local(
    subgrid: SubGrid,
    material: MaterialField,
    bnd: BoundaryTypes,
    v: int,
    pairing: FracturePairing | None = None,
    _geo: _Geometry | None = None,
) -> LocalSystem:
    """Assemble the MPFA-O local system of vertex ``v``.

    Unknowns are the pressure gradients of the cells around ``v``. Data blocks are
    ``"p"`` (cell pressures) and ``"bc"`` (one flow boundary value per subface: flux
    density for Neumann, pressure for Dirichlet).
    """
    geo = _geo or _Geometry(subgrid, pairing)
    d = geo.d
    cells, subs = _local_patch(subgrid, v)
    nloc = cells.size
    loc = {int(c): i for i, c in enumerate(cells)}
    bsubs = [int(s) for s in subs if geo.kind[s] == FACE_BOUNDARY]
    bloc = {s: i for i, s in enumerate(bsubs)}
    nunk = d * nloc
    A, Rp, Rb, eqs = [], [], [], []
    out = np.zeros((subs.size, nunk))
    for si, s in enumerate(subs):
        K = int(geo.prim[s])
        iK = loc[K]
        n = geo.normal[s]
        m = geo.area[s]
        x = geo.point[s]
        kn = material.perm[K] @ n
        out[si, iK * d : (iK + 1) * d] = -m * kn
        kind = geo.kind[s]
        if kind == FACE_INTERIOR:
            L = int(geo.sec[s])
            iL = loc[L]
            row = np.zeros(nunk)
            row[iK * d : (iK + 1) * d] = m * kn
            row[iL * d : (iL + 1) * d] = -m * (material.perm[L] @ n)
            A.append(row)
            Rp.append(np.zeros(nloc))
            Rb.append(np.zeros(len(bsubs)))
            eqs.append(("flux", int(s)))
            row = np.zeros(nunk)
            row[iK * d : (iK + 1) * d] = x - geo.xc[K]
            row[iL * d : (iL + 1) * d] = -(x - geo.xc[L])
            rp = np.zeros(nloc)
            rp[iL] += 1.0
            rp[iK] -= 1.0
            A.append(row)
            Rp.append(rp)
            Rb.append(np.zeros(len(bsubs)))
            eqs.append(("continuity", int(s)))
        elif kind == FACE_BOUNDARY and bnd.flow_dirichlet[s]:
            row = np.zeros(nunk)
            row[iK * d : (iK + 1) * d] = x - geo.xc[K]
            rp = np.zeros(nloc)
            rp[iK] = -1.0
            rb = np.zeros(len(bsubs))
            rb[bloc[int(s)]] = 1.0
            A.append(row)
            Rp.append(rp)
            Rb.append(rb)
            eqs.append(("dirichlet", int(s)))
        else:
            row = np.zeros(nunk)
            row[iK * d : (iK + 1) * d] = -m * kn
            rb = np.zeros(len(bsubs))
            if kind == FACE_BOUNDARY:
                rb[bloc[int(s)]] = m
            A.append(row)
            Rp.append(np.zeros(nloc))
            Rb.append(rb)
            eqs.append(("neumann", int(s)))
    A = np.array(A).reshape(-1, nunk)
    rhs = {
        "p": np.array(Rp).reshape(len(eqs), nloc),
        "bc": np.array(Rb).reshape(len(eqs), len(bsubs)),
    }
    weights = np.array([_subcell_vol(geo, int(c), v) for c in cells])
    return LocalSystem(
        kind="flow",
        vertex=int(v),
        cells=cells,
        subfaces=subs,
        matrix=A,
        rhs=rhs,
        cols={"p": cells.copy(), "bc": np.array(bsubs, dtype=np.int64)},
        out={"flux": out},
        direct={},
        weights=weights / weights.sum(),
        equations=eqs,
    )


def _cmap(n, mu, lam, d):
    M = np.zeros((d, d * d))
    for i in range(d):
        M[i, i * d : (i + 1) * d] += 2.0 * mu * n
        for k in range(d):
            M[i, k * d + k] += lam * n[i]
    return M


def _asym(n, d):
    M = np.zeros((d, d * d))
    for i in range(d):
        for k in range(d):
            M[i, i * d + k] += n[k]
            M[i, k * d + i] -= n[k]
    return M


def _rmap(r, d):
    M = np.zeros((d, d * d))
    for i in range(d):
        M[i, i * d : (i + 1) * d] = r
    return M


def assemble_mech_local(
    subgrid: SubGrid,
    material: MaterialField,
    bnd: BoundaryTypes,
    v: int,
    pairing: FracturePairing | None = None,
    symmetrize: bool = True,
    _geo: _Geometry | None = None,
) -> LocalSystem:
    """Assemble the weakly symmetric MPSA local system of vertex ``v``.

    Data blocks are ``"u"`` (cell displacements, ``cell * d + comp``), ``"p"`` (cell
    pressures), ``"lam"`` (multipliers, ``plus_index * d + comp``) and ``"bc"``
    (boundary values, ``subface * d + comp``: traction density for Neumann
    components, displacement for Dirichlet components).

    With ``symmetrize=False`` the skew-part averaging is dropped. This is the fallback
    for patches whose rotation is otherwise undetermined.
    """
    geo = _geo or _Geometry(subgrid, pairing)
    d = geo.d
    dd = d * d
    cells, subs = _local_patch(subgrid, v)
    nloc = cells.size
    loc = {int(c): i for i, c in enumerate(cells)}
    nunk = dd * nloc
    vols = np.array([_subcell_vol(geo, int(c), v) for c in cells])
    w = vols / vols.sum()
    mu = material.mu[cells]
    lamc = material.lam[cells]

    bsubs = [int(s) for s in subs if geo.kind[s] == FACE_BOUNDARY]
    bcols = np.array([s * d + i for s in bsubs for i in range(d)], dtype=np.int64)
    bloc = {s: i for i, s in enumerate(bsubs)}
    lam_slots: dict[int, int] = {}
    for s in subs:
        if geo.kind[s] in (FACE_FRAC_PLUS, FACE_FRAC_MINUS):
            lam_slots.setdefault(int(geo.lam_index[s]), len(lam_slots))
    lcols = np.array(
        [li * d + i for li in lam_slots for i in range(d)], dtype=np.int64
    )
    nb, nl = bcols.size, lcols.size

    def theta_n(iK, n):
        blk = np.zeros((d, nunk))
        blk[:, iK * dd : (iK + 1) * dd] = _cmap(n, mu[iK], lamc[iK], d)
        if symmetrize:
            asym = _asym(n, d)
            for j in range(nloc):
                blk[:, j * dd : (j + 1) * dd] -= w[j] * mu[j] * asym
        return blk

    A = np.zeros((nunk, nunk))
    Ru = np.zeros((nunk, nloc * d))
    Rp = np.zeros((nunk, nloc))
    Rl = np.zeros((nunk, nl))
    Rb = np.zeros((nunk, nb))
    eqs = []
    r = 0
    nsub = subs.size
    out_t = np.zeros((nsub * d, nunk))
    out_u = np.zeros((nsub * d, nunk))
    dir_tp = np.zeros((nsub * d, nloc))
    dir_uu = np.zeros((nsub * d, nloc * d))
    for si, s in enumerate(subs):
        K = int(geo.prim[s])
        iK = loc[K]
        n = geo.normal[s]
        m = geo.area[s]
        x = geo.point[s]
        rk = x - geo.xc[K]
        aK = material.alpha[K]
        tn = theta_n(iK, n)
        out_t[si * d : (si + 1) * d] = m * tn
        dir_tp[si * d : (si + 1) * d, iK] = -m * aK * n
        out_u[si * d : (si + 1) * d, iK * dd : (iK + 1) * dd] = _rmap(rk, d)
        dir_uu[si * d : (si + 1) * d, iK * d : (iK + 1) * d] = np.eye(d)
        kind = geo.kind[s]
        if kind == FACE_INTERIOR:
            L = int(geo.sec[s])
            iL = loc[L]
            aL = material.alpha[L]
            A[r : r + d, iK * dd : (iK + 1) * dd] = m * _cmap(n, mu[iK], lamc[iK], d)
            A[r : r + d, iL * dd : (iL + 1) * dd] = -m * _cmap(n, mu[iL], lamc[iL], d)
            Rp[r : r + d, iK] += m * aK * n
            Rp[r : r + d, iL] -= m * aL * n
            eqs += [("traction", int(s))] * d
            r += d
            A[r : r + d, iK * dd : (iK + 1) * dd] = _rmap(rk, d)
            A[r : r + d, iL * dd : (iL + 1) * dd] = -_rmap(x - geo.xc[L], d)
            for i in range(d):
                Ru[r + i, iL * d + i] += 1.0
                Ru[r + i, iK * d + i] -= 1.0
            eqs += [("continuity", int(s))] * d
            r += d
        elif kind == FACE_BOUNDARY:
            rm = _rmap(rk, d)
            for i in range(d):
                col = bloc[int(s)] * d + i
                if bnd.mech_dirichlet[s, i]:
                    A[r, iK * dd : (iK + 1) * dd] = rm[i]
                    Ru[r, iK * d + i] = -1.0
                    Rb[r, col] = 1.0
                    eqs.append(("dirichlet", int(s)))
                else:
                    A[r] = m * tn[i]
                    Rp[r, iK] = m * aK * n[i]
                    Rb[r, col] = m
                    eqs.append(("neumann", int(s)))
                r += 1
        else:
            sign = 1.0 if kind == FACE_FRAC_PLUS else -1.0
            slot = lam_slots[int(geo.lam_index[s])]
            for i in range(d):
                A[r] = m * tn[i]
                Rp[r, iK] = m * aK * n[i]
                Rl[r, slot * d + i] = sign * m
                eqs.append(("multiplier", int(s)))
                r += 1
    if r != nunk:
        raise DegenerateGeometryError(v, "mechanics", f"{r} equations for {nunk} unknowns")
    ucols = np.array([c * d + i for c in cells for i in range(d)], dtype=np.int64)
    return LocalSystem(
        kind="mech",
        vertex=int(v),
        cells=cells,
        subfaces=subs,
        matrix=A,
        rhs={"u": Ru, "p": Rp, "lam": Rl, "bc": Rb},
        cols={"u": ucols, "p": cells.copy(), "lam": lcols, "bc": bcols},
        out={"traction": out_t, "trace": out_u, "div": _div_rows(vols, nloc, d)},
        direct={"traction": {"p": dir_tp}, "trace": {"u": dir_uu}},
        weights=w,
        symmetrized=symmetrize,
        equations=eqs,
    )


def _div_rows(vols, nloc, d):
    dd = d * d
    out = np.zeros((nloc, nloc * dd))
    for i in range(nloc):
        for a in range(d):
            out[i, i * dd + a * d + a] = vols[i]
    return out


def stress_from_gradients(local: LocalSystem, grads: np.ndarray, material: MaterialField):
    """Weakly symmetrized stresses ``theta_K^v`` for all cells of a mechanics patch."""
    nloc = local.cells.size
    d = int(round(np.sqrt(grads.size / nloc)))
    G = grads.reshape(nloc, d, d)
    mu = material.mu[local.cells][:, None, None]
    lam = material.lam[local.cells][:, None, None]
    tr = np.trace(G, axis1=1, axis2=2)[:, None, None]
    full = 2.0 * mu * G + lam * tr * np.eye(d)
    if local.symmetrized:
        skew = np.einsum("k,kij->ij", local.weights, mu * (G - np.swapaxes(G, 1, 2)))
        full = full - skew
    return full


@dataclass
class CondensedOperators:
    """Global subface stencils after elimination of the subcell gradients.

    Flow (``n_subfaces`` rows, flux out of the primary cell):
        ``flux = flux_p @ p + flux_bc @ bc_flow``.
    Mechanics (``n_subfaces * d`` rows, primary-cell side):
        ``traction = trac_u @ u + trac_p @ p + trac_lam @ lam + trac_bc @ bc_mech``,
        ``trace`` likewise with ``disp_*``; ``div`` has one row per cell and holds
        ``sum_v m_K^v tr(grad u)_K^v``.
    ``jump_*`` give ``[u]`` on positive subfaces, ``n_plus * d`` rows.
    """

    dim: int
    num_cells: int
    num_subfaces: int
    num_plus: int
    flux_p: sps.csr_matrix
    flux_bc: sps.csr_matrix
    trac_u: sps.csr_matrix
    trac_p: sps.csr_matrix
    trac_lam: sps.csr_matrix
    trac_bc: sps.csr_matrix
    disp_u: sps.csr_matrix
    disp_p: sps.csr_matrix
    disp_lam: sps.csr_matrix
    disp_bc: sps.csr_matrix
    div_u: sps.csr_matrix
    div_p: sps.csr_matrix
    div_lam: sps.csr_matrix
    div_bc: sps.csr_matrix
    jump_u: sps.csr_matrix
    jump_p: sps.csr_matrix
    jump_lam: sps.csr_matrix
    jump_bc: sps.csr_matrix
    cell_subface_sign: sps.csr_matrix
    unsymmetrized_vertices: np.ndarray


class _Coo:
    def __init__(self, shape):
        self.shape = shape
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, block):
        if block.size == 0:
            return
        nz = block != 0
        if not nz.any():
            return
        ri, ci = np.nonzero(nz)
        self.r.append(rows[ri])
        self.c.append(cols[ci])
        self.v.append(block[ri, ci])

    def tocsr(self):
        if not self.r:
            return sps.csr_matrix(self.shape)
        m = sps.coo_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
            shape=self.shape,
        ).tocsr()
        m.sum_duplicates()
        return m


def _solve_local(local: LocalSystem, blocks):
    A, rhs = _equilibrate(local.matrix, {k: local.rhs[k] for k in blocks})
    fac = _factor(A)
    if fac is None:
        return None
    return {k: sla.lu_solve(fac, r, check_finite=False) if r.shape[1] else r for k, r in rhs.items()}


def condense(
    subgrid: SubGrid,
    pairing: FracturePairing | None,
    material: MaterialField,
    bnd: BoundaryTypes,
    with_flow: bool = True,
) -> CondensedOperators:
    """Eliminate the subcell gradients vertex by vertex.

    Raises:
        DegenerateGeometryError: if a local system is singular even without weak
            symmetry averaging.
    """
    mesh = subgrid.mesh
    d = mesh.dim
    nc = mesh.num_cells
    ns = subgrid.num_subfaces
    npl = subgrid.num_plus
    if material.num_cells != nc:
        raise ContractViolation("material size does not match the mesh")
    geo = _Geometry(subgrid, pairing)
    flux_p = _Coo((ns, nc))
    flux_bc = _Coo((ns, ns))
    shapes = {"u": nc * d, "p": nc, "lam": npl * d, "bc": ns * d}
    trac = {k: _Coo((ns * d, n)) for k, n in shapes.items()}
    disp = {k: _Coo((ns * d, n)) for k, n in shapes.items()}
    div = {k: _Coo((nc, n)) for k, n in shapes.items()}
    fallback = []
    ar_d = np.arange(d)
    for v in range(mesh.num_nodes):
        if with_flow:
            fl = assemble_flow_local(subgrid, material, bnd, v, _geo=geo)
            sol = _solve_local(fl, ("p", "bc"))
            if sol is None:
                raise DegenerateGeometryError(v, "flow")
            o = fl.out["flux"]
            flux_p.add(fl.subfaces, fl.cols["p"], o @ sol["p"])
            if fl.cols["bc"].size:
                flux_bc.add(fl.subfaces, fl.cols["bc"], o @ sol["bc"])
        ml = assemble_mech_local(subgrid, material, bnd, v, _geo=geo)
        sol = _solve_local(ml, ("u", "p", "lam", "bc"))
        if sol is None:
            ml = assemble_mech_local(subgrid, material, bnd, v, symmetrize=False, _geo=geo)
            sol = _solve_local(ml, ("u", "p", "lam", "bc"))
            if sol is None:
                raise DegenerateGeometryError(v, "mechanics")
            fallback.append(v)
        rows = (ml.subfaces[:, None] * d + ar_d).ravel()
        for k in shapes:
            cols = ml.cols[k]
            if cols.size == 0:
                continue
            t = ml.out["traction"] @ sol[k]
            u = ml.out["trace"] @ sol[k]
            if k in ml.direct["traction"]:
                t = t + ml.direct["traction"][k]
            if k in ml.direct["trace"]:
                u = u + ml.direct["trace"][k]
            trac[k].add(rows, cols, t)
            disp[k].add(rows, cols, u)
            div[k].add(ml.cells, cols, ml.out["div"] @ sol[k])

    sgn = _cell_subface_sign(subgrid)
    trac_m = {k: c.tocsr() for k, c in trac.items()}
    disp_m = {k: c.tocsr() for k, c in disp.items()}
    div_m = {k: c.tocsr() for k, c in div.items()}
    if npl:
        rp = (pairing.plus[:, None] * d + ar_d).ravel()
        rn = (pairing.minus[:, None] * d + ar_d).ravel()
        jump = {k: (disp_m[k][rp] - disp_m[k][rn]).tocsr() for k in shapes}
    else:
        jump = {k: sps.csr_matrix((0, n)) for k, n in shapes.items()}
    return CondensedOperators(
        dim=d,
        num_cells=nc,
        num_subfaces=ns,
        num_plus=npl,
        flux_p=flux_p.tocsr(),
        flux_bc=flux_bc.tocsr(),
        trac_u=trac_m["u"],
        trac_p=trac_m["p"],
        trac_lam=trac_m["lam"],
        trac_bc=trac_m["bc"],
        disp_u=disp_m["u"],
        disp_p=disp_m["p"],
        disp_lam=disp_m["lam"],
        disp_bc=disp_m["bc"],
        div_u=div_m["u"],
        div_p=div_m["p"],
        div_lam=div_m["lam"],
        div_bc=div_m["bc"],
        jump_u=jump["u"],
        jump_p=jump["p"],
        jump_lam=jump["lam"],
        jump_bc=jump["bc"],
        cell_subface_sign=sgn,
        unsymmetrized_vertices=np.array(fallback, dtype=np.int64),
    )


def _cell_subface_sign(subgrid: SubGrid) -> sps.csr_matrix:
    mesh = subgrid.mesh
    fc = mesh.face_cells[subgrid.sf_face]
    ns = subgrid.num_subfaces
    has2 = fc[:, 1] >= 0
    rows = np.concatenate([fc[:, 0], fc[has2, 1]])
    cols = np.concatenate([np.arange(ns), np.flatnonzero(has2)])
    vals = np.concatenate([np.ones(ns), -np.ones(int(has2.sum()))])
    return sps.csr_matrix((vals, (rows, cols)), shape=(mesh.num_cells, ns))


@dataclass
class SubfaceQuantities:
    flux: np.ndarray
    traction: np.ndarray
    trace: np.ndarray


def reconstruct_subface_quantities(
    ops: CondensedOperators,
    u: np.ndarray,
    p: np.ndarray | None,
    lam: np.ndarray | None,
    bc_flow: np.ndarray | None = None,
    bc_mech: np.ndarray | None = None,
) -> SubfaceQuantities:
    """Evaluate flux, traction and displacement trace on all subfaces.

    Vectors may be flat or shaped ``(n, d)``. Returns flux ``(n_subfaces,)``,
    traction and trace ``(n_subfaces, d)``, all seen from the primary cell.
    """
    d, nc, ns, npl = ops.dim, ops.num_cells, ops.num_subfaces, ops.num_plus
    u = _flat(u, nc * d, "u")
    p = np.zeros(nc) if p is None else _flat(p, nc, "p")
    lam = np.zeros(npl * d) if lam is None else _flat(lam, npl * d, "lam")
    bf = np.zeros(ns) if bc_flow is None else _flat(bc_flow, ns, "bc_flow")
    bm = np.zeros(ns * d) if bc_mech is None else _flat(bc_mech, ns * d, "bc_mech")
    flux = ops.flux_p @ p + ops.flux_bc @ bf
    tr = ops.trac_u @ u + ops.trac_p @ p + ops.trac_lam @ lam + ops.trac_bc @ bm
    du = ops.disp_u @ u + ops.disp_p @ p + ops.disp_lam @ lam + ops.disp_bc @ bm
    return SubfaceQuantities(flux=flux, traction=tr.reshape(ns, d), trace=du.reshape(ns, d))


def _flat(x, n, name):
    x = np.asarray(x, dtype=float).ravel()
    if x.size != n:
        raise ContractViolation(f"{name} has {x.size} entries, expected {n}")
    return x
