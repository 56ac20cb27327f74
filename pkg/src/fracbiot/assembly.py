"""Global block system, semismooth Newton loop and backward Euler time stepping.

Unknowns are ordered ``[u (cell-major, d per cell) | p | lam (d per positive
subface)]``. In pure elasticity mode the pressure block is absent.

The block rows are

    A u + B p + C lam = b_u      (momentum per cell)
    D u + E p + F lam = b_p      (mass per cell)
    G u + H p + J lam = r        (contact per positive subface)

where only ``G, H, J, r`` depend on the active sets.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sps
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from fracbiot.contact import (
    ContactState,
    NewtonContactRows,
    classify_subfaces,
    linearize_contact_rows,
    set_counts,
    tangent_basis,
)
from fracbiot.errors import (
    AssemblyError,
    InvalidParameterError,
    NonConvergenceError,
    SolverError,
)
from fracbiot.fvm_local import BoundaryTypes, CondensedOperators, MaterialField, condense
from fracbiot.mesh import FracturePairing, Mesh, SubGrid

LinearSolver = Callable[["GlobalSystem"], np.ndarray]


def _equilibrated_lu(matrix: sps.spmatrix):
    """LU of a row and column equilibrated matrix; returns a solve function."""
    A = sps.csr_matrix(matrix)
    rs = np.asarray(abs(A).max(axis=1).todense()).ravel()
    if np.any(rs == 0):
        raise SolverError("matrix has an empty row", residual=None)
    A = sps.diags(1.0 / rs) @ A
    cs = np.asarray(abs(A).max(axis=0).todense()).ravel()
    if np.any(cs == 0):
        raise SolverError("matrix has an empty column", residual=None)
    A = (A @ sps.diags(1.0 / cs)).tocsc()
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as err:
        raise SolverError(f"sparse factorization failed: {err}") from err

    def solve(b):
        b = np.asarray(b, dtype=float)
        scale_r = rs if b.ndim == 1 else rs[:, None]
        scale_c = cs if b.ndim == 1 else cs[:, None]
        return lu.solve(b / scale_r) / scale_c

    return solve


def direct_solver(system: "GlobalSystem") -> np.ndarray:
    """Sparse LU of the full block matrix."""
    return _equilibrated_lu(system.matrix())(system.rhs())


class SchurContactSolver:
    """Direct solver that factors the contact-independent Biot block once.

    With ``K = [[A, B], [D, E]]``, ``P = [[C], [F]]`` and ``Q = [G, H]`` the
    multipliers solve the dense system ``(J - Q K^-1 P) lam = r - Q K^-1 b``. The
    factorization of ``K`` and ``K^-1 P`` are cached on the identity of the Biot
    blocks, so Newton iterates and time steps with a fixed step size only pay for a
    pair of triangular solves and a small dense solve.
    """

    def __init__(self, refinement_steps: int = 2):
        self.refinement_steps = refinement_steps
        self._key = None
        self._solve = None
        self._KP = None

    def __call__(self, system: "GlobalSystem") -> np.ndarray:
        key = (id(system.A), id(system.E), id(system.C))
        if key != self._key:
            K = sps.bmat([[system.A, system.B], [system.D, system.E]], format="csr") if system.E.shape[0] else system.A
            self._solve = _equilibrated_lu(K)
            P = sps.vstack([system.C, system.F]).toarray() if system.E.shape[0] else system.C.toarray()
            self._KP = self._solve(P) if P.shape[1] else np.zeros((K.shape[0], 0))
            self._key = key
        if system.J.shape[0] == 0:
            return self._solve(np.concatenate([system.b_u, system.b_p]))
        Q = sps.hstack([system.G, system.H]).tocsr() if system.E.shape[0] else system.G
        S = system.J.toarray() - Q @ self._KP
        rs = np.abs(S).max(axis=1)
        rs[rs == 0] = 1.0
        try:
            S_lu = sla.lu_factor(S / rs[:, None])
        except (ValueError, sla.LinAlgError) as err:
            raise SolverError(f"contact Schur complement is singular: {err}") from err

        def solve(b_biot, r):
            y = self._solve(b_biot)
            lam = sla.lu_solve(S_lu, (r - Q @ y) / rs)
            return np.concatenate([y - self._KP @ lam, lam])

        n = system.A.shape[0] + system.E.shape[0]
        M = system.matrix()
        rhs = system.rhs()
        x = solve(rhs[:n], rhs[n:])
        for _ in range(self.refinement_steps):
            res = rhs - M @ x
            x = x + solve(res[:n], res[n:])
        return x


@dataclass
class NewtonConfig:
    """Newton loop settings.

    Attributes:
        tol: relative tolerance on the displacement update.
        max_iter: iteration cap.
        c: numerical contact parameter [Pa/m].
        dynamic: use jump velocities in the friction law; static uses jumps.
        regularize: use the regularized sliding rows.
        solver: linear solver ``GlobalSystem -> x``; the default factors the Biot
            block once and eliminates the multipliers.
        gate_lam, gate_p: also require the relative update of ``lam`` / ``p`` to be
            below ``tol``.
    """

    tol: float = 1e-10
    max_iter: int = 50
    c: float = 100e9
    dynamic: bool = False
    regularize: bool = True
    solver: LinearSolver = field(default_factory=SchurContactSolver)
    gate_lam: bool = False
    gate_p: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidParameterError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise InvalidParameterError("max_iter must be at least 1")
        if not self.c > 0:
            raise InvalidParameterError("c must be positive")


@dataclass
class BoundaryValues:
    """Boundary data per subface: flow ``(n_subfaces,)``, mechanics ``(n_subfaces * d,)``."""

    flow: np.ndarray
    mech: np.ndarray

    @classmethod
    def zeros(cls, num_subfaces: int, dim: int) -> "BoundaryValues":
        return cls(np.zeros(num_subfaces), np.zeros(num_subfaces * dim))


@dataclass
class TimeStepState:
    """Current iterate and previous time level.

    Attributes:
        u, p, lam: flat unknown vectors; ``p`` is empty in elasticity mode.
        u_prev, p_prev, lam_prev: previous converged time level.
        bc_prev: boundary data of the previous time level.
        dt: time step [s]; ignored in static runs.
        t: time of the current level [s].
        k: Newton iterations used for the current level.
        jump_guess: jumps ``(n_plus, d)`` used instead of the reconstructed ones to
            classify the first iterate (a cold start with "zero displacement").
    """

    u: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    u_prev: np.ndarray
    p_prev: np.ndarray
    lam_prev: np.ndarray
    bc_prev: BoundaryValues
    dt: float = 1.0
    t: float = 0.0
    k: int = 0
    jump_guess: np.ndarray | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameterError("time step must be positive")


class Discretization:
    """Mesh, material, boundary types and the condensed Biot stencils."""

    def __init__(
        self,
        mesh: Mesh,
        subgrid: SubGrid,
        pairing: FracturePairing,
        material: MaterialField,
        bnd: BoundaryTypes,
        friction: np.ndarray,
        with_flow: bool,
    ):
        self.mesh = mesh
        self.subgrid = subgrid
        self.pairing = pairing
        self.material = material
        self.bnd = bnd
        self.friction = np.broadcast_to(np.asarray(friction, dtype=float), (pairing.size,)).copy()
        self.with_flow = bool(with_flow)
        self.ops: CondensedOperators = condense(subgrid, pairing, material, bnd, with_flow=with_flow)
        self._biot_cache: dict = {}
        d = mesh.dim
        nc = mesh.num_cells
        self.dim = d
        self.num_cells = nc
        self.n_u = nc * d
        self.n_p = nc if self.with_flow else 0
        self.n_lam = pairing.size * d
        self.tangents = tangent_basis(pairing.normal) if pairing.size else np.zeros((0, d, d - 1))

    @property
    def num_dofs(self) -> int:
        return self.n_u + self.n_p + self.n_lam

    def split(self, x: np.ndarray):
        a, b = self.n_u, self.n_u + self.n_p
        return x[:a], x[a:b], x[b:]

    def initial_state(self, lam_n: float = 0.0, dt: float = 1.0, t: float = 0.0) -> TimeStepState:
        """Zero displacement and pressure; multipliers ``lam = lam_n * n``.

        The previous level is the rest state (``u = p = lam = 0``). The jump of the
        first iterate is taken as zero, so a negative ``lam_n`` puts every subface in
        the sticking set.
        """
        lam = (lam_n * self.pairing.normal).ravel() if self.pairing.size else np.zeros(0)
        z_u = np.zeros(self.n_u)
        z_p = np.zeros(self.n_p)
        return TimeStepState(
            u=z_u,
            p=z_p,
            lam=lam,
            u_prev=z_u.copy(),
            p_prev=z_p.copy(),
            lam_prev=np.zeros_like(lam),
            bc_prev=BoundaryValues.zeros(self.subgrid.num_subfaces, self.dim),
            dt=dt,
            t=t,
            jump_guess=np.zeros((self.pairing.size, self.dim)),
        )

    def _p(self, p):
        return p if self.with_flow else np.zeros(self.num_cells)

    def jump(self, u, p, lam, bc: BoundaryValues) -> np.ndarray:
        o = self.ops
        j = o.jump_u @ u + o.jump_p @ self._p(p) + o.jump_lam @ lam + o.jump_bc @ bc.mech
        return j.reshape(-1, self.dim)

    def divergence(self, u, p, lam, bc: BoundaryValues) -> np.ndarray:
        o = self.ops
        return o.div_u @ u + o.div_p @ self._p(p) + o.div_lam @ lam + o.div_bc @ bc.mech

    def contact_state(self, u, p, lam, bc, jump_prev, c, dt=None) -> ContactState:
        n = self.pairing.size
        return ContactState(
            lam=np.asarray(lam).reshape(n, self.dim),
            jump=self.jump(u, p, lam, bc),
            jump_prev=jump_prev,
            gap=self.pairing.gap,
            friction=self.friction,
            normal=self.pairing.normal,
            tangents=self.tangents,
            c=c,
            dt=dt,
        )

    def l2_norm(self, u: np.ndarray) -> float:
        uu = np.asarray(u).reshape(self.num_cells, self.dim)
        return float(np.sqrt(np.sum(self.mesh.cell_volumes * np.sum(uu**2, axis=1))))


@dataclass
class BiotBlocks:
    """Contact-independent blocks for a fixed time step."""

    A: sps.csr_matrix
    B: sps.csr_matrix
    C: sps.csr_matrix
    D: sps.csr_matrix
    E: sps.csr_matrix
    F: sps.csr_matrix
    dt: float


def assemble_biot_blocks(disc: Discretization, dt: float) -> BiotBlocks:
    """Momentum and mass blocks; cached per time step size."""
    key = float(dt) if disc.with_flow else None
    if key in disc._biot_cache:
        return disc._biot_cache[key]
    o = disc.ops
    d, nc = disc.dim, disc.num_cells
    S = o.cell_subface_sign
    Sd = sps.kron(S, sps.eye(d), format="csr")
    A = (-Sd @ o.trac_u).tocsr()
    C = (-Sd @ o.trac_lam).tocsr()
    if disc.with_flow:
        mat = disc.material
        a_dt = sps.diags(mat.alpha / dt)
        B = (-Sd @ o.trac_p).tocsr()
        D = (a_dt @ o.div_u).tocsr()
        E = (S @ o.flux_p + a_dt @ o.div_p + sps.diags(mat.c0 * disc.mesh.cell_volumes / dt)).tocsr()
        F = (a_dt @ o.div_lam).tocsr()
    else:
        B = sps.csr_matrix((nc * d, 0))
        D = sps.csr_matrix((0, nc * d))
        E = sps.csr_matrix((0, 0))
        F = sps.csr_matrix((0, disc.n_lam))
    blocks = BiotBlocks(A=A, B=B, C=C, D=D, E=E, F=F, dt=float(dt))
    disc._biot_cache[key] = blocks
    return blocks


@dataclass
class GlobalSystem:
    """Block system of one Newton iterate."""

    A: sps.csr_matrix
    B: sps.csr_matrix
    C: sps.csr_matrix
    D: sps.csr_matrix
    E: sps.csr_matrix
    F: sps.csr_matrix
    G: sps.csr_matrix
    H: sps.csr_matrix
    J: sps.csr_matrix
    b_u: np.ndarray
    b_p: np.ndarray
    r: np.ndarray

    @property
    def shape(self):
        n = self.A.shape[1] + self.E.shape[1] + self.J.shape[1]
        return (n, n)

    def matrix(self) -> sps.csr_matrix:
        blocks = [[self.A, self.B, self.C], [self.D, self.E, self.F], [self.G, self.H, self.J]]
        rows = [r for r in blocks if r[0].shape[0] > 0]
        cols_keep = [j for j in range(3) if blocks[0][j].shape[1] > 0 or j == 0]
        mat = sps.bmat([[r[j] for j in cols_keep] for r in rows], format="csr")
        return mat

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.b_u, self.b_p, self.r])


def _blockdiag(blocks: np.ndarray) -> sps.csr_matrix:
    n, d, _ = blocks.shape
    if n == 0:
        return sps.csr_matrix((0, 0))
    rows = np.repeat(np.arange(n * d), d)
    cols = (np.arange(n)[:, None, None] * d + np.arange(d)[None, None, :]).repeat(d, axis=1).ravel()
    return sps.csr_matrix((blocks.ravel(), (rows, cols)), shape=(n * d, n * d))


def assemble_global_system(
    disc: Discretization,
    rows: NewtonContactRows | None,
    dt: float,
    bc: BoundaryValues,
    prev: TimeStepState,
) -> GlobalSystem:
    """Assemble the block system for given contact rows and boundary data.

    ``prev`` supplies the previous time level (``u_prev``, ``p_prev``, ``lam_prev``,
    ``bc_prev``) entering the backward Euler terms.
    """
    o = disc.ops
    d, nc = disc.dim, disc.num_cells
    mat = disc.material
    bb = assemble_biot_blocks(disc, dt)
    vol = disc.mesh.cell_volumes
    S = o.cell_subface_sign
    Sd = sps.kron(S, sps.eye(d), format="csr")
    b_u = (mat.body_force * vol[:, None]).ravel() + Sd @ (o.trac_bc @ bc.mech)
    if disc.with_flow:
        div_prev = disc.divergence(prev.u_prev, prev.p_prev, prev.lam_prev, prev.bc_prev)
        a_dt = mat.alpha / dt
        b_p = (
            mat.source * vol
            - S @ (o.flux_bc @ bc.flow)
            - a_dt * (o.div_bc @ bc.mech)
            + a_dt * div_prev
            + mat.c0 * vol / dt * prev.p_prev
        )
    else:
        b_p = np.zeros(0)
    n_lam = disc.n_lam
    if n_lam:
        if rows is None or rows.size * d != n_lam:
            raise AssemblyError("contact rows do not match the number of positive subfaces")
        Cl = _blockdiag(rows.coef_lam)
        Cj = _blockdiag(rows.coef_jump)
        G = (Cj @ o.jump_u).tocsr()
        H = (Cj @ o.jump_p).tocsr() if disc.with_flow else sps.csr_matrix((n_lam, 0))
        J = (Cl + Cj @ o.jump_lam).tocsr()
        r = rows.rhs.ravel() - Cj @ (o.jump_bc @ bc.mech)
    else:
        G = sps.csr_matrix((0, nc * d))
        H = sps.csr_matrix((0, disc.n_p))
        J = sps.csr_matrix((0, 0))
        r = np.zeros(0)
    sys = GlobalSystem(A=bb.A, B=bb.B, C=bb.C, D=bb.D, E=bb.E, F=bb.F, G=G, H=H, J=J, b_u=b_u, b_p=b_p, r=r)
    _check_dims(sys)
    return sys


def _check_dims(s: GlobalSystem):
    nu, npp, nl = s.A.shape[1], s.E.shape[1], s.J.shape[1]
    expect = {
        "A": (nu, nu), "B": (nu, npp), "C": (nu, nl),
        "D": (npp, nu), "E": (npp, npp), "F": (npp, nl),
        "G": (nl, nu), "H": (nl, npp), "J": (nl, nl),
    }
    for k, shp in expect.items():
        if getattr(s, k).shape != shp:
            raise AssemblyError(f"block {k} has shape {getattr(s, k).shape}, expected {shp}")
    if s.b_u.shape != (nu,) or s.b_p.shape != (npp,) or s.r.shape != (nl,):
        raise AssemblyError("right-hand side sizes do not match the blocks")


@dataclass
class IterationInfo:
    k: int
    update: float
    counts: dict


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    history: list = field(default_factory=list)
    labels: np.ndarray | None = None
    seconds: float = 0.0


def _rel(new, old, norm):
    dn = norm(new - old)
    nn = norm(new)
    if dn == 0:
        return 0.0
    return dn / nn if nn > 0 else np.inf


def newton_step(
    disc: Discretization,
    state: TimeStepState,
    bc: BoundaryValues,
    config: NewtonConfig,
) -> tuple[TimeStepState, IterationInfo, np.ndarray]:
    """One semismooth Newton iteration.

    Returns the updated state, the iteration info (relative displacement update)
    and the active-set labels used for this iterate.
    """
    dt = state.dt
    jump_prev = disc.jump(state.u_prev, state.p_prev, state.lam_prev, state.bc_prev) if disc.n_lam else np.zeros((0, disc.dim))
    rows = None
    labels = np.zeros(0, dtype=np.int64)
    if disc.n_lam:
        cs = disc.contact_state(
            state.u, state.p, state.lam, bc, jump_prev, config.c, dt if config.dynamic else None
        )
        if state.jump_guess is not None:
            cs = cs.with_values(jump=state.jump_guess)
        labels = classify_subfaces(cs)
        rows = linearize_contact_rows(cs, labels, regularize=config.regularize)
    sys = assemble_global_system(disc, rows, dt, bc, state)
    M = sys.matrix()
    rhs = sys.rhs()
    x = np.asarray(config.solver(sys), dtype=float)
    res = M @ x - rhs
    scale = max(np.abs(rhs).max(initial=0.0), (abs(M) @ np.abs(x)).max(initial=0.0), 1e-300)
    if not np.all(np.isfinite(x)) or np.abs(res).max(initial=0.0) > 1e-6 * scale:
        raise SolverError("linear solve inaccurate", residual=float(np.abs(res).max(initial=0.0)))
    u, p, lam = disc.split(x)
    upd = _rel(u, state.u, disc.l2_norm)
    if config.gate_lam and disc.n_lam:
        upd = max(upd, _rel(lam, state.lam, np.linalg.norm))
    if config.gate_p and disc.n_p:
        upd = max(upd, _rel(p, state.p, np.linalg.norm))
    new = replace(state, u=u, p=p, lam=lam, k=state.k + 1, jump_guess=None)
    return new, IterationInfo(k=new.k, update=upd, counts=set_counts(labels)), labels


def solve_newton(
    disc: Discretization,
    state: TimeStepState,
    bc: BoundaryValues,
    config: NewtonConfig,
) -> tuple[TimeStepState, NewtonReport]:
    """Iterate :func:`newton_step` until the displacement update is below ``tol``.

    Without fracture subfaces the system is linear and one iteration is taken.

    Raises:
        NonConvergenceError: when ``max_iter`` is reached; carries the last iterate.
    """
    t0 = time.perf_counter()
    state = replace(state, k=0)
    history = []
    for _ in range(config.max_iter):
        state, info, _ = newton_step(disc, state, bc, config)
        history.append(info)
        if disc.n_lam == 0 or info.update <= config.tol:
            labels = final_labels(disc, state, bc, config)
            return state, NewtonReport(
                converged=True,
                iterations=state.k,
                history=history,
                labels=labels,
                seconds=time.perf_counter() - t0,
            )
    raise NonConvergenceError(
        f"Newton did not converge in {config.max_iter} iterations "
        f"(last update {history[-1].update:.3e})",
        state=state,
        history=history,
    )


def final_labels(disc, state, bc, config) -> np.ndarray:
    if disc.n_lam == 0:
        return np.zeros(0, dtype=np.int64)
    return classify_subfaces(final_contact_state(disc, state, bc, config))


def final_contact_state(disc, state, bc, config) -> ContactState:
    jump_prev = disc.jump(state.u_prev, state.p_prev, state.lam_prev, state.bc_prev)
    return disc.contact_state(
        state.u, state.p, state.lam, bc, jump_prev, config.c, state.dt if config.dynamic else None
    )


def advance_time_step(
    disc: Discretization,
    state: TimeStepState,
    bc_at: Callable[[float], BoundaryValues],
    dt: float,
    config: NewtonConfig,
    bc_now: BoundaryValues | None = None,
) -> tuple[TimeStepState, NewtonReport, BoundaryValues]:
    """Advance from ``state.t`` to ``state.t + dt``, warm-starting from ``state``.

    ``bc_now`` is the boundary data of the current (converged) level; it becomes the
    previous-level data. Returns the new state, the Newton report and the boundary
    data used.
    """
    if not dt > 0:
        raise InvalidParameterError("time step must be positive")
    t_new = state.t + dt
    bc_new = bc_at(t_new)
    shifted = replace(
        state,
        u_prev=state.u.copy(),
        p_prev=state.p.copy(),
        lam_prev=state.lam.copy(),
        bc_prev=bc_now if bc_now is not None else state.bc_prev,
        dt=dt,
        t=t_new,
    )
    new, report = solve_newton(disc, shifted, bc_new, config)
    return new, report, bc_new


def residuals(disc: Discretization, state: TimeStepState, bc: BoundaryValues) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell momentum ``(n_cells, d)`` and mass ``(n_cells,)`` residuals of the
    nonlinear (contact-free) balance equations at ``state``."""
    bb = assemble_biot_blocks(disc, state.dt)
    sys = assemble_global_system(disc, _dummy_rows(disc), state.dt, bc, state)
    ru = bb.A @ state.u + bb.C @ state.lam - sys.b_u
    if disc.with_flow:
        ru = ru + bb.B @ state.p
        rp = bb.D @ state.u + bb.E @ state.p + bb.F @ state.lam - sys.b_p
    else:
        rp = np.zeros(0)
    return ru.reshape(-1, disc.dim), rp


def _dummy_rows(disc):
    if disc.n_lam == 0:
        return None
    n, d = disc.pairing.size, disc.dim
    return NewtonContactRows(
        coef_lam=np.tile(np.eye(d), (n, 1, 1)),
        coef_jump=np.zeros((n, d, d)),
        rhs=np.zeros((n, d)),
        labels=np.zeros(n, dtype=np.int64),
    )
