"""Verification oracles: affine patch tests, the one-dimensional consolidation series,
finite-difference Jacobian probes and complementarity (KKT) audits."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from fracbiot.assembly import (
    BoundaryValues,
    Discretization,
    NewtonConfig,
    TimeStepState,
    assemble_biot_blocks,
    assemble_global_system,
)
from fracbiot.contact import (
    OPEN,
    SLIDE,
    STICK,
    ContactState,
    classify_subfaces,
    evaluate_complementarity,
    linearize_contact_rows,
    regularize_sliding_rows,
)
from fracbiot.errors import ContractViolation
from fracbiot.fvm_local import BoundaryTypes, MaterialField, condense, reconstruct_subface_quantities
from fracbiot.mesh import Mesh, SubGrid, build_subgrid

# relative size of the finite-difference guard band around set switches
FD_GUARD = 1e-6
# series terms are added until the next one is below this fraction of p0
SERIES_RTOL = 1e-12
SERIES_MAX_TERMS = 200_000


# --------------------------------------------------------------------------------------
# Patch test


@dataclass
class PatchTestResult:
    """Maximum relative deviations from the affine solution.

    ``pressure`` and ``displacement`` compare the solved cell values, ``flux`` and
    ``traction`` the reconstructed subface quantities (per unit area) and ``trace``
    the reconstructed subface displacements.
    """

    pressure: float
    displacement: float
    flux: float
    traction: float
    trace: float

    @property
    def max_error(self) -> float:
        return max(self.pressure, self.displacement, self.flux, self.traction, self.trace)


def _rel_max(a, b):
    scale = np.abs(b).max(initial=0.0)
    diff = np.abs(a - b).max(initial=0.0)
    if scale == 0:
        return float(diff)
    return float(diff / scale)


def patch_test(
    mesh: Mesh,
    material: MaterialField,
    pressure_gradient=None,
    pressure_value: float = 1.0,
    displacement_gradient=None,
    displacement_value=None,
    subgrid: SubGrid | None = None,
) -> PatchTestResult:
    """Solve flow and elasticity with Dirichlet data from affine fields and compare.

    The fields are ``p(x) = pressure_value + a . x`` and ``u(x) = u0 + G x``. The
    material must be homogeneous for the affine fields to be exact solutions with
    zero sources.
    """
    if mesh.num_fracture_faces:
        raise ContractViolation("patch tests need a mesh without fractures")
    d = mesh.dim
    sg = subgrid or build_subgrid(mesh)
    a = np.zeros(d) if pressure_gradient is None else np.asarray(pressure_gradient, dtype=float)
    G = np.zeros((d, d)) if displacement_gradient is None else np.asarray(displacement_gradient, dtype=float)
    u0 = np.zeros(d) if displacement_value is None else np.asarray(displacement_value, dtype=float)
    K = material.perm[0]
    mu, lam = material.mu[0], material.lam[0]

    def p_ex(x):
        return pressure_value + x @ a

    def u_ex(x):
        return u0 + x @ G.T

    bnd = BoundaryTypes.all_dirichlet(sg)
    ops = condense(sg, None, material, bnd, with_flow=True)
    S = ops.cell_subface_sign
    bc_flow = np.where(bnd.flow_dirichlet, p_ex(sg.sf_point), 0.0)
    bc_mech = np.where(bnd.mech_dirichlet, u_ex(sg.sf_point), 0.0).ravel()

    E = (S @ ops.flux_p).tocsc()
    p = spla.spsolve(E, -S @ (ops.flux_bc @ bc_flow))
    Sd = sps.kron(S, sps.eye(d), format="csr")
    A = (Sd @ ops.trac_u).tocsc()
    u = spla.spsolve(A, -Sd @ (ops.trac_bc @ bc_mech) - Sd @ (ops.trac_p @ np.zeros(mesh.num_cells)))

    q = reconstruct_subface_quantities(ops, u, np.zeros(mesh.num_cells), None, bc_flow, bc_mech)
    qp = reconstruct_subface_quantities(ops, np.zeros(mesh.num_cells * d), p, None, bc_flow, None)
    m = sg.sf_area
    flux_ex = -(sg.sf_normal @ (K @ a))
    sigma = 2 * mu * 0.5 * (G + G.T) + lam * np.trace(G) * np.eye(d)
    trac_ex = sg.sf_normal @ sigma.T
    return PatchTestResult(
        pressure=_rel_max(p, p_ex(mesh.cell_centers)),
        displacement=_rel_max(u.reshape(-1, d), u_ex(mesh.cell_centers)),
        flux=_rel_max(qp.flux / m, flux_ex),
        traction=_rel_max(q.traction / m[:, None], trac_ex),
        trace=_rel_max(q.trace, u_ex(sg.sf_point)),
    )


# --------------------------------------------------------------------------------------
# Consolidation


@dataclass
class TerzaghiField:
    """Drained-top, sealed-base consolidation column under a top load ``w``.

    Coordinates: ``y`` from the fixed base (0) to the loaded top (``H``). Compression
    is negative displacement; ``w > 0`` is a compressive load.
    """

    H: float
    w: float
    mu: float
    lam: float
    alpha: float
    c0: float
    perm: float

    @property
    def modulus(self) -> float:
        """Confined (oedometric) modulus ``Lambda + 2 G``."""
        return self.lam + 2 * self.mu

    @property
    def p0(self) -> float:
        """Undrained pressure ``alpha w / (c0 (Lambda + 2 G) + alpha^2)``."""
        return self.alpha * self.w / (self.c0 * self.modulus + self.alpha**2)

    @property
    def cv(self) -> float:
        """Consolidation coefficient ``K / (c0 + alpha^2 / (Lambda + 2 G))``."""
        return self.perm / (self.c0 + self.alpha**2 / self.modulus)

    def _terms(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues ``M_m`` and amplitudes ``2 p0 / M_m exp(-M_m^2 c_v t / H^2)``."""
        tau = self.cv * t / self.H**2
        if tau <= 0:
            raise ValueError("the series is evaluated for t > 0")
        # |amp_m| <= 2 p0 exp(-M^2 tau) / M; truncate once this is below SERIES_RTOL p0
        m_max = SERIES_MAX_TERMS
        Mcut = np.sqrt(max(np.log(2.0 / SERIES_RTOL), 0.0) / tau)
        m_max = int(min(m_max, max(Mcut / np.pi + 2, 1)))
        M = (2 * np.arange(m_max) + 1) * np.pi / 2
        amp = 2 * self.p0 / M * np.exp(-(M**2) * tau)
        keep = amp >= SERIES_RTOL * self.p0
        keep[0] = True
        return M[keep], amp[keep]

    def pressure(self, y, t: float) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if t == 0:
            return np.where(y < self.H, self.p0, 0.0)
        M, amp = self._terms(t)
        zeta = (self.H - y)[..., None] / self.H
        return np.sum(amp * np.sin(M * zeta), axis=-1)

    def pressure_integral(self, y, t: float) -> np.ndarray:
        """``int_0^y p dy'``."""
        y = np.asarray(y, dtype=float)
        M, amp = self._terms(t)
        zeta = (self.H - y)[..., None] / self.H
        return np.sum(amp * self.H / M * np.cos(M * zeta), axis=-1)

    def displacement(self, y, t: float) -> np.ndarray:
        """Vertical displacement, zero at the base."""
        y = np.asarray(y, dtype=float)
        return (-self.w * y + self.alpha * self.pressure_integral(y, t)) / self.modulus

    def strain(self, y, t: float) -> np.ndarray:
        """``du/dy`` evaluated from the series (not by differencing)."""
        return (-self.w + self.alpha * self.pressure(y, t)) / self.modulus

    def total_stress(self, y, t: float) -> np.ndarray:
        """Vertical total stress ``(Lambda + 2 G) du/dy - alpha p``; equals ``-w``."""
        return self.modulus * self.strain(y, t) - self.alpha * self.pressure(y, t)

    def flux(self, y, t: float) -> np.ndarray:
        """Upward Darcy flux ``-K dp/dy``."""
        y = np.asarray(y, dtype=float)
        M, amp = self._terms(t)
        zeta = (self.H - y)[..., None] / self.H
        return self.perm * np.sum(amp * M / self.H * np.cos(M * zeta), axis=-1)


@dataclass
class ConsolidationComparison:
    """Simulated versus analytic pressure in the consolidation column."""

    times: np.ndarray
    errors: np.ndarray
    p0: float
    cv: float
    first_step_max: float

    @property
    def overshoot(self) -> float:
        """Relative excess of the first-step maximum over ``p0`` (0 if below)."""
        return max(self.first_step_max / self.p0 - 1.0, 0.0)


def terzaghi_field_of(config) -> TerzaghiField:
    """Analytic field matching a column scenario.

    Raises:
        ContractViolation: if the scenario is not a drained-top, loaded, sealed column.
    """
    from fracbiot.scenarios import ScenarioConfig

    if not isinstance(config, ScenarioConfig):
        raise ContractViolation("expected a ScenarioConfig")
    if config.fractures or not config.flow or config.mesh.generator != "rectangle":
        raise ContractViolation("consolidation needs a 2d rectangle with flow and no fractures")
    mech = {b.group: b for b in config.mechanics}
    flow = {b.group: b for b in config.flow_bc}
    top = mech.get("ymax")
    ok = (
        top is not None and top.type == "neumann" and top.value[0] == 0 and top.ramp.kind == "constant"
        and mech.get("ymin") is not None and mech["ymin"].type == "dirichlet" and not any(mech["ymin"].value)
        and all(mech.get(s) is not None and mech[s].type == "rolling" for s in ("xmin", "xmax"))
        and set(flow) == {"ymax"} and flow["ymax"].type == "dirichlet" and flow["ymax"].value[0] == 0
        and (config.mesh.origin is None or config.mesh.origin[1] == 0)
    )
    if not ok:
        raise ContractViolation("scenario is not a drained-top, loaded, sealed column")
    mat = config.material.field(1, 2)
    return TerzaghiField(
        H=config.mesh.lengths[1],
        w=-top.value[1],
        mu=float(mat.mu[0]),
        lam=float(mat.lam[0]),
        alpha=float(mat.alpha[0]),
        c0=float(mat.c0[0]),
        perm=float(mat.perm[0][0, 0]),
    )


def terzaghi_reference(config, times=None, result=None) -> ConsolidationComparison:
    """Run (or reuse ``result`` of) a column scenario and compare pressures.

    ``times`` defaults to every step; each requested time must be a step time. The
    error is the volume-weighted L2 norm of ``p_h - p`` over the analytic norm.
    """
    from fracbiot.scenarios import run_scenario

    field_ = terzaghi_field_of(config)
    if result is None or not result.states:
        result = run_scenario(config, keep_states=True)
    states = result.states
    step_t = np.array([s.t for s in states])
    times = step_t if times is None else np.atleast_1d(np.asarray(times, dtype=float))
    mesh = result.problem.mesh
    y = mesh.cell_centers[:, 1]
    vol = mesh.cell_volumes
    errors = []
    for t in times:
        k = int(np.argmin(np.abs(step_t - t)))
        if abs(step_t[k] - t) > 1e-9 * max(abs(t), config.time.dt):
            raise ContractViolation(f"time {t} is not a step time")
        pe = field_.pressure(y, step_t[k])
        ph = states[k].p
        errors.append(np.sqrt(np.sum(vol * (ph - pe) ** 2) / np.sum(vol * pe**2)))
    return ConsolidationComparison(
        times=np.asarray(times),
        errors=np.asarray(errors),
        p0=field_.p0,
        cv=field_.cv,
        first_step_max=float(states[0].p.max()),
    )


# --------------------------------------------------------------------------------------
# Complementarity audit


@dataclass
class KKTReport:
    """Per-subface violations [Pa] and their maximum relative to ``scale``."""

    per_subface: np.ndarray
    components: dict
    scale: float

    @property
    def max(self) -> float:
        return float(self.per_subface.max(initial=0.0))

    @property
    def relative(self) -> float:
        return self.max / self.scale

    def passes(self, rtol: float = 1e-8) -> bool:
        return self.relative <= rtol


def kkt_residual(state: ContactState, scale: float | None = None) -> KKTReport:
    """Violation of non-penetration and Coulomb friction per subface, in Pa.

    Components: ``max(lam_n, 0)``; ``c max([u]_n - g, 0)``; the complementarity
    ``min(|lam_n|, c |[u]_n - g|)``; ``max(||lam_t|| - F |lam_n|, 0)``; and the
    stick/slide direction residual ``||C_tau|| / max(b, ||z||)`` (which is
    ``c ||w||`` on sticking subfaces). ``scale`` defaults to ``max(|lam|, 1 Pa)``.
    """
    n = state.size
    lam_n = state.lam_n
    gapped = state.jump_n - state.gap
    c = state.c
    comp = {
        "tension": np.maximum(lam_n, 0.0),
        "penetration": c * np.maximum(gapped, 0.0),
        "complementarity": np.minimum(np.abs(lam_n), c * np.abs(gapped)),
        "friction_bound": np.maximum(
            np.linalg.norm(state.lam_t, axis=1) - state.friction * np.abs(lam_n), 0.0
        ),
    }
    if n:
        _, ct = evaluate_complementarity(state)
        denom = np.maximum(np.maximum(state.b, np.linalg.norm(state.z, axis=1)), 1e-300)
        comp["direction"] = np.linalg.norm(ct, axis=1) / denom
    else:
        comp["direction"] = np.zeros(0)
    per = np.max(np.vstack(list(comp.values())), axis=0) if n else np.zeros(0)
    if scale is None:
        scale = max(np.abs(state.lam).max(initial=0.0), 1.0)
    return KKTReport(per_subface=per, components=comp, scale=float(scale))


# --------------------------------------------------------------------------------------
# Jacobian audit


def contact_function(state0: ContactState, labels: np.ndarray):
    """Nonlinear contact residual whose Jacobian at ``state0`` is the unregularized
    Newton row set for ``labels``.

    Returns ``phi(lam, jump) -> (n, d)``. Per set, with scalings frozen at ``state0``:
    open ``lam``; contact normal ``-C_n / c``; stick ``-C_tau / (c b0)``; slide
    ``N0 (-C_tau / ||z0||)``.
    """
    c = state0.c
    b0 = state0.b
    z0n = np.linalg.norm(state0.z, axis=1)
    sl = np.flatnonzero(labels == SLIDE)
    N0 = None
    if sl.size:
        co = regularize_sliding_rows(state0, sl, regularize=False)
        k = state0.dim - 1
        N0 = np.linalg.inv(np.eye(k) - co.M)

    def phi(lam, jump):
        st = state0.with_values(lam=lam, jump=jump)
        cn, ct = evaluate_complementarity(st)
        out = np.zeros((st.size, st.dim))
        op = labels == OPEN
        out[op] = st.lam[op]
        con = ~op
        out[con, 0] = -cn[con] / c
        s = labels == STICK
        out[s, 1:] = -ct[s] / (c * b0[s])[:, None]
        if sl.size:
            out[sl, 1:] = np.einsum("nij,nj->ni", N0, -ct[sl] / z0n[sl][:, None])
        return out

    return phi


def near_set_boundary(state: ContactState, guard: float = FD_GUARD) -> np.ndarray:
    """Subfaces whose classifying quantities are within ``guard`` of switching."""
    b = state.b
    zn = np.linalg.norm(state.z, axis=1)
    scale = np.maximum(np.maximum(np.abs(b), zn), np.abs(state.lam).max(initial=0.0) * state.friction)
    scale = np.maximum(scale, 1e-300)
    return (np.abs(b) <= guard * scale) | (np.abs(zn - b) <= guard * scale) | (zn <= guard * scale)


@dataclass
class FDReport:
    """Finite-difference audit of the assembled Newton operator.

    ``mismatch`` is the largest relative deviation over probes and row blocks; it is
    ``nan`` when the state is ``inconclusive`` (some subface near a set switch).
    """

    mismatch: float
    inconclusive: bool
    per_block: dict = field(default_factory=dict)
    labels: np.ndarray | None = None


def nonlinear_residual(disc: Discretization, state: TimeStepState, bc: BoundaryValues, phi, dt=None):
    """Residual of the balance equations and of ``phi`` on the contact rows."""
    dt = state.dt if dt is None else dt
    bb = assemble_biot_blocks(disc, dt)
    sys = assemble_global_system(disc, _identity_rows(disc), dt, bc, state)
    ru = bb.A @ state.u + bb.C @ state.lam - sys.b_u
    parts = [ru]
    if disc.with_flow:
        ru += bb.B @ state.p
        parts.append(bb.D @ state.u + bb.E @ state.p + bb.F @ state.lam - sys.b_p)
    if disc.n_lam:
        jump = disc.jump(state.u, state.p, state.lam, bc)
        parts.append(phi(state.lam, jump).ravel())
    return np.concatenate(parts)


def _identity_rows(disc):
    from fracbiot.contact import NewtonContactRows

    if disc.n_lam == 0:
        return None
    n, d = disc.pairing.size, disc.dim
    return NewtonContactRows(
        coef_lam=np.tile(np.eye(d), (n, 1, 1)),
        coef_jump=np.zeros((n, d, d)),
        rhs=np.zeros((n, d)),
        labels=np.zeros(n, dtype=np.int64),
    )


def fd_jacobian_check(
    disc: Discretization,
    state: TimeStepState,
    bc: BoundaryValues,
    config: NewtonConfig,
    num_probes: int = 4,
    step: float = 1e-6,
    seed: int = 0,
) -> FDReport:
    """Compare the assembled operator with central differences of the residual.

    Probes are random directions scaled per block by the state magnitude; the step
    is ``step`` times that scale. The contact rows are the unregularized ones, which
    are the exact Jacobian on each set.
    """
    labels = np.zeros(0, dtype=np.int64)
    dt = state.dt
    dyn = dt if config.dynamic else None
    jump_prev = disc.jump(state.u_prev, state.p_prev, state.lam_prev, state.bc_prev) if disc.n_lam else None
    phi = None
    rows = None
    if disc.n_lam:
        cs0 = disc.contact_state(state.u, state.p, state.lam, bc, jump_prev, config.c, dyn)
        labels = classify_subfaces(cs0)
        if np.any(near_set_boundary(cs0)):
            return FDReport(mismatch=float("nan"), inconclusive=True, labels=labels)
        rows = linearize_contact_rows(cs0, labels, regularize=False)
        phi = contact_function(cs0, labels)
    sys = assemble_global_system(disc, rows, dt, bc, state)
    M = sys.matrix()
    rng = np.random.default_rng(seed)
    sizes = {"u": disc.n_u, "p": disc.n_p, "lam": disc.n_lam}
    scales = {
        "u": max(np.abs(state.u).max(initial=0.0), 1e-12),
        "p": max(np.abs(state.p).max(initial=0.0), 1.0),
        "lam": max(np.abs(state.lam).max(initial=0.0), 1.0),
    }
    blocks = {"momentum": slice(0, disc.n_u), "mass": slice(disc.n_u, disc.n_u + disc.n_p),
              "contact": slice(disc.n_u + disc.n_p, disc.num_dofs)}
    worst = {k: 0.0 for k in blocks}
    for _ in range(num_probes):
        d = np.concatenate([rng.standard_normal(sizes[k]) * scales[k] for k in ("u", "p", "lam")])
        du, dp, dl = disc.split(d)

        def at(sgn):
            s = replace(state, u=state.u + sgn * step * du, p=state.p + sgn * step * dp,
                        lam=state.lam + sgn * step * dl)
            return nonlinear_residual(disc, s, bc, phi)

        if disc.n_lam:
            for sgn in (1, -1):
                sh = disc.contact_state(state.u + sgn * step * du, state.p + sgn * step * dp,
                                        state.lam + sgn * step * dl, bc, jump_prev, config.c, dyn)
                if np.any(classify_subfaces(sh) != labels):
                    return FDReport(mismatch=float("nan"), inconclusive=True, labels=labels)
        fd = (at(1) - at(-1)) / (2 * step)
        lin = M @ d
        for k, sl in blocks.items():
            ref = np.abs(lin[sl]).max(initial=0.0)
            if ref == 0:
                continue
            worst[k] = max(worst[k], float(np.abs(fd[sl] - lin[sl]).max() / ref))
    return FDReport(mismatch=max(worst.values()), inconclusive=False, per_block=worst, labels=labels)


# --------------------------------------------------------------------------------------
# Error reports


@dataclass
class ErrorReport:
    """Relative errors per domain and level, observed orders and audit maxima."""

    errors: dict = field(default_factory=dict)
    orders: dict = field(default_factory=dict)
    kkt_max: float = 0.0
    fd_max: float = 0.0

    def validate(self) -> None:
        vals = [v for e in self.errors.values() for v in np.atleast_1d(e)]
        vals += [self.kkt_max, self.fd_max]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ContractViolation("error report entries must be finite and non-negative")


def sample_contact_state(
    disc: Discretization,
    target: int,
    rng: np.random.Generator,
    lam_scale: float = 1.0,
    u_scale: float = 1e-6,
    dt: float = 1.0,
) -> TimeStepState:
    """Random state whose multipliers place every subface in ``target``.

    Multipliers are drawn in local coordinates: open ``lam_n > 0``; stick
    ``||lam_t|| <= 0.5 F |lam_n|``; slide ``||lam_t|| >= 2 F |lam_n|``. The jumps come
    from small random displacements, so the sets hold when ``c |[u]|`` is small
    compared with ``lam_scale``; callers check this with :func:`classify_subfaces`.
    """
    n, d = disc.pairing.size, disc.dim
    F = disc.friction
    mag = lam_scale * (1.0 + rng.random(n))
    dirs = rng.standard_normal((n, d - 1))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    if target == OPEN:
        lam_n = mag
        lam_t = lam_scale * rng.standard_normal((n, d - 1))
    elif target == STICK:
        lam_n = -mag
        lam_t = (0.5 * rng.random(n) * F * mag)[:, None] * dirs
    elif target == SLIDE:
        lam_n = -mag
        lam_t = ((2.0 + rng.random(n)) * F * mag)[:, None] * dirs
    else:
        raise ValueError(f"unknown set label {target}")
    lam = lam_n[:, None] * disc.pairing.normal + np.einsum("nij,nj->ni", disc.tangents, lam_t)
    state = disc.initial_state(dt=dt)
    return replace(
        state,
        u=u_scale * rng.standard_normal(disc.n_u),
        p=lam_scale * rng.standard_normal(disc.n_p),
        lam=lam.ravel(),
        jump_guess=None,
    )


# --------------------------------------------------------------------------------------
# Verification suite


@dataclass
class Check:
    """One verification metric against its tolerance."""

    name: str
    value: float
    tolerance: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.note})" if self.note else ""
        return f"{status} {self.name}: {self.value:.3e} (tolerance {self.tolerance:.1e}){extra}"


def _fd_discretization(dim: int):
    from fracbiot import generators as gen
    from fracbiot.mesh import build_mesh, pair_fracture_sides

    if dim == 2:
        raw = gen.rectangle(6, 6, pattern="crossed",
                            fractures={"f": gen.on_polyline([(1 / 6, 0.5), (5 / 6, 0.5)])})
    else:
        raw = gen.box(4, 4, 4, fractures={"f": gen.on_disc((0.5, 0.5, 0.5), (0.0, 0.0, 1.0), 0.3)})
    mesh = build_mesh(raw, ["f"])
    sg = build_subgrid(mesh)
    mat = MaterialField.homogeneous(mesh.num_cells, dim, mu=1.0, lam=1.0, alpha=0.8, c0=0.1, perm=1.0)
    return Discretization(mesh, sg, pair_fracture_sides(sg), mat, BoundaryTypes.all_dirichlet(sg), 0.5, True)


def fd_audit(dim: int, target: int, num_states: int, seed: int = 0, dynamic: bool = False,
             step: float = 1e-6) -> tuple[float, int]:
    """Largest FD mismatch over ``num_states`` sampled states in one set.

    Returns the mismatch and the number of inconclusive states (these are skipped).
    The contact parameter is small against the multipliers so the sampled sets hold.
    """
    disc = _fd_discretization(dim)
    cfg = NewtonConfig(c=1e-2, dynamic=dynamic)
    bc = BoundaryValues.zeros(disc.subgrid.num_subfaces, dim)
    rng = np.random.default_rng(seed)
    worst, skipped = 0.0, 0
    for i in range(num_states):
        st = sample_contact_state(disc, target, rng, dt=0.5)
        rep = fd_jacobian_check(disc, st, bc, cfg, step=step, seed=seed + i)
        if rep.inconclusive:
            skipped += 1
            continue
        worst = max(worst, rep.mismatch)
    return worst, skipped


def verification_suite(quick: bool = True) -> list[Check]:
    """Patch tests, the consolidation column, Jacobian probes and a KKT audit.

    ``quick`` uses fewer probe states and a coarser Example-1 mesh.
    """
    from fracbiot import generators as gen
    from fracbiot.assembly import final_contact_state
    from fracbiot.mesh import build_mesh
    from fracbiot.scenarios import preset, run_scenario

    checks = []
    for dim, n_int, nb in ((2, 90, 6), (3, 50, 4)):
        mesh = build_mesh(gen.scattered(dim, n_int, nb, seed=1))
        mat = MaterialField.homogeneous(mesh.num_cells, dim, mu=1.0, lam=1.0, perm=1.0)
        grad = np.eye(dim) + 0.3
        r = patch_test(mesh, mat, pressure_gradient=np.arange(1, dim + 1), displacement_gradient=grad)
        checks.append(Check(f"patch test {dim}d ({mesh.num_cells} cells)", r.max_error, 1e-10,
                            r.max_error <= 1e-10))

    cfg = preset("consolidation")
    f = terzaghi_field_of(cfg)
    T = 0.1 * f.H**2 / f.cv
    cmp_ = terzaghi_reference(cfg, times=[T])
    checks.append(Check("consolidation L2 pressure error at 0.1 H^2/c_v", float(cmp_.errors[0]), 0.02,
                        cmp_.errors[0] <= 0.02))
    checks.append(Check("consolidation first-step overshoot", cmp_.overshoot, 0.05, cmp_.overshoot <= 0.05))

    n_states = 3 if quick else 20
    names = {OPEN: "open", STICK: "stick", SLIDE: "slide"}
    for dim in (2, 3):
        for target, name in names.items():
            mism, skipped = fd_audit(dim, target, n_states, seed=target)
            checks.append(Check(f"FD Jacobian {dim}d {name}", mism, 1e-5, mism <= 1e-5 and skipped < n_states,
                                f"{skipped} inconclusive" if skipped else ""))

    cfg = preset("ex1", n=10 if quick else 20)
    res = run_scenario(cfg)
    cs = final_contact_state(res.problem.disc, res.state, res.bc, cfg.solver.config())
    k = kkt_residual(cs)
    checks.append(Check("KKT residual, Example 1", k.relative, 1e-8, k.passes()))
    return checks
