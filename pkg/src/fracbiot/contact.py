"""Complementarity functions, active sets and semismooth Newton rows for frictional
contact on fracture subfaces.

All quantities live on positive subfaces. Multipliers ``lam`` and jumps ``jump`` are
stored in global coordinates; normal and tangential parts use the contact normal and a
fixed orthonormal tangential basis per subface (:func:`tangent_basis`).

The tangential variable ``w`` is the jump velocity ``T^T ([u] - [u]^i) / dt`` in
dynamic mode and the tangential jump ``T^T [u]`` in static mode.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from fracbiot.errors import ContactConsistencyError, ContractViolation, InvalidParameterError

OPEN = 0
STICK = 1
SLIDE = 2
LABEL_NAMES = {OPEN: "open", STICK: "stick", SLIDE: "slide"}

# e = b / ||z|| is capped here when I - beta M would otherwise be singular; this
# only happens on the stick/slide boundary with lam_t orthogonal to z
E_MAX = 1.0 - 1e-10


def tangent_basis(normals: np.ndarray) -> np.ndarray:
    """Orthonormal tangential basis ``(n, d, d - 1)`` for unit ``normals`` ``(n, d)``.

    The axis where ``|n_i|`` is smallest (lowest index on ties) is orthogonalized
    against ``n``; in 3d the second vector is ``n x t1``.
    """
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    n, d = normals.shape
    T = np.zeros((n, d, d - 1))
    if n == 0:
        return T
    ax = np.argmin(np.abs(normals), axis=1)
    e = np.zeros((n, d))
    e[np.arange(n), ax] = 1.0
    t1 = e - np.einsum("ij,ij->i", e, normals)[:, None] * normals
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    T[:, :, 0] = t1
    if d == 3:
        T[:, :, 1] = np.cross(normals, t1)
    return T


@dataclass
class ContactState:
    """Contact variables on the positive subfaces.

    Attributes:
        lam: multipliers ``(n, d)`` [Pa].
        jump: displacement jumps ``(n, d)`` [m].
        jump_prev: jumps at the previous time step ``(n, d)``; used in dynamic mode.
        gap: initial gap ``(n,)`` [m].
        friction: friction coefficient ``(n,)``.
        normal: contact normal ``(n, d)``.
        tangents: tangential basis ``(n, d, d - 1)``.
        c: numerical parameter [Pa/m].
        dt: time step in dynamic mode, ``None`` for the static friction law.
    """

    lam: np.ndarray
    jump: np.ndarray
    jump_prev: np.ndarray
    gap: np.ndarray
    friction: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray
    c: float
    dt: float | None = None

    def __post_init__(self):
        n, d = np.shape(self.normal)
        self.lam = np.asarray(self.lam, dtype=float).reshape(n, d)
        self.jump = np.asarray(self.jump, dtype=float).reshape(n, d)
        self.jump_prev = np.asarray(self.jump_prev, dtype=float).reshape(n, d)
        self.gap = np.broadcast_to(np.asarray(self.gap, dtype=float), (n,))
        self.friction = np.broadcast_to(np.asarray(self.friction, dtype=float), (n,))
        if self.tangents.shape != (n, d, d - 1):
            raise ContractViolation("tangent basis has the wrong shape")

    @classmethod
    def create(cls, normal, gap, friction, c, dt=None, lam=None, jump=None, jump_prev=None):
        normal = np.atleast_2d(np.asarray(normal, dtype=float))
        n, d = normal.shape
        z = np.zeros((n, d))
        return cls(
            lam=z if lam is None else lam,
            jump=z if jump is None else jump,
            jump_prev=z if jump_prev is None else jump_prev,
            gap=gap,
            friction=friction,
            normal=normal,
            tangents=tangent_basis(normal),
            c=float(c),
            dt=dt,
        )

    def with_values(self, lam=None, jump=None) -> "ContactState":
        return replace(
            self,
            lam=self.lam if lam is None else lam,
            jump=self.jump if jump is None else jump,
        )

    @property
    def size(self) -> int:
        return self.normal.shape[0]

    @property
    def dim(self) -> int:
        return self.normal.shape[1]

    @property
    def dynamic(self) -> bool:
        return self.dt is not None

    @property
    def lam_n(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.lam, self.normal)

    @property
    def lam_t(self) -> np.ndarray:
        """Tangential multiplier in tangent-basis coordinates ``(n, d - 1)``."""
        return np.einsum("ijk,ij->ik", self.tangents, self.lam)

    @property
    def jump_n(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.jump, self.normal)

    @property
    def jump_t(self) -> np.ndarray:
        return np.einsum("ijk,ij->ik", self.tangents, self.jump)

    @property
    def slip_scale(self) -> float:
        """Factor turning a tangential jump increment into ``w``."""
        return 1.0 / self.dt if self.dynamic else 1.0

    @property
    def w(self) -> np.ndarray:
        """Tangential velocity (dynamic) or tangential jump (static)."""
        if self.dynamic:
            inc = self.jump - self.jump_prev
            return np.einsum("ijk,ij->ik", self.tangents, inc) / self.dt
        return self.jump_t

    @property
    def b(self) -> np.ndarray:
        """Friction bound ``F (-lam_n + c ([u]_n - g))``."""
        return self.friction * (-self.lam_n + self.c * (self.jump_n - self.gap))

    @property
    def z(self) -> np.ndarray:
        """``-lam_t + c w``."""
        return -self.lam_t + self.c * self.w


def _check_params(state: ContactState):
    if np.any(state.friction <= 0):
        raise InvalidParameterError("friction coefficient must be positive")
    if state.c <= 0:
        raise InvalidParameterError("numerical parameter c must be positive")
    if state.dynamic and state.dt <= 0:
        raise InvalidParameterError("time step must be positive")


def evaluate_complementarity(state: ContactState) -> tuple[np.ndarray, np.ndarray]:
    """Normal and tangential complementarity functions ``(C_n, C_tau)``.

    ``C_n`` has shape ``(n,)`` and ``C_tau`` shape ``(n, d - 1)``; both vanish iff
    non-penetration and Coulomb friction hold.
    """
    _check_params(state)
    b = state.b
    bp = np.maximum(b, 0.0)
    cn = -state.lam_n - bp / state.friction
    z = state.z
    zn = np.linalg.norm(z, axis=1)
    ct = np.maximum(b, zn)[:, None] * (-state.lam_t) - bp[:, None] * z
    return cn, ct


def classify_subfaces(state: ContactState) -> np.ndarray:
    """Active-set labels (``OPEN``, ``STICK``, ``SLIDE``) per subface.

    Ties ``||z|| = b > 0`` are labelled ``SLIDE``.
    """
    b = state.b
    zn = np.linalg.norm(state.z, axis=1)
    labels = np.full(state.size, SLIDE, dtype=np.int64)
    labels[zn < b] = STICK
    labels[~(b > 0)] = OPEN
    return labels


@dataclass
class SlidingCoefficients:
    """Per-subface quantities of the sliding linearization (arrays over subfaces)."""

    Q: np.ndarray
    e: np.ndarray
    M: np.ndarray
    L: np.ndarray
    v: np.ndarray
    r: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    beta: np.ndarray


def regularize_sliding_rows(state: ContactState, idx=None, regularize: bool = True) -> SlidingCoefficients:
    """Sliding-row matrices for the subfaces ``idx`` (default: all).

    With ``regularize`` the regularized ``Q``, ``beta`` and ``L`` are returned; else
    the plain Newton quantities (``beta = 1``).

    Raises:
        ContactConsistencyError: if ``||z|| = 0`` on a requested subface.
    """
    _check_params(state)
    idx = np.arange(state.size) if idx is None else np.asarray(idx, dtype=np.int64)
    k = state.dim - 1
    lt = state.lam_t[idx]
    z = state.z[idx]
    b = state.b[idx]
    zn = np.linalg.norm(z, axis=1)
    if np.any(zn == 0):
        raise ContactConsistencyError("sliding subface with ||-lam_t + c w|| = 0")
    ltn = np.linalg.norm(lt, axis=1)
    e = b / zn
    I = np.eye(k)
    if regularize:
        denom = np.maximum(b, ltn)
    else:
        denom = b
    Q = np.einsum("ni,nj->nij", -lt, z) / (denom * zn)[:, None, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.where(ltn > 0, np.einsum("ni,ni->n", -lt, z) / (ltn * zn), 0.0)
        delta = np.minimum(np.where(b > 0, ltn / b, 1.0), 1.0)
    if regularize:
        with np.errstate(divide="ignore"):
            beta = np.where(alpha < 0, 1.0 / (1.0 - alpha * delta), 1.0)
    else:
        beta = np.ones_like(alpha)
    M = e[:, None, None] * (I - Q)
    Ninv = I - beta[:, None, None] * M
    sing = np.abs(np.linalg.det(Ninv)) < 1e-10
    if np.any(sing):
        e = np.where(sing, np.minimum(e, E_MAX), e)
        M = e[:, None, None] * (I - Q)
        Ninv = I - beta[:, None, None] * M
    N = np.linalg.inv(Ninv)
    L = state.c * (N - I)
    zhat = z / zn[:, None]
    v = np.einsum("nij,nj->ni", N, zhat)
    r = -np.einsum("nij,nj->ni", N, e[:, None] * np.einsum("nij,nj->ni", Q, z))
    return SlidingCoefficients(Q=Q, e=e, M=M, L=L, v=v, r=r, alpha=alpha, delta=delta, beta=beta)


@dataclass
class NewtonContactRows:
    """Linearized contact equations per positive subface.

    Row block ``s`` reads ``coef_lam[s] @ lam_s + coef_jump[s] @ [u]_s = rhs[s]`` in
    global coordinates; row 0 is the normal equation.
    """

    coef_lam: np.ndarray
    coef_jump: np.ndarray
    rhs: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.labels.size

    def residual(self, lam: np.ndarray, jump: np.ndarray) -> np.ndarray:
        n, d = self.rhs.shape
        lam = np.asarray(lam).reshape(n, d)
        jump = np.asarray(jump).reshape(n, d)
        return (
            np.einsum("nij,nj->ni", self.coef_lam, lam)
            + np.einsum("nij,nj->ni", self.coef_jump, jump)
            - self.rhs
        )


def linearize_contact_rows(
    state: ContactState, labels: np.ndarray | None = None, regularize: bool = True
) -> NewtonContactRows:
    """Semismooth Newton rows for the next iterate.

    Open subfaces get ``lam = 0``. Contact subfaces get ``[u]_n = g`` and the
    tangential linearization of ``C_tau``; the friction bound is linearized in both
    ``lam_n`` and ``[u]_n``.
    """
    _check_params(state)
    if labels is None:
        labels = classify_subfaces(state)
    labels = np.asarray(labels)
    n, d = state.size, state.dim
    T = state.tangents
    nrm = state.normal
    F = state.friction
    c = state.c
    g = state.gap
    sw = state.slip_scale
    b = state.b
    w = state.w
    # constant part of w at the next iterate: w = sw T^T [u] - w0
    w0 = sw * np.einsum("ijk,ij->ik", T, state.jump_prev) if state.dynamic else np.zeros((n, d - 1))
    TT = np.swapaxes(T, 1, 2)
    coef_lam = np.zeros((n, d, d))
    coef_jump = np.zeros((n, d, d))
    rhs = np.zeros((n, d))

    op = labels == OPEN
    coef_lam[op] = np.eye(d)

    contact = ~op
    coef_jump[contact, 0, :] = nrm[contact]
    rhs[contact, 0] = g[contact]

    st = np.flatnonzero(labels == STICK)
    if st.size:
        fw = (F[st] / b[st])[:, None] * w[st]
        coef_jump[st, 1:, :] = sw * TT[st] + c * np.einsum("ni,nj->nij", fw, nrm[st])
        coef_lam[st, 1:, :] = -np.einsum("ni,nj->nij", fw, nrm[st])
        rhs[st, 1:] = w[st] + c * g[st][:, None] * fw + w0[st]

    sl = np.flatnonzero(labels == SLIDE)
    if sl.size:
        co = regularize_sliding_rows(state, sl, regularize=regularize)
        fv = F[sl][:, None] * co.v
        coef_lam[sl, 1:, :] = TT[sl] - np.einsum("ni,nj->nij", fv, nrm[sl])
        coef_jump[sl, 1:, :] = sw * np.einsum("nij,njk->nik", co.L, TT[sl]) + c * np.einsum(
            "ni,nj->nij", fv, nrm[sl]
        )
        rhs[sl, 1:] = (
            co.r
            + b[sl][:, None] * co.v
            + c * g[sl][:, None] * fv
            + np.einsum("nij,nj->ni", co.L, w0[sl])
        )
    return NewtonContactRows(coef_lam=coef_lam, coef_jump=coef_jump, rhs=rhs, labels=labels)


def set_counts(labels: np.ndarray) -> dict[str, int]:
    return {name: int(np.count_nonzero(labels == k)) for k, name in LABEL_NAMES.items()}
