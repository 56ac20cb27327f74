import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracbiot.contact import (
    OPEN,
    SLIDE,
    STICK,
    ContactState,
    classify_subfaces,
    evaluate_complementarity,
    linearize_contact_rows,
    regularize_sliding_rows,
    set_counts,
    tangent_basis,
)
from fracbiot.errors import ContactConsistencyError, InvalidParameterError


def scalar_state(lam_t, lam_n, w, jump_n=0.0, gap=0.0, F=0.5, c=1.0, dim=2):
    """One subface with normal e_y; dynamic with dt = 1 so ``w`` is the jump."""
    normal = np.zeros((1, dim))
    normal[0, 1] = 1.0
    T = tangent_basis(normal)[0]
    lam = T @ np.atleast_1d(lam_t) + lam_n * normal[0]
    jump = T @ np.atleast_1d(w) + jump_n * normal[0]
    return ContactState.create(normal, gap, F, c, dt=1.0, lam=lam[None], jump=jump[None])


def random_states(rng, n, dim, kind):
    """Random states where every subface satisfies the Coulomb laws (C = 0)."""
    normal = rng.standard_normal((n, dim))
    normal /= np.linalg.norm(normal, axis=1)[:, None]
    T = tangent_basis(normal)
    F = rng.uniform(0.2, 1.0, n)
    c = 10.0 ** rng.uniform(-1, 2)
    gap = rng.uniform(0, 0.1, n)
    lam_n = np.zeros(n)
    jn = gap.copy()
    lt = np.zeros((n, dim - 1))
    w = np.zeros((n, dim - 1))
    if kind == "open":
        jn = gap - rng.uniform(0.01, 1.0, n)
    else:
        lam_n = -rng.uniform(0.5, 2.0, n)
        d = rng.standard_normal((n, dim - 1))
        d /= np.linalg.norm(d, axis=1)[:, None]
        if kind == "stick":
            lt = d * (rng.uniform(0.0, 0.9, n) * F * np.abs(lam_n))[:, None]
        else:
            lt = -d * (F * np.abs(lam_n))[:, None]
            w = d * rng.uniform(0.1, 2.0, n)[:, None]
    lam = np.einsum("nij,nj->ni", T, lt) + lam_n[:, None] * normal
    jump_prev = rng.standard_normal((n, dim))
    jump = jump_prev + np.einsum("nij,nj->ni", T, w)
    jump += (jn - np.einsum("ij,ij->i", jump, normal))[:, None] * normal
    return ContactState(lam, jump, jump_prev, gap, F, normal, T, c, dt=1.0)


class TestComplementarity:
    def test_open_converged(self):
        s = scalar_state(0.0, 0.0, 0.3, jump_n=-0.2)
        cn, ct = evaluate_complementarity(s)
        assert s.b[0] < 0
        assert cn[0] == 0 and np.all(ct == 0)

    def test_stick_converged(self):
        s = scalar_state(-0.2, -1.0, 0.0)
        cn, ct = evaluate_complementarity(s)
        assert np.allclose(cn, 0) and np.allclose(ct, 0)

    def test_tension_violation(self):
        s = scalar_state(0.0, 1.0, 0.0)
        cn, _ = evaluate_complementarity(s)
        assert cn[0] == -1.0

    @pytest.mark.parametrize("F", [0.0, -0.3])
    def test_nonpositive_friction(self, F):
        s = scalar_state(0.0, -1.0, 0.0, F=F)
        with pytest.raises(InvalidParameterError):
            evaluate_complementarity(s)
        with pytest.raises(InvalidParameterError):
            linearize_contact_rows(s)

    @pytest.mark.parametrize("kind", ["open", "stick", "slide"])
    @pytest.mark.parametrize("dim", [2, 3])
    def test_vanishes_on_solutions(self, kind, dim, rng):
        s = random_states(rng, 20, dim, kind)
        cn, ct = evaluate_complementarity(s)
        scale = np.abs(s.lam).max() + s.c
        assert np.abs(cn).max() <= 1e-12 * scale
        assert np.abs(ct).max() <= 1e-12 * scale**2


class TestClassification:
    def test_open(self):
        s = scalar_state(0.0, 0.0, 0.0, jump_n=-0.2)
        assert np.isclose(s.b[0], -0.1)
        assert classify_subfaces(s)[0] == OPEN

    def test_stick(self):
        s = scalar_state(-0.2, -1.0, 0.0)
        assert np.isclose(s.b[0], 0.5)
        assert classify_subfaces(s)[0] == STICK

    def test_slide(self):
        s = scalar_state(-0.4, -1.0, 0.1)
        assert classify_subfaces(s)[0] == SLIDE

    def test_tie_goes_to_slide(self):
        s = scalar_state(-0.5, -1.0, 0.0)
        assert np.linalg.norm(s.z) == s.b[0]
        assert classify_subfaces(s)[0] == SLIDE

    @given(st.integers(0, 10_000), st.sampled_from([2, 3]))
    def test_partition(self, seed, dim):
        rng = np.random.default_rng(seed)
        n = 30
        normal = rng.standard_normal((n, dim))
        normal /= np.linalg.norm(normal, axis=1)[:, None]
        s = ContactState.create(normal, rng.uniform(0, 0.1, n), rng.uniform(0.1, 1, n), 10.0 ** rng.uniform(-2, 2),
                                dt=1.0, lam=rng.standard_normal((n, dim)),
                                jump=0.1 * rng.standard_normal((n, dim)))
        labels = classify_subfaces(s)
        counts = set_counts(labels)
        assert sum(counts.values()) == n
        assert np.all(np.isin(labels, [OPEN, STICK, SLIDE]))
        b, zn = s.b, np.linalg.norm(s.z, axis=1)
        assert np.all(b[labels == OPEN] <= 0)
        assert np.all(zn[labels == STICK] < b[labels == STICK])
        assert np.all((zn >= b)[labels == SLIDE] & (b > 0)[labels == SLIDE])

    def test_embedding_3d(self, rng):
        """A 2d state embedded in 3d with zero out-of-plane components keeps its labels."""
        for _ in range(20):
            lt, ln, w, jn = rng.uniform(-1, 1), rng.uniform(-1, 0.2), rng.uniform(-0.5, 0.5), rng.uniform(-0.2, 0.1)
            s2 = scalar_state(lt, ln, w, jump_n=jn)
            s3 = scalar_state([lt, 0.0], ln, [w, 0.0], jump_n=jn, dim=3)
            assert classify_subfaces(s2)[0] == classify_subfaces(s3)[0]
            c2 = evaluate_complementarity(s2)
            c3 = evaluate_complementarity(s3)
            assert np.isclose(c2[0][0], c3[0][0])
            assert np.isclose(c2[1][0, 0], c3[1][0, 0]) and c3[1][0, 1] == 0


class TestRows:
    def test_slide_scalar_example(self):
        s = scalar_state(-0.4, -1.0, 0.1)
        co = regularize_sliding_rows(s, regularize=False)
        assert np.isclose(co.Q[0, 0, 0], 0.8)
        assert np.isclose(co.e[0], 1.0)
        assert np.isclose(co.M[0, 0, 0], 0.2)
        assert np.isclose(co.L[0, 0, 0], 0.25)
        assert np.isclose(co.v[0, 0], 1.25)
        assert np.isclose(co.r[0, 0], -0.5)
        rows = linearize_contact_rows(s, regularize=False)
        assert rows.labels[0] == SLIDE
        # tangential row: lam_t + 0.25 [u']_t - 0.625 lam_n + 0.625 ([u]_n - g) = 0.125
        assert np.allclose(rows.coef_lam[0, 1], [1.0, -0.625])
        assert np.allclose(rows.coef_jump[0, 1], [0.25, 0.625])
        assert np.isclose(rows.rhs[0, 1], 0.125)
        assert np.allclose(rows.coef_jump[0, 0], [0.0, 1.0]) and rows.rhs[0, 0] == 0.0

    def test_slide_regularization_inactive(self):
        s = scalar_state(-0.4, -1.0, 0.1)
        a = regularize_sliding_rows(s, regularize=True)
        b = regularize_sliding_rows(s, regularize=False)
        assert a.alpha[0] == 1.0 and a.beta[0] == 1.0
        assert np.allclose(a.Q, b.Q) and np.allclose(a.L, b.L)

    def test_stick_row_zero_velocity(self):
        s = scalar_state(-0.2, -1.0, 0.0)
        rows = linearize_contact_rows(s)
        assert rows.labels[0] == STICK
        # [u']_t = 0 at the next iterate
        assert np.allclose(rows.coef_jump[0, 1], [1.0, 0.0])
        assert np.allclose(rows.coef_lam[0, 1], 0.0)
        assert np.isclose(rows.rhs[0, 1], 0.0)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_open_row(self, dim, rng):
        s = random_states(rng, 5, dim, "open")
        rows = linearize_contact_rows(s)
        assert np.all(rows.labels == OPEN)
        assert np.allclose(rows.coef_lam, np.eye(dim)) and np.all(rows.coef_jump == 0) and np.all(rows.rhs == 0)

    def test_zero_z_on_slide(self):
        s = scalar_state(0.0, -1.0, 0.0)
        with pytest.raises(ContactConsistencyError):
            linearize_contact_rows(s, labels=np.array([SLIDE]))

    @pytest.mark.parametrize("kind", ["stick", "slide"])
    @pytest.mark.parametrize("dim", [2, 3])
    @pytest.mark.parametrize("regularize", [True, False])
    def test_fixed_point(self, kind, dim, regularize, rng):
        s = random_states(rng, 25, dim, kind)
        rows = linearize_contact_rows(s, regularize=regularize)
        assert np.all(rows.labels == (STICK if kind == "stick" else SLIDE))
        res = rows.residual(s.lam, s.jump)
        scale = np.abs(rows.rhs).max() + np.abs(s.lam).max()
        assert np.abs(res).max() <= 1e-12 * scale

    def test_fixed_point_static(self, rng):
        s = random_states(rng, 10, 3, "slide")
        s = ContactState(s.lam, s.jump - s.jump_prev, s.jump_prev, s.gap, s.friction, s.normal,
                         s.tangents, s.c, dt=None)
        s.jump += (s.gap - s.jump_n)[:, None] * s.normal
        rows = linearize_contact_rows(s)
        assert np.abs(rows.residual(s.lam, s.jump)).max() <= 1e-10


class TestRegularization:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_L_positive_semidefinite(self, dim, rng):
        """Eigenvalues of the regularized Robin weight have nonnegative real part."""
        n = 400
        normal = rng.standard_normal((n, dim))
        normal /= np.linalg.norm(normal, axis=1)[:, None]
        c = 10.0 ** rng.uniform(-2, 2)
        s = ContactState.create(normal, 0.0, rng.uniform(0.1, 1, n), c, dt=1.0,
                                lam=3 * rng.standard_normal((n, dim)), jump=5 * rng.standard_normal((n, dim)) / c)
        idx = np.flatnonzero(classify_subfaces(s) == SLIDE)
        assert idx.size > 50
        co = regularize_sliding_rows(s, idx, regularize=True)
        eig = np.linalg.eigvals(co.L).real
        assert eig.min() >= -1e-10 * s.c
        violating = np.linalg.norm(s.lam_t[idx], axis=1) > s.b[idx]
        assert violating.any()
        # lam_t parallel to z makes the weight vanish in that direction
        strict = violating & (co.alpha < 1 - 1e-8)
        assert strict.any()
        assert np.all(eig[strict].min(axis=1) >= s.c * 1e-12)

    def test_violation_changes_Q(self):
        s = scalar_state(-0.8, -1.0, 0.1)
        a = regularize_sliding_rows(s, regularize=True)
        b = regularize_sliding_rows(s, regularize=False)
        assert not np.allclose(a.Q, b.Q)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_colinear_gives_unit_beta(self, dim, rng):
        s = random_states(rng, 20, dim, "slide")
        co = regularize_sliding_rows(s)
        assert np.all(co.alpha >= 0) and np.all(co.beta == 1.0)

    def test_delta_cap_at_zero_bound(self):
        s = scalar_state(-0.3, 0.0, 0.2)
        co = regularize_sliding_rows(s, regularize=True)
        assert co.delta[0] == 1.0 and np.isfinite(co.L).all()


def test_tangent_basis_orthonormal(rng):
    for d in (2, 3):
        nrm = rng.standard_normal((50, d))
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        T = tangent_basis(nrm)
        assert np.allclose(np.einsum("nij,nik->njk", T, T), np.eye(d - 1))
        assert np.allclose(np.einsum("nij,ni->nj", T, nrm), 0)
