import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracbiot.assembly import BoundaryValues, NewtonConfig
from fracbiot.contact import OPEN, SLIDE, STICK, ContactState, classify_subfaces, tangent_basis
from fracbiot.errors import ContractViolation
from fracbiot.oracle import (
    FD_GUARD,
    SERIES_RTOL,
    ErrorReport,
    TerzaghiField,
    fd_audit,
    fd_jacobian_check,
    kkt_residual,
    near_set_boundary,
    sample_contact_state,
    terzaghi_field_of,
    terzaghi_reference,
    _fd_discretization,
)
from fracbiot.scenarios import preset

from conftest import make_disc
from test_assembly import unfractured_disc


def one(lam, jump, gap=0.0, F=0.5, c=1.0):
    normal = np.array([[0.0, 1.0]])
    return ContactState.create(normal, gap, F, c, dt=1.0, lam=np.atleast_2d(lam), jump=np.atleast_2d(jump))


class TestKKT:
    def test_open(self):
        r = kkt_residual(one([0.0, 0.0], [0.3, -0.2]))
        assert r.max == 0.0

    def test_stick(self):
        r = kkt_residual(one([-0.2, -1.0], [0.0, 0.0]))
        assert r.max == 0.0

    def test_tension(self):
        r = kkt_residual(one([0.0, 1.0], [0.0, 0.0]))
        assert r.max >= 1.0
        assert not r.passes()

    def test_penetration_and_slip_without_bound(self):
        assert kkt_residual(one([0.0, -1.0], [0.0, 0.1])).components["penetration"][0] == pytest.approx(0.1)
        # sliding with a traction below the bound violates the direction condition
        r = kkt_residual(one([-0.2, -1.0], [0.1, 0.0]))
        assert r.components["direction"][0] > 0

    def test_converged_sliding(self):
        # lam_t = -F |lam_n| along the slip direction
        r = kkt_residual(one([-0.5, -1.0], [0.2, 0.0]))
        assert r.max <= 1e-15

    def test_scale(self):
        r = kkt_residual(one([0.0, 1e-3], [0.0, 0.0]))
        assert r.scale == 1.0


class TestTerzaghi:
    field = TerzaghiField(H=1.0, w=4.5e6, mu=4e9 / 2.4, lam=4e9 * 0.2 / (1.2 * 0.6), alpha=1.0, c0=1e-10,
                          perm=1e-8)

    def test_p0_value(self):
        M = 4e9 * 0.8 / (1.2 * 0.6)
        assert np.isclose(self.field.modulus, M)
        assert np.isclose(self.field.p0, 4.5e6 / (1e-10 * M + 1.0))

    def test_first_step_matches_p0(self):
        cfg = preset("consolidation", cells=20, steps=1)
        cmp_ = terzaghi_reference(cfg)
        assert abs(cmp_.first_step_max / cmp_.p0 - 1) < 0.05
        assert cmp_.overshoot <= 0.05

    def test_drained_limit(self):
        y = np.linspace(0, 1, 11)
        t = 50 * self.field.H**2 / self.field.cv
        assert np.abs(self.field.pressure(y, t)).max() < 1e-12 * self.field.p0
        u_inf = -self.field.w * y / self.field.modulus
        assert np.allclose(self.field.displacement(y, t), u_inf, rtol=1e-10, atol=1e-20)

    def test_decoupled(self):
        f = TerzaghiField(1.0, 1e6, 1.0, 1.0, 0.0, 1e-3, 1.0)
        assert f.p0 == 0.0
        assert np.all(f.pressure(np.linspace(0, 1, 5), 0.1) == 0)
        assert np.allclose(f.strain(0.3, 0.1), -1e6 / 3.0)

    @pytest.mark.parametrize("tau", [1e-4, 1e-2, 0.3, 2.0])
    def test_self_consistency(self, tau, rng):
        f = self.field
        t = tau * f.H**2 / f.cv
        y = rng.uniform(0.05, 0.95, 20)
        h = 1e-6
        assert np.allclose(f.total_stress(y, t), -f.w, rtol=1e-12)
        du = (f.displacement(y + h, t) - f.displacement(y - h, t)) / (2 * h)
        assert np.allclose(du, f.strain(y, t), rtol=1e-6, atol=1e-9 * f.w / f.modulus)
        dp = (f.pressure(y + h, t) - f.pressure(y - h, t)) / (2 * h)
        assert np.allclose(f.flux(y, t), -f.perm * dp, rtol=1e-5, atol=1e-8 * f.perm * f.p0)
        assert np.allclose(f.pressure(f.H, t), 0.0, atol=1e-12 * f.p0)
        assert np.allclose(f.flux(0.0, t), 0.0, atol=1e-10 * f.perm * f.p0)

    def test_series_truncation(self):
        f = self.field
        t = 1e-3 * f.H**2 / f.cv
        M, amp = f._terms(t)
        nxt = M[-1] + np.pi
        tau = f.cv * t / f.H**2
        assert np.all(amp >= SERIES_RTOL * f.p0)
        assert 2 * f.p0 / nxt * np.exp(-nxt**2 * tau) < SERIES_RTOL * f.p0

    def test_early_time_undrained(self):
        f = self.field
        t = 1e-6 * f.H**2 / f.cv
        assert np.isclose(f.pressure(0.5, t), f.p0, rtol=1e-10)

    def test_rejects_non_column(self):
        with pytest.raises(ContractViolation):
            terzaghi_field_of(preset("ex3"))

    @settings(max_examples=4)
    @given(st.floats(0.0, 0.4), st.floats(1e-11, 1e-9), st.floats(0.5, 1.0))
    def test_joint_refinement_monotone(self, nu, c0, alpha):
        errs = []
        for n in (10, 20, 40):
            base = preset("consolidation", cells=n, nu=nu, c0=c0, alpha=alpha, steps=1)
            f = terzaghi_field_of(base)
            T = 0.05 * f.H**2 / f.cv
            cfg = preset("consolidation", cells=n, nu=nu, c0=c0, alpha=alpha, dt=T / (n // 5), steps=n // 5)
            errs.append(terzaghi_reference(cfg, times=[T]).errors[0])
        assert errs[0] > errs[1] > errs[2]


class TestJacobian:
    def test_linear_flow_only(self):
        disc = unfractured_disc(2)
        st0 = disc.initial_state(dt=0.5)
        rng = np.random.default_rng(0)
        st0.u[:] = rng.standard_normal(disc.n_u)
        st0.p[:] = rng.standard_normal(disc.n_p)
        # the residual is linear, so a large step avoids cancellation
        rep = fd_jacobian_check(disc, st0, BoundaryValues.zeros(disc.subgrid.num_subfaces, 2), NewtonConfig(),
                                step=1e-2)
        assert not rep.inconclusive and rep.mismatch < 1e-10

    @pytest.mark.parametrize("dim", [2, 3])
    def test_open_linear(self, dim):
        worst, skipped = fd_audit(dim, OPEN, 2, step=1e-2)
        assert skipped == 0 and worst < 1e-10

    @pytest.mark.parametrize("dim", [2, 3])
    @pytest.mark.parametrize("target", [STICK, SLIDE])
    def test_smooth_sets(self, dim, target):
        worst, skipped = fd_audit(dim, target, 2, seed=3)
        assert skipped < 2 and worst < 1e-5

    def test_dynamic_slide(self):
        worst, skipped = fd_audit(2, SLIDE, 2, dynamic=True)
        assert skipped < 2 and worst < 1e-5

    @pytest.mark.parametrize("target", [OPEN, STICK, SLIDE])
    def test_sampling_hits_target(self, target, rng):
        disc = _fd_discretization(2)
        st0 = sample_contact_state(disc, target, rng, dt=0.5)
        bc = BoundaryValues.zeros(disc.subgrid.num_subfaces, 2)
        jp = np.zeros((disc.pairing.size, 2))
        cs = disc.contact_state(st0.u, st0.p, st0.lam, bc, jp, 1e-2)
        assert np.all(classify_subfaces(cs) == target)

    def test_guard_band(self):
        s = one([-0.5 * (1 - 1e-9), -1.0], [0.0, 0.0])
        assert near_set_boundary(s)[0]
        assert not near_set_boundary(one([-0.2, -1.0], [0.0, 0.0]))[0]
        assert FD_GUARD == 1e-6

    def test_inconclusive_near_boundary(self):
        disc = make_disc(2)
        st0 = disc.initial_state(lam_n=0.0)
        st0.jump_guess = None
        rep = fd_jacobian_check(disc, st0, BoundaryValues.zeros(disc.subgrid.num_subfaces, 2), NewtonConfig(c=1.0))
        assert rep.inconclusive and np.isnan(rep.mismatch)


class TestErrorReport:
    def test_valid(self):
        ErrorReport(errors={"u": [0.1, 0.05]}, orders={"u": [1.0]}, kkt_max=0.0, fd_max=1e-9).validate()

    @pytest.mark.parametrize("bad", [np.nan, -1.0, np.inf])
    def test_invalid(self, bad):
        with pytest.raises(ContractViolation):
            ErrorReport(errors={"u": [0.1, bad]}).validate()
