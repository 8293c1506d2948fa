import numpy as np
import pytest

from ahxray.connection import hat_field
from ahxray.errors import DegenerateDirectionError, ExcludedGeodesicError
from ahxray.families import ScalarRFamily
from ahxray.geodesic import (
    convexity_scan,
    exit_times,
    exp_batch,
    exp_map,
    integrate,
    inverse_exp,
    inverse_exp_batch,
    inverse_exp_jacobian_fd,
    locality_check,
    reparametrize,
)
from ahxray.geometry import BoundaryPatch, ProjectiveModel


def closed_form_hyperbolic(z0, v0, tau):
    """r = r0 + lam tau - |w|^2 tau^2, y = y0 + w tau."""
    tau = np.asarray(tau, dtype=float)
    lam, w = v0[0], v0[1:]
    r = z0[0] + lam * tau - np.sum(w * w) * tau**2
    y = z0[1:] + np.outer(tau, w)
    return np.concatenate([r[:, None], y], axis=1)


class TestIntegrate:
    def test_hyperbolic_closed_form(self, hyperbolic_field):
        z0 = np.array([0.05, 0.02, -0.01])
        v0 = np.array([0.03, 0.4, -0.2])
        path = integrate(hyperbolic_field, z0, v0, (-0.25, 0.25))
        taus = np.linspace(-0.25, 0.25, 41)
        expected = closed_form_hyperbolic(z0, v0, taus)
        assert np.max(np.abs(path.z_of(taus) - expected)) < 1e-9

    def test_normal_direction_runs_straight(self, hyperbolic_field):
        path = integrate(hyperbolic_field, [0.05, 0.0, 0.0], [0.1, 0.0, 0.0], (0.0, 1.0))
        z = path.z_of(1.0)
        assert np.allclose(z, [0.15, 0.0, 0.0], atol=1e-12)

    def test_boundary_tangent_never_reenters(self, hyperbolic_field):
        path = integrate(hyperbolic_field, [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], (-0.5, 0.5))
        taus = np.linspace(-0.4, 0.4, 101)
        assert np.all(path.z_of(taus)[:, 0] <= 1e-14)

    def test_zero_velocity_rejected(self, hyperbolic_field):
        with pytest.raises(DegenerateDirectionError):
            integrate(hyperbolic_field, [0.1, 0, 0], [0.0, 0.0, 0.0])

    def test_affine_reparametrization_invariance(self, hyperbolic_field, n5_field):
        for fld in (hyperbolic_field, n5_field):
            z0 = np.array([0.04, 0.05, 0.0])
            v0 = np.array([0.02, 0.5, 0.1])
            a = 2.5
            p1 = integrate(fld, z0, v0, (-0.4, 0.4))
            p2 = integrate(fld, z0, a * v0, (-0.4 / a, 0.4 / a))
            taus = np.linspace(-0.35, 0.35, 31)
            assert np.max(np.abs(p1.z_of(taus) - p2.z_of(taus / a))) < 1e-9

    def test_ode_residual_small(self, n5_field):
        path = integrate(n5_field, [0.03, 0.1, 0.0], [0.01, 0.6, -0.3], (-0.4, 0.4))
        assert path.ode_residual() < 1e-6

    def test_regularized_matches_direct_away_from_zero(self, n5_model, n5_field):
        direct = hat_field(n5_model)
        assert direct.regularity_tag == "direct"
        z0, v0 = np.array([0.06, 0.05, 0.0]), np.array([0.01, 0.5, 0.2])
        p_reg = integrate(n5_field, z0, v0, (0.0, 0.35))
        p_dir = integrate(direct, z0, v0, (0.0, 0.35))
        assert np.max(np.abs(p_reg.z_of(0.35) - p_dir.z_of(0.35))) < 1e-7

    def test_regularized_stable_across_zero(self, n5_field):
        z0, v0 = np.array([0.01, 0.05, 0.0]), np.array([0.0, 1.0, 0.0])
        path = integrate(n5_field, z0, v0, (-0.5, 0.5))
        ref = integrate(n5_field, z0, v0, (-0.5, 0.5), tol=1e-12, atol=1e-14)
        taus = np.linspace(-0.45, 0.45, 41)
        assert np.max(np.abs(path.z_of(taus) - ref.z_of(taus))) < 1e-8


class TestExitTimes:
    def test_interior_start_parabola_roots(self, hyperbolic_field):
        path = integrate(hyperbolic_field, [0.01, 0, 0], [0.0, 1.0, 0.0], (-0.5, 0.5))
        et = exit_times(path)
        assert et.tau_minus == pytest.approx(-0.1, abs=1e-11)
        assert et.tau_plus == pytest.approx(0.1, abs=1e-11)
        assert not et.tangent

    def test_boundary_start_inward(self, hyperbolic_field):
        path = integrate(hyperbolic_field, [0.0, 0, 0], [1.0, 1.0, 0.0], (-0.5, 1.5))
        et = exit_times(path)
        assert et.tau_minus == pytest.approx(0.0, abs=1e-11)
        assert et.tau_plus == pytest.approx(1.0, abs=1e-9)

    def test_tangent_flagged(self, hyperbolic_field):
        path = integrate(hyperbolic_field, [0.0, 0, 0], [0.0, 1.0, 0.0], (-0.5, 0.5))
        et = exit_times(path)
        assert et.tangent and et.tau_minus == 0.0 and et.tau_plus == 0.0

    def test_open_end_sentinel(self, hyperbolic_field):
        # span too short to reach the crossing
        path = integrate(hyperbolic_field, [0.25, 0, 0], [0.0, 0.3, 0.0], (-0.2, 0.2))
        et = exit_times(path)
        assert et.open_plus and et.open_minus


class TestExpMaps:
    def test_exp_closed_form(self, hyperbolic_field):
        z = np.array([0.05, 0.0, 0.0])
        v = np.array([0.01, 0.1, -0.05])
        out = exp_map(hyperbolic_field, z, v)
        expected = np.array([0.05 + 0.01 - (0.1**2 + 0.05**2), 0.1, -0.05])
        assert np.allclose(out, expected, atol=1e-11)

    def test_exp_zero_velocity(self, hyperbolic_field):
        z = np.array([0.05, 0.1, 0.2])
        assert np.array_equal(exp_map(hyperbolic_field, z, np.zeros(3)), z)

    def test_inverse_exp_closed_form(self, hyperbolic_field):
        z = np.array([0.05, 0.0, 0.0])
        zt = np.array([0.06, 0.1, 0.05])
        v = inverse_exp(hyperbolic_field, z, zt)
        lam = 0.06 - 0.05 + 0.1**2 + 0.05**2
        assert np.allclose(v, [lam, 0.1, 0.05], atol=1e-10)

    def test_inverse_exp_identity_pair(self, hyperbolic_field):
        z = np.array([0.05, 0.0, 0.0])
        assert np.array_equal(inverse_exp(hyperbolic_field, z, z), np.zeros(3))

    def test_round_trip_velocities(self, n5_field):
        rng = np.random.default_rng(5)
        for _ in range(5):
            z = np.array([rng.uniform(0.01, 0.1), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)])
            v = rng.normal(size=3)
            v *= 0.25 / np.linalg.norm(v)
            zt = exp_map(n5_field, z, v)
            back = inverse_exp(n5_field, z, zt)
            assert np.max(np.abs(back - v)) < 1e-8

    def test_fd_jacobian_det_is_one(self, hyperbolic_field):
        z = np.array([0.05, 0.02, -0.01])
        zt = np.array([0.055, 0.1, 0.04])
        J = inverse_exp_jacobian_fd(hyperbolic_field, z, zt)
        assert abs(abs(np.linalg.det(J)) - 1.0) < 1e-5

    def test_batch_agrees_with_single(self, n5_field):
        rng = np.random.default_rng(7)
        Z = np.stack(
            [rng.uniform(0.01, 0.08, 8), rng.uniform(-0.2, 0.2, 8), rng.uniform(-0.2, 0.2, 8)],
            axis=-1,
        )
        V = rng.normal(size=(8, 3)) * 0.08
        Z1, _ = exp_batch(n5_field, Z, V, steps=16, light=False)
        for k in range(8):
            single = exp_map(n5_field, Z[k], V[k])
            assert np.max(np.abs(Z1[k] - single)) < 1e-8
        Vb, det, conv, _ = inverse_exp_batch(n5_field, Z, Z1)
        assert np.all(conv)
        assert np.max(np.abs(Vb - V)) < 1e-8


class TestConvexityScan:
    def test_value_is_minus_two_h(self, hyperbolic_field, n5_field):
        rng = np.random.default_rng(2)
        pts = np.zeros((50, 3))
        pts[:, 1:] = rng.uniform(-0.3, 0.3, (50, 2))
        dirs = rng.normal(size=(50, 2))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        for fld in (hyperbolic_field, n5_field):
            ode_vals, fd_vals = convexity_scan(fld, pts, dirs)
            h = fld.model.c1(np.zeros(50), pts[:, 1:])
            assert np.max(np.abs(ode_vals + 2.0 * h)) < 1e-12
            assert np.max(np.abs(fd_vals - ode_vals)) < 1e-5

    def test_quadratic_scaling(self, hyperbolic_field):
        pts = np.zeros((1, 3))
        d1 = np.array([[1.0, 0.0]])
        v1, _ = convexity_scan(hyperbolic_field, pts, d1)
        v2, _ = convexity_scan(hyperbolic_field, pts, 2.0 * d1)
        assert v2[0] == pytest.approx(4.0 * v1[0], rel=1e-12)


class TestLocality:
    def test_tangent_start_passes(self, hyperbolic_field, base_config):
        w = locality_check(hyperbolic_field, base_config, [0.01, 0.0, 0.0], [0.0, 1.0, 0.0])
        assert w.passed and w.min_x_eta >= 0.0 and w.re_entry_bound >= base_config.c0

    def test_precondition_violation_reported(self, hyperbolic_field, base_config):
        x = 0.01
        lam = 10.0 * np.sqrt(x)
        v = np.array([lam, 1.0, 0.0])
        v /= np.linalg.norm(v)
        w = locality_check(hyperbolic_field, base_config, [x, 0.0, 0.0], v)
        assert not w.precondition_ok and not w.passed

    def test_purely_normal_rejected(self, hyperbolic_field, base_config):
        with pytest.raises(DegenerateDirectionError):
            locality_check(hyperbolic_field, base_config, [0.01, 0, 0], [1.0, 0.0, 0.0])


class TestReparametrize:
    def test_constant_r_is_linear(self):
        t = np.linspace(-1, 1, 201)
        r = np.full_like(t, 0.04)
        rep = reparametrize(t, r, c=2.0)
        assert np.allclose(rep.tau_of_t(t), 0.02 * t, atol=1e-12)

    def test_doubling_c_halves_tau(self):
        t = np.linspace(0, 2, 401)
        r = 0.05 + 0.01 * t**2
        r1 = reparametrize(t, r, c=1.0)
        r2 = reparametrize(t, r, c=2.0)
        assert np.allclose(r2.tau_nodes, 0.5 * r1.tau_nodes, atol=1e-14)

    def test_closed_form_vertical_geodesic(self):
        # metric-time vertical ray: rho = rho0 e^{-t}, r = rho0^2 e^{-2t}
        rho0, c = 0.3, 1.0
        t = np.linspace(0.0, 5.0, 4001)
        r = rho0**2 * np.exp(-2.0 * t)
        rep = reparametrize(t, r, c=c)
        expected = rho0**2 * (1.0 - np.exp(-2.0 * t)) / (2.0 * c)
        assert np.max(np.abs(rep.tau_of_t(t) - expected)) < 1e-8
