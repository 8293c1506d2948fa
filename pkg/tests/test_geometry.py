import numpy as np
import pytest

from ahxray.errors import DomainError, EvennessError
from ahxray.families import RadialBump, ScalarRFamily, smooth_bump, smooth_plateau
from ahxray.geometry import (
    BoundaryMetricFamily,
    BoundaryPatch,
    check_evenness,
    evaluate_ah_metric,
    one_sided_fd_weights,
    pullback_density_weight,
    to_even_structure,
)


def _family(patch, c1=None, c2=None, N=None, name="test"):
    return BoundaryMetricFamily(
        name=name,
        patch=patch,
        c1=c1 if c1 is not None else ScalarRFamily(const=1.0),
        c2=c2 if c2 is not None else ScalarRFamily(),
        N=N,
    )


class TestEvaluateAHMetric:
    def test_identity_family_at_half(self):
        patch = BoundaryPatch(n=2, collar_depth=0.8)
        fam = _family(patch)
        g = evaluate_ah_metric(fam, 0.5, np.zeros(2))
        assert np.allclose(g, np.diag([4.0, 4.0, 4.0]))

    def test_divergence_rate_toward_boundary(self, hyperbolic_family):
        g1 = evaluate_ah_metric(hyperbolic_family, 1e-3, np.zeros(2))
        g2 = evaluate_ah_metric(hyperbolic_family, 2e-3, np.zeros(2))
        assert g1[0, 0] / g2[0, 0] == pytest.approx(4.0, rel=1e-12)

    def test_quadratic_family_diag122(self):
        # h_rho = (1 + rho^2) * I at rho = 1 needs a collar deep enough
        patch = BoundaryPatch(n=2, extent=1.2, collar_depth=1.5)
        fam = _family(patch, c1=ScalarRFamily(const=1.0, r_coeff=1.0))
        g = evaluate_ah_metric(fam, 1.0, np.zeros(2))
        assert np.allclose(g, np.diag([1.0, 2.0, 2.0]), atol=1e-14)

    def test_rho_zero_rejected(self, hyperbolic_family):
        with pytest.raises(DomainError):
            evaluate_ah_metric(hyperbolic_family, 0.0, np.zeros(2))
        with pytest.raises(DomainError):
            evaluate_ah_metric(hyperbolic_family, -0.1, np.zeros(2))

    def test_scaled_metric_is_block_identity(self, patch):
        fam = _family(patch, c1=ScalarRFamily(const=1.0, r_coeff=0.3))
        rho, y = 0.3, np.array([0.1, -0.2])
        g = evaluate_ah_metric(fam, rho, y)
        assert np.allclose(g, g.T)
        scaled = rho**2 * g
        h = fam.h(np.asarray(rho), y)
        expected = np.zeros((3, 3))
        expected[0, 0] = 1.0
        expected[1:, 1:] = h
        # round-trip through the 1/rho^2 scaling costs one rounding step
        assert np.allclose(scaled, expected, rtol=0, atol=1e-15)


class TestEvenStructure:
    def test_hyperbolic_split(self, hyperbolic_family):
        model = to_even_structure(hyperbolic_family)
        r = np.array([0.0, 0.1, 0.2])
        y = np.zeros((3, 2))
        assert np.allclose(model.c1(r, y), 1.0)
        assert np.allclose(model.c2(r, y), 0.0)

    def test_rho5_bump_split(self, patch):
        prof = RadialBump(amplitude=0.5, width=0.25)
        fam = _family(patch, c2=ScalarRFamily(w_coeff=1.0, profile=prof), N=5)
        model = to_even_structure(fam)
        y = np.array([[0.05, 0.0]])
        r = np.array([0.04])
        # k2 = q(y) * I and re-substitution r = rho^2 reproduces h
        assert model.c2(r, y)[0] == pytest.approx(prof(y)[0], abs=1e-15)
        rho = np.sqrt(r)
        assert model.c(r, y)[0] == pytest.approx(fam.h_scalar(rho, y)[0], abs=1e-12)

    def test_even_quadratic_substitution(self, patch):
        fam = _family(patch, c1=ScalarRFamily(const=1.0, r_coeff=1.0))
        model = to_even_structure(fam)
        r = np.array([0.0, 0.05, 0.2])
        y = np.zeros((3, 2))
        assert np.allclose(model.c1(r, y), 1.0 + r)
        assert np.allclose(model.c2(r, y), 0.0)

    def test_resubstitution_roundtrip(self, patch):
        prof = RadialBump(amplitude=0.4, width=0.3)
        fam = _family(patch, c2=ScalarRFamily(w_coeff=1.0, profile=prof), N=5)
        model = to_even_structure(fam)
        rng = np.random.default_rng(1)
        rho = rng.uniform(0.0, 0.45, 40)
        y = rng.uniform(-0.5, 0.5, (40, 2))
        assert np.max(np.abs(model.c(rho * rho, y) - fam.h_scalar(rho, y))) < 1e-12

    def test_inconsistent_split_detected(self, patch):
        # families whose rho-side disagrees with the declared split are refused
        class Tampered(BoundaryMetricFamily):
            def h_scalar(self, rho, y):
                return super().h_scalar(rho, y) + 1e-3 * rho

        t = Tampered(
            name="t", patch=patch, c1=ScalarRFamily(const=1.0), c2=ScalarRFamily(), N=None
        )
        with pytest.raises(EvennessError):
            to_even_structure(t)


class TestCheckEvenness:
    def test_constant_family_all_orders_zero(self, hyperbolic_family):
        rep = check_evenness(hyperbolic_family, N=7)
        assert rep.passed
        assert all(v < 1e-8 for v in rep.norms.values())

    def test_rho3_family_fails_with_norm_six(self, patch):
        # h = (1 + rho^3) I: third one-sided derivative at 0 is 6
        fam = _family(patch, c2=ScalarRFamily(const=1.0), N=3)
        rep = check_evenness(fam, N=5, tol=1e-6)
        assert not rep.passed
        assert rep.norms[3] == pytest.approx(6.0, rel=1e-4)
        assert rep.norms[1] < 1e-6

    def test_rho5_family_passes_at_n5(self, patch):
        fam = _family(patch, c2=ScalarRFamily(const=1.0), N=5)
        rep = check_evenness(fam, N=5, tol=1e-6)
        assert rep.passed
        assert rep.norms[1] < 1e-7 and rep.norms[3] < 1e-5

    def test_exactly_even_passes_every_resolvable_order(self, patch):
        fam = _family(patch, c1=ScalarRFamily(const=1.0, r_coeff=0.5))
        for N in (3, 5):
            assert check_evenness(fam, N=N).passed

    def test_stencil_domain_guard(self, hyperbolic_family):
        with pytest.raises(DomainError):
            check_evenness(hyperbolic_family, N=5, step=0.2)


class TestPullbackDensityWeight:
    def test_rho_squared_becomes_one(self):
        rho = np.linspace(0.05, 0.5, 10)
        r, out = pullback_density_weight(rho, rho**2)
        assert np.allclose(r, rho**2)
        assert np.allclose(out, 1.0)

    def test_rho_cubed_profile(self):
        rho = np.linspace(0.05, 0.5, 10)
        g = 2.5
        r, out = pullback_density_weight(rho, rho**3 * g)
        assert np.allclose(out, np.sqrt(r) * g)

    def test_constant_diverges_at_zero(self):
        rho = np.array([0.0, 0.1])
        _, out = pullback_density_weight(rho, np.ones(2))
        assert np.isinf(out[0]) and out[1] == pytest.approx(100.0)


def test_one_sided_weights_reproduce_monomials():
    step = 1e-2
    w = one_sided_fd_weights(3, 6, step)
    x = np.arange(6) * step
    assert np.dot(w, x**3) == pytest.approx(6.0, rel=1e-9)
    assert abs(np.dot(w, x**2)) < 1e-9


def test_profiles_smooth_and_normalized():
    assert smooth_bump(np.array([0.0]))[0] == 1.0
    assert smooth_bump(np.array([1.0]))[0] == 0.0
    assert smooth_plateau(np.array([0.2]))[0] == pytest.approx(1.0)
    assert smooth_plateau(np.array([1.3]))[0] == 0.0
