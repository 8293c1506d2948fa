import numpy as np
import pytest

from ahxray.connection import (
    ChristoffelField,
    background_metric,
    extend_past_boundary,
    hat_christoffel,
    hat_field,
    levi_civita_fd,
    projective_difference,
    split_connection,
)
from ahxray.errors import DomainError, SplitRejectedError
from ahxray.families import RadialBump, ScalarRFamily
from ahxray.geometry import BoundaryPatch, ProjectiveModel


def _model(patch, c1=None, c2=None, N=None):
    return ProjectiveModel(
        patch=patch,
        c1=c1 if c1 is not None else ScalarRFamily(const=1.0),
        c2=c2 if c2 is not None else ScalarRFamily(),
        N=N,
    )


class TestHatChristoffel:
    def test_hyperbolic_entries(self, hyperbolic_model):
        g = hat_christoffel(hyperbolic_model, np.array([0.1, 0.0, 0.0]))
        expected = np.zeros((3, 3, 3))
        expected[0, 1:, 1:] = 2.0 * np.eye(2)
        assert np.allclose(g, expected, atol=1e-15)

    def test_one_plus_r_at_zero(self, patch):
        model = _model(patch, c1=ScalarRFamily(const=1.0, r_coeff=1.0))
        g = hat_christoffel(model, np.array([0.0, 0.0, 0.0]))
        assert np.allclose(g[0, 1:, 1:], 2.0 * np.eye(2))
        assert np.allclose(g[1:, 0, 1:], 0.5 * np.eye(2))
        assert np.allclose(g[1:, 1:, 0], 0.5 * np.eye(2))

    def test_one_plus_r_at_inner_point(self):
        patch = BoundaryPatch(n=2, collar_depth=1.5)
        model = _model(patch, c1=ScalarRFamily(const=1.0, r_coeff=1.0))
        g = hat_christoffel(model, np.array([1.0, 0.0, 0.0]))
        # 2((1+r) - r) = 2 and (1/(2(1+r))) = 1/4 at r = 1
        assert np.allclose(g[0, 1:, 1:], 2.0 * np.eye(2))
        assert np.allclose(g[1:, 0, 1:], 0.25 * np.eye(2))

    def test_negative_r_rejected(self, hyperbolic_model):
        with pytest.raises(DomainError):
            hat_christoffel(hyperbolic_model, np.array([-0.01, 0.0, 0.0]))

    def test_symmetry_at_random_points(self, n5_model, hyperbolic_model):
        rng = np.random.default_rng(0)
        for model in (n5_model, hyperbolic_model):
            fld = hat_field(model)
            Z = np.stack(
                [rng.uniform(0.0, 0.2, 1000), rng.uniform(-1, 1, 1000), rng.uniform(-1, 1, 1000)],
                axis=-1,
            )
            G = fld.gamma_batch(Z)
            assert np.allclose(G, np.swapaxes(G, 2, 3), atol=1e-14)

    def test_boundary_value_is_twice_h(self, n5_model):
        y = np.array([0.07, -0.03])
        g = hat_christoffel(n5_model, np.concatenate([[0.0], y]))
        h_scalar = n5_model.c1(np.array(0.0), y)
        assert np.array_equal(g[0, 1:, 1:], 2.0 * float(h_scalar) * np.eye(2))

    def test_acc_matches_tensor_contraction(self, n5_field):
        rng = np.random.default_rng(3)
        Z = np.stack(
            [rng.uniform(-0.3, 0.2, 50), rng.uniform(-0.5, 0.5, 50), rng.uniform(-0.5, 0.5, 50)],
            axis=-1,
        )
        V = rng.normal(size=(50, 3))
        G = n5_field.gamma_batch(Z)
        expected = -np.einsum("mkij,mi,mj->mk", G, V, V)
        assert np.allclose(n5_field.acc(Z, V), expected, atol=1e-13)


class TestSplitConnection:
    def test_even_family_trivial_split(self, patch):
        model = _model(patch, c1=ScalarRFamily(const=1.0, r_coeff=0.5))
        sp = split_connection(model)
        z = np.array([0.05, 0.1, 0.0])
        assert np.allclose(sp.B(z), 0.0)
        assert np.allclose(sp.gamma_bar.gamma(z), hat_christoffel(model, z))

    def test_hyperbolic_trivial_split(self, hyperbolic_model):
        sp = split_connection(hyperbolic_model)
        z = np.array([0.1, 0.0, 0.0])
        assert np.allclose(sp.B(z), 0.0)
        assert np.allclose(sp.gamma_bar.gamma(z)[0, 1:, 1:], 2.0 * np.eye(2))

    def test_n5_split_coefficients(self, patch):
        # k = I + r^{5/2} q(y) I: the r^{N/2-1} coefficients in closed form
        prof = RadialBump(amplitude=0.5, width=0.25)
        model = _model(patch, c2=ScalarRFamily(w_coeff=1.0, profile=prof), N=5)
        sp = split_connection(model)
        y = np.array([0.05, 0.02])
        qv = float(prof(y))
        for r in (0.0, 0.02, 0.08):
            B = sp.B(np.concatenate([[r], y]))
            # normal block: 2 r ((1 - N/2) q - r dq/dr) = -3 r q
            assert B[0, 1, 1] == pytest.approx(-3.0 * r * qv, rel=1e-12, abs=1e-15)
            # mixed block at r = 0: (N/4) q / c = 1.25 q
            if r == 0.0:
                assert B[1, 0, 1] == pytest.approx(1.25 * qv, rel=1e-12)

    def test_composition_reproduces_direct_field(self, n5_model, n5_split):
        rng = np.random.default_rng(1)
        Z = np.stack(
            [rng.uniform(0.0, 0.2, 200), rng.uniform(-0.6, 0.6, 200), rng.uniform(-0.6, 0.6, 200)],
            axis=-1,
        )
        direct = hat_field(n5_model).gamma_batch(Z)
        composed = n5_split.composed(Z)
        assert np.max(np.abs(direct - composed)) < 1e-10

    def test_composed_equals_smooth_part_for_negative_r(self, n5_split):
        z = np.array([-0.05, 0.1, -0.2])
        assert np.array_equal(n5_split.composed(z), n5_split.gamma_bar.gamma(z))

    def test_n3_rejected(self, patch):
        model = _model(patch, c2=ScalarRFamily(const=0.5), N=3)
        with pytest.raises(SplitRejectedError):
            split_connection(model)


class TestExtension:
    def test_even_model_extends_to_negative_r(self, hyperbolic_model):
        fld = extend_past_boundary(split_connection(hyperbolic_model), eps0=1.0)
        g = fld.gamma(np.array([-0.1, 0.0, 0.0]))
        assert np.allclose(g[0, 1:, 1:], 2.0 * np.eye(2))

    def test_n5_extension_has_no_heaviside_part_below_zero(self, n5_field, n5_split):
        z = np.array([-0.1, 0.05, 0.0])
        assert np.array_equal(n5_field.gamma(z), n5_split.gamma_bar.gamma(z))

    def test_one_sided_derivatives_match_across_zero(self, n5_field):
        # the r^{3/2} term has vanishing first derivative at r = 0
        y = np.array([0.05, 0.0])
        h = 1e-6
        gp = (n5_field.gamma(np.concatenate([[h], y])) - n5_field.gamma(np.concatenate([[0.0], y]))) / h
        gm = (n5_field.gamma(np.concatenate([[0.0], y])) - n5_field.gamma(np.concatenate([[-h], y]))) / h
        assert np.max(np.abs(gp - gm)) < 5e-3  # one-sided slopes differ by O(sqrt(h))

    def test_tag_assignment(self, n5_field, hyperbolic_model):
        assert n5_field.regularity_tag == "C1_split"
        assert extend_past_boundary(split_connection(hyperbolic_model)).regularity_tag == "smooth"
        n3 = _model(hyperbolic_model.patch, c2=ScalarRFamily(const=0.5), N=3)
        assert hat_field(n3).regularity_tag == "direct"


class TestProjectiveDifference:
    def test_unit_r_values(self, hyperbolic_model):
        patch = BoundaryPatch(n=2, collar_depth=1.5)
        model = _model(patch)
        D, _ = projective_difference(model, np.array([1.0, 0.0, 0.0]), verify=False)
        assert D[0, 0, 0] == 1.0
        assert D[1, 0, 1] == 0.5 and D[1, 1, 0] == 0.5
        assert D[0, 1, 1] == 0.0

    def test_levi_civita_oracle_residual(self, hyperbolic_model, n5_model):
        for model in (hyperbolic_model, n5_model):
            for r in (0.05, 0.1, 0.2):
                _, res = projective_difference(model, np.array([r, 0.05, -0.02]))
                assert res < 1e-6

    def test_divergence_at_boundary(self, hyperbolic_model):
        D1, _ = projective_difference(hyperbolic_model, np.array([1e-3, 0, 0]), verify=False)
        assert D1[0, 0, 0] == pytest.approx(1e3)
        g = hat_christoffel(hyperbolic_model, np.array([1e-3, 0.0, 0.0]))
        assert np.max(np.abs(g)) < 10.0

    def test_nonpositive_r_rejected(self, hyperbolic_model):
        with pytest.raises(DomainError):
            projective_difference(hyperbolic_model, np.array([0.0, 0.0, 0.0]))


def test_background_metric_is_euclidean():
    g0 = background_metric(3)
    assert np.array_equal(g0, np.eye(3))
    v = np.array([0.6, 0.8, 0.0])
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_levi_civita_fd_flat_metric_vanishes():
    gam = levi_civita_fd(lambda z: np.eye(3), np.array([0.3, 0.1, -0.2]))
    assert np.max(np.abs(gam)) < 1e-12
