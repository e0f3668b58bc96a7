import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import biquats, close
from egm.biquat import ONE, Biquaternion, bq_mul, bq_pseudonorm_sq
from egm.emfield import free_plane_wave
from egm.errors import BadUnitVector, CoverageError
from egm.grid import BiquatField, Grid4
from egm.lorentz import (
    TransformParams,
    component_formula_audit,
    compose,
    covariance_residual,
    event_components,
    inverse_event,
    inverse_field_value,
    make_transform,
    preimage_coverage,
    rel_charge_current,
    rel_force_power,
    rel_strength,
    transform_event,
    transform_field,
    transform_field_value,
)

velocities = st.floats(-0.95, 0.95)
angles = st.floats(-np.pi, np.pi)
axes = st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda a: np.linalg.norm(a) > 0.1).map(
    lambda a: tuple(np.asarray(a) / np.linalg.norm(a))
)


def element(v, e=(1.0, 0.0, 0.0), phi=0.0):
    return make_transform(TransformParams.from_velocity(v, e, phi))


class TestElement:
    def test_identity(self):
        assert close(element(0.0).L, ONE)

    def test_boost_factors(self):
        p = TransformParams.from_velocity(0.6)
        assert p.gamma == pytest.approx(1.25) and p.v == pytest.approx(0.6)
        assert np.sinh(2 * p.theta) == pytest.approx(0.75)

    def test_event_boost(self):
        tau, x = event_components(transform_event(element(0.6), Biquaternion.event(1.0, [0, 0, 0])))
        assert tau == pytest.approx(1.25) and np.allclose(x, [0.75, 0, 0])

    def test_quarter_rotation_element(self):
        L = make_transform(TransformParams((0, 0, 1), 0.0, np.pi / 2))
        assert close(L.L, Biquaternion(0, [0, 0, -1]))

    @given(angles)
    @settings(max_examples=30)
    def test_rotation_by_twice_phi(self, phi):
        L = make_transform(TransformParams((0, 0, 1), 0.0, phi))
        tau, x = event_components(transform_event(L, Biquaternion.event(0.3, [1, 0, 0])))
        assert tau == pytest.approx(0.3, abs=1e-12)
        assert x[0] == pytest.approx(np.cos(2 * phi), abs=1e-12)
        assert abs(x[1]) == pytest.approx(abs(np.sin(2 * phi)), abs=1e-12)
        assert x[2] == pytest.approx(0, abs=1e-12)

    def test_collinear_composition_adds_rapidity(self):
        v1, v2 = 0.6, 0.3
        direct = element((v1 + v2) / (1 + v1 * v2)).L
        assert close(compose(element(v1), element(v2)), direct)

    @given(velocities, angles, axes)
    @settings(max_examples=50)
    def test_unimodular(self, v, phi, e):
        L = element(v, e, phi)
        assert close(bq_mul(L.Lbar_star, L.L), ONE, 1e-11)
        assert close(bq_mul(L.Lbar, L.Lstar), ONE, 1e-11)

    def test_bad_axis(self):
        with pytest.raises(BadUnitVector):
            make_transform(TransformParams((1, 1, 0), 0.1))
        with pytest.raises(BadUnitVector):
            TransformParams((np.nan, 0, 0))

    def test_superluminal_rejected(self):
        with pytest.raises(ValueError):
            TransformParams.from_velocity(1.0)


class TestInvariants:
    @given(velocities, angles, axes, st.floats(-5, 5), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    @settings(max_examples=100)
    def test_interval_preserved(self, v, phi, e, tau, x):
        Z = Biquaternion.event(tau, x)
        Zp = transform_event(element(v, e, phi), Z)
        assert close(bq_pseudonorm_sq(Zp), bq_pseudonorm_sq(Z), 1e-11)

    @given(velocities, angles, axes, biquats)
    @settings(max_examples=50)
    def test_round_trips(self, v, phi, e, K):
        L = element(v, e, phi)
        Z = Biquaternion.event(K.s.real, K.v.imag)
        assert close(inverse_event(L, transform_event(L, Z)), Z, 1e-10)
        for kind in ("field", "source"):
            for rule in ("covariant", "literal"):
                back = inverse_field_value(L, transform_field_value(L, K, kind, rule), kind, rule)
                assert close(back, K, 1e-10)

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            transform_field_value(element(0.2), ONE, "field", "other")
        with pytest.raises(ValueError):
            transform_field_value(element(0.2), ONE, "tensor")


class TestComponentFormulas:
    def test_charge_at_rest(self):
        rho, J = rel_charge_current(1.0, np.zeros(3), TransformParams.from_velocity(0.6))
        assert rho == pytest.approx(1.25) and np.allclose(J, [-0.75, 0, 0])

    def test_pure_force(self):
        M, F = rel_force_power(0.0, np.array([1.0, 0, 0]), TransformParams.from_velocity(0.6))
        assert M == pytest.approx(0.75) and np.allclose(F, [1.25, 0, 0])

    def test_strength_transverse_untouched(self):
        A = np.array([0.0, 1.0, 2j])
        assert np.allclose(rel_strength(A, TransformParams.from_velocity(0.6)), A)

    def test_require_pure_boost(self):
        with pytest.raises(ValueError):
            rel_strength(np.zeros(3), TransformParams((1, 0, 0), 0.1, 0.2))

    def test_audit_deterministic_and_characterized(self):
        a = component_formula_audit(500, seed=3)
        b = component_formula_audit(500, seed=3)
        assert a == b
        assert a["charge_current"]["agrees"]
        for entry in a.values():
            assert entry["characterization"]
            assert "matches neither" not in entry["characterization"]


class TestFieldTransform:
    @pytest.fixture
    def grid(self):
        return Grid4(13, 12, 12, 12, np.pi / 12, 2 * np.pi / 12, (0, -np.pi, -np.pi, -np.pi))

    def test_free_wave_stays_free(self, grid):
        A = free_plane_wave([0, 1, 0], [1, 0, 0])

        def zero(t, x, y, z):
            return Biquaternion.zeros(np.broadcast(t, x, y, z).shape)

        r = covariance_residual(element(0.6), A, zero, grid)
        assert r["residual_max"] < 0.1 and r["covered_fraction"] == 1.0

    def test_inconsistent_source_detected(self, grid):
        A = free_plane_wave([0, 1, 0], [1, 0, 0])

        def one(t, x, y, z):
            return Biquaternion.scalar(1.0, np.broadcast(t, x, y, z).shape)

        r = covariance_residual(element(0.6), A, one, grid)
        assert r["residual_max"] > 0.9

    def test_coverage_error(self, grid):
        F = BiquatField.zeros(grid)
        L = element(0.9)
        assert not preimage_coverage(L, grid, grid).all()
        with pytest.raises(CoverageError):
            transform_field(L, F, grid)
        G = transform_field(L, F, grid, strict=False)
        assert G.max_abs() == 0

    def test_boost_with_rotation_stays_free(self, grid):
        A = free_plane_wave([0, 1, 0], [1, 0, 0])

        def zero(t, x, y, z):
            return Biquaternion.zeros(np.broadcast(t, x, y, z).shape)

        L = make_transform(TransformParams.from_velocity(0.6, (0.6, 0.0, 0.8), 0.4))
        unboosted = covariance_residual(element(0.0), A, zero, grid)["residual_max"]
        assert covariance_residual(L, A, zero, grid)["residual_max"] < 2 * unboosted
        assert covariance_residual(L, A, zero, grid, rule="literal")["residual_max"] > 1.0
