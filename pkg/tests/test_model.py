import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexcable import model
from flexcable.errors import DegenerateSegment, GimbalLock, InfeasibleAllocation
from flexcable.params import Attitude, CableParams, QuadParams, total_mass

angle = st.floats(-np.pi, np.pi, allow_nan=False)
pitch = st.floats(-1.5, 1.5, allow_nan=False)
small = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(small, small, small)


class TestRotation:
    def test_zero_is_identity(self):
        assert np.allclose(model.rotation_from_attitude([0, 0, 0]), np.eye(3), atol=0)

    def test_yaw_quarter_turn_maps_x_to_y(self):
        R = model.rotation_from_attitude([0, 0, np.pi / 2])
        assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)

    def test_orthogonal_example(self):
        R = model.rotation_from_attitude(Attitude([0.1, 0.2, 0.3]))
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12

    def test_composition_order_zyx(self):
        tx, ty, tz = 0.3, -0.4, 1.1

        def rx(a):
            return np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])

        def ry(a):
            return np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])

        def rz(a):
            return np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])

        assert np.allclose(model.rotation_from_attitude([tx, ty, tz]), rz(tz) @ ry(ty) @ rx(tx), atol=1e-15)

    @settings(max_examples=1000, deadline=None)
    @given(angle, angle, angle)
    def test_orthonormal_property(self, a, b, c):
        R = model.rotation_from_attitude([a, b, c])
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-10
        assert abs(np.linalg.det(R) - 1.0) < 1e-10


class TestEulerRates:
    def test_zero_attitude_rates_pass_through(self):
        att = Attitude([0, 0, 0], [0.3, -0.2, 0.7])
        assert np.allclose(model.body_rates_from_euler_rates(att), [0.3, -0.2, 0.7], atol=0)

    def test_zero_rates_give_zero(self):
        assert np.all(model.body_rates_from_euler_rates(Attitude([0.2, 0.4, 1.0], [0, 0, 0])) == 0)

    def test_round_trip_through_T(self):
        att = Attitude([0.0, 0.3, 0.0], [0.0, 1.0, 0.0])
        w = model.body_rates_from_euler_rates(att)
        assert np.allclose(model.euler_rate_matrix(att) @ w, att.rates, atol=1e-12)

    def test_gimbal_lock_guard(self):
        with pytest.raises(GimbalLock):
            model.body_rates_from_euler_rates(Attitude([0, np.pi / 2 - 5e-4, 0], [0, 1, 0]))

    @settings(max_examples=200, deadline=None)
    @given(angle, pitch, angle, vec3)
    def test_T_inverse_property(self, a, b, c, r):
        att = Attitude([a, b, c], r)
        T = model.euler_rate_matrix(att)
        assert np.allclose(T @ model.inverse_euler_rate_matrix(att), np.eye(3), atol=1e-8)

    def test_T_dot_matches_finite_difference(self):
        att = Attitude([0.2, -0.3, 0.5], [0.7, -0.4, 0.1])
        h = 1e-6
        up = model.euler_rate_matrix(att.angles + h * att.rates)
        dn = model.euler_rate_matrix(att.angles - h * att.rates)
        assert np.allclose(model.euler_rate_matrix_dot(att), (up - dn) / (2 * h), atol=1e-8)

    def test_body_rates_match_rotation_derivative(self):
        # skew(w) = R^T dR/dt for body rates
        att = Attitude([0.4, 0.2, -0.7], [0.3, -0.5, 0.9])
        h = 1e-6
        dR = (model.rotation_from_attitude(att.angles + h * att.rates) - model.rotation_from_attitude(att.angles - h * att.rates)) / (2 * h)
        S = model.rotation_from_attitude(att).T @ dR
        w = np.array([S[2, 1], S[0, 2], S[1, 0]])
        assert np.allclose(model.body_rates_from_euler_rates(att), w, atol=1e-8)


class TestConstitutive:
    def test_strain_examples(self):
        assert model.strain([1, 0, 0]) == 0
        assert model.strain([0, 0, 1.01]) == pytest.approx(0.01, abs=1e-15)
        assert model.strain([0.6, 0.8, 0]) == pytest.approx(0.0, abs=1e-15)

    def test_strain_degenerate(self):
        with pytest.raises(DegenerateSegment):
            model.strain([0, 0, 1e-10])

    def test_internal_force_examples(self):
        p = CableParams()
        assert np.all(model.internal_force([0, 0, -1], p) == 0)
        assert np.allclose(model.internal_force([0, 0, 1.01], p), [0, 0, 0.07854], rtol=1e-12)

    def test_internal_force_homogeneity(self):
        p = CableParams()
        r = np.array([0.3, -0.4, 0.9])
        f1, f2 = model.internal_force(r, p), model.internal_force(2 * r, p)
        assert np.allclose(f1 / np.linalg.norm(f1), f2 / np.linalg.norm(f2), atol=1e-14)
        assert np.linalg.norm(f2) == pytest.approx(p.EA * (np.linalg.norm(2 * r) - 1), rel=1e-12)

    def test_compression_keeps_linear_law(self):
        p = CableParams()
        f = model.internal_force([0, 0, 0.9], p)
        assert f[2] == pytest.approx(-0.1 * 0.9 / 0.9 * p.EA, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(vec3, vec3)
    def test_force_is_tangent(self, r, v):
        r = np.asarray(r)
        if np.linalg.norm(r) < 1e-3:
            return
        f = model.internal_force(r, CableParams())
        assert abs(f @ np.cross(r, v)) <= 1e-9 * (1 + np.linalg.norm(f) * np.linalg.norm(r) * np.linalg.norm(v))

    def test_drag_examples(self):
        p = CableParams()
        assert np.all(model.drag_load([0, 0, 0], p) == 0)
        assert np.allclose(model.drag_load([1, 0, 0], p), [-0.01293, 0, 0], rtol=1e-12)
        assert np.allclose(model.drag_load([0, 2, 0], p), [0, -0.05172, 0], rtol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(vec3)
    def test_drag_is_odd(self, v):
        p = CableParams()
        assert np.allclose(model.drag_load(-np.asarray(v), p), -model.drag_load(v, p), atol=0)

    def test_gravity_examples(self):
        p = CableParams()
        assert np.allclose(model.gravity_load(p), [0, 0, -0.97997], rtol=1e-4)
        assert np.all(model.gravity_load(p, 0.0) == 0)
        assert np.allclose(model.gravity_load(p.with_(cross_section=2 * p.cross_section)), 2 * model.gravity_load(p), rtol=1e-15)

    def test_params_reject_nonpositive(self):
        with pytest.raises(ValueError, match="cable.length"):
            CableParams(length=-1.0)
        with pytest.raises(ValueError):
            QuadParams(mass=0.0)
        with pytest.raises(ValueError):
            QuadParams(inertia=(1e-6, 0.0, 1e-6))


class TestAllocation:
    def test_hover_speed(self):
        q, c = QuadParams(), CableParams()
        f = total_mass(c, q) * q.gravity
        w = model.allocate_rotors(f, np.zeros(3), q)
        assert f == pytest.approx(3.92, rel=1e-3)
        assert np.allclose(w, np.sqrt(f / 4 / 4e-7), rtol=1e-12)
        assert w[0] == pytest.approx(1565.25, abs=0.5)

    def test_zero(self):
        assert np.all(model.allocate_rotors(0.0, np.zeros(3), QuadParams()) == 0)

    def test_yaw_round_trip(self):
        q = QuadParams()
        w = model.allocate_rotors(3.92, [0, 0, 1e-4], q)
        assert np.ptp(w) > 0
        f, tau = model.thrust_and_torque(w, q)
        assert f == pytest.approx(3.92, rel=1e-9)
        assert np.allclose(tau, [0, 0, 1e-4], rtol=1e-9, atol=1e-15)

    def test_infeasible(self):
        with pytest.raises(InfeasibleAllocation):
            model.allocate_rotors(0.1, [0, 0, 1.0], QuadParams())
        w = model.allocate_rotors(0.1, [0, 0, 1.0], QuadParams(), saturate=True)
        assert np.all(np.isfinite(w)) and np.all(w >= 0)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0.5, 10), st.floats(-0.01, 0.01), st.floats(-0.01, 0.01), st.floats(-1e-4, 1e-4))
    def test_round_trip_property(self, f, tx, ty, tz):
        q = QuadParams()
        try:
            w = model.allocate_rotors(f, [tx, ty, tz], q)
        except InfeasibleAllocation:
            return
        f2, tau = model.thrust_and_torque(w, q)
        scale = max(abs(f), np.max(np.abs([tx, ty, tz])))
        assert abs(f2 - f) <= 1e-9 * scale
        assert np.max(np.abs(tau - [tx, ty, tz])) <= 1e-9 * scale
