import numpy as np
import pytest

from flexcable import io, model, pod
from flexcable.errors import DegenerateSegment, GimbalLock, NumericalBlowup
from flexcable.fdm import (
    Disturbance, FdmConfig, FdmState, Simulator, attitude_dynamics, cable_energy, ghost_tail_node,
    head_acceleration, hover_rotor_speeds, interior_accelerations, rk4_step, simulate, state_derivative,
    thrust_for_head_acceleration,
)
from flexcable.params import Attitude, CableParams, QuadParams, total_mass


def steady_state(cable, n):
    pos = pod.steady_shape(cable, n + 1)
    return FdmState(pos, np.zeros_like(pos))


class TestGhost:
    def test_vertical(self):
        pos = FdmState.straight(100, 1.0).positions
        assert np.allclose(ghost_tail_node(pos, 0.01), [0, 0, -1.01], atol=1e-14)

    def test_stretched(self):
        pos = np.array([[0, 0, 0], [0, 0, -0.011], [0, 0, -0.022]])
        g = ghost_tail_node(pos, 0.01)
        assert np.linalg.norm(g - pos[1]) == pytest.approx(0.02, rel=1e-14)

    def test_right_angle(self):
        pos = np.array([[0.0, 0, 0], [0.01, 0, 0], [0.01, 0, -0.01]])
        assert np.allclose(ghost_tail_node(pos, 0.01), [0.01, 0, -0.01 - 0.02 + 0.01], atol=1e-15)

    def test_degenerate(self):
        with pytest.raises(DegenerateSegment):
            ghost_tail_node(np.zeros((3, 3)), 0.01)


class TestInterior:
    def test_unstretched_no_gravity(self):
        acc = interior_accelerations(FdmState.straight(100, 1.0, direction=(0.6, 0, -0.8)), CableParams(), g=0.0)
        assert np.max(np.abs(acc)) < 1e-9

    def test_unstretched_free_fall(self):
        acc = interior_accelerations(FdmState.straight(100, 1.0), CableParams(), g=9.8)
        assert np.allclose(acc, [0, 0, -9.8], atol=1e-9)

    def test_steady_profile_residual(self):
        c = CableParams()
        acc = interior_accelerations(steady_state(c, 100), c)
        assert np.max(np.abs(acc)) < 1e-3

    def test_steady_profile_exact_for_stencil(self):
        c = CableParams()
        for n in (50, 100, 200):
            assert np.max(np.abs(interior_accelerations(steady_state(c, n), c))) < 1e-8

    def test_second_order_convergence(self):
        # uniformly stretched quarter arc: interior acceleration is -E eps kappa / rho along the normal
        c = CableParams()

        def err(n):
            th = np.linspace(0, 1, n + 1) * np.pi / 2
            pos = 1.01 * 2 / np.pi * np.stack([np.sin(th), 0 * th, np.cos(th) - 1], 1)
            acc = interior_accelerations(FdmState(pos, np.zeros_like(pos)), c, g=0.0)
            normal = np.stack([np.sin(th), 0 * th, np.cos(th)], 1)[1:]
            exact = -c.young_modulus / c.density * 0.01 * np.pi / 2 * normal
            return np.max(np.linalg.norm(acc - exact, axis=1)[:-1])

        assert err(50) / err(100) >= 3.0
        assert err(100) / err(200) >= 3.0

    def test_degenerate_index(self):
        st = FdmState.straight(10, 1.0)
        st.positions[4] = st.positions[3]
        with pytest.raises(DegenerateSegment) as exc:
            interior_accelerations(st, CableParams())
        assert exc.value.index == 3


class TestHead:
    def test_hover_balance(self):
        c, q = CableParams(), QuadParams()
        st = steady_state(c, 100)
        thrust = np.array([0, 0, total_mass(c, q) * q.gravity])
        acc = head_acceleration(st, thrust, interior_accelerations(st, c), c, q)
        assert np.max(np.abs(acc)) < 1e-3

    def test_massless_cable_free_fall(self):
        c, q = CableParams(density=1e-6), QuadParams()
        st = FdmState.straight(100, 1.0)
        acc = head_acceleration(st, np.zeros(3), interior_accelerations(st, c), c, q)
        assert np.allclose(acc, [0, 0, -9.8], atol=1e-6)

    def test_disturbance_linear(self):
        c, q = CableParams(), QuadParams()
        st = steady_state(c, 100)
        thrust = np.array([0, 0, total_mass(c, q) * q.gravity])
        inner = interior_accelerations(st, c)
        a0 = head_acceleration(st, thrust, inner, c, q)
        a1 = head_acceleration(st, thrust, inner, c, q, np.array([1.0, 0, 0]))
        assert a1[0] - a0[0] == pytest.approx(1.0 / (q.mass + 0.5 * c.linear_density * 0.01), rel=1e-12)

    def test_thrust_inverse(self, rng):
        c, q = CableParams(), QuadParams()
        st = steady_state(c, 100)
        st.velocities[1:] = rng.normal(0, 0.3, size=(100, 3))
        st.positions[1:] += rng.normal(0, 0.002, size=(100, 3))
        want = np.array([0.7, -1.2, 2.5])
        f = thrust_for_head_acceleration(st, want, c, q)
        got = head_acceleration(st, f, interior_accelerations(st, c), c, q)
        assert np.allclose(got, want, atol=1e-10)


class TestAttitude:
    def test_examples(self):
        q = QuadParams()
        w_dot, _ = attitude_dynamics(Attitude(), np.zeros(3), q)
        assert np.all(w_dot == 0)
        w_dot, _ = attitude_dynamics(Attitude(), [1e-6, 0, 0], q)
        assert np.allclose(w_dot, [1, 0, 0], rtol=1e-12)
        w_dot, _ = attitude_dynamics(Attitude([0, 0, 0], [0, 0, 1]), np.zeros(3), q)
        assert np.allclose(w_dot, 0, atol=1e-15)

    def test_gimbal(self):
        with pytest.raises(GimbalLock):
            attitude_dynamics(Attitude([0, 1.5705, 0]), np.zeros(3), QuadParams())


def _numpy_rk4(state, speeds, dt, c, q, dist=None):
    def f(s):
        acc, eul = state_derivative(s, speeds, c, q, dist)
        return s.velocities, acc, s.attitude.rates, eul

    def add(s, k, h):
        return FdmState(s.positions + h * k[0], s.velocities + h * k[1], Attitude(s.attitude.angles + h * k[2], s.attitude.rates + h * k[3]))

    k1 = f(state)
    k2 = f(add(state, k1, dt / 2))
    k3 = f(add(state, k2, dt / 2))
    k4 = f(add(state, k3, dt))
    return add(state, [(a + 2 * b + 2 * cc + d) / 6 for a, b, cc, d in zip(k1, k2, k3, k4)], dt)


class TestKernel:
    def test_matches_numpy_reference(self, rng):
        c, q = CableParams(), QuadParams()
        st = steady_state(c, 20)
        st.positions[1:] += rng.normal(0, 0.01, size=(20, 3))
        st.velocities[:] = rng.normal(0, 0.2, size=(21, 3))
        st.attitude = Attitude([0.05, -0.03, 0.1], [0.2, 0.1, -0.3])
        speeds = hover_rotor_speeds(c, q) * np.array([1.01, 0.99, 1.0, 1.02])
        dist = np.array([0.3, -0.2, 0.1])
        a = rk4_step(st, speeds, 1e-4, c, q, dist)
        b = _numpy_rk4(st, speeds, 1e-4, c, q, dist)
        assert np.allclose(a.positions, b.positions, atol=1e-12)
        assert np.allclose(a.velocities, b.velocities, atol=1e-10)
        assert np.allclose(a.attitude.angles, b.attitude.angles, atol=1e-12)

    def test_equilibrium_fixed_point(self):
        c, q = CableParams(), QuadParams()
        # exact discrete equilibrium: relax the pinned cable first
        sim = Simulator(steady_state(c, 100), c, q, FdmConfig(100, 5e-4), head=lambda t: np.zeros((np.size(t), 3)))
        st = sim.state
        acc = interior_accelerations(st, c)
        assert np.max(np.abs(acc)) < 1e-3
        nxt = rk4_step(st, hover_rotor_speeds(c, q), 5e-4, c, q)
        assert np.max(np.abs(nxt.positions - st.positions)) < 1e-9

    def test_free_fall_particle(self):
        # massless, stiff-free 2-segment chain with no thrust falls as a particle
        c = CableParams(young_modulus=1e-12, drag_coeff=0.0)
        q = QuadParams()
        st = FdmState.straight(2, 1.0, direction=(1, 0, 0))
        sim = Simulator(st, c, q, FdmConfig(2, 1e-3))
        sim.advance(100, np.zeros(4))
        z = sim.state.positions[:, 2]
        assert np.allclose(z, -0.5 * 9.8 * 0.1**2, atol=1e-10)

    def test_blowup_at_large_step(self, cable, quad):
        with pytest.raises(NumericalBlowup) as exc:
            simulate(FdmState.straight(100, 1.0, direction=(-1, 0, 0)), cable, quad, 10.0, config=FdmConfig(100, 5e-3), control_period=0.02)
        assert exc.value.time is not None

    def test_dt_cap(self, cable, quad):
        with pytest.raises(ValueError):
            Simulator(FdmState.straight(10, 1.0), cable, quad, FdmConfig(10, 1e-3, dt_cap=5e-4))


class TestSimulate:
    def test_hover_hold(self, cable, quad):
        rec = simulate(steady_state(cable, 100), cable, quad, 1.0)
        assert np.max(np.linalg.norm(rec.positions[:, 0] - rec.positions[0, 0], axis=1)) < 1e-3

    def test_replay_bitwise(self, cable, quad, tmp_path):
        def run(path):
            d = Disturbance(seed=7)
            rec = simulate(FdmState.straight(20, 1.0, direction=(-1, 0, 0)), cable, quad, 0.5, disturbance=d, config=FdmConfig(20, 5e-4))
            io.write_run(path, rec)
            return path.read_bytes()

        assert run(tmp_path / "a.csv") == run(tmp_path / "b.csv")

    def test_run_csv_round_trip(self, cable, quad, tmp_path):
        rec = simulate(FdmState.straight(10, 1.0, direction=(-1, 0, 0)), cable, quad, 0.1, config=FdmConfig(10, 5e-4))
        io.write_run(tmp_path / "r.csv", rec)
        back = io.read_run(tmp_path / "r.csv")
        assert np.array_equal(back.positions, rec.positions)
        assert np.array_equal(back.velocities, rec.velocities)
        assert np.array_equal(back.angles, rec.angles)
        assert np.array_equal(back.times, rec.times)
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "t,entity,idx,x,y,z,vx,vy,vz"

    def test_energy_conservation(self):
        c = CableParams(drag_coeff=0.0)
        q = QuadParams(gravity=0.0)
        st = FdmState.straight(50, 1.0, direction=(1, 0, 0))
        s = np.linspace(0, 1, 51)
        st.positions[:, 0] *= 1.0 + 0.02 * np.sin(np.pi * s)
        st.velocities[:, 2] = 0.3 * s
        st.velocities[0] = 0.0
        e0 = cable_energy(st, c)
        sim = Simulator(st, c, q, FdmConfig(50, 1e-4), head=lambda t: np.zeros((np.size(t), 3)))
        energies = []
        for _ in range(100):
            sim.advance(100)
            energies.append(cable_energy(sim.state, c))
        assert max(abs(e - e0) for e in energies) / e0 < 0.01


class TestDisturbance:
    def test_bounds_and_hold(self):
        d = Disturbance(seed=3, bound=1.0, frequency=0.5)
        t = np.arange(0, 20, 0.1)
        vals = np.array([d(x) for x in t])
        assert np.all(np.abs(vals) <= 1.0)
        assert np.array_equal(d(0.0), d(1.99))
        assert not np.array_equal(d(1.99), d(2.0))

    def test_seeded(self):
        a, b = Disturbance(seed=5), Disturbance(seed=5)
        assert all(np.array_equal(a(t), b(t)) for t in np.arange(0, 30, 0.7))
