"""Finite-difference simulator of the quadrotor carrying an extensible cable.

The cable is split into ``N`` segments of rest length ``h_s = L / N``.
Node 0 is the quadrotor centre of mass; nodes 1..N follow the central
difference stencil, closed at the free tail by a ghost node that keeps the
tail unstrained.  The head node follows the whole-cable momentum balance so
the cable tension at the quadrotor never has to be formed explicitly.

Two implementations live side by side: readable NumPy functions that
evaluate one right-hand side (used by the tests as the reference), and a
compiled kernel that advances the packed state through many RK4 steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import model
from .errors import DegenerateSegment, GimbalLock, NumericalBlowup
from .params import Attitude, CableParams, QuadParams

BLOWUP_LIMIT = 1e6

HEAD_FREE = 0
HEAD_PRESCRIBED = 1

_OK, _DEGENERATE, _GIMBAL, _BLOWUP = 0, 1, 2, 3


@dataclass
class FdmState:
    positions: np.ndarray  # (N+1, 3)
    velocities: np.ndarray  # (N+1, 3)
    attitude: Attitude = field(default_factory=Attitude)

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float)
        self.velocities = np.array(self.velocities, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or self.positions.shape[0] < 3:
            raise ValueError("positions must be (N+1, 3) with N >= 2")
        if self.velocities.shape != self.positions.shape:
            raise ValueError("velocities must match positions")

    @property
    def segments(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def head(self) -> np.ndarray:
        return self.positions[0]

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.positions.ravel(), self.attitude.angles, self.velocities.ravel(), self.attitude.rates]
        )

    @classmethod
    def unpack(cls, y: np.ndarray, n_nodes: int) -> "FdmState":
        k = 3 * n_nodes
        return cls(
            positions=y[:k].reshape(n_nodes, 3).copy(),
            velocities=y[k + 3 : 2 * k + 3].reshape(n_nodes, 3).copy(),
            attitude=Attitude(y[k : k + 3].copy(), y[2 * k + 3 : 2 * k + 6].copy()),
        )

    def copy(self) -> "FdmState":
        return FdmState(self.positions.copy(), self.velocities.copy(), Attitude(self.attitude.angles, self.attitude.rates))

    @classmethod
    def straight(cls, n_segments: int, length: float, direction=(0.0, 0.0, -1.0), head=(0.0, 0.0, 0.0)):
        """Unstrained straight cable at rest, pointing along ``direction``."""
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        s = np.linspace(0.0, length, n_segments + 1)
        pos = np.asarray(head, dtype=float) + s[:, None] * d
        return cls(pos, np.zeros_like(pos))


@dataclass(frozen=True)
class FdmConfig:
    segments: int = 100
    dt: float = 5e-4
    dt_cap: float | None = None

    def __post_init__(self):
        if self.segments < 2:
            raise ValueError("segments must be >= 2")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def h_s(self, cable: CableParams) -> float:
        return cable.length / self.segments


class Disturbance:
    """Random rectangular-wave force, independent per axis and seeded.

    Each axis draws uniformly from ``[-bound, bound]`` and holds the value
    for ``1 / frequency`` seconds.
    """

    def __init__(self, seed: int = 0, bound: float = 1.0, frequency: float = 0.5):
        self.seed = int(seed)
        self.bound = float(bound)
        self.frequency = float(frequency)
        self._rng = np.random.default_rng(self.seed)
        self._samples = np.empty((0, 3))

    def sample(self, index: int) -> np.ndarray:
        while index >= len(self._samples):
            more = self._rng.uniform(-self.bound, self.bound, size=(64, 3))
            self._samples = np.vstack([self._samples, more])
        return self._samples[index].copy()

    def __call__(self, t: float) -> np.ndarray:
        return self.sample(int(math.floor(t * self.frequency + 1e-12)))

    @property
    def samples(self) -> np.ndarray:
        return self._samples.copy()


# ---------------------------------------------------------------------------
# Reference (NumPy) right-hand side
# ---------------------------------------------------------------------------


def ghost_tail_node(positions: np.ndarray, h_s: float) -> np.ndarray:
    """Point beyond the tail that makes the tail segment unstrained."""
    d = positions[-1] - positions[-2]
    norm = np.linalg.norm(d)
    if norm < model.MIN_SEGMENT:
        raise DegenerateSegment("tail segment has zero length", index=len(positions) - 1)
    return positions[-2] + 2.0 * h_s * d / norm


def interior_accelerations(state: FdmState, cable: CableParams, g: float = 9.8) -> np.ndarray:
    """Accelerations of nodes 1..N, shape (N, 3)."""
    pos = state.positions
    n = state.segments
    h = cable.length / n
    ext = np.vstack([pos, ghost_tail_node(pos, h)])
    seg = np.diff(ext, axis=0)  # seg[i] = r^{i+1} - r^i, i = 0..N
    lens = np.linalg.norm(seg, axis=1)
    bad = np.flatnonzero(lens < model.MIN_SEGMENT)
    if bad.size:
        raise DegenerateSegment(f"nodes {bad[0]} and {bad[0] + 1} coincide", index=int(bad[0]))
    unit = seg / lens[:, None]
    d_plus, d_minus = seg[1:], seg[:-1]
    elastic = (d_plus - d_minus) / h**2 - (unit[1:] - unit[:-1]) / h
    vel = state.velocities[1:]
    speed = np.linalg.norm(vel, axis=1)
    drag = cable.drag_per_length * speed[:, None] * vel / cable.linear_density
    return cable.young_modulus / cable.density * elastic - drag - g * model.E_Z


def head_acceleration(
    state: FdmState,
    thrust_world: np.ndarray,
    interior: np.ndarray,
    cable: CableParams,
    quad: QuadParams,
    disturbance=None,
) -> np.ndarray:
    """Quadrotor CoM acceleration from the trapezoidal momentum balance.

    ``thrust_world`` is R_B @ sum of rotor thrusts; ``interior`` are the
    node accelerations 1..N, which must be computed first.
    """
    n = state.segments
    h = cable.length / n
    rho_a = cable.linear_density
    g = quad.gravity
    vel = state.velocities
    q = np.linalg.norm(vel, axis=1)[:, None] * vel
    rhs = -(quad.mass + cable.mass) * g * model.E_Z + np.asarray(thrust_world, dtype=float)
    rhs -= 0.5 * rho_a * h * interior[0]
    rhs -= 0.5 * rho_a * h * (interior[1:] + interior[:-1]).sum(axis=0)
    rhs -= 0.5 * cable.drag_per_length * h * (q[1:] + q[:-1]).sum(axis=0)
    if disturbance is not None:
        rhs += disturbance
    return rhs / (quad.mass + 0.5 * rho_a * h)


def thrust_for_head_acceleration(state: FdmState, acc, cable: CableParams, quad: QuadParams) -> np.ndarray:
    """World-frame thrust that gives the head the acceleration ``acc``.

    Inverts the head momentum balance at the current cable state, so the
    instantaneous cable load is compensated rather than approximated by the
    static weight.
    """
    n = state.segments
    h = cable.length / n
    rho_a = cable.linear_density
    g = quad.gravity
    interior = interior_accelerations(state, cable, g)
    vel = state.velocities
    q = np.linalg.norm(vel, axis=1)[:, None] * vel
    load = 0.5 * rho_a * h * interior[0]
    load += 0.5 * rho_a * h * (interior[1:] + interior[:-1]).sum(axis=0)
    load += 0.5 * cable.drag_per_length * h * (q[1:] + q[:-1]).sum(axis=0)
    return (quad.mass + 0.5 * rho_a * h) * np.asarray(acc, dtype=float) + (quad.mass + cable.mass) * g * model.E_Z + load


def attitude_dynamics(att: Attitude, torque, quad: QuadParams):
    """Return (body angular acceleration, Euler-angle accelerations)."""
    J = np.asarray(quad.inertia)
    w = model.body_rates_from_euler_rates(att)
    w_dot = (np.asarray(torque, dtype=float) - np.cross(w, J * w)) / J
    euler_acc = model.euler_rate_matrix(att) @ w_dot + model.euler_rate_matrix_dot(att) @ w
    return w_dot, euler_acc


def state_derivative(state: FdmState, rotor_speeds, cable: CableParams, quad: QuadParams, disturbance=None):
    """Full right-hand side (NumPy reference): returns (node accels, euler accels)."""
    thrust, torque = model.thrust_and_torque(rotor_speeds, quad)
    R = model.rotation_from_attitude(state.attitude)
    interior = interior_accelerations(state, cable, quad.gravity)
    head = head_acceleration(state, R @ np.array([0, 0, thrust]), interior, cable, quad, disturbance)
    _, euler_acc = attitude_dynamics(state.attitude, torque, quad)
    return np.vstack([head, interior]), euler_acc


# ---------------------------------------------------------------------------
# Compiled kernel
# ---------------------------------------------------------------------------


def pack_params(cable: CableParams, quad: QuadParams, n_segments: int) -> np.ndarray:
    return np.array(
        [
            cable.young_modulus / cable.density,
            cable.length / n_segments,
            cable.drag_per_length / cable.linear_density,
            quad.gravity,
            cable.linear_density,
            cable.drag_per_length,
            cable.length,
            quad.mass,
            *quad.inertia,
        ]
    )


@numba.njit(cache=True)
def _deriv(y, n, prm, thrust, tau, dist, mode, head_acc, out):
    """Fill ``out`` with dy/dt; returns (status, index)."""
    e_rho, h, kdrag, g = prm[0], prm[1], prm[2], prm[3]
    lin, dpl, L, m_b = prm[4], prm[5], prm[6], prm[7]
    k = 3 * n
    N = n - 1
    # positions' derivative is the velocity block
    for j in range(k):
        out[j] = y[k + 3 + j]
    acc_off = k + 3
    # interior nodes
    for i in range(1, n):
        dmx = y[3 * i] - y[3 * i - 3]
        dmy = y[3 * i + 1] - y[3 * i - 2]
        dmz = y[3 * i + 2] - y[3 * i - 1]
        lm = math.sqrt(dmx * dmx + dmy * dmy + dmz * dmz)
        if lm < 1e-9:
            return _DEGENERATE, i - 1
        if i < N:
            dpx = y[3 * i + 3] - y[3 * i]
            dpy = y[3 * i + 4] - y[3 * i + 1]
            dpz = y[3 * i + 5] - y[3 * i + 2]
        else:
            # ghost: r^{N+1} = r^{N-1} + 2h (r^N - r^{N-1}) / |.|
            dpx = -dmx + 2.0 * h * dmx / lm
            dpy = -dmy + 2.0 * h * dmy / lm
            dpz = -dmz + 2.0 * h * dmz / lm
        lp = math.sqrt(dpx * dpx + dpy * dpy + dpz * dpz)
        if lp < 1e-9:
            return _DEGENERATE, i
        vx = y[k + 3 + 3 * i]
        vy = y[k + 3 + 3 * i + 1]
        vz = y[k + 3 + 3 * i + 2]
        sp = math.sqrt(vx * vx + vy * vy + vz * vz)
        hh = h * h
        out[acc_off + 3 * i] = e_rho * ((dpx - dmx) / hh - (dpx / lp - dmx / lm) / h) - kdrag * sp * vx
        out[acc_off + 3 * i + 1] = e_rho * ((dpy - dmy) / hh - (dpy / lp - dmy / lm) / h) - kdrag * sp * vy
        out[acc_off + 3 * i + 2] = e_rho * ((dpz - dmz) / hh - (dpz / lp - dmz / lm) / h) - kdrag * sp * vz - g
    tx = y[k]
    ty = y[k + 1]
    tz = y[k + 2]
    rate_off = 2 * k + 3
    if mode == 1:
        for c in range(3):
            out[acc_off + c] = head_acc[c]
        for c in range(3):
            out[k + c] = 0.0
            out[rate_off + c] = 0.0
        return _OK, 0
    # head: trapezoidal balance
    cx = math.cos(tx)
    sx = math.sin(tx)
    cy = math.cos(ty)
    sy = math.sin(ty)
    cz = math.cos(tz)
    sz = math.sin(tz)
    fw0 = (cz * sy * cx + sz * sx) * thrust
    fw1 = (sz * sy * cx - cz * sx) * thrust
    fw2 = cy * cx * thrust
    m_tot = m_b + lin * L
    head_den = m_b + 0.5 * lin * h
    for c in range(3):
        s = -0.5 * lin * h * out[acc_off + 3 + c]
        for i in range(2, n):
            s -= 0.5 * lin * h * (out[acc_off + 3 * i + c] + out[acc_off + 3 * i - 3 + c])
        q = 0.0
        for i in range(0, n):
            vx = y[k + 3 + 3 * i]
            vy = y[k + 3 + 3 * i + 1]
            vz = y[k + 3 + 3 * i + 2]
            sp = math.sqrt(vx * vx + vy * vy + vz * vz)
            w = 1.0 if (i > 0 and i < N) else 0.5
            q += w * sp * y[k + 3 + 3 * i + c]
        s -= dpl * h * q
        s += dist[c]
        if c == 0:
            s += fw0
        elif c == 1:
            s += fw1
        else:
            s += fw2 - m_tot * g
        out[acc_off + c] = s / head_den
    # attitude
    if abs(ty) > math.pi / 2 - 1e-3:
        return _GIMBAL, 0
    dx = y[rate_off]
    dy = y[rate_off + 1]
    dz = y[rate_off + 2]
    wx = dx - sy * dz
    wy = cx * dy + sx * cy * dz
    wz = -sx * dy + cx * cy * dz
    jx, jy, jz = prm[8], prm[9], prm[10]
    wdx = (tau[0] - (wy * jz * wz - wz * jy * wy)) / jx
    wdy = (tau[1] - (wz * jx * wx - wx * jz * wz)) / jy
    wdz = (tau[2] - (wx * jy * wy - wy * jx * wx)) / jz
    tny = sy / cy
    sec2 = 1.0 / (cy * cy)
    # T @ w_dot
    e0 = wdx + sx * tny * wdy + cx * tny * wdz
    e1 = cx * wdy - sx * wdz
    e2 = (sx * wdy + cx * wdz) / cy
    # Tdot @ w
    t01 = cx * tny * dx + sx * sec2 * dy
    t02 = -sx * tny * dx + cx * sec2 * dy
    t11 = -sx * dx
    t12 = -cx * dx
    t21 = cx / cy * dx + sx * sy * sec2 * dy
    t22 = -sx / cy * dx + cx * sy * sec2 * dy
    for c in range(3):
        out[k + c] = y[rate_off + c]
    out[rate_off] = e0 + t01 * wy + t02 * wz
    out[rate_off + 1] = e1 + t11 * wy + t12 * wz
    out[rate_off + 2] = e2 + t21 * wy + t22 * wz
    return _OK, 0


@numba.njit(cache=True)
def _advance(y, n, prm, thrust, tau, dist, mode, head_acc, dt, nsteps):
    """RK4 for ``nsteps`` steps in place; head_acc is (nsteps, 3, 3) when prescribed, else (1, 3, 3)."""
    m = y.size
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    for step in range(nsteps):
        hs = step if mode == 1 else 0
        st, idx = _deriv(y, n, prm, thrust, tau, dist, mode, head_acc[hs, 0], k1)
        if st != _OK:
            return st, idx, step
        for j in range(m):
            tmp[j] = y[j] + 0.5 * dt * k1[j]
        st, idx = _deriv(tmp, n, prm, thrust, tau, dist, mode, head_acc[hs, 1], k2)
        if st != _OK:
            return st, idx, step
        for j in range(m):
            tmp[j] = y[j] + 0.5 * dt * k2[j]
        st, idx = _deriv(tmp, n, prm, thrust, tau, dist, mode, head_acc[hs, 1], k3)
        if st != _OK:
            return st, idx, step
        for j in range(m):
            tmp[j] = y[j] + dt * k3[j]
        st, idx = _deriv(tmp, n, prm, thrust, tau, dist, mode, head_acc[hs, 2], k4)
        if st != _OK:
            return st, idx, step
        bad = False
        for j in range(m):
            y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            v = y[j]
            if not (abs(v) <= 1e6):
                bad = True
        if bad:
            return _BLOWUP, 0, step
    return _OK, 0, nsteps


_NO_HEAD = np.zeros((1, 3, 3))


class Simulator:
    """Holds a packed FDM state and advances it with zero-order-hold inputs.

    ``head`` switches the quadrotor node to a prescribed acceleration
    profile: a callable ``t -> (3,)`` or ``(T,) -> (T, 3)`` giving the head
    acceleration.  With ``head`` set the attitude is frozen and rotor inputs
    are ignored.
    """

    def __init__(self, state: FdmState, cable: CableParams, quad: QuadParams, config: FdmConfig | None = None, head=None, t0: float = 0.0):
        self.cable = cable
        self.quad = quad
        self.config = config or FdmConfig(segments=state.segments)
        if self.config.segments != state.segments:
            raise ValueError(f"state has {state.segments} segments, config expects {self.config.segments}")
        if self.config.dt_cap is not None and self.config.dt > self.config.dt_cap:
            raise ValueError(f"dt {self.config.dt} exceeds the configured cap {self.config.dt_cap}")
        self.n_nodes = state.segments + 1
        self.y = state.pack()
        self.t = float(t0)
        self.head = head
        self._prm = pack_params(cable, quad, state.segments)
        self._check(self.y)

    @property
    def state(self) -> FdmState:
        return FdmState.unpack(self.y, self.n_nodes)

    def set_state(self, state: FdmState):
        self.y = state.pack()

    def _check(self, y):
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > BLOWUP_LIMIT:
            raise NumericalBlowup(f"state not finite or above {BLOWUP_LIMIT} at t = {self.t:.4f} s", time=self.t)

    def _head_profile(self, nsteps):
        dt = self.config.dt
        t = self.t + dt * np.arange(nsteps)
        times = np.stack([t, t + 0.5 * dt, t + dt], axis=1).ravel()
        acc = np.asarray(self.head(times), dtype=float).reshape(nsteps, 3, 3)
        return np.ascontiguousarray(acc)

    def advance(self, nsteps: int, rotor_speeds=None, disturbance=None):
        """Take ``nsteps`` RK4 steps holding rotor speeds and disturbance fixed."""
        if nsteps <= 0:
            return
        if self.head is None:
            thrust, tau = model.thrust_and_torque(rotor_speeds, self.quad)
            mode, head_acc = HEAD_FREE, _NO_HEAD
        else:
            thrust, tau = 0.0, np.zeros(3)
            mode, head_acc = HEAD_PRESCRIBED, self._head_profile(nsteps)
        dist = np.zeros(3) if disturbance is None else np.asarray(disturbance, dtype=float)
        status, idx, done = _advance(
            self.y, self.n_nodes, self._prm, float(thrust), np.asarray(tau, dtype=float), dist,
            mode, head_acc, self.config.dt, nsteps,
        )
        t_fail = self.t + done * self.config.dt
        if status == _DEGENERATE:
            raise DegenerateSegment(f"degenerate segment at node {idx}, t = {t_fail:.4f} s", index=int(idx))
        if status == _GIMBAL:
            raise GimbalLock(f"pitch reached gimbal lock at t = {t_fail:.4f} s")
        if status == _BLOWUP:
            self.t = t_fail
            raise NumericalBlowup(f"numerical blow-up at t = {t_fail:.4f} s", time=t_fail)
        self.t += nsteps * self.config.dt
        # guard against float drift in the clock
        self.t = round(self.t, 12)


def rk4_step(state: FdmState, rotor_speeds, dt: float, cable: CableParams, quad: QuadParams, disturbance=None) -> FdmState:
    sim = Simulator(state, cable, quad, FdmConfig(segments=state.segments, dt=dt))
    sim.advance(1, rotor_speeds, disturbance)
    return sim.state


def hover_rotor_speeds(cable: CableParams, quad: QuadParams) -> np.ndarray:
    weight = (quad.mass + cable.mass) * quad.gravity
    if len(set(quad.thrust_coeffs)) == 1 and len(set(quad.drag_coeffs)) == 1:
        # equal speeds give an exactly zero torque, solving would leave round-off
        return np.full(4, math.sqrt(weight / sum(quad.thrust_coeffs)))
    return model.allocate_rotors(weight, np.zeros(3), quad)


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    times: np.ndarray
    positions: np.ndarray  # (T, N+1, 3)
    velocities: np.ndarray  # (T, N+1, 3)
    angles: np.ndarray  # (T, 3)
    rates: np.ndarray  # (T, 3)
    meta: dict = field(default_factory=dict)

    @property
    def segments(self) -> int:
        return self.positions.shape[1] - 1

    def state(self, k: int) -> FdmState:
        return FdmState(self.positions[k], self.velocities[k], Attitude(self.angles[k], self.rates[k]))

    def __len__(self):
        return len(self.times)


class Recorder:
    def __init__(self):
        self.t, self.p, self.v, self.a, self.w = [], [], [], [], []

    def __call__(self, t, state: FdmState):
        self.t.append(t)
        self.p.append(state.positions.copy())
        self.v.append(state.velocities.copy())
        self.a.append(state.attitude.angles.copy())
        self.w.append(state.attitude.rates.copy())

    def record(self, meta=None) -> RunRecord:
        return RunRecord(
            np.array(self.t), np.array(self.p), np.array(self.v), np.array(self.a), np.array(self.w), dict(meta or {})
        )


def simulate(
    state: FdmState,
    cable: CableParams,
    quad: QuadParams,
    duration: float,
    controller=None,
    config: FdmConfig | None = None,
    control_period: float = 0.02,
    record_period: float | None = None,
    disturbance=None,
    head=None,
    on_tick=None,
    inner_period: float | None = 0.001,
) -> RunRecord:
    """Run the FDM plant in closed loop.

    ``controller(t, state) -> rotor speeds`` is sampled every
    ``control_period`` (zero-order hold).  Without a controller and without
    a prescribed ``head``, the rotors hold the hover speeds.  Snapshots are
    recorded every ``record_period`` (defaults to the control period).
    ``on_tick(t, state, speeds)`` is an optional observer.

    Controllers that also expose ``inner(state) -> rotor speeds`` get their
    attitude loop re-evaluated every ``inner_period`` between outer ticks.
    """
    config = config or FdmConfig(segments=state.segments)
    sim = Simulator(state, cable, quad, config, head=head)
    sub = int(round(control_period / config.dt))
    if abs(sub * config.dt - control_period) > 1e-9 * control_period or sub < 1:
        raise ValueError("control_period must be a multiple of the physics step")
    record_period = control_period if record_period is None else record_period
    rec_every = int(round(record_period / config.dt))
    if rec_every % sub and sub % rec_every:
        raise ValueError("record_period and control_period must nest")
    inner = getattr(controller, "inner", None) if inner_period else None
    in_every = max(1, int(round(inner_period / config.dt))) if inner is not None else sub
    if sub % in_every:
        raise ValueError("inner_period must divide control_period")
    n_total = int(round(duration / config.dt))
    hover = hover_rotor_speeds(cable, quad) if head is None else None
    rec = Recorder()
    rec(sim.t, sim.state)
    chunk = int(np.gcd(in_every, rec_every))
    speeds = hover
    step = 0
    while step < n_total:
        if step % sub == 0:
            st = sim.state
            if controller is not None:
                speeds = np.asarray(controller(sim.t, st), dtype=float)
            if on_tick is not None:
                on_tick(sim.t, st, speeds)
        elif inner is not None and step % in_every == 0:
            speeds = np.asarray(inner(sim.state), dtype=float)
        d = disturbance(sim.t) if disturbance is not None else None
        n = min(chunk, n_total - step)
        sim.advance(n, speeds, d)
        step += n
        if step % rec_every == 0:
            rec(sim.t, sim.state)
    meta = {"segments": config.segments, "dt": config.dt, "control_period": control_period, "length": cable.length}
    if isinstance(disturbance, Disturbance):
        meta["disturbance_seed"] = disturbance.seed
    return rec.record(meta)


# ---------------------------------------------------------------------------
# Energy (for conservation checks)
# ---------------------------------------------------------------------------


def cable_energy(state: FdmState, cable: CableParams, g: float = 0.0) -> float:
    """Kinetic + elastic (+ gravitational) energy of nodes 1..N.

    Node masses follow the trapezoid rule (the tail node carries half a
    segment), which is the weighting under which the stencil is conservative.
    """
    n = state.segments
    h = cable.length / n
    lin = cable.linear_density
    w = np.ones(n)
    w[-1] = 0.5
    v2 = np.sum(state.velocities[1:] ** 2, axis=1)
    kinetic = 0.5 * lin * h * np.sum(w * v2)
    eps = np.linalg.norm(np.diff(state.positions, axis=0), axis=1) / h - 1.0
    elastic = 0.5 * cable.EA * h * np.sum(eps**2)
    potential = lin * h * g * np.sum(w * state.positions[1:, 2])
    return float(kinetic + elastic + potential)
