"""Cascade PD position/attitude control of the quadrotor.

The outer loop turns a position error into a thrust magnitude and desired
roll/pitch; the inner loop turns attitude error into body torque.  The
same inner loop (and the same acceleration-to-attitude mapping) is reused
by the predictive controller, which supplies the desired acceleration
directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import model
from .errors import NumericalBlowup, UnreachableAttitude
from .params import Attitude, CableParams, QuadParams

log = logging.getLogger(__name__)

ARCSIN_TOL = 1e-6


@dataclass
class PidGains:
    kp_pos: np.ndarray = field(default_factory=lambda: np.full(3, 8.0))
    kd_pos: np.ndarray = field(default_factory=lambda: np.full(3, 4.0))
    kp_att: np.ndarray = field(default_factory=lambda: np.full(3, 1500.0))
    kd_att: np.ndarray = field(default_factory=lambda: np.full(3, 80.0))

    def __post_init__(self):
        for name in ("kp_pos", "kd_pos", "kp_att", "kd_att"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if np.any(v < 0):
                raise ValueError(f"{name} entries must be non-negative")
            setattr(self, name, v)

    @property
    def position_vector(self) -> np.ndarray:
        return np.concatenate([self.kp_pos, self.kd_pos])

    def with_position(self, vec) -> "PidGains":
        vec = np.asarray(vec, dtype=float)
        return PidGains(vec[:3], vec[3:6], self.kp_att.copy(), self.kd_att.copy())

    @classmethod
    def tuned(cls) -> "PidGains":
        """Position gains reported for the regulation task after tuning."""
        return cls(kp_pos=[5.2930, 5.6560, 10.6966], kd_pos=[2.3990, 4.2314, 2.5508])


@dataclass
class AttitudeCommand:
    thrust: float
    angles: np.ndarray
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _safe_arcsin(x: float, what: str) -> float:
    if abs(x) > 1.0 + ARCSIN_TOL:
        raise UnreachableAttitude(f"{what}: arcsin argument {x:.6f} outside [-1, 1]")
    return float(np.arcsin(np.clip(x, -1.0, 1.0)))


def attitude_from_acceleration(acc, mass: float, g: float = 9.8) -> AttitudeCommand:
    """Thrust magnitude and roll/pitch that realise a desired CoM acceleration.

    Heading and desired angular rates are zero.  Roll carries a minus sign
    so that R(theta) @ E_z points along ``acc + g E_z`` for the
    Z-Y-X rotation used by the simulator.
    """
    if not mass > 0:
        raise ValueError("mass must be positive")
    acc = np.asarray(acc, dtype=float)
    f_vec = mass * (acc + g * model.E_Z)
    thrust = float(np.linalg.norm(f_vec))
    if thrust <= 0:
        raise UnreachableAttitude("desired acceleration cancels gravity; thrust would be zero")
    tx = _safe_arcsin(-mass * acc[1] / thrust, "roll")
    ty = _safe_arcsin(mass * acc[0] / (thrust * np.cos(tx)), "pitch")
    return AttitudeCommand(thrust, np.array([tx, ty, 0.0]), np.zeros(3))


def outer_loop(pos, vel, ref_pos, ref_vel, gains: PidGains, mass: float, g: float = 9.8, ref_acc=None) -> AttitudeCommand:
    acc = gains.kp_pos * (np.asarray(ref_pos) - pos) + gains.kd_pos * (np.asarray(ref_vel) - vel)
    if ref_acc is not None:
        acc = acc + ref_acc
    return attitude_from_acceleration(acc, mass, g)


def inner_loop(att: Attitude, command: AttitudeCommand, gains: PidGains, quad: QuadParams) -> np.ndarray:
    """Desired body torque tracking the commanded Euler angles."""
    euler_acc = gains.kp_att * (command.angles - att.angles) + gains.kd_att * (command.rates - att.rates)
    w = model.body_rates_from_euler_rates(att)
    w_dot = model.inverse_euler_rate_matrix(att) @ (euler_acc - model.euler_rate_matrix_dot(att) @ w)
    J = np.asarray(quad.inertia)
    return J * w_dot + np.cross(w, J * w)


THRUST_MODES = ("plain", "project", "vertical")


def command_to_rotors(state, command: AttitudeCommand, gains: PidGains, quad: QuadParams, thrust_mode: str = "plain") -> np.ndarray:
    """Rotor speeds for a thrust/attitude command.

    ``thrust_mode`` decides how the thrust magnitude reacts to a tilt that
    has not yet caught up with the command: ``plain`` keeps it, ``project``
    projects the commanded force on the current body z axis, and
    ``vertical`` rescales it so the vertical force component matches the
    command exactly.
    """
    torque = inner_loop(state.attitude, command, gains, quad)
    thrust = command.thrust
    if thrust_mode != "plain":
        want = model.rotation_from_attitude(command.angles)[:, 2]
        have = model.rotation_from_attitude(state.attitude.angles)[:, 2]
        if thrust_mode == "project":
            thrust = max(thrust * float(want @ have), 0.0)
        elif thrust_mode == "vertical":
            thrust = max(thrust * want[2] / max(have[2], 0.2), 0.0)
        else:
            raise ValueError(f"unknown thrust mode {thrust_mode!r}; expected one of {THRUST_MODES}")
    return model.allocate_rotors(thrust, torque, quad, saturate=True)


class PidController:
    """Cascade PD controller usable as an FDM ``controller(t, state)``.

    ``reference(t)`` returns ``(position, velocity)`` or
    ``(position, velocity, acceleration)`` of the head; the acceleration is
    used as feedforward only when ``feedforward`` is set.
    """

    def __init__(self, cable: CableParams, quad: QuadParams, gains: PidGains, reference, feedforward: bool = False):
        self.cable = cable
        self.quad = quad
        self.gains = gains
        self.reference = reference
        self.feedforward = feedforward
        self.mass = quad.mass + cable.mass
        self.last_command = None

    def command(self, t, state) -> AttitudeCommand:
        ref = self.reference(t)
        ff = ref[2] if (self.feedforward and len(ref) > 2) else None
        return outer_loop(state.positions[0], state.velocities[0], ref[0], ref[1], self.gains, self.mass, self.quad.gravity, ff)

    def __call__(self, t, state):
        self.last_command = self.command(t, state)
        return command_to_rotors(state, self.last_command, self.gains, self.quad)

    def inner(self, state):
        return command_to_rotors(state, self.last_command, self.gains, self.quad)


def fixed_point_reference(point):
    p = np.asarray(point, dtype=float)
    z = np.zeros(3)
    return lambda t: (p, z, z)


def sweep_reference(t, amplitude=0.1, f_start=0.05, f_end=0.6, duration=40.0, offset=(0.0, 0.0, 0.0)):
    """Linear-chirp position reference on all three axes.

    Returns position, velocity and acceleration, each shaped ``t.shape + (3,)``.
    """
    if duration <= 0 or f_start <= 0 or f_end < f_start:
        raise ValueError("need duration > 0 and f_end >= f_start > 0")
    t = np.asarray(t, dtype=float)
    amp = np.broadcast_to(np.asarray(amplitude, dtype=float), (3,))
    k = (f_end - f_start) / duration
    phase = 2 * np.pi * (f_start * t + 0.5 * k * t**2)
    dphase = 2 * np.pi * (f_start + k * t)
    ddphase = 2 * np.pi * k
    s, c = np.sin(phase)[..., None], np.cos(phase)[..., None]
    pos = amp * s + np.asarray(offset, dtype=float)
    vel = amp * c * dphase[..., None]
    acc = amp * (-s * dphase[..., None] ** 2 + c * ddphase)
    return pos, vel, acc


# ---------------------------------------------------------------------------
# Gain tuning
# ---------------------------------------------------------------------------


@dataclass
class TuneResult:
    x: np.ndarray
    value: float
    initial_value: float
    trace: list
    at_bound: np.ndarray
    iterations: int


def _safe_eval(objective, x):
    try:
        v = float(objective(x))
    except (NumericalBlowup, UnreachableAttitude) as exc:
        log.info("candidate %s failed: %s", x, exc)
        return np.inf
    return v if np.isfinite(v) else np.inf


def tune_gains(objective, x0, bounds=(0.0, 20.0), fd_step=0.05, max_iter=30, tol=1e-6, alpha0=None, shrink=0.5, max_backtracks=12) -> TuneResult:
    """Projected gradient descent with central finite differences.

    ``objective(x)`` is evaluated by the caller (typically a full closed
    loop rollout); failures score ``+inf``.  The search is deterministic
    and never returns a point worse than ``x0``.
    """
    lo, hi = bounds
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f = _safe_eval(objective, x)
    f0 = f
    trace = [{"iter": 0, "x": x.tolist(), "f": f}]
    alpha = alpha0
    it = 0
    for it in range(1, max_iter + 1):
        grad = np.zeros_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = fd_step
            up, dn = np.clip(x + e, lo, hi), np.clip(x - e, lo, hi)
            fu, fd = _safe_eval(objective, up), _safe_eval(objective, dn)
            span = up[i] - dn[i]
            grad[i] = (fu - fd) / span if np.isfinite(fu) and np.isfinite(fd) and span > 0 else 0.0
        gnorm = np.max(np.abs(grad))
        if gnorm == 0:
            break
        if alpha is None:
            alpha = 1.0 / gnorm  # first move of about one gain unit
        accepted = False
        a = 2.0 * alpha
        for _ in range(max_backtracks):
            cand = np.clip(x - a * grad, lo, hi)
            fc = _safe_eval(objective, cand)
            if fc < f - 1e-4 * np.dot(grad, x - cand):
                accepted = True
                break
            a *= shrink
        if not accepted:
            break
        step = np.max(np.abs(cand - x))
        x, f, alpha = cand, fc, a
        trace.append({"iter": it, "x": x.tolist(), "f": f})
        if step < tol:
            break
    at_bound = (x <= lo + 1e-12) | (x >= hi - 1e-12)
    return TuneResult(x, f, f0, trace, at_bound, it)
