"""Receding-horizon control of the cable shape on the reduced model.

The optimisation variable is the head-acceleration sequence over the
horizon.  Gradients of the RK4 rollout come from per-step Jacobians and
one backward (adjoint) sweep; the solver is a projected gradient method
with Barzilai-Borwein steps and a monotone Armijo backtrack.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import pod
from .control import AttitudeCommand, PidGains, attitude_from_acceleration, command_to_rotors
from .fdm import thrust_for_head_acceleration
from .model import E_Z
from .params import CableParams, QuadParams
from . import rom
from .rom import RomModel

log = logging.getLogger(__name__)


def _mode_weights(K, modes, head, mode_rates, head_vel):
    """Diagonal Q for any K: per-mode triples, extra modes reuse the last weight."""

    def expand(values):
        values = [np.broadcast_to(np.asarray(v, float), (3,)) for v in values]
        values += [values[-1]] * max(0, K - len(values))
        return np.concatenate(values[:K])

    return np.concatenate([expand(modes), np.broadcast_to(np.asarray(head, float), (3,)), expand(mode_rates), np.broadcast_to(np.asarray(head_vel, float), (3,))])


# Downward head acceleration near -g would need zero or negative thrust.
@dataclass
class OcpConfig:
    horizon: float = 0.4
    step: float = 0.02
    Q: np.ndarray | None = None
    R: np.ndarray = field(default_factory=lambda: np.full(3, 0.001))
    u_lo: np.ndarray = field(default_factory=lambda: np.array([-20.0, -20.0, -5.0]))
    u_hi: np.ndarray = field(default_factory=lambda: np.full(3, 20.0))
    tol: float = 1e-4
    max_iter: int = 200
    K: int = 3

    def __post_init__(self):
        H = self.horizon / self.step
        if self.step <= 0 or abs(H - round(H)) > 1e-9 or round(H) < 1:
            raise ValueError("horizon must be a positive integer multiple of step")
        if self.Q is None:
            self.Q = regulation_weights(self.K)
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.broadcast_to(np.asarray(self.R, dtype=float), (3,)).copy()
        self.u_lo = np.broadcast_to(np.asarray(self.u_lo, dtype=float), (3,)).copy()
        self.u_hi = np.broadcast_to(np.asarray(self.u_hi, dtype=float), (3,)).copy()
        if self.Q.shape != (6 * (self.K + 1),):
            raise ValueError(f"Q needs {6 * (self.K + 1)} diagonal entries for K = {self.K}")
        if np.any(self.Q < 0) or np.any(self.R < 0):
            raise ValueError("weights must be non-negative")
        if np.any(self.u_lo >= self.u_hi):
            raise ValueError("need u_lo < u_hi on every axis")

    @property
    def H(self) -> int:
        return int(round(self.horizon / self.step))

    def with_(self, **kw) -> "OcpConfig":
        return replace(self, **kw)

    @classmethod
    def simulation(cls, K: int = 3, **kw) -> "OcpConfig":
        return cls(horizon=0.4, step=0.02, K=K, **kw)

    @classmethod
    def experiment(cls, K: int = 3, **kw) -> "OcpConfig":
        kw.setdefault("Q", experiment_weights(K))
        kw.setdefault("R", np.full(3, 0.05))
        return cls(horizon=0.03, step=0.01, K=K, **kw)


def regulation_weights(K: int = 3) -> np.ndarray:
    return _mode_weights(K, [100, 10, 10], 20, [10, 1, 1], 5)


def crossing_weights(K: int = 3) -> np.ndarray:
    return _mode_weights(K, [10, 10, 10], 200, [10, 1, 1], 20)


def experiment_weights(K: int = 3) -> np.ndarray:
    return _mode_weights(K, [20, 5, 1], [500, 500, 20], [[10, 10, 20], 10, 0.1], [5, 5, 2])


def experiment_crossing_weights(K: int = 3) -> np.ndarray:
    return _mode_weights(K, [1, 1, 1], [10000, 10000, 1000], [0.2, 0.2, 0.1], 30)


@dataclass
class OcpSolution:
    controls: np.ndarray  # (H, 3)
    states: np.ndarray  # (H+1, n)
    objective: float
    iterations: int
    solve_time: float
    converged: bool
    trace: list = field(default_factory=list)


def objective(states, controls, reference, Q, R) -> float:
    """Weighted state error over steps 1..H plus input effort over 0..H-1."""
    e = states[1:] - reference
    return float(np.sum(e * e * Q) + np.sum(controls * controls * R))


def _gradient(states, As, Bs, controls, reference, Q, R):
    H = controls.shape[0]
    grad = np.empty_like(controls)
    lam = 2.0 * Q * (states[H] - reference[H - 1])
    for k in range(H - 1, -1, -1):
        grad[k] = Bs[k].T @ lam + 2.0 * R * controls[k]
        if k > 0:
            lam = 2.0 * Q * (states[k] - reference[k - 1]) + As[k].T @ lam
    return grad


def lag_factors(tau, dt: float) -> np.ndarray:
    """Per-axis (mean over a step, end of step) fractions of a commanded
    change realised through first-order lags with time constants ``tau``."""
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (3,))
    out = np.ones((2, 3))
    for c, t in enumerate(tau):
        if t > 0:
            end = -np.expm1(-dt / t)
            out[:, c] = (1.0 - t / dt * end, end)
    return out


def solve_ocp(x0, reference, config: OcpConfig, model, warm_start=None, input_lag=None, lag_state=None) -> OcpSolution:
    """Box-constrained finite-horizon problem by projected gradient descent.

    ``model`` provides ``rollout(x0, U, dt)`` and
    ``rollout_sensitivities(x0, U, dt)`` (a :class:`RomModel` does).
    ``reference`` holds X^r_1..X^r_H; a shorter one is padded with its last row.
    ``input_lag`` optionally gives per-axis time constants through which the
    commands reach the head (the reduced model then sees the lagged
    acceleration, starting from ``lag_state``); the input penalty stays on
    the commands themselves.
    """
    t_start = time.perf_counter()
    H, dt = config.H, config.step
    Q, R, lo, hi = config.Q, config.R, config.u_lo, config.u_hi
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if reference.shape[0] < H:
        log.info("reference shorter than horizon (%d < %d); holding last state", reference.shape[0], H)
        reference = np.vstack([reference, np.repeat(reference[-1:], H - reference.shape[0], axis=0)])
    reference = reference[:H]
    U = np.zeros((H, 3)) if warm_start is None else np.clip(np.asarray(warm_start, dtype=float).reshape(H, 3), lo, hi)
    lag = lag_factors(0.0 if input_lag is None else input_lag, dt)
    a0 = np.zeros(3) if lag_state is None else np.asarray(lag_state, dtype=float)
    if isinstance(model, RomModel):
        trace = np.empty(config.max_iter + 1)
        U, xs, f, it, conv, nt, status = rom._pg_solve(
            np.asarray(x0, dtype=float), np.ascontiguousarray(reference), Q, R, lo, hi, U, dt, config.tol, config.max_iter,
            model.phi, model.weights, model.integrals, model.prm, trace, lag, a0,
        )
        rom._raise_on(status)
        return OcpSolution(U, xs, float(f), int(it), time.perf_counter() - t_start, bool(conv), list(trace[:nt]))

    if not np.all(lag == 1.0):
        raise ValueError("input lag is only supported with the reduced cable model")
    xs, As, Bs = model.rollout_sensitivities(x0, U, dt)
    f = objective(xs, U, reference, Q, R)
    g = _gradient(xs, As, Bs, U, reference, Q, R)
    trace = [f]
    alpha = 1.0 / (2.0 * (np.max(R) + np.max(Q) * dt * dt * H) + 1e-12)
    converged = False
    it = 0
    U_prev = g_prev = None
    for it in range(1, config.max_iter + 1):
        pg = U - np.clip(U - g, lo, hi)
        if np.max(np.abs(pg)) <= config.tol:
            converged = True
            it -= 1
            break
        if U_prev is not None:
            s, y = (U - U_prev).ravel(), (g - g_prev).ravel()
            sy = s @ y
            if sy > 1e-16:
                alpha = min(max((s @ s) / sy, 1e-8), 1e4)
        # monotone backtracking on the projected step
        for _ in range(40):
            U_new = np.clip(U - alpha * g, lo, hi)
            d = U_new - U
            xs_new = model.rollout(x0, U_new, dt)
            f_new = objective(xs_new, U_new, reference, Q, R)
            if f_new <= f + 1e-4 * np.sum(g * d) or np.max(np.abs(d)) < 1e-14:
                break
            alpha *= 0.5
        if f_new > f:
            # no descent possible at machine precision
            converged = np.max(np.abs(pg)) <= config.tol
            break
        U_prev, g_prev = U, g
        U = U_new
        xs, As, Bs = model.rollout_sensitivities(x0, U, dt)
        f = objective(xs, U, reference, Q, R)
        g = _gradient(xs, As, Bs, U, reference, Q, R)
        trace.append(f)
    else:
        pg = U - np.clip(U - g, lo, hi)
        converged = np.max(np.abs(pg)) <= config.tol
    return OcpSolution(U, xs, f, it, time.perf_counter() - t_start, bool(converged), trace)


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------


@dataclass
class TelemetryRow:
    t: float
    iters: int
    converged: bool
    obj: float
    solve_ms: float
    u: np.ndarray


def shift_warm_start(controls: np.ndarray) -> np.ndarray:
    return np.vstack([controls[1:], controls[-1:]])


def steady_reference(bank: pod.ModeBank, cable: CableParams, head, g: float = 9.8, refine: bool = False) -> np.ndarray:
    """ROM state of the hanging cable at rest below ``head``.

    The projected rest shape is only approximately a fixed point of the
    truncated model; ``refine`` moves the coefficients to the nearby exact
    fixed point so the controller is not asked to hold an unsteady state.
    """
    shape = pod.steady_shape(cable, bank.M + 1, head, g)
    x = pod.project(shape, np.zeros_like(shape), bank).to_vector()
    if refine:
        x = RomModel.build(bank, cable, g).equilibrium(x)
    return x


def constant_reference(x):
    x = np.asarray(x, dtype=float)
    return lambda t, H, dt: np.tile(x, (H, 1))


class NmpcController:
    """FDM ``controller(t, state)`` wrapping one OCP solve per call.

    ``reference(t, H, dt)`` returns the target states at t+dt, ..., t+H dt.
    The first optimal head acceleration is turned into thrust and attitude
    by the same mapping the cascade controller uses, and the attitude loop
    closes with ``gains``.  With ``load_compensation`` the mapping instead
    inverts the head momentum balance at the measured cable state on every
    inner-loop call, so the commanded head acceleration is what the head
    actually receives.

    The attitude loop still needs time to tilt, so by default the OCP is
    told that lateral commands reach the head through a first-order lag with
    time constant ``kd/kp`` of the attitude gains (``input_lag`` overrides,
    zero disables).  The lag state is propagated from the issued commands.

    ``phases`` optionally lists ``(t_start, config, reference)`` stages (for
    example tracking a plan, then regulating); the stage with the latest
    start not after the tick time is active.
    """

    def __init__(self, cable: CableParams, quad: QuadParams, bank: pod.ModeBank, config: OcpConfig, reference, gains: PidGains | None = None, model: RomModel | None = None, thrust_mode: str = "vertical", load_compensation: bool = True, input_lag=None, phases=None):
        if bank.K != config.K:
            bank = bank.truncate(config.K)
        self.cable, self.quad, self.bank, self.config = cable, quad, bank, config
        self.model = model or RomModel.build(bank, cable, quad.gravity)
        self.reference = reference
        self.gains = gains or PidGains()
        self.mass = quad.mass + cable.mass
        self.previous: OcpSolution | None = None
        self.telemetry: list[TelemetryRow] = []
        self.last_command: AttitudeCommand | None = None
        self.thrust_mode = thrust_mode
        self.load_compensation = load_compensation
        self.last_control = np.zeros(3)
        if input_lag is None:
            tau = np.asarray(self.gains.kd_att, dtype=float) / np.asarray(self.gains.kp_att, dtype=float)
            input_lag = np.broadcast_to(tau, (3,)).copy()
            if thrust_mode == "vertical":
                input_lag[2] = 0.0
        self.input_lag = np.broadcast_to(np.asarray(input_lag, dtype=float), (3,)).copy()
        self.lag_state = np.zeros(3)
        self.phases = sorted(phases or [(0.0, config, reference)], key=lambda p: p[0])
        self.phase = -1

    def measure(self, state) -> np.ndarray:
        return pod.project(state.positions, state.velocities, self.bank).to_vector()

    def _select_phase(self, t: float):
        idx = max(i for i, p in enumerate(self.phases) if p[0] <= t + 1e-9) if t + 1e-9 >= self.phases[0][0] else 0
        if idx != self.phase:
            _, config, reference = self.phases[idx]
            if config.K != self.config.K:
                raise ValueError("all phases must use the same number of modes")
            self.config, self.reference, self.phase = config, reference, idx
            self.previous = None

    def tick(self, t: float, state):
        self._select_phase(t)
        x0 = self.measure(state)
        ref = self.reference(t, self.config.H, self.config.step)
        warm = None if self.previous is None else shift_warm_start(self.previous.controls)
        sol = solve_ocp(x0, ref, self.config, self.model, warm, self.input_lag, self.lag_state)
        end = lag_factors(self.input_lag, self.config.step)[1]
        self.lag_state = self.lag_state + end * (sol.controls[0] - self.lag_state)
        if sol.solve_time > self.config.step:
            log.debug("OCP solve %.1f ms exceeded the %.1f ms step", 1e3 * sol.solve_time, 1e3 * self.config.step)
        self.previous = sol
        self.last_control = sol.controls[0].copy()
        cmd = self.command(state)
        self.telemetry.append(TelemetryRow(t, sol.iterations, sol.converged, sol.objective, 1e3 * sol.solve_time, sol.controls[0].copy()))
        return cmd, sol

    def command(self, state) -> AttitudeCommand:
        """Thrust and attitude realising the held head acceleration."""
        g = self.quad.gravity
        if not self.load_compensation:
            return attitude_from_acceleration(self.last_control, self.mass, g)
        force = thrust_for_head_acceleration(state, self.last_control, self.cable, self.quad)
        return attitude_from_acceleration(force / self.quad.mass - g * E_Z, self.quad.mass, g)

    def __call__(self, t, state):
        self.last_command, _ = self.tick(t, state)
        return command_to_rotors(state, self.last_command, self.gains, self.quad, self.thrust_mode)

    def inner(self, state):
        if self.load_compensation:
            self.last_command = self.command(state)
        return command_to_rotors(state, self.last_command, self.gains, self.quad, self.thrust_mode)
