"""Reference generation: head-tip trajectories, periodic cable references,
window constraints and a particle-swarm feasibility search."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import pod
from .errors import DegenerateSegment, NoConvergence, NoFeasibleSolution
from .rom import RomModel

log = logging.getLogger(__name__)

KINDS = ("fourier", "polynomial", "analytic")


# ---------------------------------------------------------------------------
# Head trajectories
# ---------------------------------------------------------------------------


def circle_reference(t, period: float = 5.0):
    """Horizontal circle of unit radius through the origin, centred at (-1, 0, 0)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    w = 2.0 * np.pi / period
    c, s = np.cos(w * t), np.sin(w * t)
    z = np.zeros_like(t)
    pos = np.stack([-1.0 + c, s, z], axis=1)
    vel = np.stack([-w * s, w * c, z], axis=1)
    acc = np.stack([-w * w * c, -w * w * s, z], axis=1)
    return pos, vel, acc


def eight_reference(t, period: float = 10.0, height: float = 1.5):
    """Experiment head path (sin, cos, height).  Despite its name the curve
    is a circle at constant height."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    w = 2.0 * np.pi / period
    c, s = np.cos(w * t), np.sin(w * t)
    z = np.zeros_like(t)
    pos = np.stack([s, c, np.full_like(t, height)], axis=1)
    vel = np.stack([w * c, -w * s, z], axis=1)
    acc = np.stack([-w * w * s, -w * w * c, z], axis=1)
    return pos, vel, acc


_ANALYTIC = {"circle": circle_reference, "eight": eight_reference}


@dataclass
class HeadTrajectory:
    """Head-tip path over ``[0, duration]`` with exact derivatives.

    ``fourier``: per active axis, x = a0 + sum a_i sin(i pi t / T) + b_i cos(i pi t / T)
    with ``a`` of length K_r+1 and ``b`` of length K_r.
    ``polynomial``: per active axis, x = sum a_i t^i with ``a`` of length K_r+1.
    ``analytic``: one of the named closed-form curves.
    Inactive axes hold ``offset``.
    """

    kind: str
    duration: float
    coeffs: dict = field(default_factory=dict)  # axis -> (a, b)
    name: str = ""
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {KINDS}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.kind == "analytic" and self.name not in _ANALYTIC:
            raise ValueError(f"unknown analytic curve {self.name!r}")
        self.offset = np.asarray(self.offset, dtype=float)
        self.coeffs = {int(k): (np.asarray(a, dtype=float), np.asarray(b, dtype=float)) for k, (a, b) in self.coeffs.items()}

    def evaluate(self, t):
        """Positions, velocities and accelerations at times ``t``, each (n, 3)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "analytic":
            return _ANALYTIC[self.name](t)
        pos = np.tile(self.offset, (t.size, 1))
        vel = np.zeros((t.size, 3))
        acc = np.zeros((t.size, 3))
        for axis, (a, b) in self.coeffs.items():
            if self.kind == "fourier":
                p, v, ac = _fourier(t, a, b, self.duration)
            else:
                p, v, ac = _polynomial(t, a)
            pos[:, axis], vel[:, axis], acc[:, axis] = p, v, ac
        return pos, vel, acc

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "duration": self.duration,
            "name": self.name,
            "offset": self.offset.tolist(),
            "coeffs": {str(k): {"a": a.tolist(), "b": b.tolist()} for k, (a, b) in self.coeffs.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadTrajectory":
        coeffs = {int(k): (v["a"], v["b"]) for k, v in d.get("coeffs", {}).items()}
        return cls(d["kind"], float(d["duration"]), coeffs, d.get("name", ""), d.get("offset", [0.0, 0.0, 0.0]))


def _fourier(t, a, b, T):
    w = np.pi * np.arange(1, len(a)) / T
    s, c = np.sin(np.outer(t, w)), np.cos(np.outer(t, w))
    pos = a[0] + s @ a[1:] + c @ b
    vel = c @ (a[1:] * w) - s @ (b * w)
    acc = -(s @ (a[1:] * w * w) + c @ (b * w * w))
    return pos, vel, acc


def _polynomial(t, a):
    p = np.polynomial.polynomial
    return p.polyval(t, a), p.polyval(t, p.polyder(a)), p.polyval(t, p.polyder(a, 2))


def fourier_from_free(free, K_r: int, duration: float, x0: float = 0.0, v0: float = 0.0):
    """Fourier coefficients whose path starts at ``x0`` with velocity ``v0``.

    ``free`` is ``[a_2, ..., a_K, b_1, ..., b_K]``; a_0 and a_1 are solved
    from the two initial conditions.
    """
    free = np.asarray(free, dtype=float)
    a_rest, b = free[: K_r - 1], free[K_r - 1 :]
    i = np.arange(2, K_r + 1)
    w1 = np.pi / duration
    a1 = (v0 - np.sum(a_rest * i * w1)) / w1
    a0 = x0 - np.sum(b)
    return np.concatenate([[a0, a1], a_rest]), b


def fourier_bounds(K_r: int, duration: float, acc_limit: float) -> np.ndarray:
    """Box for the free Fourier coefficients: each harmonic alone stays within ``acc_limit``."""
    w = np.pi * np.arange(1, K_r + 1) / duration
    amp = acc_limit / w**2
    return np.concatenate([amp[1:], amp])


# ---------------------------------------------------------------------------
# Periodic references
# ---------------------------------------------------------------------------


def rollout_along(model: RomModel, x0, trajectory_fn, t0: float, n_steps: int, dt: float):
    """Roll the reduced model with the head pinned to an analytic path.

    The head acceleration is sampled at step midpoints and the head rows of
    the state are reset to the exact path after every step, so no drift
    accumulates in the integrated head position.
    """
    xs = np.empty((n_steps + 1, model.nx))
    xs[0] = x0
    n = 3 * (model.K + 1)
    times = t0 + dt * np.arange(n_steps + 1)
    _, _, acc_mid = trajectory_fn(times[:-1] + 0.5 * dt)
    pos, vel, _ = trajectory_fn(times)
    K3 = 3 * model.K
    for k in range(n_steps):
        xs[k + 1] = model.step(xs[k], acc_mid[k], dt)
        xs[k + 1, K3:n] = pos[k + 1]
        xs[k + 1, n + K3 :] = vel[k + 1]
    return times, xs


def limit_cycle_reference(trajectory_fn, period: float, model: RomModel, x0, step: float = 0.02, tol: float = 1e-4, max_periods: int = 60):
    """One period of the settled response of the reduced model to a periodic head path.

    ``trajectory_fn(t) -> (pos, vel, acc)``.  The head rows of ``x0`` are
    replaced by the path's values at t = 0.  Returns (times, states) for
    t in [0, period) after settling, with times measured from the start of
    the emitted period.
    """
    n_per = int(round(period / step))
    if not np.isclose(n_per * step, period):
        raise ValueError("period must be a multiple of the step")
    x = np.array(x0, dtype=float)
    n = 3 * (model.K + 1)
    K3 = 3 * model.K
    pos, vel, _ = trajectory_fn(0.0)
    x[K3:n], x[n + K3 :] = pos[0], vel[0]
    _, prev = rollout_along(model, x, trajectory_fn, 0.0, n_per, step)
    for p in range(1, max_periods):
        _, cur = rollout_along(model, prev[-1], trajectory_fn, p * period, n_per, step)
        gap = np.max(np.linalg.norm(cur - prev, axis=1))
        if gap < tol:
            log.info("limit cycle settled after %d periods (gap %.2e)", p + 1, gap)
            return step * np.arange(n_per), cur[:-1]
        prev = cur
    raise NoConvergence(f"reduced model did not settle within {max_periods} periods (last gap {gap:.2e})")


def periodic_lookup(times, states, period: float):
    """``reference(t, H, dt)`` callable cycling through a sampled periodic trajectory."""
    times = np.asarray(times)
    states = np.asarray(states)
    step = times[1] - times[0]
    n = states.shape[0]

    def reference(t, H, dt):
        k = np.rint((t + dt * np.arange(1, H + 1)) / step).astype(int) % n
        return states[k]

    return reference


def sampled_lookup(times, states):
    """Reference over a finite sampled plan; holds the last state past its end."""
    times, states = np.asarray(times, dtype=float), np.asarray(states, dtype=float)
    step = times[1] - times[0]

    def reference(t, H, dt):
        k = np.rint((t - times[0] + dt * np.arange(1, H + 1)) / step).astype(int)
        return states[np.clip(k, 0, len(states) - 1)]

    return reference


# ---------------------------------------------------------------------------
# Window constraint
# ---------------------------------------------------------------------------


@dataclass
class WindowConstraint:
    """Planar opening: material points crossing ``x[axis] = offset`` must lie
    strictly inside ``lower < x[t] < upper`` on the two transverse axes.
    ``clearance`` shrinks the vertical extent at both ends (quad body above
    the cable attachment)."""

    axis: int = 0
    offset: float = 1.0
    lower: np.ndarray = field(default_factory=lambda: np.array([-0.2, -0.2]))
    upper: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.2]))
    clearance: float = 0.0

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower >= self.upper):
            raise ValueError("window lower bounds must be below upper bounds")

    @property
    def transverse(self) -> tuple[int, int]:
        return tuple(a for a in range(3) if a != self.axis)

    def box(self):
        lo, hi = self.lower.copy(), self.upper.copy()
        if 2 in self.transverse:
            j = self.transverse.index(2)
            lo[j] += self.clearance
            hi[j] -= self.clearance
        return lo, hi

    def to_dict(self) -> dict:
        return {"axis": self.axis, "offset": self.offset, "lower": self.lower.tolist(), "upper": self.upper.tolist(), "clearance": self.clearance}

    @classmethod
    def from_dict(cls, d: dict) -> "WindowConstraint":
        return cls(int(d["axis"]), float(d["offset"]), d["lower"], d["upper"], float(d.get("clearance", 0.0)))


def simulation_window() -> WindowConstraint:
    return WindowConstraint(0, 1.0, [-0.2, -0.2], [0.2, 0.2])


def experiment_window() -> WindowConstraint:
    return WindowConstraint(1, -0.7, [-0.3, 1.0], [0.3, 1.8], clearance=0.11)


@dataclass
class Crossing:
    point: int
    time: float
    position: np.ndarray  # transverse coordinates at the crossing
    margin: float


@dataclass
class WindowReport:
    margin: float  # worst margin over all crossings, +inf if none
    crossings: list
    penalty: float  # sum of squared violations of the (possibly shrunk) box

    @property
    def feasible(self) -> bool:
        return self.margin > 0


def check_window(times, points, constraint: WindowConstraint, safety: float = 0.0) -> WindowReport:
    """Check every plane crossing of every tracked material point.

    ``points`` has shape (T, P, 3).  Crossings are located by linear
    interpolation between consecutive samples.  ``safety`` shrinks the box
    for the penalty only; the reported margin is against the true box.
    """
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    lo, hi = constraint.box()
    tr = list(constraint.transverse)
    d = points[:, :, constraint.axis] - constraint.offset
    a, b = d[:-1], d[1:]
    hit = ((a <= 0) & (b > 0)) | ((a >= 0) & (b < 0)) | ((a == 0) & (b == 0))
    k_idx, p_idx = np.nonzero(hit)
    crossings = []
    margin = np.inf
    penalty = 0.0
    if k_idx.size:
        da, db = a[k_idx, p_idx], b[k_idx, p_idx]
        denom = da - db
        frac = np.where(denom != 0, da / np.where(denom != 0, denom, 1.0), 0.0)
        p0 = points[k_idx, p_idx][:, tr]
        p1 = points[k_idx + 1, p_idx][:, tr]
        cross = p0 + frac[:, None] * (p1 - p0)
        tc = times[k_idx] + frac * (times[k_idx + 1] - times[k_idx])
        m = np.minimum(cross - lo, hi - cross).min(axis=1)
        margin = float(m.min())
        viol = np.maximum(lo + safety - cross, 0.0) + np.maximum(cross - (hi - safety), 0.0)
        penalty = float(np.sum(viol**2))
        crossings = [Crossing(int(p), float(t), c, float(mm)) for p, t, c, mm in zip(p_idx, tc, cross, m)]
    return WindowReport(margin, crossings, penalty)


# ---------------------------------------------------------------------------
# Particle swarm
# ---------------------------------------------------------------------------


@dataclass
class PsoResult:
    x: np.ndarray
    value: float
    trace: list
    iterations: int
    evaluations: int


def pso_minimize(fitness, dim: int, lower, upper, swarm: int = 60, iterations: int = 300, seed: int = 0, inertia: float = 0.72, c1: float = 1.49, c2: float = 1.49, stop_below: float | None = None) -> PsoResult:
    """Global-best particle swarm, deterministic per seed.

    Particles are clipped to the box; velocities are clamped to the box
    width.  The global best only changes on strict improvement, evaluated
    in particle order.
    """
    if dim < 1:
        raise ValueError("dim must be at least 1")
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (dim,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (dim,))
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("bounds must be finite")
    rng = np.random.default_rng(seed)
    span = upper - lower
    x = lower + rng.random((swarm, dim)) * span
    v = (rng.random((swarm, dim)) - 0.5) * span
    pbest = x.copy()
    pval = np.array([fitness(p) for p in x], dtype=float)
    evals = swarm
    g = int(np.argmin(pval))
    gbest, gval = pbest[g].copy(), float(pval[g])
    trace = [gval]
    it = 0
    for it in range(1, iterations + 1):
        if stop_below is not None and gval <= stop_below:
            it -= 1
            break
        r1, r2 = rng.random((swarm, dim)), rng.random((swarm, dim))
        v = inertia * v + c1 * r1 * (pbest - x) + c2 * r2 * (gbest - x)
        v = np.clip(v, -span, span)
        x = np.clip(x + v, lower, upper)
        for i in range(swarm):
            f = float(fitness(x[i]))
            evals += 1
            if f < pval[i]:
                pval[i], pbest[i] = f, x[i].copy()
                if f < gval:
                    gval, gbest = f, x[i].copy()
        trace.append(gval)
    return PsoResult(gbest, gval, trace, it, evals)


# ---------------------------------------------------------------------------
# Window crossing planner
# ---------------------------------------------------------------------------


@dataclass
class WindowPlan:
    trajectory: HeadTrajectory
    constraint: WindowConstraint
    times: np.ndarray
    states: np.ndarray  # reduced states at ``times``
    report: WindowReport
    fitness: float
    iterations: int
    seed: int

    def reference(self, step: float):
        """States sampled every ``step`` from t = 0 to the plan end."""
        dt = self.times[1] - self.times[0]
        stride = int(round(step / dt))
        if not np.isclose(stride * dt, step):
            raise ValueError("step must be a multiple of the plan sampling")
        return self.times[::stride], self.states[::stride]

    def to_dict(self) -> dict:
        return {
            "trajectory": self.trajectory.to_dict(),
            "constraint": self.constraint.to_dict(),
            "dt": float(self.times[1] - self.times[0]),
            "margin": self.report.margin,
            "fitness": self.fitness,
            "iterations": self.iterations,
            "seed": self.seed,
            "initial_state": self.states[0].tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, model: RomModel | None = None) -> "WindowPlan":
        traj = HeadTrajectory.from_dict(d["trajectory"])
        con = WindowConstraint.from_dict(d["constraint"])
        times = np.arange(int(round(traj.duration / d["dt"])) + 1) * d["dt"]
        states = np.asarray(d["initial_state"], dtype=float)[None, :]
        report = WindowReport(d["margin"], [], 0.0)
        plan = cls(traj, con, times, states, report, d["fitness"], d["iterations"], d["seed"])
        if model is not None:
            plan.states = plan_rollout(model, plan.states[0], traj, times[1] - times[0])[1]
        return plan


def cable_points(model: RomModel, states) -> np.ndarray:
    """Reduced-grid material points for each state, shape (T, M+1, 3)."""
    states = np.atleast_2d(states)
    K3 = 3 * model.K
    coeffs = states[:, :K3].reshape(-1, model.K, 3)
    head = states[:, K3 : K3 + 3]
    return head[:, None, :] + np.einsum("jk,tkc->tjc", model.phi, coeffs)


def plan_rollout(model: RomModel, x0, trajectory: HeadTrajectory, dt: float):
    n_steps = int(round(trajectory.duration / dt))
    times = dt * np.arange(n_steps + 1)
    _, _, acc = trajectory.evaluate(times[:-1] + 0.5 * dt)
    return times, model.rollout(x0, acc, dt)


def plan_window_crossing(
    model: RomModel,
    x0,
    constraint: WindowConstraint | None = None,
    duration: float = 1.5,
    K_r: int = 5,
    axis: int = 0,
    terminal=(2.0, 3.0),
    acc_limit: float = 20.0,
    dt: float = 0.005,
    acc_dt: float = 0.001,
    safety: float = 0.05,
    terminal_speed: float | None = 0.5,
    swarm: int = 60,
    iterations: int = 300,
    seed: int = 0,
) -> WindowPlan:
    """Fourier head path along ``axis`` that carries the cable through the window.

    Feasibility problem solved by PSO on the sum of squared violations:
    terminal head position inside ``terminal``, terminal head speed at most
    ``terminal_speed`` (None disables it), |acceleration| within
    ``acc_limit`` (sampled every ``acc_dt``), every window crossing inside
    the box shrunk by ``safety``, and every material point past the window
    plane at the end of the plan.  The initial state is matched exactly by
    eliminating a_0 and a_1.
    """
    constraint = constraint or simulation_window()
    x0 = np.asarray(x0, dtype=float)
    K3 = 3 * model.K
    n = 3 * (model.K + 1)
    head0, vel0 = x0[K3 + axis], x0[n + K3 + axis]
    offset = x0[K3:n].copy()
    t_acc = np.arange(0.0, duration + 0.5 * acc_dt, acc_dt)
    lo_t, hi_t = terminal

    def build(free):
        a, b = fourier_from_free(free, K_r, duration, head0, vel0)
        return HeadTrajectory("fourier", duration, {axis: (a, b)}, offset=offset)

    def violations(free):
        traj = build(free)
        pos_t, vel_t, _ = traj.evaluate(np.array([duration]))
        xt = pos_t[0, axis]
        pen = max(lo_t - xt, 0.0) ** 2 + max(xt - hi_t, 0.0) ** 2
        if terminal_speed is not None:
            pen += max(abs(vel_t[0, axis]) - terminal_speed, 0.0) ** 2
        _, _, acc = traj.evaluate(t_acc)
        pen += float(np.sum(np.maximum(np.abs(acc[:, axis]) - acc_limit, 0.0) ** 2)) * acc_dt
        try:
            times, xs = plan_rollout(model, x0, traj, dt)
        except DegenerateSegment:
            return np.inf, None, None
        pts = cable_points(model, xs)
        report = check_window(times, pts, constraint, safety)
        pen += report.penalty
        behind = constraint.offset + safety - pts[-1, :, constraint.axis]
        pen += float(np.sum(np.maximum(behind, 0.0) ** 2))
        return pen, (times, xs), report

    def fitness(free):
        return violations(free)[0]

    box = fourier_bounds(K_r, duration, acc_limit)
    res = pso_minimize(fitness, box.size, -box, box, swarm, iterations, seed, stop_below=1e-6)
    pen, roll, report = violations(res.x)
    traj = build(res.x)
    if roll is None:
        raise NoFeasibleSolution("best candidate collapsed a cable segment", best=traj)
    plan = WindowPlan(traj, constraint, roll[0], roll[1], report, pen, res.iterations, seed)
    if pen > 1e-6 or not report.feasible:
        raise NoFeasibleSolution(f"no feasible crossing found in {res.iterations} iterations (penalty {pen:.3g}, margin {report.margin:.3g})", best=plan, report=report)
    return plan


def vertical_x0(bank: pod.ModeBank, head=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Reduced state of a straight vertical unstretched cable at rest below ``head``."""
    L = bank.h_d * bank.M
    s = np.linspace(0.0, L, bank.M + 1)
    pts = np.asarray(head, dtype=float) + np.outer(s, [0.0, 0.0, -1.0])
    return pod.project(pts, np.zeros_like(pts), bank).to_vector()
