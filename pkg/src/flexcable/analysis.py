"""Comparison metrics between runs and identification of cable parameters."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DimensionMismatch, GridMismatch, InvalidRecording, NumericalBlowup, FlexCableError
from .fdm import FdmConfig, FdmState, simulate
from .params import CableParams, QuadParams

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Grid helpers
# ---------------------------------------------------------------------------


def grid_map(n_fine: int, n_coarse: int) -> np.ndarray:
    """Fine-grid node indices of the coarse-grid points 0..n_coarse."""
    if n_coarse <= 0 or n_fine % n_coarse:
        raise GridMismatch(f"{n_fine} segments cannot be sampled on a {n_coarse}-segment grid")
    return np.arange(n_coarse + 1) * (n_fine // n_coarse)


def _coarse(points, n_coarse: int) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return points[..., grid_map(points.shape[-2] - 1, n_coarse), :]


def _distance_sum(a, b) -> np.ndarray:
    """Sum over points 1..M of the Euclidean distances (the head is excluded)."""
    return np.sum(np.linalg.norm(a[..., 1:, :] - b[..., 1:, :], axis=-1), axis=-1)


# ---------------------------------------------------------------------------
# Model-to-model metrics
# ---------------------------------------------------------------------------


def metric_e1_e2(fdm_pos, fdm_vel, rom_pos, rom_vel) -> tuple[float, float]:
    """Instantaneous position and velocity discrepancy on the reduced grid.

    ``fdm_*`` are (N+1, 3) node arrays, ``rom_*`` are (M+1, 3) reduced-grid
    arrays; N must be a multiple of M.
    """
    rom_pos, rom_vel = np.asarray(rom_pos, float), np.asarray(rom_vel, float)
    M = rom_pos.shape[-2] - 1
    if rom_vel.shape != rom_pos.shape:
        raise GridMismatch("ROM position and velocity arrays differ in shape")
    p, v = _coarse(fdm_pos, M), _coarse(fdm_vel, M)
    return float(_distance_sum(p, rom_pos)), float(_distance_sum(v, rom_vel))


def e1_series(fdm_positions, rom_positions) -> np.ndarray:
    """E1 for every sample of matched (T, N+1, 3) and (T, M+1, 3) series."""
    rom_positions = np.asarray(rom_positions, float)
    fdm = _coarse(fdm_positions, rom_positions.shape[-2] - 1)
    if fdm.shape != rom_positions.shape:
        raise GridMismatch(f"series shapes differ: {fdm.shape} vs {rom_positions.shape}")
    return _distance_sum(fdm, rom_positions)


def metric_em(fdm_positions, rom_positions, fdm_times=None, rom_times=None, tol: float = 1e-9) -> float:
    """Time average of the summed pointwise distance between two runs.

    Both series must be sampled at the same instants; the first sample
    (shared initial condition) is excluded from the average.
    """
    if fdm_times is not None and rom_times is not None:
        ft, rt = np.asarray(fdm_times, float), np.asarray(rom_times, float)
        if ft.shape != rt.shape or np.max(np.abs(ft - rt), initial=0.0) > tol:
            raise GridMismatch("sampling times of the two runs do not match")
    series = e1_series(fdm_positions, rom_positions)
    if len(series) < 2:
        raise GridMismatch("need at least two samples")
    return float(np.mean(series[1:]))


# ---------------------------------------------------------------------------
# Reduced-state tracking metrics
# ---------------------------------------------------------------------------


def _weights(Q, n: int) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 2:
        if Q.shape != (n, n):
            raise DimensionMismatch(f"Q is {Q.shape}, state has {n} entries")
        return Q
    if Q.shape != (n,):
        raise DimensionMismatch(f"Q has {Q.shape[0]} weights, state has {n} entries")
    return np.diag(Q)


def metric_es(X, X_ref, Q) -> np.ndarray | float:
    """Quadratic shape error (X_ref - X)^T Q (X_ref - X); broadcasts over rows.

    ``Q`` is a diagonal given as a vector, or a full matrix.
    """
    X, X_ref = np.asarray(X, float), np.asarray(X_ref, float)
    if X.shape != X_ref.shape:
        raise DimensionMismatch(f"state shape {X.shape} vs reference shape {X_ref.shape}")
    W = _weights(Q, X.shape[-1])
    e = X_ref - X
    val = np.einsum("...i,ij,...j->...", e, W, e)
    return float(val) if np.ndim(val) == 0 else val


def metric_et(X, X_ref, Q) -> float:
    """Time average of E_s over the sampled control steps (rows)."""
    X = np.asarray(X, float)
    if X.ndim != 2:
        raise DimensionMismatch("E_t expects a (T, n) state series")
    return float(np.mean(metric_es(X, X_ref, Q)))


def metric_fe(X, X_ref, Q) -> float:
    """Sum of E_s over the sampled control steps (the gain-tuning objective)."""
    X = np.asarray(X, float)
    if X.ndim != 2:
        raise DimensionMismatch("f_e expects a (T, n) state series")
    return float(np.sum(metric_es(X, X_ref, Q)))


def project_run(record, bank, stride: int = 1) -> np.ndarray:
    """Reduced states of every ``stride``-th sample of an FDM run, shape (T, 6(K+1))."""
    from .pod import project

    return np.array([project(record.positions[k], record.velocities[k], bank).to_vector() for k in range(0, len(record.times), stride)])


def settle_time(times, values, threshold: float) -> float:
    """First time after which ``values`` stays below ``threshold`` (inf if never)."""
    times, values = np.asarray(times, float), np.asarray(values, float)
    above = np.nonzero(values >= threshold)[0]
    if len(above) == 0:
        return float(times[0])
    if above[-1] == len(values) - 1:
        return float("inf")
    return float(times[above[-1] + 1])


# ---------------------------------------------------------------------------
# Point-cloud recordings
# ---------------------------------------------------------------------------


@dataclass
class PointCloudRecording:
    """Marker positions (T, P, 3) ordered head to tail at arc spacing ``spacing``.

    Marker 0 is the head; markers 1..P-1 sit at ``k * spacing``.
    """

    times: np.ndarray
    markers: np.ndarray
    spacing: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.markers = np.asarray(self.markers, dtype=float)
        if len(self.times) == 0:
            raise InvalidRecording("recording has no frames")
        if self.markers.ndim != 3 or self.markers.shape[0] != len(self.times) or self.markers.shape[2] != 3:
            raise InvalidRecording(f"markers must be (T, P, 3) with T = {len(self.times)}, got {self.markers.shape}")
        if self.markers.shape[1] < 2:
            raise InvalidRecording("need at least a head and one more marker")
        if not self.spacing > 0:
            raise InvalidRecording("marker spacing must be positive")
        if len(self.times) > 1:
            d = np.diff(self.times)
            if np.any(d <= 0) or np.ptp(d) > 1e-6 * d.mean():
                raise InvalidRecording("frames must be uniformly sampled in increasing time")
        if not np.all(np.isfinite(self.markers)):
            raise InvalidRecording("marker positions must be finite")

    @property
    def period(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def n_markers(self) -> int:
        return self.markers.shape[1]


def marker_nodes(recording: PointCloudRecording, length: float, segments: int) -> np.ndarray:
    """Model node index of each marker (the marker spacing must be a multiple of h)."""
    h = length / segments
    ratio = recording.spacing / h
    step = int(round(ratio))
    if step < 1 or abs(ratio - step) > 1e-6:
        raise GridMismatch(f"marker spacing {recording.spacing} is not a multiple of the grid step {h}")
    nodes = np.arange(recording.n_markers) * step
    if nodes[-1] > segments:
        raise GridMismatch("markers extend beyond the modelled cable")
    return nodes


def match_frames(recording: PointCloudRecording, times) -> np.ndarray:
    """Index of the model sample for each frame, within half a frame period."""
    times = np.asarray(times, float)
    idx = np.clip(np.searchsorted(times, recording.times), 0, len(times) - 1)
    prev = np.clip(idx - 1, 0, len(times) - 1)
    pick = np.where(np.abs(times[prev] - recording.times) < np.abs(times[idx] - recording.times), prev, idx)
    half = 0.5 * recording.period if len(recording.times) > 1 else 1e-9
    if np.any(np.abs(times[pick] - recording.times) > half + 1e-12):
        raise GridMismatch("model samples do not cover the recording timestamps")
    return pick


def metric_exp(recording: PointCloudRecording, times, positions, length: float) -> np.ndarray:
    """Average marker-to-material-point distance per frame.

    ``positions`` (T, n+1, 3) is a model run on a uniform grid of ``n``
    segments over ``length``: FDM nodes or reconstructed ROM points.
    Markers 1..P-1 are compared (the head marker is excluded).
    """
    positions = np.asarray(positions, float)
    nodes = marker_nodes(recording, length, positions.shape[1] - 1)
    frames = match_frames(recording, times)
    model = positions[frames][:, nodes[1:]]
    d = np.linalg.norm(recording.markers[:, 1:] - model, axis=-1)
    return d.sum(axis=1) * recording.spacing / length


# ---------------------------------------------------------------------------
# Identification
# ---------------------------------------------------------------------------


def pinned_equilibrium(cable: CableParams, segments: int, head, tail, g: float = 9.8) -> np.ndarray:
    """Static cable shape with both endpoints held fixed.

    Minimises elastic plus gravitational energy over the interior nodes,
    which is the variational form of the finite-difference statics.
    """
    head, tail = np.asarray(head, float), np.asarray(tail, float)
    n = segments
    h = cable.length / n
    if np.linalg.norm(tail - head) >= cable.length * 1.2:
        raise ValueError("endpoints too far apart for the cable")
    s = np.linspace(0.0, 1.0, n + 1)[:, None]
    chord = head + s * (tail - head)
    slack = max(cable.length**2 - np.sum((tail - head) ** 2), 0.0)
    guess = chord.copy()
    guess[:, 2] -= 0.5 * np.sqrt(slack) * np.sin(np.pi * s[:, 0])
    ea, wg = cable.EA, cable.linear_density * h * g

    def energy(z):
        p = guess.copy()
        p[1:-1] = z.reshape(-1, 3)
        d = np.diff(p, axis=0)
        ln = np.linalg.norm(d, axis=1)
        eps = ln / h - 1.0
        f = 0.5 * ea * h * np.sum(eps**2) + wg * np.sum(p[1:-1, 2])
        # dE/dd_j = EA eps_j d_j / ln_j
        t = (ea * eps / ln)[:, None] * d
        grad = t[:-1] - t[1:]
        grad[:, 2] += wg
        return f, grad.ravel()

    res = optimize.minimize(energy, guess[1:-1].ravel(), jac=True, method="L-BFGS-B", options={"maxiter": 20000, "gtol": 1e-12, "ftol": 1e-16})
    out = guess.copy()
    out[1:-1] = res.x.reshape(-1, 3)
    return out


@dataclass(frozen=True)
class ReleaseExperiment:
    """Free swing of a cable from a pinned-endpoint rest shape, head fixed."""

    tail: tuple = (0.6, 0.0, -0.6)
    duration: float = 7.0
    frame_period: float = 0.01
    spacing: float = 0.1
    segments: int = 50
    dt: float = 5e-4

    def rollout(self, cable: CableParams, start: np.ndarray | None = None):
        """Simulate the release; returns (times, positions (T, N+1, 3))."""
        start = pinned_equilibrium(cable, self.segments, (0.0, 0.0, 0.0), self.tail) if start is None else start
        state = FdmState(start, np.zeros_like(start))
        rec = simulate(
            state, cable, QuadParams(), self.duration, None, FdmConfig(self.segments, self.dt),
            control_period=self.frame_period, head=_still,
        )
        return rec.times, rec.positions

    def recording(self, cable: CableParams, noise: float = 0.0, seed: int = 0) -> PointCloudRecording:
        """Synthetic marker data from the model itself (optionally with noise)."""
        times, pos = self.rollout(cable)
        nodes = np.arange(int(round(cable.length / self.spacing)) + 1) * int(round(self.spacing * self.segments / cable.length))
        markers = pos[:, nodes].copy()
        if noise > 0:
            markers[:, 1:] += np.random.default_rng(seed).normal(0.0, noise, size=markers[:, 1:].shape)
        return PointCloudRecording(times, markers, self.spacing, {"tail": list(self.tail), "noise": noise, "seed": seed})


def _still(times):
    return np.zeros((np.size(times), 3))


@dataclass
class IdentificationResult:
    drag_coeff: float
    young_modulus: float
    residual: float
    initial_residual: float
    trace: list
    evaluations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "drag_coeff": self.drag_coeff,
            "young_modulus": self.young_modulus,
            "residual": self.residual,
            "initial_residual": self.initial_residual,
            "trace": self.trace,
            "evaluations": self.evaluations,
            "converged": self.converged,
        }


def identification_residual(recording: PointCloudRecording, cable: CableParams, experiment: ReleaseExperiment) -> float:
    """Sum over frames and non-head markers of marker-to-node distances.

    The rollout starts from the first frame's pinned rest shape; blow-ups
    score infinity.
    """
    tail = recording.markers[0, -1]
    exp = ReleaseExperiment(tuple(tail), recording.times[-1] - recording.times[0], recording.period, recording.spacing, experiment.segments, experiment.dt)
    try:
        times, pos = exp.rollout(cable)
    except (NumericalBlowup, FlexCableError, ValueError):
        return float("inf")
    nodes = marker_nodes(recording, cable.length, exp.segments)
    frames = match_frames(recording, times + recording.times[0])
    d = np.linalg.norm(recording.markers[:, 1:] - pos[frames][:, nodes[1:]], axis=-1)
    return float(d.sum())


def identify_params(
    recording: PointCloudRecording,
    cable: CableParams,
    guess: tuple[float, float],
    experiment: ReleaseExperiment | None = None,
    max_evals: int = 120,
    xatol: float = 1e-3,
    fatol: float = 1e-6,
) -> IdentificationResult:
    """Fit (drag coefficient, Young's modulus) to a release recording.

    Nelder-Mead over (c_d, log E) from ``guess``; the remaining cable
    parameters come from ``cable``.  Returns the best point seen, so the
    residual never exceeds that of the initial guess.
    """
    if len(recording.times) < 2:
        raise InvalidRecording("identification needs at least two frames")
    experiment = experiment or ReleaseExperiment()
    c0, e0 = float(guess[0]), float(guess[1])
    if not (c0 > 0 and e0 > 0):
        raise ValueError("initial guess must be positive")
    scale = np.array([c0, 1.0])
    trace = []

    def unpack(z):
        return z[0] * scale[0], float(np.exp(z[1] + np.log(e0)))

    def fun(z):
        cd, E = unpack(z)
        if cd < 0:
            return float("inf")
        r = identification_residual(recording, cable.with_(drag_coeff=cd, young_modulus=E), experiment)
        trace.append([cd, E, r])
        return r

    z0 = np.array([1.0, 0.0])
    simplex = np.array([z0, z0 + [0.2, 0.0], z0 + [0.0, 0.2]])
    res = optimize.minimize(fun, z0, method="Nelder-Mead", options={"initial_simplex": simplex, "maxfev": max_evals, "xatol": xatol, "fatol": fatol})
    best = min(trace, key=lambda r: r[2])
    log.info("identification: c_d %.6g E %.6g residual %.6g after %d rollouts", best[0], best[1], best[2], len(trace))
    return IdentificationResult(best[0], best[1], best[2], trace[0][2], trace, len(trace), bool(res.success))
