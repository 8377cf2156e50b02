"""Configuration, validation and the scenario runners behind the CLI.

A configuration is a nested mapping loaded from a YAML profile, optionally
merged with a user file and ``key=value`` overrides.  Every runner writes
its artifacts plus a ``manifest.json`` into an output directory and
returns a metrics dictionary.
"""

from __future__ import annotations

import copy
import logging
import os
import re
import subprocess
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__, analysis, io, nmpc, planner, pod
from .control import PidController, PidGains, fixed_point_reference, sweep_reference, tune_gains
from .errors import ConfigError, StaleArtifact
from .fdm import Disturbance, FdmConfig, FdmState, RunRecord, simulate
from .params import CableParams, QuadParams
from .rom import RomModel

log = logging.getLogger(__name__)

PROFILE_ENV = "FLEXCABLE_PROFILE_DIR"
PROFILES = ("sim", "experiment")
KINDS = ("regulation", "shape-tracking", "disturbance-tracking", "window-crossing", "rom-validate", "collect", "identify", "tune")


# ---------------------------------------------------------------------------
# Loading and merging
# ---------------------------------------------------------------------------


def profile_dir() -> Path:
    env = os.environ.get(PROFILE_ENV)
    return Path(env) if env else Path(str(resources.files("flexcable") / "profiles"))


def load_profile(name: str = "sim") -> dict:
    path = profile_dir() / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"profile '{name}' not found in {path.parent}", key="profile")
    return _load_yaml(path)


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _coerce(v):
    """YAML 1.1 reads ``1e5`` as a string; treat numeric-looking strings as floats."""
    if isinstance(v, dict):
        return {k: _coerce(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_coerce(x) for x in v]
    if isinstance(v, str) and _NUMBER.match(v.strip()):
        return float(v)
    return v


def _load_yaml(path) -> dict:
    try:
        data = _coerce(yaml.safe_load(Path(path).read_text()))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> dict:
    """``a.b.c=value`` to a nested mapping; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like key=value")
    key, raw = text.split("=", 1)
    value = _coerce(yaml.safe_load(raw))
    out: dict = {}
    cur = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def load_config(profile: str = "sim", config_path=None, overrides=(), seed: int | None = None) -> dict:
    cfg = load_profile(profile)
    if config_path is not None:
        cfg = merge(cfg, _load_yaml(config_path))
    for o in overrides:
        cfg = merge(cfg, parse_override(o))
    if seed is not None:
        cfg["seed"] = int(seed)
    validate(cfg)
    return cfg


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _positive(v):
    return _num(v) and v > 0


def _nonneg(v):
    return _num(v) and v >= 0


def _count(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def _vec(n, check=_num):
    def f(v):
        if _num(v):
            return check(v)
        return isinstance(v, (list, tuple)) and len(v) == n and all(check(x) for x in v)

    return f


def _orders(v):
    return isinstance(v, (list, tuple)) and len(v) >= 1 and all(_count(x) for x in v)


def _choice(*opts):
    return lambda v: v in opts


def _any(v):
    return True


SCHEMA = {
    "profile": (_choice(*PROFILES), "one of " + "|".join(PROFILES)),
    "seed": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 0, "a non-negative integer"),
    "cable.length": (_positive, "a positive number (m)"),
    "cable.cross_section": (_positive, "a positive number (m^2)"),
    "cable.density": (_positive, "a positive number (kg/m^3)"),
    "cable.young_modulus": (_positive, "a positive number (N/m^2)"),
    "cable.drag_coeff": (_nonneg, "a non-negative number"),
    "cable.air_density": (_positive, "a positive number (kg/m^3)"),
    "quad.mass": (_positive, "a positive number (kg)"),
    "quad.inertia": (_vec(3, _positive), "three positive numbers"),
    "quad.gravity": (_positive, "a positive number (m/s^2)"),
    "fdm.segments": (_count, "a positive integer"),
    "fdm.dt": (_positive, "a positive number (s)"),
    "fdm.control_period": (_positive, "a positive number (s)"),
    "collect.duration": (_positive, "a positive number (s)"),
    "collect.amplitude": (_positive, "a positive number (m)"),
    "collect.f_start": (_positive, "a positive number (Hz)"),
    "collect.f_end": (_positive, "a positive number (Hz)"),
    "collect.start": (_choice("horizontal", "vertical"), "horizontal|vertical"),
    "collect.t_s": (_positive, "a positive number (s)"),
    "rom.M": (_count, "a positive integer"),
    "rom.K": (_count, "a positive integer"),
    "pid.kp_pos": (_vec(3, _nonneg), "three non-negative gains"),
    "pid.kd_pos": (_vec(3, _nonneg), "three non-negative gains"),
    "pid.kp_att": (_vec(3, _nonneg), "three non-negative gains"),
    "pid.kd_att": (_vec(3, _nonneg), "three non-negative gains"),
    "nmpc.horizon": (_positive, "a positive number (s)"),
    "nmpc.step": (_positive, "a positive number (s)"),
    "nmpc.R": (_vec(3, _nonneg), "non-negative weights"),
    "nmpc.u_lo": (_vec(3), "three numbers (m/s^2)"),
    "nmpc.u_hi": (_vec(3), "three numbers (m/s^2)"),
    "nmpc.tol": (_positive, "a positive number"),
    "nmpc.max_iter": (_count, "a positive integer"),
    "nmpc.weights": (_choice("regulation", "experiment"), "regulation|experiment"),
    "nmpc.crossing_weights": (_choice("simulation", "experiment"), "simulation|experiment"),
    "regulation.duration": (_positive, "a positive number (s)"),
    "regulation.start": (_choice("horizontal", "vertical"), "horizontal|vertical"),
    "regulation.target": (_vec(3), "a 3-vector (m)"),
    "regulation.origin": (_vec(3), "a 3-vector (m)"),
    "tracking.duration": (_positive, "a positive number (s)"),
    "tracking.path": (_choice("circle", "eight"), "circle|eight"),
    "tracking.period": (_positive, "a positive number (s)"),
    "tracking.average_from": (_nonneg, "a non-negative number (s)"),
    "tracking.origin": (_vec(3), "a 3-vector (m)"),
    "disturbance.bound": (_nonneg, "a non-negative number (N)"),
    "disturbance.frequency": (_positive, "a positive number (Hz)"),
    "window.axis": (_choice(0, 1, 2), "0|1|2"),
    "window.offset": (_num, "a number (m)"),
    "window.lower": (_vec(2), "two numbers (m)"),
    "window.upper": (_vec(2), "two numbers (m)"),
    "window.clearance": (_nonneg, "a non-negative number (m)"),
    "window.origin": (_vec(3), "a 3-vector (m)"),
    "window.duration": (_positive, "a positive number (s)"),
    "window.K_r": (_count, "a positive integer"),
    "window.terminal": (_vec(2), "two numbers (m)"),
    "window.acc_limit": (_positive, "a positive number (m/s^2)"),
    "window.safety": (_nonneg, "a non-negative number (m)"),
    "window.terminal_speed": (_nonneg, "a non-negative number (m/s)"),
    "window.swarm": (_count, "a positive integer"),
    "window.iterations": (_count, "a positive integer"),
    "window.track_duration": (_positive, "a positive number (s)"),
    "window.final_head": (_vec(3), "a 3-vector (m)"),
    "validate.orders": (_orders, "a list of positive integers"),
    "validate.duration": (_positive, "a positive number (s)"),
    "validate.amplitude": (_num, "a number (m)"),
    "validate.step": (_positive, "a positive number (s)"),
    "identify.tail": (_vec(3), "a 3-vector (m)"),
    "identify.duration": (_positive, "a positive number (s)"),
    "identify.frame_period": (_positive, "a positive number (s)"),
    "identify.spacing": (_positive, "a positive number (m)"),
    "identify.segments": (_count, "a positive integer"),
    "identify.dt": (_positive, "a positive number (s)"),
    "identify.truth.drag_coeff": (_positive, "a positive number"),
    "identify.truth.young_modulus": (_positive, "a positive number (N/m^2)"),
    "identify.perturb": (_vec(2, _positive), "two positive factors"),
    "identify.noise": (_nonneg, "a non-negative number (m)"),
    "identify.max_evals": (_count, "a positive integer"),
    "tune.x0": (_vec(6, _nonneg), "six non-negative gains"),
    "tune.bounds": (_vec(2, _num), "two numbers"),
    "tune.max_iter": (_count, "a positive integer"),
    "tune.fd_step": (_positive, "a positive number"),
    "tune.duration": (_positive, "a positive number (s)"),
}


def _flatten(d: dict, prefix: str = ""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def validate(cfg: dict) -> None:
    """Raise ConfigError naming the first unknown or malformed key."""
    for key, value in _flatten(cfg):
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key '{key}'", key=key)
        check, expect = SCHEMA[key]
        if not check(value):
            raise ConfigError(f"{key} must be {expect}, got {value!r}", key=key)
    w = cfg.get("window", {})
    if "lower" in w and "upper" in w and np.any(np.asarray(w["lower"], float) >= np.asarray(w["upper"], float)):
        raise ConfigError("window.lower must be below window.upper", key="window.lower")
    n = cfg.get("nmpc", {})
    if "u_lo" in n and "u_hi" in n and np.any(np.broadcast_to(n["u_lo"], 3) >= np.broadcast_to(n["u_hi"], 3)):
        raise ConfigError("nmpc.u_lo must be below nmpc.u_hi", key="nmpc.u_lo")
    if "horizon" in n and "step" in n:
        H = n["horizon"] / n["step"]
        if abs(H - round(H)) > 1e-9:
            raise ConfigError("nmpc.horizon must be a multiple of nmpc.step", key="nmpc.horizon")
    f = cfg.get("fdm", {})
    if "segments" in f and "M" in cfg.get("rom", {}) and f["segments"] % cfg["rom"]["M"]:
        raise ConfigError("rom.M must divide fdm.segments", key="rom.M")
    if "K" in cfg.get("rom", {}) and "M" in cfg.get("rom", {}) and cfg["rom"]["K"] > cfg["rom"]["M"]:
        raise ConfigError("rom.K cannot exceed rom.M", key="rom.K")


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _get(cfg, dotted, default=None):
    cur = cfg
    for p in dotted.split("."):
        if not isinstance(cur, dict) or p not in cur:
            return default
        cur = cur[p]
    return cur


def _require(cfg, dotted):
    v = _get(cfg, dotted)
    if v is None:
        raise ConfigError(f"missing configuration key '{dotted}'", key=dotted)
    return v


def cable_from(cfg) -> CableParams:
    return CableParams(**cfg.get("cable", {}))


def quad_from(cfg) -> QuadParams:
    q = dict(cfg.get("quad", {}))
    if "inertia" in q:
        q["inertia"] = tuple(q["inertia"])
    return QuadParams(**q)


def fdm_from(cfg) -> FdmConfig:
    return FdmConfig(int(_get(cfg, "fdm.segments", 100)), float(_get(cfg, "fdm.dt", 5e-4)))


def control_period(cfg) -> float:
    return float(_get(cfg, "fdm.control_period", 0.02))


def gains_from(cfg) -> PidGains:
    p = cfg.get("pid", {})
    return PidGains(
        np.broadcast_to(p.get("kp_pos", 8.0), 3), np.broadcast_to(p.get("kd_pos", 4.0), 3),
        np.broadcast_to(p.get("kp_att", 1500.0), 3), np.broadcast_to(p.get("kd_att", 80.0), 3),
    )


def ocp_from(cfg, K: int) -> nmpc.OcpConfig:
    n = cfg.get("nmpc", {})
    Q = nmpc.experiment_weights(K) if n.get("weights", "regulation") == "experiment" else nmpc.regulation_weights(K)
    kw = {k: n[k] for k in ("horizon", "step", "R", "u_lo", "u_hi", "tol", "max_iter") if k in n}
    return nmpc.OcpConfig(Q=Q, K=K, **kw)


def crossing_ocp(cfg, K: int) -> nmpc.OcpConfig:
    base = ocp_from(cfg, K)
    if _get(cfg, "nmpc.crossing_weights", "simulation") == "experiment":
        return base.with_(Q=nmpc.experiment_crossing_weights(K), R=np.full(3, 0.1))
    return base.with_(Q=nmpc.crossing_weights(K))


def window_from(cfg) -> planner.WindowConstraint:
    w = cfg.get("window", {})
    return planner.WindowConstraint(int(w.get("axis", 0)), float(w.get("offset", 1.0)), w.get("lower", [-0.2, -0.2]), w.get("upper", [0.2, 0.2]), float(w.get("clearance", 0.0)))


def initial_state(cfg, start: str, origin=(0.0, 0.0, 0.0)) -> FdmState:
    direction = (-1.0, 0.0, 0.0) if start == "horizontal" else (0.0, 0.0, -1.0)
    return FdmState.straight(fdm_from(cfg).segments, cable_from(cfg).length, direction=direction, head=origin)


# ---------------------------------------------------------------------------
# Manifest and provenance
# ---------------------------------------------------------------------------


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out: Path, kind: str, cfg: dict, inputs: dict | None = None, outputs: dict | None = None, metrics: dict | None = None) -> Path:
    return io.write_json(
        out / "manifest.json",
        {
            "kind": kind,
            "seed": cfg.get("seed", 0),
            "version": version_string(),
            "config": cfg,
            "inputs": inputs or {},
            "outputs": {k: io.file_hash(out / v) for k, v in (outputs or {}).items()},
            "metrics": metrics or {},
        },
    )


def _outdir(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def check_provenance(path, expected_source: str | None = None) -> str:
    """Hash of an input artifact, checking its sidecar and optional upstream hash."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input artifact {path} does not exist", key="input")
    header = io._check_hash(path)
    if expected_source is not None and header.get("source_hash") not in (None, "", expected_source):
        raise StaleArtifact(f"{path.name} was built from {header.get('source_hash')}, expected {expected_source}")
    return io.file_hash(path)


# ---------------------------------------------------------------------------
# collect / reduce
# ---------------------------------------------------------------------------


def run_collect(cfg: dict, out) -> dict:
    """Sweep the head, record the FDM run and write the snapshot tensor."""
    out = _outdir(out)
    c = cfg.get("collect", {})
    cable, quad = cable_from(cfg), quad_from(cfg)
    ref = lambda t: sweep_reference(t, c.get("amplitude", 0.1), c.get("f_start", 0.05), c.get("f_end", 0.6), c.get("duration", 40.0))
    state = initial_state(cfg, c.get("start", "horizontal"))
    att = gains_from(cfg)
    sweep_gains = PidGains(kp_att=att.kp_att, kd_att=att.kd_att)  # untuned position gains
    rec = simulate(state, cable, quad, c.get("duration", 40.0), PidController(cable, quad, sweep_gains, ref), fdm_from(cfg), control_period(cfg))
    rec.meta["length"] = cable.length
    tensor = pod.collect_snapshots(rec, int(_get(cfg, "rom.M", 10)), float(c.get("t_s", 0.02)))
    io.write_snapshots(out / "snapshots.npz", tensor, {"kind": "collect"})
    metrics = {"samples": tensor.S + 1, "M": tensor.M, "source_hash": tensor.source_hash}
    io.write_json(out / "metrics.json", metrics)
    write_manifest(out, "collect", cfg, outputs={"snapshots": "snapshots.npz"}, metrics=metrics)
    return metrics


def run_reduce(cfg: dict, snapshots, out) -> dict:
    out = _outdir(out)
    h = check_provenance(snapshots)
    tensor = io.read_snapshots(snapshots)
    K = int(_get(cfg, "rom.K", 3))
    bank = pod.modes_from_tensor(tensor, K)
    io.write_bank(out / "bank.csv", bank, {"snapshots_hash": h})
    e = bank.energy()
    metrics = {"K": K, "energy_top3": float(np.sum(e[:3])), "energy": e.tolist(), "orthonormality": float(np.max(np.abs(bank.modes.T @ bank.modes - np.eye(bank.modes.shape[1]))))}
    io.write_json(out / "metrics.json", metrics)
    write_manifest(out, "reduce", cfg, inputs={"snapshots": h}, outputs={"bank": "bank.csv"}, metrics=metrics)
    return metrics


def ensure_bank(cfg: dict, out, bank_path=None) -> tuple[pod.ModeBank, dict]:
    """Load ``bank_path`` or build one by collect + reduce under ``out/bank``."""
    K = int(_get(cfg, "rom.K", 3))
    if bank_path is None:
        work = _outdir(Path(out) / "bank")
        bank_path = work / "bank.csv"
        if not bank_path.exists():
            run_collect(cfg, work)
            run_reduce(cfg, work / "snapshots.npz", work)
    h = check_provenance(bank_path)
    return io.read_bank(bank_path, K), {"bank": h}


# ---------------------------------------------------------------------------
# Closed-loop helpers
# ---------------------------------------------------------------------------


def _write_closed_loop(out: Path, rec: RunRecord, states, telemetry=None):
    io.write_run(out / "trajectory.csv", rec)
    io.write_matrix_csv(out / "states.csv", ["t"] + [f"x{i}" for i in range(states.shape[1])], np.column_stack([rec.times, states]))
    files = {"trajectory": "trajectory.csv", "states": "states.csv"}
    if telemetry is not None:
        io.write_telemetry(out / "telemetry.csv", telemetry)
        files["telemetry"] = "telemetry.csv"
    return files


def _telemetry_stats(ctrl) -> dict:
    tel = getattr(ctrl, "telemetry", None)
    if not tel:
        return {}
    ms = np.array([t.solve_ms for t in tel])
    return {"solve_ms_median": float(np.median(ms)), "solve_ms_max": float(ms.max()), "converged_fraction": float(np.mean([t.converged for t in tel]))}


def regulation_reference(cfg, bank):
    cable = cable_from(cfg)
    target = _get(cfg, "regulation.target", [1.0, -1.0, 0.0])
    g = quad_from(cfg).gravity
    return nmpc.steady_reference(bank, cable, target, g), nmpc.steady_reference(bank, cable, target, g, refine=True)


def regulation_rollout(cfg, bank, controller: str, gains: PidGains | None = None, duration: float | None = None):
    """Closed-loop regulation run; returns (record, reduced states, scoring reference, controller)."""
    cable, quad = cable_from(cfg), quad_from(cfg)
    duration = duration or float(_get(cfg, "regulation.duration", 15.0))
    state = initial_state(cfg, _get(cfg, "regulation.start", "horizontal"), _get(cfg, "regulation.origin", [0.0, 0.0, 0.0]))
    x_score, x_ref = regulation_reference(cfg, bank)
    target = _get(cfg, "regulation.target", [1.0, -1.0, 0.0])
    gains = gains or gains_from(cfg)
    if controller == "nmpc":
        ctrl = nmpc.NmpcController(cable, quad, bank, ocp_from(cfg, bank.K), nmpc.constant_reference(x_ref), gains=gains)
    else:
        ctrl = PidController(cable, quad, gains, fixed_point_reference(target))
    rec = simulate(state, cable, quad, duration, ctrl, fdm_from(cfg), control_period(cfg))
    return rec, analysis.project_run(rec, bank), x_score, ctrl


def regulation_metrics(cfg, bank, rec, X, x_score) -> dict:
    Q = nmpc.regulation_weights(bank.K)
    a1 = np.linalg.norm(X[:, :3] - x_score[:3], axis=1)
    t = rec.times
    out = {
        "f_e": analysis.metric_fe(X[1:], np.broadcast_to(x_score, X[1:].shape), Q),
        "a1_initial": float(a1[0]),
        "settle_time": analysis.settle_time(t, a1 / a1[0], 0.1),
        "final_head": rec.positions[-1, 0].tolist(),
    }
    for s in (4.0, 6.0):
        k = int(np.argmin(np.abs(t - s)))
        if abs(t[k] - s) < 1e-9:
            out[f"a1_ratio_{s:g}s"] = float(a1[k] / a1[0])
    return out


def run_regulation(cfg: dict, out, controller: str = "nmpc", bank_path=None) -> dict:
    out = _outdir(out)
    bank, inputs = ensure_bank(cfg, out, bank_path)
    rec, X, x_score, ctrl = regulation_rollout(cfg, bank, controller)
    metrics = {"controller": controller, **regulation_metrics(cfg, bank, rec, X, x_score), **_telemetry_stats(ctrl)}
    files = _write_closed_loop(out, rec, X, getattr(ctrl, "telemetry", None))
    io.write_json(out / "metrics.json", metrics)
    write_manifest(out, "regulation", cfg, inputs, files, metrics)
    return metrics


def tracking_path(cfg):
    path, period = _get(cfg, "tracking.path", "circle"), float(_get(cfg, "tracking.period", 5.0))
    origin = np.asarray(_get(cfg, "tracking.origin", [0.0, 0.0, 0.0]), float)
    base = planner.circle_reference if path == "circle" else planner.eight_reference

    def fn(t):
        p, v, a = base(t, period)
        return p + origin, v, a

    return fn, period


def tracking_reference(cfg, bank):
    """Limit-cycle reduced reference for the periodic head path: (times, states, lookup)."""
    fn, period = tracking_path(cfg)
    model = RomModel.build(bank, cable_from(cfg), quad_from(cfg).gravity)
    p0 = fn(0.0)[0][0]
    shape = pod.steady_shape(cable_from(cfg), bank.M + 1, p0, quad_from(cfg).gravity)
    x0 = pod.project(shape, np.zeros_like(shape), bank).to_vector()
    times, states = planner.limit_cycle_reference(fn, period, model, x0, step=float(_get(cfg, "nmpc.step", 0.02)))
    return times, states, planner.periodic_lookup(times, states, period)


def tracking_rollout(cfg, bank, controller: str, disturbed: bool = False, reference=None):
    cable, quad = cable_from(cfg), quad_from(cfg)
    fn, period = tracking_path(cfg)
    times, states, lookup = reference or tracking_reference(cfg, bank)
    origin = _get(cfg, "tracking.origin", [0.0, 0.0, 0.0])
    state = initial_state(cfg, "vertical", origin)
    if controller == "nmpc":
        ctrl = nmpc.NmpcController(cable, quad, bank, ocp_from(cfg, bank.K), lookup, gains=gains_from(cfg))
    else:
        def head_ref(t):
            p, v, a = fn(t)
            return p[0], v[0], a[0]

        ctrl = PidController(cable, quad, gains_from(cfg), head_ref)
    dist = Disturbance(cfg.get("seed", 0), _get(cfg, "disturbance.bound", 1.0), _get(cfg, "disturbance.frequency", 0.5)) if disturbed else None
    rec = simulate(state, cable, quad, float(_get(cfg, "tracking.duration", 30.0)), ctrl, fdm_from(cfg), control_period(cfg), disturbance=dist)
    X = analysis.project_run(rec, bank)
    step = times[1] - times[0]
    X_ref = states[np.rint(rec.times / step).astype(int) % len(states)]
    return rec, X, X_ref, ctrl


def run_tracking(cfg: dict, out, controller: str = "nmpc", bank_path=None, disturbed: bool = False) -> dict:
    out = _outdir(out)
    bank, inputs = ensure_bank(cfg, out, bank_path)
    rec, X, X_ref, ctrl = tracking_rollout(cfg, bank, controller, disturbed)
    Q = nmpc.regulation_weights(bank.K)
    es = analysis.metric_es(X, X_ref, Q)
    sel = rec.times >= float(_get(cfg, "tracking.average_from", 15.0)) - 1e-9
    metrics = {
        "controller": controller,
        "disturbed": disturbed,
        "E_t_steady": float(np.mean(es[sel])) if np.any(sel) else None,
        "E_t": analysis.metric_et(X[1:], X_ref[1:], Q),
        "head_error_steady": float(np.mean(np.linalg.norm(X[sel, 3 * bank.K : 3 * bank.K + 3] - X_ref[sel, 3 * bank.K : 3 * bank.K + 3], axis=1))) if np.any(sel) else None,
        **_telemetry_stats(ctrl),
    }
    files = _write_closed_loop(out, rec, X, getattr(ctrl, "telemetry", None))
    io.write_matrix_csv(out / "errors.csv", ["t", "E_s"], np.column_stack([rec.times, es]))
    files["errors"] = "errors.csv"
    io.write_json(out / "metrics.json", metrics)
    write_manifest(out, "disturbance-tracking" if disturbed else "shape-tracking", cfg, inputs, files, metrics)
    return metrics


# ---------------------------------------------------------------------------
# Window crossing
# ---------------------------------------------------------------------------


def make_plan(cfg, bank) -> planner.WindowPlan:
    w = cfg.get("window", {})
    model = RomModel.build(bank, cable_from(cfg), quad_from(cfg).gravity)
    x0 = planner.vertical_x0(bank, w.get("origin", [0.0, 0.0, 0.0]))
    return planner.plan_window_crossing(
        model, x0, window_from(cfg), float(w.get("duration", 1.5)), int(w.get("K_r", 5)), int(w.get("axis", 0)),
        tuple(w.get("terminal", (2.0, 3.0))), float(w.get("acc_limit", 20.0)), safety=float(w.get("safety", 0.05)),
        terminal_speed=float(w.get("terminal_speed", 0.5)), swarm=int(w.get("swarm", 60)), iterations=int(w.get("iterations", 300)), seed=int(cfg.get("seed", 0)),
    )


def run_plan(cfg: dict, out, bank_path=None) -> dict:
    out = _outdir(out)
    bank, inputs = ensure_bank(cfg, out, bank_path)
    plan = make_plan(cfg, bank)
    io.write_matrix_csv(out / "plan_states.csv", ["t"] + [f"x{i}" for i in range(plan.states.shape[1])], np.column_stack([plan.times, plan.states]))
    io.write_plan(out / "plan.json", plan, "plan_states.csv")
    metrics = {"feasible": plan.report.feasible, "margin": plan.report.margin, "iterations": plan.iterations, "fitness": plan.fitness}
    io.write_json(out / "metrics.json", metrics)
    write_manifest(out, "plan", cfg, inputs, {"plan": "plan.json", "plan_states": "plan_states.csv"}, metrics)
    return metrics


def track_plan(cfg, bank, plan: planner.WindowPlan):
    """NMPC follows the plan, then regulates below ``window.final_head``."""
    cable, quad = cable_from(cfg), quad_from(cfg)
    step = float(_get(cfg, "nmpc.step", 0.02))
    times, states = plan.reference(step)
    final = nmpc.steady_reference(bank, cable, _get(cfg, "window.final_head", [2.5, 0.0, 0.0]), quad.gravity, refine=True)
    phases = [(0.0, crossing_ocp(cfg, bank.K), planner.sampled_lookup(times, states)), (plan.trajectory.duration, ocp_from(cfg, bank.K), nmpc.constant_reference(final))]
    ctrl = nmpc.NmpcController(cable, quad, bank, phases[0][1], phases[0][2], gains=gains_from(cfg), phases=phases)
    origin = _get(cfg, "window.origin", [0.0, 0.0, 0.0])
    rec = simulate(initial_state(cfg, "vertical", origin), cable, quad, float(_get(cfg, "window.track_duration", 12.0)), ctrl, fdm_from(cfg), control_period(cfg))
    return rec, planner.check_window(rec.times, rec.positions, plan.constraint), ctrl


def run_window(cfg: dict, out, bank_path=None) -> dict:
    out = _outdir(out)
    bank, inputs = ensure_bank(cfg, out, bank_path)
    plan = make_plan(cfg, bank)
    io.write_plan(out / "plan.json", plan)
    rec, report, ctrl = track_plan(cfg, bank, plan)
    X = analysis.project_run(rec, bank)
    metrics = {
        "plan_margin": plan.report.margin,
        "plan_iterations": plan.iterations,
        "margin": report.margin,
        "crossings": len(report.crossings),
        "passed": bool(report.feasible),
        **_telemetry_stats(ctrl),
    }
    files = _write_closed_loop(out, rec, X, ctrl.telemetry)
    files["plan"] = "plan.json"
    io.write_json(out / "metrics.json", metrics)
    write_manifest(out, "window-crossing", cfg, inputs, files, metrics)
    return metrics


# ---------------------------------------------------------------------------
# Model comparison
# ---------------------------------------------------------------------------


def validation_head(amplitude: float = 0.2):
    """Prescribed head acceleration for a lateral cosine swing starting at rest."""

    def acc(t):
        t = np.asarray(t, dtype=float)
        z = np.zeros_like(t)
        return np.stack([z, amplitude * np.pi**2 * np.cos(np.pi * t), z], axis=-1)

    return acc


@dataclass
class ValidationResult:
    times: np.ndarray
    fdm: RunRecord
    rom_positions: dict  # K -> (T, M+1, 3)
    rom_velocities: dict
    E_m: dict


def rom_validation(cfg, bank: pod.ModeBank, orders=None, duration: float | None = None) -> ValidationResult:
    """FDM and ROM runs from a horizontal cable under a prescribed head swing."""
    v = cfg.get("validate", {})
    orders = list(orders or v.get("orders", [1, 2, 3, 5]))
    duration = float(duration or v.get("duration", 5.0))
    step = float(v.get("step", 0.005))
    cable = cable_from(cfg)
    head = validation_head(float(v.get("amplitude", 0.2)))
    state = initial_state(cfg, "horizontal")
    fdm = simulate(state, cable, quad_from(cfg), duration, None, fdm_from(cfg), control_period=step, head=head)
    n = len(fdm.times) - 1
    acc = head(step * np.arange(n) + 0.5 * step)
    pos, vel, em = {}, {}, {}
    for K in orders:
        b = bank.truncate(K)
        model = RomModel.build(b, cable, quad_from(cfg).gravity)
        x0 = pod.project(state.positions, state.velocities, b).to_vector()
        xs = model.rollout(x0, acc, step)
        pos[K] = np.array([pod.reconstruct(model.to_state(x), b) for x in xs])
        vel[K] = np.array([pod.reconstruct_velocity(model.to_state(x), b) for x in xs])
        em[K] = analysis.metric_em(fdm.positions, pos[K])
    return ValidationResult(fdm.times, fdm, pos, vel, em)


def run_compare(cfg: dict, out, bank_path=None, orders=None, duration=None) -> dict:
    out = _outdir(out)
    bank, inputs = ensure_bank(cfg, out, bank_path)
    full = pod.ModeBank(bank.modes, bank.sigma, bank.h_d, bank.modes.shape[1], bank.source_hash, bank.meta)
    res = rom_validation(cfg, full, orders, duration)
    io.write_matrix_csv(out / "em.csv", ["K", "E_m"], [[k, e] for k, e in res.E_m.items()])
    cols, rows = ["t"], [res.times]
    for K in res.rom_positions:
        e1 = analysis.e1_series(res.fdm.positions, res.rom_positions[K])
        e2 = analysis.e1_series(res.fdm.velocities, res.rom_velocities[K])
        cols += [f"E1_K{K}", f"E2_K{K}"]
        rows += [e1, e2]
    io.write_matrix_csv(out / "errors.csv", cols, np.column_stack(rows))
    metrics = {"E_m": {str(k): v for k, v in res.E_m.items()}}
    io.write_json(out / "metrics.json", metrics)
    write_manifest(out, "rom-validate", cfg, inputs, {"em": "em.csv", "errors": "errors.csv"}, metrics)
    return metrics


# ---------------------------------------------------------------------------
# Identification and tuning
# ---------------------------------------------------------------------------


def release_experiment(cfg) -> analysis.ReleaseExperiment:
    i = cfg.get("identify", {})
    return analysis.ReleaseExperiment(tuple(i.get("tail", (0.6, 0.0, -0.6))), float(i.get("duration", 7.0)), float(i.get("frame_period", 0.01)), float(i.get("spacing", 0.1)), int(i.get("segments", 50)), float(i.get("dt", 5e-4)))


def synthetic_recording(cfg) -> analysis.PointCloudRecording:
    i = cfg.get("identify", {})
    truth = i.get("truth", {})
    cable = cable_from(cfg).with_(**truth)
    return release_experiment(cfg).recording(cable, float(i.get("noise", 0.0)), int(cfg.get("seed", 0)))


def run_identify(cfg: dict, out, recording_path=None) -> dict:
    out = _outdir(out)
    i = cfg.get("identify", {})
    inputs = {}
    if recording_path is not None:
        inputs["recording"] = check_provenance(recording_path)
        rec = io.read_recording(recording_path, i.get("spacing"))
    else:
        rec = synthetic_recording(cfg)
        io.write_recording(out / "recording.csv", rec)
    cable = cable_from(cfg)
    ref = i.get("truth", {}) if recording_path is None else {}
    base_cd = ref.get("drag_coeff", cable.drag_coeff)
    base_E = ref.get("young_modulus", cable.young_modulus)
    pc, pe = i.get("perturb", [1.3, 0.7])
    exp = release_experiment(cfg)
    res = analysis.identify_params(rec, cable, (base_cd * pc, base_E * pe), exp, int(i.get("max_evals", 120)))
    fitted = cable.with_(drag_coeff=res.drag_coeff, young_modulus=res.young_modulus)
    times, pos = exp.rollout(fitted, analysis.pinned_equilibrium(fitted, exp.segments, rec.markers[0, 0], rec.markers[0, -1]))
    e_fdm = analysis.metric_exp(rec, times + rec.times[0], pos, cable.length)
    io.write_matrix_csv(out / "exp_error.csv", ["t", "E_exp_fdm"], np.column_stack([rec.times, e_fdm]))
    report = {**res.to_dict(), "guess": [base_cd * pc, base_E * pe], "rollout": {"segments": exp.segments, "dt": exp.dt, "frame_period": rec.period, "spacing": rec.spacing}}
    if ref:
        report["truth"] = ref
        report["relative_error"] = {"drag_coeff": res.drag_coeff / ref["drag_coeff"] - 1.0, "young_modulus": res.young_modulus / ref["young_modulus"] - 1.0}
    io.write_json(out / "identification.json", report)
    metrics = {k: report[k] for k in ("drag_coeff", "young_modulus", "residual", "initial_residual", "relative_error") if k in report}
    io.write_json(out / "metrics.json", metrics)
    files = {"identification": "identification.json", "exp_error": "exp_error.csv"}
    if recording_path is None:
        files["recording"] = "recording.csv"
    write_manifest(out, "identify", cfg, inputs, files, metrics)
    return metrics


def run_tune(cfg: dict, out, bank_path=None) -> dict:
    out = _outdir(out)
    bank, inputs = ensure_bank(cfg, out, bank_path)
    t = cfg.get("tune", {})
    base = gains_from(cfg)
    duration = float(t.get("duration", _get(cfg, "regulation.duration", 15.0)))

    def objective(x):
        g = base.with_position(x)
        rec, X, x_score, _ = regulation_rollout(cfg, bank, "pid", g, duration)
        return analysis.metric_fe(X[1:], np.broadcast_to(x_score, X[1:].shape), nmpc.regulation_weights(bank.K))

    lo, hi = t.get("bounds", [0.0, 20.0])
    res = tune_gains(objective, t.get("x0", [8, 8, 8, 4, 4, 4]), (lo, hi), float(t.get("fd_step", 0.05)), int(t.get("max_iter", 30)))
    report = {"kp_pos": res.x[:3].tolist(), "kd_pos": res.x[3:].tolist(), "f_e": res.value, "initial_f_e": res.initial_value, "iterations": res.iterations, "at_bound": res.at_bound.tolist(), "trace": res.trace}
    io.write_json(out / "tuning.json", report)
    metrics = {k: report[k] for k in ("kp_pos", "kd_pos", "f_e", "initial_f_e", "iterations")}
    io.write_json(out / "metrics.json", metrics)
    write_manifest(out, "tune", cfg, inputs, {"tuning": "tuning.json"}, metrics)
    return metrics


def run_simulate(cfg: dict, out, controller: str = "pid", duration: float | None = None) -> dict:
    """Plain FDM run: hover hold (rotors at hover speed) or PID to the regulation target."""
    out = _outdir(out)
    cable, quad = cable_from(cfg), quad_from(cfg)
    duration = duration or float(_get(cfg, "regulation.duration", 15.0))
    state = initial_state(cfg, _get(cfg, "regulation.start", "horizontal"), _get(cfg, "regulation.origin", [0.0, 0.0, 0.0]))
    ctrl = PidController(cable, quad, gains_from(cfg), fixed_point_reference(_get(cfg, "regulation.target", [1.0, -1.0, 0.0]))) if controller == "pid" else None
    t0 = time.perf_counter()
    rec = simulate(state, cable, quad, duration, ctrl, fdm_from(cfg), control_period(cfg))
    io.write_run(out / "trajectory.csv", rec)
    metrics = {"controller": controller, "duration": duration, "wall_s": time.perf_counter() - t0, "final_head": rec.positions[-1, 0].tolist(), "final_tail": rec.positions[-1, -1].tolist()}
    io.write_json(out / "metrics.json", metrics)
    write_manifest(out, "simulate", cfg, {}, {"trajectory": "trajectory.csv"}, {k: v for k, v in metrics.items() if k != "wall_s"})
    return metrics


def run(kind: str, cfg: dict, out, controller: str = "nmpc", bank_path=None, recording_path=None, orders=None) -> dict:
    """Dispatch one scenario kind."""
    if kind not in KINDS:
        raise ConfigError(f"unknown scenario kind '{kind}' (expected one of {', '.join(KINDS)})", key="kind")
    if kind == "regulation":
        return run_regulation(cfg, out, controller, bank_path)
    if kind == "shape-tracking":
        return run_tracking(cfg, out, controller, bank_path)
    if kind == "disturbance-tracking":
        return run_tracking(cfg, out, controller, bank_path, disturbed=True)
    if kind == "window-crossing":
        return run_window(cfg, out, bank_path)
    if kind == "rom-validate":
        return run_compare(cfg, out, bank_path, orders)
    if kind == "collect":
        return run_collect(cfg, out)
    if kind == "identify":
        return run_identify(cfg, out, recording_path)
    return run_tune(cfg, out, bank_path)

