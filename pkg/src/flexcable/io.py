"""File formats for runs, mode banks, telemetry, recordings and plans.

Floats are written with 17 significant digits so a reload reproduces the
in-memory arrays bit for bit.  Column orders:

* run CSV ``t,entity,idx,x,y,z,vx,vy,vz``; entity ``node`` rows carry node
  position/velocity, the ``attitude`` row carries angles and rates.
* mode bank CSV: one mode per column over the M+1 grid points, with a
  JSON header next to it (``<name>.json``).
* telemetry CSV ``t,iters,converged,obj,solve_ms,ux,uy,uz``.
* recording CSV ``t,marker,x,y,z``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import InvalidRecording, StaleArtifact
from .fdm import RunRecord
from .pod import ModeBank, SnapshotTensor

FMT = "%.17g"
RUN_COLUMNS = ["t", "entity", "idx", "x", "y", "z", "vx", "vy", "vz"]
TELEMETRY_COLUMNS = ["t", "iters", "converged", "obj", "solve_ms", "ux", "uy", "uz"]
RECORDING_COLUMNS = ["t", "marker", "x", "y", "z"]


def fmt(x) -> str:
    return FMT % float(x)


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def write_run(path, record: RunRecord) -> Path:
    path = Path(path)
    n = record.positions.shape[1]
    with path.open("w", newline="") as fh:
        fh.write(",".join(RUN_COLUMNS) + "\n")
        for k, t in enumerate(record.times):
            ts = fmt(t)
            for i in range(n):
                p, v = record.positions[k, i], record.velocities[k, i]
                fh.write(f"{ts},node,{i}," + ",".join(fmt(a) for a in (*p, *v)) + "\n")
            a, w = record.angles[k], record.rates[k]
            fh.write(f"{ts},attitude,0," + ",".join(fmt(x) for x in (*a, *w)) + "\n")
    write_json(_sidecar(path), {"meta": record.meta, "nodes": n, "samples": len(record.times), "hash": file_hash(path)})
    return path


def read_run(path) -> RunRecord:
    path = Path(path)
    side = json.loads(_sidecar(path).read_text()) if _sidecar(path).exists() else {}
    raw = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=None, encoding="ascii")
    times, pos, vel, ang, rat = [], [], [], [], []
    rows_per = None
    cur_p, cur_v = [], []
    for row in raw:
        t, entity, _idx = float(row[0]), str(row[1]), int(row[2])
        vals = [float(row[j]) for j in range(3, 9)]
        if entity == "node":
            cur_p.append(vals[:3])
            cur_v.append(vals[3:])
        else:
            times.append(t)
            pos.append(cur_p)
            vel.append(cur_v)
            ang.append(vals[:3])
            rat.append(vals[3:])
            if rows_per is not None and len(cur_p) != rows_per:
                raise ValueError("ragged run file")
            rows_per = len(cur_p)
            cur_p, cur_v = [], []
    return RunRecord(np.array(times), np.array(pos), np.array(vel), np.array(ang), np.array(rat), side.get("meta", {}))


# ---------------------------------------------------------------------------
# Snapshots and mode banks
# ---------------------------------------------------------------------------


def write_snapshots(path, tensor: SnapshotTensor, provenance: dict | None = None) -> Path:
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, data=tensor.data, head=tensor.head if tensor.head is not None else np.zeros((0, 3)), h_d=tensor.h_d, t_s=tensor.t_s)
    write_json(_sidecar(path), {"hash": file_hash(path), "source_hash": tensor.source_hash, "shape": list(tensor.data.shape), **(provenance or {})})
    return path


def read_snapshots(path) -> SnapshotTensor:
    path = Path(path)
    _check_hash(path)
    with np.load(path) as z:
        head = z["head"] if z["head"].size else None
        tensor = SnapshotTensor(z["data"], float(z["h_d"]), float(z["t_s"]), head)
    side = json.loads(_sidecar(path).read_text()) if _sidecar(path).exists() else {}
    tensor.source_hash = side.get("source_hash", "")
    return tensor


def write_bank(path, bank: ModeBank, provenance: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for row in bank.modes:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    header = {
        "sigma": [fmt(s) for s in bank.sigma],
        "h_d": fmt(bank.h_d),
        "K": bank.K,
        "source_hash": bank.source_hash,
        "hash": file_hash(path),
        "meta": bank.meta,
    }
    header.update(provenance or {})
    write_json(_sidecar(path), header)
    return path


def read_bank(path, K: int | None = None) -> ModeBank:
    path = Path(path)
    header = _check_hash(path)
    modes = np.loadtxt(path, delimiter=",", ndmin=2)
    sigma = np.array([float(s) for s in header["sigma"]])
    bank = ModeBank(modes, sigma, float(header["h_d"]), int(header["K"]), header.get("source_hash", ""), header.get("meta", {}))
    return bank.truncate(K) if K is not None else bank


def _check_hash(path: Path) -> dict:
    side = _sidecar(path)
    if not side.exists():
        return {}
    header = json.loads(side.read_text())
    want = header.get("hash")
    if want and want != file_hash(path):
        raise StaleArtifact(f"{path.name} does not match the hash recorded in {side.name}")
    return header


# ---------------------------------------------------------------------------
# Telemetry, recordings, plans
# ---------------------------------------------------------------------------


def write_telemetry(path, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(TELEMETRY_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join([fmt(r.t), str(int(r.iters)), str(int(bool(r.converged))), fmt(r.obj), fmt(r.solve_ms), *(fmt(u) for u in r.u)]) + "\n")
    return path


def read_telemetry(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_recording(path, recording) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(RECORDING_COLUMNS) + "\n")
        for k, t in enumerate(recording.times):
            for j in range(recording.markers.shape[1]):
                fh.write(f"{fmt(t)},{j}," + ",".join(fmt(v) for v in recording.markers[k, j]) + "\n")
    write_json(_sidecar(path), {"spacing": recording.spacing, "hash": file_hash(path)})
    return path


def read_recording(path, spacing: float | None = None):
    from .analysis import PointCloudRecording

    path = Path(path)
    side = json.loads(_sidecar(path).read_text()) if _sidecar(path).exists() else {}
    spacing = spacing if spacing is not None else side.get("spacing")
    if spacing is None:
        raise InvalidRecording("marker spacing unknown; pass it or provide the JSON sidecar")
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RECORDING_COLUMNS:
            raise InvalidRecording(f"expected columns {RECORDING_COLUMNS}, got {header}")
        rows = [(float(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in reader]
    if not rows:
        raise InvalidRecording("recording has no samples")
    times = sorted({r[0] for r in rows})
    n_markers = max(r[1] for r in rows) + 1
    index = {t: k for k, t in enumerate(times)}
    markers = np.full((len(times), n_markers, 3), np.nan)
    for t, j, x, y, z in rows:
        markers[index[t], j] = (x, y, z)
    if np.isnan(markers).any():
        raise InvalidRecording("some markers are missing at some timestamps")
    return PointCloudRecording(np.array(times), markers, float(spacing))


def write_plan(path, plan, reference_csv: str | None = None) -> Path:
    payload = plan.to_dict()
    if reference_csv is not None:
        payload["reference_csv"] = reference_csv
    return write_json(path, payload)


def read_plan(path):
    from .planner import WindowPlan

    return WindowPlan.from_dict(json.loads(Path(path).read_text()))


def write_matrix_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path
