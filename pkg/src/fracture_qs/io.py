"""Serialization: CSV ledgers, ndjson trajectories, checkpoints, VTK, lock.

Floats are written with ``repr`` (shortest round-trip decimal), so reading a
file back reproduces the values bit for bit. Checkpoints and snapshots are
JSON with a format-version header and are written atomically (tmp + rename).
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .driver import EnergyLedger, TrajectoryRecord
from .errors import (OutputLockedError, SnapshotVersionError,
                     TrajectoryFormatError)
from .mesh import Mesh

LEDGER_HEADER = "t,bulk,surface_c,total,theta,work_cum"
TRAJECTORY_FORMAT = "fracture-qs-trajectory"
CHECKPOINT_FORMAT = "fracture-qs-checkpoint"
SNAPSHOT_FORMAT = "fracture-qs-state"
FORMAT_VERSION = 1


def _atomic_write(path, text: str):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


# -- ledger CSV ---------------------------------------------------------------

def write_ledger_csv(ledger: EnergyLedger, path):
    lines = [LEDGER_HEADER]
    for i in range(len(ledger)):
        lines.append(",".join(repr(x) for x in ledger.row(i)))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_ledger_csv(path):
    """Rows as dicts keyed by the header columns."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != LEDGER_HEADER:
        raise TrajectoryFormatError(f"bad ledger header (want {LEDGER_HEADER!r})",
                                    line=1)
    cols = LEDGER_HEADER.split(",")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(cols):
            raise TrajectoryFormatError("wrong column count", line=ln)
        try:
            rows.append({c: float(v) for c, v in zip(cols, parts)})
        except ValueError as err:
            raise TrajectoryFormatError(str(err), line=ln) from err
    return rows


# -- trajectory ndjson --------------------------------------------------------

def write_trajectory(records, path):
    lines = [json.dumps({"format": TRAJECTORY_FORMAT, "version": FORMAT_VERSION})]
    for rec in records:
        lines.append(json.dumps({
            "t": rec.time,
            "broken": [int(b) for b in rec.broken],
            "values": np.atleast_2d(rec.values).tolist(),
        }))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_trajectory(path):
    """List of (time, broken tuple, values array); raises with line numbers."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise TrajectoryFormatError("empty trajectory file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as err:
        raise TrajectoryFormatError(str(err), line=1) from err
    if header.get("format") != TRAJECTORY_FORMAT:
        raise TrajectoryFormatError("not a trajectory file", line=1)
    if header.get("version") != FORMAT_VERSION:
        raise SnapshotVersionError(
            f"trajectory version {header.get('version')} unsupported")
    records = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append((float(obj["t"]), tuple(int(b) for b in obj["broken"]),
                            np.asarray(obj["values"], dtype=float)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise TrajectoryFormatError(str(err), line=ln) from err
    return records


def records_from_result(result):
    return [(rec.time, rec.broken, rec.values) for rec in result.records]


# -- snapshots / checkpoints --------------------------------------------------

def write_snapshot(state, path):
    """Serialize a DisplacementState; the round trip is exact."""
    payload = {
        "format": SNAPSHOT_FORMAT,
        "version": FORMAT_VERSION,
        "values": np.atleast_2d(state.values).tolist(),
        "jump": sorted(int(b) for b in state.jump),
        "bulk_energy": state.bulk_energy,
        "new_surface": state.new_surface,
        "max_abs": state.max_abs,
        "damage": None if state.damage is None else np.asarray(state.damage).tolist(),
    }
    _atomic_write(path, json.dumps(payload))


def read_snapshot(path):
    from .solver import DisplacementState

    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != SNAPSHOT_FORMAT:
        raise TrajectoryFormatError("not a state snapshot", line=1)
    if payload.get("version") != FORMAT_VERSION:
        raise SnapshotVersionError(
            f"snapshot version {payload.get('version')} unsupported")
    damage = payload.get("damage")
    return DisplacementState(
        values=np.asarray(payload["values"], dtype=float),
        jump=frozenset(payload["jump"]),
        bulk_energy=payload["bulk_energy"],
        new_surface=payload["new_surface"],
        max_abs=payload["max_abs"],
        damage=None if damage is None else np.asarray(damage, dtype=float),
    )


def write_checkpoint(snapshot: dict, path):
    payload = {"format": CHECKPOINT_FORMAT, "version": FORMAT_VERSION}
    payload.update(snapshot)
    _atomic_write(path, json.dumps(payload))


def read_checkpoint(path) -> dict:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise TrajectoryFormatError("not a checkpoint file", line=1)
    if payload.get("version") != FORMAT_VERSION:
        raise SnapshotVersionError(
            f"checkpoint version {payload.get('version')} unsupported")
    return payload


# -- legacy VTK export ----------------------------------------------------------

def write_vtk(mesh: Mesh, fields: dict, path, title="fracture-qs snapshot"):
    """Legacy ASCII structured-points file with one scalar set per field."""
    dims = list(mesh.grid_shape) + [1] * (3 - mesh.dimension)
    n = mesh.n_nodes
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS %d %d %d" % tuple(dims[:3]),
        "ORIGIN 0 0 0",
        "SPACING %g %g %g" % (mesh.spacing, mesh.spacing, mesh.spacing),
        "POINT_DATA %d" % n,
    ]
    for name, values in fields.items():
        arr = np.asarray(values, dtype=float).reshape(n, -1)[:, 0]
        lines.append("SCALARS %s double 1" % name)
        lines.append("LOOKUP_TABLE default")
        lines.extend(repr(float(x)) for x in arr)
    _atomic_write(path, "\n".join(lines) + "\n")


# -- study tables ---------------------------------------------------------------

def write_study_csv(study, path):
    lines = ["level,delta,t,bulk,surface_c,total,residual"]
    for row in study.table():
        lines.append(",".join(repr(float(x)) if isinstance(x, float) else str(x)
                              for x in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_rates_csv(rows, path):
    lines = ["level,delta,residual,rate"]
    for row in rows:
        if row.rate is None:
            rate = ""
        elif row.rate == float("inf"):
            rate = "exact"
        else:
            rate = repr(row.rate)
        lines.append(f"{row.level},{row.delta!r},{row.residual!r},{rate}")
    _atomic_write(path, "\n".join(lines) + "\n")


# -- output directory lock -------------------------------------------------------

class OutputLock:
    """Single-writer lock: an exclusive .lock file in the output directory."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"
        self._fd = None

    def acquire(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLockedError(
                f"{self.path} exists; another run owns this directory") from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def release(self):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
            self.path.unlink(missing_ok=True)

    def __enter__(self):
        return self.acquire()

    def __exit__(self, *exc):
        self.release()
