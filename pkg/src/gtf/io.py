"""File formats: CSV logs, JSON documents and report tables.

Floats go through ``repr`` so that files round-trip exactly and identical
inputs produce byte-identical outputs.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .geometry import CalibrationResult
from .stations import GnssLog, TrajectorySpec
from .timesync import SkewEstimate
from .types import Frame, PoseSample, PrismLayout, RawMeasurement, RigidTransform, Status

MEASUREMENT_HEADER = ("station", "t_client_us", "ha_rad", "va_rad", "range_m", "status")
POSE_HEADER = ("t_us", "valid", "x", "y", "z", "qw", "qx", "qy", "qz", "residual_rms_m")
MARKER_HEADER = ("marker_id", "station", "x", "y", "z")
GROUND_TRUTH_HEADER = ("t_us", "x", "y", "z", "qw", "qx", "qy", "qz", "v", "omega")
GNSS_HEADER = ("t_us", "regime", "x1", "y1", "z1", "x2", "y2", "z2")


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _open_rows(path) -> list[dict]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"missing input file: {p}")
    with open(p, newline="") as fh:
        return list(csv.DictReader(fh))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"missing input file: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# measurements

def write_measurements(path, measurements: Iterable[RawMeasurement]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(MEASUREMENT_HEADER)
        for m in measurements:
            w.writerow((m.station.value, m.t_client, fmt(m.ha), fmt(m.va), fmt(m.range), m.status.value))


def read_measurements(path) -> list[RawMeasurement]:
    out = []
    for i, r in enumerate(_open_rows(path)):
        try:
            out.append(RawMeasurement(Frame(r["station"]), float(r["ha_rad"]), float(r["va_rad"]),
                                      float(r["range_m"]), int(r["t_client_us"]), Status.parse(r["status"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise InputError(f"{path}: bad measurement row {i + 1}: {exc}") from None
    return out


# poses

def write_poses(path, poses: Iterable[PoseSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(POSE_HEADER)
        for p in poses:
            if p.valid:
                t, q = p.pose.translation, p.pose.rotation
                w.writerow((p.t, 1, *map(fmt, t), *map(fmt, q), fmt(p.residual_rms)))
            else:
                w.writerow((p.t, 0, *(["nan"] * 8)))


def read_poses(path) -> list[PoseSample]:
    out = []
    for r in _open_rows(path):
        t = int(r["t_us"])
        if r["valid"] == "1":
            q = [float(r[k]) for k in ("qw", "qx", "qy", "qz")]
            xyz = [float(r[k]) for k in ("x", "y", "z")]
            out.append(PoseSample(t, RigidTransform(q, xyz), float(r["residual_rms_m"]), True))
        else:
            out.append(PoseSample.invalid(t))
    return out


# markers and calibration

def write_markers(path, markers: Mapping[Frame, Mapping[str, Sequence[float]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(MARKER_HEADER)
        for station, pts in markers.items():
            for mid in sorted(pts):
                w.writerow((mid, station.value, *(f"{v:.6f}" for v in pts[mid])))


def read_markers(path) -> dict[Frame, dict[str, np.ndarray]]:
    out: dict[Frame, dict[str, np.ndarray]] = {}
    for r in _open_rows(path):
        try:
            st = Frame(r["station"])
            out.setdefault(st, {})[r["marker_id"]] = np.array([float(r["x"]), float(r["y"]), float(r["z"])])
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}: bad marker row: {exc}") from None
    return out


def transform_to_json(T: RigidTransform) -> dict:
    return {"q": [float(v) for v in T.rotation], "t": [float(v) for v in T.translation]}


def transform_from_json(doc) -> RigidTransform:
    try:
        return RigidTransform(np.array(doc["q"], dtype=float), np.array(doc["t"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed transform: {exc}") from None


def calibration_to_json(c: CalibrationResult) -> dict:
    return {"schema": "gtf.calibration/1", "t12": transform_to_json(c.t12), "t13": transform_to_json(c.t13),
            "rms": c.rms, "marker_ids": list(c.marker_ids), "residuals": list(c.residuals)}


def calibration_from_json(doc: dict) -> CalibrationResult:
    try:
        return CalibrationResult(transform_from_json(doc["t12"]), transform_from_json(doc["t13"]),
                                 tuple(doc.get("marker_ids", ())), tuple(doc.get("residuals", ())),
                                 float(doc.get("rms", 0.0)))
    except KeyError as exc:
        raise ConfigError(f"calibration document lacks {exc}") from None


def read_calibration(path) -> CalibrationResult:
    return calibration_from_json(read_json(path))


# clock corrections

def skews_to_json(skews: Mapping[Frame, SkewEstimate]) -> dict:
    return {"schema": "gtf.skews/1", "clients": {
        st.value: {"delta_us": e.delta, "j": e.j, "w": e.w, "history_us": list(e.history),
                   "schedule": [[s, d] for s, d in e.schedule]} for st, e in skews.items()}}


def skews_from_json(doc: dict) -> dict[Frame, SkewEstimate]:
    out = {}
    try:
        for name, e in doc["clients"].items():
            out[Frame(name)] = SkewEstimate(float(e["delta_us"]), int(e["j"]), float(e["w"]),
                                            tuple(float(v) for v in e["history_us"]),
                                            tuple((int(s), float(d)) for s, d in e["schedule"]), True)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed skew document: {exc}") from None
    return out


def read_skews(path) -> dict[Frame, SkewEstimate]:
    return skews_from_json(read_json(path))


# layout and trajectory

def layout_to_json(layout: PrismLayout) -> dict:
    return {"schema": "gtf.layout/1", "p1": layout.p1.tolist(), "p2": layout.p2.tolist(),
            "p3": layout.p3.tolist()}


def layout_from_json(doc: dict) -> PrismLayout:
    try:
        if "p1" in doc:
            return PrismLayout.from_points(doc["p1"], doc["p2"], doc["p3"])
        return PrismLayout.from_distances(float(doc["d12"]), float(doc["d13"]), float(doc["d23"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed layout: {exc}") from None


def read_trajectory(path) -> TrajectorySpec:
    return TrajectorySpec.from_json(read_json(path))


# ground truth and GNSS

def write_ground_truth(path, spec: TrajectorySpec, t_us: np.ndarray) -> None:
    x, y, z, yaw, v, w = spec.state(t_us)
    half = yaw / 2
    with open(path, "w", newline="") as fh:
        wr = _writer(fh)
        wr.writerow(GROUND_TRUTH_HEADER)
        for i, t in enumerate(t_us):
            q = (math.cos(half[i]), 0.0, 0.0, math.sin(half[i]))
            if q[0] < 0:
                q = tuple(-c for c in q)
            wr.writerow((int(t), fmt(x[i]), fmt(y[i]), fmt(z[i]), *map(fmt, q), fmt(v[i]), fmt(w[i])))


def write_gnss(path, log: GnssLog) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(GNSS_HEADER)
        for i, t in enumerate(log.t_us):
            w.writerow((int(t), log.regime[i], *map(fmt, log.pos1[i]), *map(fmt, log.pos2[i])))


def read_gnss(path) -> GnssLog:
    rows = _open_rows(path)
    t = np.array([int(r["t_us"]) for r in rows], dtype=np.int64)
    p1 = np.array([[float(r[k]) for k in ("x1", "y1", "z1")] for r in rows]).reshape(-1, 3)
    p2 = np.array([[float(r[k]) for k in ("x2", "y2", "z2")] for r in rows]).reshape(-1, 3)
    return GnssLog(t, p1, p2, [r["regime"] for r in rows])


# generic tables

def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def read_table(path) -> list[dict]:
    return _open_rows(path)
