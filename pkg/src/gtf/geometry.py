"""Polar-to-Cartesian conversion, SVD point-set alignment and calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CorrespondenceError,
    DegenerateGeometryError,
    InsufficientPointsError,
    RejectedMeasurementError,
)
from .types import Frame, PrismLayout, RawMeasurement, RigidTransform, point

# Relative singular-value floor below which a point set is treated as collinear.
COLLINEAR_RTOL = 1e-9


def spherical_to_cartesian(m: RawMeasurement, zenith: bool = True) -> np.ndarray:
    """Cartesian position of a measured prism in the station frame.

    With ``zenith=False`` the vertical angle is read as an elevation above the
    horizon, which some loggers emit.
    """
    if not m.ok:
        raise RejectedMeasurementError(f"measurement with status {m.status.value} cannot be converted")
    return polar_to_xyz(m.ha, m.va, m.range, zenith=zenith)


def polar_to_xyz(ha, va, r, zenith: bool = True) -> np.ndarray:
    """Vectorised conversion; returns ``(..., 3)``."""
    ha = np.asarray(ha, dtype=float)
    va = np.asarray(va, dtype=float)
    r = np.asarray(r, dtype=float)
    if not zenith:
        va = np.pi / 2 - va
    s = np.sin(va)
    return np.stack([r * s * np.cos(ha), r * s * np.sin(ha), r * np.cos(va)], axis=-1)


def xyz_to_polar(xyz) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`polar_to_xyz` (zenith convention, ha in [0, 2pi))."""
    xyz = np.asarray(xyz, dtype=float)
    r = np.linalg.norm(xyz, axis=-1)
    ha = np.mod(np.arctan2(xyz[..., 1], xyz[..., 0]), 2 * np.pi)
    # mod can round 2pi - tiny up to exactly 2pi
    ha = np.where(ha >= 2 * np.pi, 0.0, ha)
    va = np.arccos(np.clip(xyz[..., 2] / np.where(r > 0, r, 1.0), -1.0, 1.0))
    return ha, va, r


def _check_spread(centered: np.ndarray, what: str):
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0 or s[1] <= COLLINEAR_RTOL * s[0]:
        raise DegenerateGeometryError(f"{what} points are collinear or coincident")


def align_point_sets(reference, moving) -> RigidTransform:
    """Least-squares rigid transform ``T`` minimising ``sum ||q_k - T p_k||^2``.

    ``reference`` holds the q_k and ``moving`` the p_k, both ``(n, 3)`` with
    matching rows.  Closed-form SVD solution; reflections are removed by
    flipping the singular vector of the smallest singular value.
    """
    Q = np.asarray(reference, dtype=float)
    P = np.asarray(moving, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != 3 or Q.shape != P.shape:
        raise CorrespondenceError(f"need matching (n, 3) arrays, got {Q.shape} and {P.shape}")
    if len(Q) < 3:
        raise InsufficientPointsError(f"need at least 3 correspondences, got {len(Q)}")
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(P))):
        raise CorrespondenceError("non-finite coordinates")
    qc = Q.mean(axis=0)
    pc = P.mean(axis=0)
    _check_spread(Q - qc, "reference")
    _check_spread(P - pc, "moving")
    R = _kabsch_rotation((P - pc).T @ (Q - qc))
    return RigidTransform.from_matrix(R, qc - R @ pc)


def _kabsch_rotation(H: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    return Vt.T @ np.diag([1.0, 1.0, d]) @ U.T


def align_point_sets_batch(reference: np.ndarray, moving: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`align_point_sets` for ``reference`` of shape
    ``(m, n, 3)`` against one fixed ``moving`` set ``(n, 3)``.

    Returns rotation matrices ``(m, 3, 3)`` and translations ``(m, 3)``.
    No degeneracy checks; callers validate the fixed set once.
    """
    Q = np.asarray(reference, dtype=float)
    P = np.asarray(moving, dtype=float)
    qc = Q.mean(axis=1)
    pc = P.mean(axis=0)
    H = np.einsum("ki,mkj->mij", P - pc, Q - qc[:, None, :])
    U, _, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.sign(np.linalg.det(V @ Ut))
    d[d == 0] = 1.0
    V[:, :, 2] *= d[:, None]
    R = V @ Ut
    t = qc - R @ pc
    return R, t


def alignment_residuals(reference, moving, T: RigidTransform) -> np.ndarray:
    """Per-correspondence distances ``||q_k - T p_k||``."""
    return np.linalg.norm(np.asarray(reference, dtype=float) - T.apply(moving), axis=1)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Station 2 and 3 frames expressed in the common (station 1) frame.

    ``residuals`` lists the per-marker alignment residuals for station 2 then
    station 3, in ``marker_ids`` order.
    """

    t12: RigidTransform
    t13: RigidTransform
    marker_ids: tuple[str, ...]
    residuals: tuple[float, ...]
    rms: float

    def transform_for(self, station: Frame) -> RigidTransform:
        if station is Frame.STATION1:
            return RigidTransform.identity()
        if station is Frame.STATION2:
            return self.t12
        if station is Frame.STATION3:
            return self.t13
        raise ValueError(f"no calibration for {station}")


def calibrate_stations(markers: Mapping[Frame, Mapping[str, Sequence[float]]]) -> CalibrationResult:
    """Register stations 2 and 3 onto station 1 from shared markers.

    ``markers[station][marker_id]`` is the marker position measured in that
    station's frame.  Only markers seen by all three stations are used; three
    is the minimum, five or more is advisable.
    """
    try:
        m1, m2, m3 = (markers[s] for s in (Frame.STATION1, Frame.STATION2, Frame.STATION3))
    except KeyError as exc:
        raise CorrespondenceError(f"no markers for {exc.args[0]}") from None
    ids = sorted(set(m1) & set(m2) & set(m3))
    unmatched = (set(m1) | set(m2) | set(m3)) - set(ids)
    if unmatched:
        raise CorrespondenceError(f"markers not seen by all stations: {sorted(unmatched)}")
    if len(ids) < 3:
        raise InsufficientPointsError(f"need at least 3 shared markers, got {len(ids)}")
    Q = np.array([point(m1[i]) for i in ids])
    P2 = np.array([point(m2[i]) for i in ids])
    P3 = np.array([point(m3[i]) for i in ids])
    t12 = align_point_sets(Q, P2)
    t13 = align_point_sets(Q, P3)
    res = np.concatenate([alignment_residuals(Q, P2, t12), alignment_residuals(Q, P3, t13)])
    rms = float(math.sqrt(np.mean(res ** 2)))
    return CalibrationResult(t12, t13, tuple(ids), tuple(float(r) for r in res), rms)


def calibrate_prism_layout(measurements, robot_frame_def: RigidTransform) -> PrismLayout:
    """Express three prisms measured by one station in the robot frame.

    ``robot_frame_def`` is the robot frame's pose in the measuring station's
    frame (maps robot coordinates to station coordinates).
    """
    pts = np.asarray(measurements, dtype=float)
    if pts.shape != (3, 3):
        raise CorrespondenceError(f"need exactly three prism positions, got shape {pts.shape}")
    for a in range(3):
        for b in range(a + 1, 3):
            if np.linalg.norm(pts[a] - pts[b]) < 1e-9:
                raise DegenerateGeometryError(f"prisms {a + 1} and {b + 1} coincide")
    local = robot_frame_def.inverse().apply(pts)
    return PrismLayout.from_points(*local)
