"""Batch processing: raw station logs to a 20 Hz six-DOF pose track."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, DegenerateGeometryError, InsufficientDataError
from .geometry import CalibrationResult, align_point_sets, align_point_sets_batch, polar_to_xyz
from .timesync import SkewEstimate
from .types import STATIONS, Frame, PoseSample, PrismLayout, RawMeasurement, RigidTransform, US_PER_S


@dataclass(frozen=True)
class InterpolationConfig:
    step: float = 0.050
    outage_threshold: float = 1.0

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("interpolation step must be positive")
        if not self.outage_threshold > self.step:
            raise ConfigError("outage threshold must exceed the interpolation step")

    @property
    def step_us(self) -> int:
        return int(round(self.step * US_PER_S))

    @property
    def outage_us(self) -> int:
        return int(round(self.outage_threshold * US_PER_S))


@dataclass(frozen=True, eq=False)
class PrismTrack:
    """Time-ordered prism positions in the common frame (master clock)."""

    prism_index: int
    t: np.ndarray  # int64 µs, strictly increasing
    xyz: np.ndarray  # (n, 3)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        if len(t) != len(xyz):
            raise ValueError("times and positions differ in length")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("track timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xyz", xyz)

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True, eq=False)
class Interpolated:
    """Triplets of prism positions on the uniform grid."""

    t: np.ndarray  # int64 µs
    triplets: np.ndarray  # (n, 3, 3): grid point, prism, axis
    valid: np.ndarray  # bool
    gaps: np.ndarray  # (n, 3) bracketing gap per track, µs

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for i in range(len(self.t)):
            yield int(self.t[i]), self.triplets[i], bool(self.valid[i])


def gate(measurements: Iterable[RawMeasurement]) -> list[RawMeasurement]:
    """Drop every measurement whose station reported an error."""
    return [m for m in measurements if m.ok]


def unify_frames(measurements: Sequence[RawMeasurement], calib: Optional[CalibrationResult],
                 skews: Optional[Mapping[Frame, SkewEstimate]], zenith: bool = True) -> tuple[PrismTrack, ...]:
    """Gated measurements to three common-frame tracks on the master clock.

    Station ``k`` tracks prism ``k``.  Duplicate corrected timestamps keep
    the first sample.
    """
    tracks = []
    for idx, station in enumerate(STATIONS):
        ms = [m for m in measurements if m.station is station]
        if not ms:
            tracks.append(PrismTrack(idx, np.zeros(0, np.int64), np.zeros((0, 3))))
            continue
        if station is not Frame.STATION1 and calib is None:
            raise ConfigError(f"calibration required for {station.value} data")
        if skews is None or station not in skews:
            raise ConfigError(f"no clock synchronisation for {station.value}")
        est = skews[station]
        local = polar_to_xyz([m.ha for m in ms], [m.va for m in ms], [m.range for m in ms], zenith=zenith)
        T = calib.transform_for(station) if calib is not None else RigidTransform.identity()
        xyz = T.apply(local)
        t = np.array([m.t_client - int(round(est.delta_at(m.t_client))) for m in ms], dtype=np.int64)
        order = np.argsort(t, kind="stable")
        t, xyz = t[order], xyz[order]
        keep = np.concatenate([[True], np.diff(t) > 0])
        tracks.append(PrismTrack(idx, t[keep], xyz[keep]))
    return tuple(tracks)


def grid_times(tracks: Sequence[PrismTrack], step_us: int) -> np.ndarray:
    """Step-aligned times covering the span shared by all non-empty tracks."""
    used = [tr for tr in tracks if len(tr)]
    if not used:
        return np.zeros(0, np.int64)
    first = max(int(tr.t[0]) for tr in used)
    last = min(int(tr.t[-1]) for tr in used)
    t0 = -(-first // step_us) * step_us
    if t0 > last:
        return np.zeros(0, np.int64)
    n = (last - t0) // step_us + 1
    return t0 + np.arange(n, dtype=np.int64) * step_us


def interpolate(tracks: Sequence[PrismTrack], cfg: InterpolationConfig = InterpolationConfig()) -> Interpolated:
    """Per-axis linear interpolation of the three tracks on a uniform grid.

    A grid time is invalid when, on any track, the two measurements that
    bracket it are more than ``cfg.outage_threshold`` apart.
    """
    if len(tracks) != 3:
        raise InsufficientDataError(f"need three prism tracks, got {len(tracks)}")
    for tr in tracks:
        if len(tr) < 2:
            raise InsufficientDataError(f"prism {tr.prism_index + 1} track has {len(tr)} samples, need 2")
    g = grid_times(tracks, cfg.step_us)
    n = len(g)
    triplets = np.empty((n, 3, 3))
    gaps = np.empty((n, 3), dtype=np.int64)
    for k, tr in enumerate(tracks):
        right = np.searchsorted(tr.t, g, side="left")
        left = np.searchsorted(tr.t, g, side="right") - 1
        gaps[:, k] = tr.t[right] - tr.t[left]
        tf = tr.t.astype(float)
        for ax in range(3):
            triplets[:, k, ax] = np.interp(g.astype(float), tf, tr.xyz[:, ax])
    valid = np.all(gaps <= cfg.outage_us, axis=1)
    return Interpolated(g, triplets, valid, gaps)


def solve_pose(triplet, layout: PrismLayout, t: int = 0) -> PoseSample:
    """Robot pose from one triplet of measured prism positions."""
    Q = np.asarray(triplet, dtype=float)
    if Q.shape != (3, 3) or not np.all(np.isfinite(Q)):
        return PoseSample.invalid(t)
    try:
        T = align_point_sets(Q, layout.points)
    except DegenerateGeometryError:
        return PoseSample.invalid(t)
    res = np.linalg.norm(Q - T.apply(layout.points), axis=1)
    return PoseSample(t, T, float(math.sqrt(np.mean(res ** 2))), True)


def solve_poses(interp: Interpolated, layout: PrismLayout) -> list[PoseSample]:
    """Vectorised :func:`solve_pose` over every grid point."""
    out: list[Optional[PoseSample]] = [None] * len(interp)
    idx = np.flatnonzero(interp.valid)
    if len(idx):
        Q = interp.triplets[idx]
        R, t = align_point_sets_batch(Q, layout.points)
        fitted = np.einsum("mij,kj->mki", R, layout.points) + t[:, None, :]
        rms = np.sqrt(np.mean(np.sum((Q - fitted) ** 2, axis=2), axis=1))
        for j, i in enumerate(idx):
            out[i] = PoseSample(int(interp.t[i]), RigidTransform.from_matrix(R[j], t[j]), float(rms[j]), True)
    for i in range(len(out)):
        if out[i] is None:
            out[i] = PoseSample.invalid(int(interp.t[i]))
    return out


def run(measurements: Sequence[RawMeasurement], calib: Optional[CalibrationResult],
        skews: Optional[Mapping[Frame, SkewEstimate]], layout: PrismLayout,
        cfg: InterpolationConfig = InterpolationConfig(), zenith: bool = True) -> list[PoseSample]:
    """gate -> unify -> interpolate -> solve; invalid grid points are kept."""
    tracks = unify_frames(gate(measurements), calib, skews, zenith=zenith)
    return solve_tracks(tracks, layout, cfg)


def solve_tracks(tracks: Sequence[PrismTrack], layout: PrismLayout,
                 cfg: InterpolationConfig = InterpolationConfig()) -> list[PoseSample]:
    if all(len(tr) == 0 for tr in tracks):
        return []
    if any(len(tr) < 2 for tr in tracks):
        return [PoseSample.invalid(int(t)) for t in grid_times(tracks, cfg.step_us)]
    return solve_poses(interpolate(tracks, cfg), layout)
