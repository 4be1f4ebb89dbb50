import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import random_transform
from gtf.errors import ConfigError, InsufficientDataError
from gtf.geometry import CalibrationResult
from gtf.pipeline import (
    InterpolationConfig,
    PrismTrack,
    gate,
    interpolate,
    run,
    solve_pose,
    unify_frames,
)
from gtf.stations import Segment, StationModel, TrajectorySpec, generate_station_log, observe_many, start_stop_trajectory
from gtf.timesync import ClientClock, SkewEstimate
from gtf.types import STATIONS, Frame, PrismLayout, RawMeasurement, RigidTransform, Status

LAYOUT = PrismLayout.default()
ZERO = {st: SkewEstimate.initial(0.0) for st in STATIONS}


def track(k, t, xyz):
    return PrismTrack(k, np.asarray(t, dtype=np.int64), np.asarray(xyz, dtype=float))


def test_gate():
    ok = [RawMeasurement(Frame.STATION1, 0.1, 1.0, 5.0, i) for i in range(3)]
    assert gate(ok) == ok
    bad = [RawMeasurement(Frame.STATION1, 0.1, 1.0, 5.0, i, Status.PRISM_NOT_DETECTED) for i in range(3)]
    assert gate(bad) == []
    mixed = [ok[0], bad[1], ok[2]]
    assert gate(mixed) == [ok[0], ok[2]]


def test_gate_matches_injected_loss():
    spec = start_stop_trajectory(legs=3)
    st = StationModel(Frame.STATION1, loss_probability=0.1, reacquisition_s=0.0)
    log = generate_station_log(st, spec, LAYOUT, ClientClock(), np.random.default_rng(31))
    assert len(log.measurements) - len(gate(log.measurements)) == log.n_lost > 0


def test_interpolation_midpoint():
    tr = [track(k, [0, 1_000_000], [[0, 0, 0], [1, 0, 0]]) for k in range(3)]
    out = interpolate(tr, InterpolationConfig(step=0.5, outage_threshold=2.0))
    assert list(out.t) == [0, 500_000, 1_000_000]
    assert out.triplets[1, 0, 0] == pytest.approx(0.5)
    assert out.valid.all()


def test_interpolation_gap_invalidates():
    t = np.arange(0, 10_000_001, 400_000)
    gap = t[(t < 3_000_000) | (t > 5_000_000)]
    tr = [track(0, t, np.zeros((len(t), 3))), track(1, gap, np.zeros((len(gap), 3))),
          track(2, t, np.zeros((len(t), 3)))]
    out = interpolate(tr)
    lo, hi = gap[gap < 3_000_000].max(), gap[gap > 5_000_000].min()
    expect = ~((out.t > lo) & (out.t < hi))
    np.testing.assert_array_equal(out.valid, expect)
    assert np.all(np.diff(out.t) == 50_000) and out.t[0] % 50_000 == 0


def test_interpolation_requires_two_samples():
    tr = [track(0, [0], [[0, 0, 0]]), track(1, [0, 1], [[0, 0, 0]] * 2), track(2, [0, 1], [[0, 0, 0]] * 2)]
    with pytest.raises(InsufficientDataError):
        interpolate(tr)


def test_quadratic_motion_interpolation_bound():
    acc = np.array([0.3, -0.2, 0.05])
    rng = np.random.default_rng(3)
    tracks = []
    for k in range(3):
        t = np.cumsum(rng.integers(380_000, 420_000, 60)) + k * 133_000
        s = t / 1e6
        tracks.append(track(k, t, 0.5 * acc[None, :] * s[:, None] ** 2 + k))
    out = interpolate(tracks)
    gap = 420_000 / 1e6
    bound = np.linalg.norm(acc) * (gap / 2) ** 2 / 2
    s = out.t / 1e6
    for k in range(3):
        truth = 0.5 * acc[None, :] * s[:, None] ** 2 + k
        err = np.linalg.norm(out.triplets[:, k] - truth, axis=1)
        assert err.max() <= bound + 1e-12


def test_track_rejects_unsorted():
    with pytest.raises(ValueError):
        track(0, [5, 3], [[0, 0, 0], [1, 1, 1]])


def test_solve_pose_identity_and_exact(rng):
    p = solve_pose(LAYOUT.points, LAYOUT, t=7)
    assert p.valid and p.t == 7 and p.residual_rms < 1e-12
    assert p.pose.isclose(RigidTransform.identity(), 1e-12)
    G = random_transform(rng)
    p = solve_pose(G.apply(LAYOUT.points), LAYOUT)
    assert p.pose.isclose(G, 1e-9) and p.residual_rms < 1e-9


def test_solve_pose_residual_zero_iff_rigid(rng):
    G = random_transform(rng)
    Q = G.apply(LAYOUT.points)
    Q[2] += [0.0, 0.0, 0.01]
    assert solve_pose(Q, LAYOUT).residual_rms > 1e-6


def test_solve_pose_invalid_triplet():
    Q = LAYOUT.points.copy()
    Q[1] = np.nan
    assert not solve_pose(Q, LAYOUT).valid
    assert not solve_pose(np.zeros((3, 3)), LAYOUT).valid


def test_solve_pose_noise_statistics():
    rng = np.random.default_rng(11)
    pos, ang = [], []
    for _ in range(1000):
        p = solve_pose(LAYOUT.points + rng.normal(0, 0.010, (3, 3)), LAYOUT)
        pos.append(np.linalg.norm(p.pose.translation))
        ang.append(np.mean(np.abs(p.pose.euler_zyx())))
    assert np.mean(pos) == pytest.approx(0.010, rel=0.3)
    assert np.mean(ang) == pytest.approx(0.010, rel=0.3)


def _measurements_for(spec, stations, clocks, rng_seed=0):
    out = []
    for k, (st, c) in enumerate(zip(stations, clocks)):
        log = generate_station_log(st, spec, LAYOUT, c, np.random.default_rng(rng_seed + k))
        out.extend(log.measurements)
    return out


def test_unify_identity_and_known_calibration():
    spec = TrajectorySpec((10.0, 5.0, 0.0, 0.2), (Segment(20.0, 0.3, 0.1),), t0_us=1_000_000)
    t12 = RigidTransform.from_euler(1.0, 0.0, 0.0, (30, -20, 0.5))
    t13 = RigidTransform.from_euler(-2.0, 0.01, 0.0, (-15, 40, -0.2))
    poses = (RigidTransform.identity(), t12, t13)
    stations = [StationModel(f, pose=p, sample_jitter_us=0, phase_us=80_000 * k).noiseless()
                for k, (f, p) in enumerate(zip(STATIONS, poses))]
    ms = _measurements_for(spec, stations, [ClientClock()] * 3)
    cal = CalibrationResult(t12, t13, (), (), 0.0)
    tracks = unify_frames(gate(ms), cal, ZERO)
    for k, tr in enumerate(tracks):
        truth = spec.prism_positions(tr.t, LAYOUT)[:, k]
        assert np.abs(tr.xyz - truth).max() < 1e-9
    t1 = [m.t_client for m in ms if m.station is Frame.STATION1]
    np.testing.assert_array_equal(tracks[0].t, t1)


def test_unify_requires_calibration_and_sync():
    m2 = [RawMeasurement(Frame.STATION2, 0.1, 1.0, 5.0, 0)]
    with pytest.raises(ConfigError):
        unify_frames(m2, None, ZERO)
    m1 = [RawMeasurement(Frame.STATION1, 0.1, 1.0, 5.0, 0)]
    with pytest.raises(ConfigError):
        unify_frames(m1, None, {})


def test_unify_applies_clock_correction():
    m = [RawMeasurement(Frame.STATION1, 0.1, 1.0, 5.0, 10_000)]
    tr = unify_frames(m, None, {Frame.STATION1: SkewEstimate.initial(4000.0)})
    assert tr[0].t[0] == 6000


def test_run_empty_and_single_station():
    assert run([], None, ZERO, LAYOUT) == []
    ms = [RawMeasurement(Frame.STATION1, 0.1, 1.0, 5.0, t) for t in range(0, 3_000_000, 400_000)]
    out = run(ms, None, ZERO, LAYOUT)
    assert out and all(not p.valid for p in out)
    assert all(p.t % 50_000 == 0 for p in out)


def test_static_inter_prism_distances_within_noise():
    spec = TrajectorySpec((40.0, 25.0, 0.0, 0.4), (Segment(120.0),), t0_us=1_000_000)
    poses = (RigidTransform.identity(), RigidTransform.from_euler(1.2, 0, 0, (60, -40, 0.3)),
             RigidTransform.from_euler(-2.0, 0, 0, (-30, 70, -0.5)))
    stations = [StationModel(f, pose=p) for f, p in zip(STATIONS, poses)]
    ms = _measurements_for(spec, stations, [ClientClock()] * 3, rng_seed=50)
    cal = CalibrationResult(poses[1], poses[2], (), (), 0.0)
    out = interpolate(unify_frames(gate(ms), cal, ZERO))
    X = out.triplets[out.valid]
    for (a, b), d in zip(((0, 1), (0, 2), (1, 2)), LAYOUT.distances):
        e = np.linalg.norm(X[:, a] - X[:, b], axis=1) - d
        assert np.abs(e).max() <= 3 * math.sqrt(2) * 0.002 * 1.5


def test_noiseless_run_reproduces_trajectory():
    spec = TrajectorySpec((10.0, 5.0, 0.0, 0.0), (Segment(30.0),), t0_us=2_000_000)
    stations = [StationModel(f, phase_us=100_000 * k).noiseless() for k, f in enumerate(STATIONS)]
    ms = _measurements_for(spec, stations, [ClientClock()] * 3)
    cal = CalibrationResult(RigidTransform.identity(), RigidTransform.identity(), (), (), 0.0)
    out = run(ms, cal, ZERO, LAYOUT)
    assert out and all(p.valid for p in out)
    for p in out:
        assert p.pose.isclose(spec.pose_at(p.t), 1e-9)
