import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from gtf.errors import ConfigError, TrajectoryRangeError
from gtf.geometry import polar_to_xyz, spherical_to_cartesian
from gtf.stations import (
    ARCSEC,
    RTK_FOREST_MEAN_ERROR,
    RTK_OPEN_MEAN_ERROR,
    GnssRegime,
    Segment,
    StationModel,
    TrajectorySpec,
    expected_baseline_error,
    generate_station_log,
    gnss_sigma_for_mean_error,
    observe,
    observe_many,
    simulate_gnss_pair,
    start_stop_trajectory,
)
from gtf.timesync import ClientClock
from gtf.types import GNSS_BASELINE, Frame, PrismLayout, RigidTransform, Status

LAYOUT = PrismLayout.default()


def test_pose_at_start_and_straight_line():
    spec = TrajectorySpec((1.0, 2.0, 0.5, 0.0), (Segment(10.0, 1.0, 0.0),), t0_us=1_000_000)
    T = spec.pose_at(1_000_000)
    np.testing.assert_allclose(T.translation, [1, 2, 0.5])
    assert spec.pose_at(6_000_000).translation[0] == pytest.approx(6.0, abs=1e-12)
    with pytest.raises(TrajectoryRangeError):
        spec.pose_at(0)
    with pytest.raises(TrajectoryRangeError):
        spec.pose_at(11_000_001)


def test_mixed_profile_matches_numeric_integration():
    segs = (Segment(2.0, 0.8, 0.0), Segment(3.0, 0.5, 0.7), Segment(1.0), Segment(4.0, 1.2, -0.4),
            Segment(2.5, 0.0, 1.1))
    spec = TrajectorySpec((3.0, -1.0, 0.0, 0.4), segs)
    bounds = np.concatenate([[0], np.cumsum([s.duration_s for s in segs])])

    def rhs(t, y):
        i = min(np.searchsorted(bounds, t, side="right") - 1, len(segs) - 1)
        s = segs[i]
        return [s.v * math.cos(y[2]), s.v * math.sin(y[2]), s.omega]

    y = [3.0, -1.0, 0.4]
    for a, b in zip(bounds[:-1], bounds[1:]):
        y = solve_ivp(rhs, (a, b), y, rtol=1e-12, atol=1e-13, method="DOP853").y[:, -1]
    x, yy, _, yaw, _, _ = spec.state(spec.t_end_us)
    assert abs(x[0] - y[0]) < 1e-9 and abs(yy[0] - y[1]) < 1e-9 and abs(yaw[0] - y[2]) < 1e-9


def test_speed_limits_enforced():
    with pytest.raises(ConfigError):
        TrajectorySpec((0, 0, 0, 0), (Segment(1.0, 2.5, 0.0),))
    with pytest.raises(ConfigError):
        TrajectorySpec((0, 0, 0, 0), (Segment(1.0, 0.0, 1.6),))


def test_trajectory_json_roundtrip():
    spec = start_stop_trajectory(t0_us=2_000_000)
    back = TrajectorySpec.from_json(spec.to_json())
    assert back == spec
    with pytest.raises(ConfigError):
        TrajectorySpec.from_json({"segments": []})


def test_stop_intervals_match_profile():
    spec = start_stop_trajectory(legs=2, stop_s=4.0, move_s=8.0, turn_s=3.0)
    iv = spec.stop_intervals()
    assert iv[0] == (0, 4_000_000)
    assert iv[1] == (12_000_000, 16_000_000)
    assert len(iv) == 5


def _static_spec(duration=100.0):
    return TrajectorySpec((20.0, 10.0, 0.0, 0.3), (Segment(duration),))


def test_observe_noiseless_roundtrip():
    station = StationModel(Frame.STATION2, pose=RigidTransform.from_euler(0.7, 0.0, 0.0, (5, -3, 1))).noiseless()
    spec = _static_spec()
    for k in range(3):
        m = observe(station, spec, LAYOUT, k, 1_000_000)
        world = station.pose.apply(spherical_to_cartesian(m))
        truth = spec.prism_positions(1_000_000, LAYOUT)[0, k]
        assert np.linalg.norm(world - truth) < 1e-9


def test_range_noise_statistics():
    station = StationModel(Frame.STATION1, sigma_angle=0.0, lag_tau_s=0.0)
    spec = _static_spec(1000.0)
    t = np.linspace(0, 999e6, 10_000).astype(np.int64)
    ms = observe_many(station, spec, LAYOUT, 0, t, np.random.default_rng(3))
    sd = np.std([m.range for m in ms], ddof=1)
    assert 0.0018 <= sd <= 0.0022


def test_transverse_scatter_at_800m():
    station = StationModel(Frame.STATION1, sigma_range=0.0, lag_tau_s=0.0)
    spec = TrajectorySpec((790.0, 0.0, 0.0, 0.0), (Segment(1000.0),))
    t = np.linspace(0, 999e6, 5000).astype(np.int64)
    ms = observe_many(station, spec, LAYOUT, 0, t, np.random.default_rng(4))
    xyz = polar_to_xyz([m.ha for m in ms], [m.va for m in ms], [m.range for m in ms])
    r = np.linalg.norm(spec.prism_positions(0, LAYOUT)[0, 0])
    assert r == pytest.approx(790.0, abs=1.0)
    scatter = np.std(xyz[:, 1], ddof=1) * 800.0 / r
    assert scatter == pytest.approx(800 * ARCSEC, rel=0.2)
    assert 0.0032 <= scatter <= 0.0048


def test_out_of_range_and_too_close():
    spec = TrajectorySpec((900.0, 0.0, 0.0, 0.0), (Segment(10.0),))
    m = observe(StationModel(Frame.STATION1), spec, LAYOUT, 0, 0)
    assert m.status is Status.PRISM_NOT_DETECTED
    spec = TrajectorySpec((0.5, 0.0, 0.0, 0.0), (Segment(10.0),))
    assert observe(StationModel(Frame.STATION1), spec, LAYOUT, 0, 0).status is Status.PRISM_TOO_CLOSE


def test_lag_zero_when_steady_and_spikes_at_changes():
    station = StationModel(Frame.STATION1, sigma_range=0.0, sigma_angle=0.0)
    spec = TrajectorySpec((20.0, 0.0, 0.0, math.pi / 2), (Segment(5.0), Segment(5.0, 1.0, 0.0)))
    truth = station.noiseless()

    def err(t):
        a = observe(station, spec, LAYOUT, 0, t)
        b = observe(truth, spec, LAYOUT, 0, t)
        return np.linalg.norm(spherical_to_cartesian(a) - spherical_to_cartesian(b))

    assert err(2_000_000) < 1e-9
    assert err(5_050_000) > 0.01
    assert err(9_000_000) < 1e-4


def test_station_logs_are_asynchronous():
    spec = start_stop_trajectory(t0_us=5_000_000, legs=1)
    stamps = []
    for k, (clock, phase) in enumerate(((ClientClock(1e5, 5), 0), (ClientClock(-2e5, -3), 110_000),
                                        (ClientClock(7e5, 9), 260_000))):
        st = StationModel(Frame.station(k + 1), phase_us=phase)
        log = generate_station_log(st, spec, LAYOUT, clock, np.random.default_rng(k))
        stamps.append(np.asarray(log.t_master))
        assert np.all(np.diff([m.t_client for m in log.measurements]) > 0)
    n = min(len(s) for s in stamps)
    for a in range(3):
        for b in range(a + 1, 3):
            d = stamps[a][:n] - stamps[b][:n]
            assert np.std(d) > 0


def test_injected_loss_bookkeeping():
    spec = start_stop_trajectory(legs=2)
    st = StationModel(Frame.STATION1, loss_probability=0.1, reacquisition_s=0.0)
    log = generate_station_log(st, spec, LAYOUT, ClientClock(), np.random.default_rng(9))
    bad = sum(not m.ok for m in log.measurements)
    assert bad == log.n_lost > 0


def test_outage_window():
    spec = start_stop_trajectory(legs=1)
    st = StationModel(Frame.STATION1, outages=((5_000_000, 7_000_000),), sample_jitter_us=0)
    log = generate_station_log(st, spec, LAYOUT, ClientClock(), np.random.default_rng(1))
    for m, tm in zip(log.measurements, log.t_master):
        assert m.ok == (not 5_000_000 <= tm <= 7_000_000)


def test_gnss_zero_noise_baseline():
    spec = start_stop_trajectory(legs=1)
    g = simulate_gnss_pair(spec, [GnssRegime("open", 0, 10 ** 12, 0.0)])
    np.testing.assert_allclose(np.linalg.norm(g.pos1 - g.pos2, axis=1), GNSS_BASELINE, atol=1e-12)
    assert np.all(np.diff(g.t_us) == 200_000)


@pytest.mark.parametrize("target", [RTK_OPEN_MEAN_ERROR, RTK_FOREST_MEAN_ERROR])
def test_gnss_regime_tuning(target):
    sigma = gnss_sigma_for_mean_error(target)
    assert expected_baseline_error(sigma) == pytest.approx(target, rel=1e-6)
    spec = TrajectorySpec((0, 0, 0, 0), (Segment(2000.0, 0.5, 0.1),))
    g = simulate_gnss_pair(spec, [GnssRegime("r", 0, 10 ** 12, sigma)], np.random.default_rng(8))
    err = np.abs(np.linalg.norm(g.pos1 - g.pos2, axis=1) - GNSS_BASELINE)
    assert np.mean(err) == pytest.approx(target, rel=0.3)
