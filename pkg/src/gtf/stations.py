"""Synthetic robot trajectories, total-station observations and GNSS logs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigError, TrajectoryRangeError
from .geometry import polar_to_xyz, xyz_to_polar
from .types import (
    GNSS_BASELINE,
    Frame,
    PrismLayout,
    RawMeasurement,
    RigidTransform,
    Status,
    Timestamp,
    US_PER_S,
)

ARCSEC = math.pi / (180 * 3600)

MAX_SPEED = 2.0
MAX_RATE = 1.5
TRACKING_RANGE = 800.0


@dataclass(frozen=True)
class Segment:
    """Constant linear and angular velocity for ``duration_s`` seconds."""

    duration_s: float
    v: float = 0.0
    omega: float = 0.0

    @property
    def is_stop(self) -> bool:
        return self.v == 0.0 and self.omega == 0.0


@dataclass(frozen=True)
class TrajectorySpec:
    """Planar unicycle path built from piecewise-constant velocity segments.

    ``start`` is ``(x, y, z, yaw)`` in the common frame; the path starts at
    master time ``t0_us``.  Poses have zero roll and pitch.
    """

    start: tuple[float, float, float, float]
    segments: tuple[Segment, ...]
    t0_us: int = 0
    max_speed: float = MAX_SPEED
    max_rate: float = MAX_RATE

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ConfigError("trajectory needs at least one segment")
        for s in self.segments:
            if s.duration_s <= 0:
                raise ConfigError("segment durations must be positive")
            if abs(s.v) > self.max_speed or abs(s.omega) > self.max_rate:
                raise ConfigError(f"segment {s} exceeds robot limits")
        self._boundaries()  # precompute

    def _boundaries(self):
        cache = self.__dict__.get("_cache")
        if cache is not None:
            return cache
        starts_s = np.concatenate([[0.0], np.cumsum([s.duration_s for s in self.segments])])
        x, y, z, yaw = self.start
        states = [(x, y, yaw)]
        for s in self.segments:
            x, y, yaw = _advance(x, y, yaw, s.v, s.omega, s.duration_s)
            states.append((x, y, yaw))
        cache = (starts_s, np.array(states))
        object.__setattr__(self, "_cache", cache)
        return cache

    @property
    def duration_us(self) -> int:
        return int(round(self._boundaries()[0][-1] * US_PER_S))

    @property
    def t_end_us(self) -> int:
        return self.t0_us + self.duration_us

    @property
    def waypoints(self) -> list[tuple[np.ndarray, float]]:
        _, states = self._boundaries()
        z = self.start[2]
        return [(np.array([sx, sy, z]), float(syaw)) for sx, sy, syaw in states]

    def state(self, t_us, clamp: bool = False):
        """Arrays ``x, y, z, yaw, v, omega`` at master times ``t_us``."""
        t = np.atleast_1d(np.asarray(t_us, dtype=float))
        if clamp:
            t = np.clip(t, self.t0_us, self.t_end_us)
        elif np.any(t < self.t0_us) or np.any(t > self.t_end_us):
            raise TrajectoryRangeError(f"time outside trajectory span [{self.t0_us}, {self.t_end_us}]")
        starts_s, states = self._boundaries()
        tau_all = (t - self.t0_us) / US_PER_S
        idx = np.clip(np.searchsorted(starts_s, tau_all, side="right") - 1, 0, len(self.segments) - 1)
        v = np.array([s.v for s in self.segments])[idx]
        w = np.array([s.omega for s in self.segments])[idx]
        tau = tau_all - starts_s[idx]
        x, y, yaw = _advance(states[idx, 0], states[idx, 1], states[idx, 2], v, w, tau)
        z = np.full_like(x, self.start[2])
        return x, y, z, yaw, v, w

    def pose_at(self, t: Timestamp) -> RigidTransform:
        x, y, z, yaw, _, _ = self.state(t)
        return RigidTransform.from_euler(float(yaw[0]), 0.0, 0.0, (x[0], y[0], z[0]))

    def prism_positions(self, t_us, layout: PrismLayout, clamp: bool = False) -> np.ndarray:
        """World positions of the three prisms, shape ``(n, 3, 3)``."""
        x, y, z, yaw, _, _ = self.state(t_us, clamp=clamp)
        c, s = np.cos(yaw), np.sin(yaw)
        P = layout.points
        px = c[:, None] * P[None, :, 0] - s[:, None] * P[None, :, 1] + x[:, None]
        py = s[:, None] * P[None, :, 0] + c[:, None] * P[None, :, 1] + y[:, None]
        pz = np.broadcast_to(P[None, :, 2] + z[:, None], px.shape)
        return np.stack([px, py, pz], axis=-1)

    def stop_intervals(self) -> list[tuple[int, int]]:
        """Maximal ``[start, end]`` master-time intervals with the robot at rest."""
        starts_s, _ = self._boundaries()
        out: list[tuple[int, int]] = []
        for i, s in enumerate(self.segments):
            if not s.is_stop:
                continue
            a = self.t0_us + int(round(starts_s[i] * US_PER_S))
            b = self.t0_us + int(round(starts_s[i + 1] * US_PER_S))
            if out and out[-1][1] == a:
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
        return out

    def to_json(self) -> dict:
        x, y, z, yaw = self.start
        return {
            "schema": "gtf.trajectory/1",
            "t0_s": self.t0_us / US_PER_S,
            "start": {"x": x, "y": y, "z": z, "yaw": yaw},
            "segments": [{"duration_s": s.duration_s, "v": s.v, "omega": s.omega} for s in self.segments],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrajectorySpec":
        try:
            st = doc["start"]
            segs = tuple(Segment(float(s["duration_s"]), float(s.get("v", 0.0)), float(s.get("omega", 0.0)))
                         for s in doc["segments"])
            return cls((st["x"], st["y"], st.get("z", 0.0), st.get("yaw", 0.0)), segs,
                       int(round(float(doc.get("t0_s", 0.0)) * US_PER_S)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed trajectory document: {exc}") from None


def _advance(x, y, yaw, v, w, tau):
    # exact unicycle integration, stable as w -> 0
    half = 0.5 * np.asarray(w) * tau
    chord = np.asarray(v) * tau * np.sinc(half / np.pi)
    mid = yaw + half
    return x + chord * np.cos(mid), y + chord * np.sin(mid), yaw + np.asarray(w) * tau


def start_stop_trajectory(t0_us: int = 0, start=(20.0, 15.0, 0.0, 0.3), legs: int = 6,
                          v: float = 0.5, omega: float = 0.3, move_s: float = 8.0,
                          turn_s: float = 3.0, stop_s: float = 4.0) -> TrajectorySpec:
    """Drive / stop / turn-while-driving / stop pattern, repeated."""
    segs = [Segment(stop_s)]
    for i in range(legs):
        segs.append(Segment(move_s, v, 0.0))
        segs.append(Segment(stop_s))
        sign = 1.0 if i % 2 == 0 else -1.0
        segs.append(Segment(turn_s, v * 0.5, sign * omega))
        segs.append(Segment(stop_s))
    return TrajectorySpec(start, tuple(segs), t0_us)


@dataclass(frozen=True, eq=False)
class StationModel:
    """One total station: placement, rate, noise and tracking behaviour.

    ``pose`` maps station coordinates into the common frame.  ``lag_tau_s``
    is the time constant of the tracker's angular-rate estimate: the
    pointing error is ``tau * (rate - lowpass(rate))``, which vanishes for a
    steadily moving prism and spikes when the prism's angular velocity
    changes abruptly.  ``outages`` are master-time windows with the prism
    forced to not-detected.
    """

    frame: Frame
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    rate_hz: float = 2.5
    sigma_range: float = 0.002
    sigma_angle: float = ARCSEC
    loss_probability: float = 0.0
    reacquisition_s: float = 1.0
    lag_tau_s: float = 0.08
    max_range: float = TRACKING_RANGE
    min_range: float = 1.5
    sample_jitter_us: int = 10_000
    phase_us: int = 0
    outages: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ConfigError("measurement rate must be positive")
        if self.sigma_range < 0 or self.sigma_angle < 0:
            raise ConfigError("noise sigmas must be non-negative")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ConfigError("loss probability must be in [0, 1]")
        object.__setattr__(self, "outages", tuple((int(a), int(b)) for a, b in self.outages))

    @property
    def period_us(self) -> int:
        return int(round(US_PER_S / self.rate_hz))

    def noiseless(self) -> "StationModel":
        return replace(self, sigma_range=0.0, sigma_angle=0.0, lag_tau_s=0.0, loss_probability=0.0)


_LAG_WINDOW = 8.0  # time constants of history used for the lag filter
_LAG_STEPS = 64


def _true_polar(station: StationModel, spec: TrajectorySpec, layout: PrismLayout, prism: int, t_us):
    world = spec.prism_positions(t_us, layout, clamp=True)[:, prism]
    local = station.pose.inverse().apply(world)
    return xyz_to_polar(local)


def _lag_errors(station: StationModel, spec: TrajectorySpec, layout: PrismLayout, prism: int, t_us):
    """Pointing errors ``(d_ha, d_va)`` at each time in ``t_us``."""
    tau = station.lag_tau_s
    t = np.atleast_1d(np.asarray(t_us, dtype=float))
    if tau <= 0:
        return np.zeros_like(t), np.zeros_like(t)
    dt = _LAG_WINDOW * tau / _LAG_STEPS
    offsets = (np.arange(-_LAG_STEPS, 1) * dt) * US_PER_S
    grid = t[:, None] + offsets[None, :]
    ha, va, _ = _true_polar(station, spec, layout, prism, grid.ravel())
    ha = np.unwrap(ha.reshape(grid.shape), axis=1)
    va = va.reshape(grid.shape)
    alpha = 1.0 - math.exp(-dt / tau)
    errs = []
    for ang in (ha, va):
        rate = np.diff(ang, axis=1) / dt
        r = rate[:, 0].copy()
        for k in range(1, rate.shape[1]):
            r += alpha * (rate[:, k] - r)
        errs.append(tau * (rate[:, -1] - r))
    return errs[0], errs[1]


def observe(station: StationModel, spec: TrajectorySpec, layout: PrismLayout, prism_index: int,
            t: Timestamp, rng: Optional[np.random.Generator] = None,
            t_client: Optional[Timestamp] = None) -> RawMeasurement:
    """Measure prism ``prism_index`` (0-based) at master time ``t``."""
    ms = observe_many(station, spec, layout, prism_index, np.array([t]), rng,
                      None if t_client is None else np.array([t_client]))
    return ms[0]


def observe_many(station: StationModel, spec: TrajectorySpec, layout: PrismLayout, prism_index: int,
                 t_us: np.ndarray, rng: Optional[np.random.Generator] = None,
                 t_client: Optional[np.ndarray] = None) -> list[RawMeasurement]:
    t_us = np.asarray(t_us)
    if np.any(t_us < spec.t0_us) or np.any(t_us > spec.t_end_us):
        raise TrajectoryRangeError("observation time outside trajectory span")
    ha, va, r = _true_polar(station, spec, layout, prism_index, t_us)
    dha, dva = _lag_errors(station, spec, layout, prism_index, t_us)
    ha = ha - dha
    va = va - dva
    n = len(t_us)
    if rng is not None and (station.sigma_angle > 0 or station.sigma_range > 0):
        ha = ha + rng.normal(0.0, station.sigma_angle, n)
        va = va + rng.normal(0.0, station.sigma_angle, n)
        r = r + rng.normal(0.0, station.sigma_range, n)
    ha = np.mod(ha, 2 * np.pi)
    ha = np.where(ha >= 2 * np.pi, 0.0, ha)
    va = np.clip(va, 0.0, np.pi)
    stamps = t_us if t_client is None else np.asarray(t_client)
    out = []
    for i in range(n):
        true_range = r[i]
        if true_range > station.max_range:
            status = Status.PRISM_NOT_DETECTED
        elif true_range < station.min_range:
            status = Status.PRISM_TOO_CLOSE
        else:
            status = Status.OK
        out.append(RawMeasurement(station.frame, float(ha[i]), float(va[i]), float(max(r[i], 0.0)),
                                  int(stamps[i]), status))
    return out


@dataclass
class StationLog:
    """Everything one station recorded, with the simulation's bookkeeping."""

    measurements: list[RawMeasurement]
    t_master: np.ndarray  # true master time of each sample (float µs)
    n_lost: int = 0  # samples blanked by the tracking-loss model
    n_outage: int = 0  # samples blanked by scheduled outages


def generate_station_log(station: StationModel, spec: TrajectorySpec, layout: PrismLayout,
                         clock, rng: np.random.Generator,
                         t_start_us: Optional[int] = None, t_end_us: Optional[int] = None) -> StationLog:
    """Sample a station at its own rate on its own (client) clock."""
    t_start = spec.t0_us if t_start_us is None else t_start_us
    t_end = spec.t_end_us if t_end_us is None else t_end_us
    c0 = clock.read(t_start) + station.phase_us
    c1 = clock.read(t_end)
    n = max(0, (c1 - c0) // station.period_us + 1)
    c = c0 + np.arange(n, dtype=np.int64) * station.period_us
    if station.sample_jitter_us:
        c = c + rng.integers(-station.sample_jitter_us, station.sample_jitter_us + 1, n)
    c = np.sort(c)
    t_master = clock.to_master(c)
    keep = (t_master >= spec.t0_us) & (t_master <= spec.t_end_us)
    c, t_master = c[keep], t_master[keep]
    ms = observe_many(station, spec, layout, station.frame.index - 1, t_master, rng, c)

    n_lost = n_outage = 0
    blank_until = -math.inf
    reacq_us = station.reacquisition_s * US_PER_S
    losses = rng.random(len(ms)) < station.loss_probability if station.loss_probability > 0 else None
    for i, m in enumerate(ms):
        tm = t_master[i]
        if any(a <= tm <= b for a, b in station.outages):
            if m.ok:
                ms[i] = _blank(m)
                n_outage += 1
            continue
        if losses is not None and losses[i]:
            blank_until = tm + reacq_us
        if tm <= blank_until and m.ok:
            ms[i] = _blank(m)
            n_lost += 1
    return StationLog(ms, t_master, n_lost, n_outage)


def _blank(m: RawMeasurement) -> RawMeasurement:
    return RawMeasurement(m.station, m.ha, m.va, m.range, m.t_client, Status.PRISM_NOT_DETECTED)


def observe_points(station: StationModel, points, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Single-measurement mode on static targets (common-frame points).

    Returns noisy Cartesian positions in the station's frame.
    """
    local = station.pose.inverse().apply(np.asarray(points, dtype=float))
    ha, va, r = xyz_to_polar(local)
    if rng is not None:
        ha = ha + rng.normal(0.0, station.sigma_angle, ha.shape)
        va = va + rng.normal(0.0, station.sigma_angle, va.shape)
        r = r + rng.normal(0.0, station.sigma_range, r.shape)
    return polar_to_xyz(ha, va, r)


# GNSS receiver pair

@dataclass(frozen=True)
class GnssRegime:
    """Master-time window with a given per-axis position noise."""

    name: str
    start_us: int
    end_us: int
    sigma: float


@dataclass
class GnssLog:
    t_us: np.ndarray
    pos1: np.ndarray
    pos2: np.ndarray
    regime: list[str]


DEFAULT_ANTENNAS = ((0.0, -GNSS_BASELINE / 2, 0.35), (0.0, GNSS_BASELINE / 2, 0.35))

# Mean inter-receiver errors reported for RTK in open sky and under canopy.
RTK_OPEN_MEAN_ERROR = 0.0102
RTK_FOREST_MEAN_ERROR = 0.496


def expected_baseline_error(sigma: float, baseline: float = GNSS_BASELINE) -> float:
    """E| ||b + n1 - n2|| - b | with n1, n2 ~ N(0, sigma^2 I3) independent."""
    if sigma <= 0:
        return 0.0
    s = sigma * math.sqrt(2.0)
    b = baseline

    def pdf(r):
        # density of the norm of a 3-D isotropic Gaussian offset by b
        return r / (b * s * math.sqrt(2 * math.pi)) * (
            math.exp(-((r - b) ** 2) / (2 * s * s)) - math.exp(-((r + b) ** 2) / (2 * s * s)))

    hi = b + 12 * s
    pts = [p for p in (b - 6 * s, b, b + 6 * s) if 0 < p < hi]
    val, _ = integrate.quad(lambda r: abs(r - b) * pdf(r), 0.0, hi, points=pts, limit=400)
    return val


@lru_cache(maxsize=None)
def gnss_sigma_for_mean_error(target: float, baseline: float = GNSS_BASELINE) -> float:
    """Per-axis receiver noise giving a mean inter-receiver error of ``target``."""
    return float(optimize.brentq(lambda s: expected_baseline_error(s, baseline) - target,
                                 1e-6, 100.0, xtol=1e-12))


def default_gnss_sigmas() -> dict[str, float]:
    return {"open": gnss_sigma_for_mean_error(RTK_OPEN_MEAN_ERROR),
            "forest": gnss_sigma_for_mean_error(RTK_FOREST_MEAN_ERROR)}


def simulate_gnss_pair(spec: TrajectorySpec, regimes: Sequence[GnssRegime],
                       rng: Optional[np.random.Generator] = None,
                       antennas=DEFAULT_ANTENNAS, rate_hz: float = 5.0) -> GnssLog:
    """Noisy positions of two robot-mounted antennas at ``rate_hz``.

    Epochs outside every regime window use the first regime's noise.
    """
    a = np.asarray(antennas, dtype=float)
    if a.shape != (2, 3) or np.linalg.norm(a[0] - a[1]) <= 0:
        raise ConfigError("need two distinct antenna offsets")
    step = int(round(US_PER_S / rate_hz))
    t = np.arange(spec.t0_us, spec.t_end_us + 1, step, dtype=np.int64)
    pseudo = PrismLayout.from_points(a[0], a[1], a[0] + np.array([0.0, 0.0, 1.0]))
    pos = spec.prism_positions(t, pseudo)
    pos1, pos2 = pos[:, 0].copy(), pos[:, 1].copy()
    labels = []
    sig = np.zeros(len(t))
    for i, ti in enumerate(t):
        reg = next((r for r in regimes if r.start_us <= ti < r.end_us), regimes[0])
        labels.append(reg.name)
        sig[i] = reg.sigma
    if rng is not None:
        pos1 += rng.normal(0.0, 1.0, pos1.shape) * sig[:, None]
        pos2 += rng.normal(0.0, 1.0, pos2.shape) * sig[:, None]
    return GnssLog(t, pos1, pos2, labels)
