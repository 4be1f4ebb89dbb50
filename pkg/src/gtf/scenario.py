"""End-to-end simulated field run: radio, clocks, stations, GNSS and markers.

The master first synchronises every client (one at a time), then polls the
clients round-robin for their newest measurement while the robot drives the
trajectory.  Each client is resynchronised every ``resync_period_s``; the
clients' schedules are staggered so at most one resynchronisation runs at a
time, and polling pauses while it does.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .config import RunConfig
from .errors import SyncTimeoutError
from .radio import Channel, Client, LogEvent, Network, Simulator, poll_round
from .seeding import derive_rng
from .stations import (
    GnssLog,
    GnssRegime,
    StationLog,
    TrajectorySpec,
    generate_station_log,
    gnss_sigma_for_mean_error,
    observe_points,
    simulate_gnss_pair,
)
from .timesync import SkewEstimate, initial_sync, resync
from .types import STATIONS, Frame, RawMeasurement, US_PER_S


@dataclass
class ScenarioResult:
    trajectory: TrajectorySpec
    station_logs: dict[Frame, StationLog]
    delivered: list[tuple[int, RawMeasurement]]  # (master arrival time, measurement)
    events: list[LogEvent]
    skews: dict[Frame, SkewEstimate]
    measure_start_us: int
    sync_failures: int = 0
    resyncs: int = 0
    markers: dict[Frame, dict[str, np.ndarray]] = field(default_factory=dict)
    gnss: Optional[GnssLog] = None

    @property
    def measurements(self) -> list[RawMeasurement]:
        """All station-side samples, station order then time order."""
        return [m for st in STATIONS for m in self.station_logs[st].measurements]

    @property
    def realtime_measurements(self) -> list[RawMeasurement]:
        return [m for _, m in self.delivered]

    def delivery_rate(self) -> float:
        """Delivered measurements per second over the measurement phase."""
        span = (self.trajectory.t_end_us - self.measure_start_us) / US_PER_S
        return len(self.delivered) / span if span > 0 else 0.0


def _sync_with_retry(net, cid, attempts, make):
    last = None
    for _ in range(attempts):
        try:
            return (yield from make())
        except SyncTimeoutError as exc:
            last = exc
    raise last


def run_scenario(cfg: RunConfig, with_extras: bool = True) -> ScenarioResult:
    """Simulate a full run; deterministic for a given ``cfg.seed``."""
    seed = cfg.seed
    start = int(round(cfg.master_start_s * US_PER_S))
    sim = Simulator(start)
    channel = Channel(cfg.channel, derive_rng(seed, "channel"))
    clients = {st.index: Client(st.index, s.clock) for st, s in zip(STATIONS, cfg.stations)}
    net = Network(sim, channel, clients)
    ids = sorted(clients)
    sync = cfg.sync
    state: dict = {"delivered": [], "skews": {}, "failures": 0, "resyncs": 0}

    def begin_measurement(now: int):
        t0 = now + int(round(cfg.settle_s * US_PER_S))
        spec = replace(cfg.trajectory, t0_us=t0)
        logs = {}
        for st, setup in zip(STATIONS, cfg.stations):
            model = setup.model
            if model.outages:
                model = replace(model, outages=tuple((t0 + a, t0 + b) for a, b in model.outages))
            log = generate_station_log(model, spec, cfg.layout, setup.clock, derive_rng(seed, "station", st.index))
            logs[st] = log
            client = clients[st.index]
            for m, tm in zip(log.measurements, log.t_master):
                sim.schedule(max(int(np.ceil(tm)), sim.now), lambda m=m, c=client: c.offer(m))
        state["spec"], state["logs"], state["measure_start"] = spec, logs, now
        return spec

    def master():
        est = {}
        for cid in ids:
            est[cid] = yield from _sync_with_retry(
                net, cid, sync.max_attempts,
                lambda cid=cid: initial_sync(net, cid, sync.initial_cycles, sync.w))
        state["skews"] = est
        spec = begin_measurement(sim.now)
        period = int(round(sync.resync_period_s * US_PER_S))
        due = {cid: sim.now + period + k * period // len(ids) for k, cid in enumerate(ids)}
        while sim.now < spec.t_end_us:
            cid = min(ids, key=lambda c: (due[c], c))
            if due[cid] <= sim.now:
                try:
                    est[cid] = yield from resync(net, cid, est[cid], sync.resync_cycles)
                    state["resyncs"] += 1
                except SyncTimeoutError:
                    state["failures"] += 1  # previous correction stays in force
                due[cid] += period
                continue
            got = yield from poll_round(net, ids)
            for m in got:
                state["delivered"].append((sim.now, m))
        return est

    sim.run_process(master())
    spec = state["spec"]
    skews = {Frame.station(cid): e for cid, e in state["skews"].items()}
    result = ScenarioResult(spec, state["logs"], state["delivered"], list(channel.log), skews,
                            state["measure_start"], state["failures"], state["resyncs"])
    if with_extras:
        result.markers = simulate_markers(cfg)
        result.gnss = simulate_gnss(cfg, spec)
    return result


def simulate_markers(cfg: RunConfig) -> dict[Frame, dict[str, np.ndarray]]:
    """Each station measures every marker once, with its own noise."""
    pts = np.asarray(cfg.markers, dtype=float).reshape(-1, 3)
    ids = [f"M{i + 1}" for i in range(len(pts))]
    out = {}
    for st, setup in zip(STATIONS, cfg.stations):
        local = observe_points(setup.model, pts, derive_rng(cfg.seed, "markers", st.index))
        out[st] = {mid: local[i] for i, mid in enumerate(ids)}
    return out


def simulate_gnss(cfg: RunConfig, spec: TrajectorySpec) -> Optional[GnssLog]:
    if not cfg.gnss_regimes:
        return None
    regimes = []
    for r in cfg.gnss_regimes:
        end = spec.t_end_us + 1 if np.isinf(r.end_s) else spec.t0_us + int(round(r.end_s * US_PER_S))
        regimes.append(GnssRegime(r.name, spec.t0_us + int(round(r.start_s * US_PER_S)), end,
                                  gnss_sigma_for_mean_error(r.mean_error)))
    return simulate_gnss_pair(spec, regimes, derive_rng(cfg.seed, "gnss"), rate_hz=cfg.gnss_rate_hz)
