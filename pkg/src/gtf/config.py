"""Run configuration: a versioned JSON document with defaults for every field.

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError, InputError
from .io import layout_from_json, read_json
from .pipeline import InterpolationConfig
from .radio import ChannelConfig
from .stations import ARCSEC, RTK_FOREST_MEAN_ERROR, RTK_OPEN_MEAN_ERROR, StationModel, TrajectorySpec, start_stop_trajectory
from .timesync import DEFAULT_W, INITIAL_CYCLES, RESYNC_CYCLES, ClientClock
from .types import STATIONS, Frame, PrismLayout, RigidTransform, US_PER_S

SCHEMA = "gtf.run/1"

DEFAULT_INPUT_NAMES = {
    "measurements": "measurements.csv",
    "calibration": "calibration.json",
    "skews": "skews.json",
    "markers": "markers.csv",
    "layout": "layout.json",
    "trajectory": "trajectory.json",
    "gnss": "gnss.csv",
    "poses": "poses.csv",
}


@dataclass(frozen=True)
class StationSetup:
    model: StationModel
    clock: ClientClock


@dataclass(frozen=True)
class SyncConfig:
    w: float = DEFAULT_W
    initial_cycles: int = INITIAL_CYCLES
    resync_cycles: int = RESYNC_CYCLES
    resync_period_s: float = 60.0
    max_attempts: int = 3

    def __post_init__(self):
        if not 0.0 < self.w <= 1.0:
            raise ConfigError("filter weight w must be in (0, 1]")
        if self.initial_cycles < 1 or self.resync_cycles < 1:
            raise ConfigError("cycle counts must be at least 1")
        if not self.resync_period_s > 0:
            raise ConfigError("resync period must be positive")


@dataclass(frozen=True)
class GnssRegimeConfig:
    name: str
    start_s: float
    end_s: float
    mean_error: float


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    stations: tuple[StationSetup, ...] = ()
    trajectory: Optional[TrajectorySpec] = None
    channel: ChannelConfig = ChannelConfig()
    sync: SyncConfig = SyncConfig()
    interpolation: InterpolationConfig = InterpolationConfig()
    layout: PrismLayout = field(default_factory=PrismLayout.default)
    master_start_s: float = 10.0
    settle_s: float = 1.0
    markers: tuple[tuple[float, float, float], ...] = ()
    gnss_regimes: tuple[GnssRegimeConfig, ...] = ()
    gnss_rate_hz: float = 5.0
    inputs: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    base_dir: Path = Path(".")
    output_dir: Optional[Path] = None

    def input_path(self, name: str) -> Path:
        """Location of a named input; a missing file is an input error."""
        p = self.inputs.get(name)
        if p is None:
            d = self.inputs.get("dir")
            if d is None:
                raise ConfigError(f"config names no '{name}' input")
            p = Path(d) / DEFAULT_INPUT_NAMES[name]
        p = Path(p)
        if not p.is_absolute():
            p = self.base_dir / p
        if not p.exists():
            raise InputError(f"input '{name}' not found: {p}")
        return p


DEFAULT_MARKERS = ((5.0, 3.0, 0.4), (42.0, -8.0, 1.6), (-12.0, 36.0, 0.9),
                   (30.0, 44.0, 2.3), (58.0, 20.0, 0.2))


def default_stations() -> tuple[StationSetup, ...]:
    poses = (RigidTransform.identity(),
             RigidTransform.from_euler(1.2, 0.0, 0.0, (60.0, -40.0, 0.3)),
             RigidTransform.from_euler(-2.0, 0.0, 0.0, (-30.0, 70.0, -0.5)))
    clocks = (ClientClock(800_000.0, 5.0), ClientClock(-350_000.0, -8.0), ClientClock(1_700_000.0, 10.0))
    phases = (0, 130_000, 270_000)
    return tuple(StationSetup(StationModel(f, pose=p, phase_us=ph), c)
                 for f, p, c, ph in zip(STATIONS, poses, clocks, phases))


def default_gnss_regimes(duration_s: float) -> tuple[GnssRegimeConfig, ...]:
    half = duration_s / 2
    return (GnssRegimeConfig("open", 0.0, half, RTK_OPEN_MEAN_ERROR),
            GnssRegimeConfig("forest", half, math.inf, RTK_FOREST_MEAN_ERROR))


def default_config(**overrides) -> RunConfig:
    traj = start_stop_trajectory()
    cfg = RunConfig(stations=default_stations(), trajectory=traj, markers=DEFAULT_MARKERS,
                    gnss_regimes=default_gnss_regimes(traj.duration_us / US_PER_S))
    return replace(cfg, **overrides)


# parsing

def _pose(doc) -> RigidTransform:
    doc = doc or {}
    return RigidTransform.from_euler(float(doc.get("yaw", 0.0)), float(doc.get("pitch", 0.0)),
                                     float(doc.get("roll", 0.0)),
                                     (float(doc.get("x", 0.0)), float(doc.get("y", 0.0)), float(doc.get("z", 0.0))))


_STATION_KEYS = {"frame", "pose", "clock", "rate_hz", "sigma_range", "sigma_angle_arcsec", "loss_probability",
                 "reacquisition_s", "lag_tau_s", "max_range", "min_range", "sample_jitter_us", "phase_us",
                 "outages_s"}


def _station(doc: dict, default: StationSetup) -> StationSetup:
    unknown = set(doc) - _STATION_KEYS
    if unknown:
        raise ConfigError(f"unknown station keys: {sorted(unknown)}")
    m = default.model
    kw = {}
    if "frame" in doc:
        kw["frame"] = Frame(doc["frame"])
    if "pose" in doc:
        kw["pose"] = _pose(doc["pose"])
    for k in ("rate_hz", "sigma_range", "loss_probability", "reacquisition_s", "lag_tau_s", "max_range",
              "min_range"):
        if k in doc:
            kw[k] = float(doc[k])
    for k in ("sample_jitter_us", "phase_us"):
        if k in doc:
            kw[k] = int(doc[k])
    if "sigma_angle_arcsec" in doc:
        kw["sigma_angle"] = float(doc["sigma_angle_arcsec"]) * ARCSEC
    if "outages_s" in doc:
        # relative to trajectory start; converted when the run starts
        kw["outages"] = tuple((int(round(a * US_PER_S)), int(round(b * US_PER_S))) for a, b in doc["outages_s"])
    clock = default.clock
    if "clock" in doc:
        c = doc["clock"]
        clock = ClientClock(float(c.get("offset_s", 0.0)) * US_PER_S, float(c.get("drift_ppm", 0.0)))
    return StationSetup(replace(m, **kw), clock)


_TOP_KEYS = {"schema", "seed", "stations", "trajectory", "radio", "sync", "interpolation", "layout",
             "master_start_s", "settle_s", "markers", "gnss", "inputs", "analysis"}


def parse_config(doc: dict, base_dir: Path = Path(".")) -> RunConfig:
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"config schema must be '{SCHEMA}', got {doc.get('schema')!r}")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = default_config()
    try:
        kw: dict = {"base_dir": base_dir}
        if "seed" in doc:
            kw["seed"] = int(doc["seed"])
            if kw["seed"] < 0:
                raise ConfigError("seed must be non-negative")
        if "stations" in doc:
            sts = doc["stations"]
            if len(sts) != 3:
                raise ConfigError("exactly three stations are required")
            kw["stations"] = tuple(_station(s, d) for s, d in zip(sts, base.stations))
            if [s.model.frame for s in kw["stations"]] != list(STATIONS):
                raise ConfigError("stations must be listed as Station1, Station2, Station3")
        traj = base.trajectory
        if "trajectory" in doc:
            t = doc["trajectory"]
            if isinstance(t, str):
                p = Path(t) if Path(t).is_absolute() else base_dir / t
                traj = TrajectorySpec.from_json(read_json(p))
            else:
                traj = TrajectorySpec.from_json(t)
            kw["trajectory"] = traj
        if "radio" in doc:
            kw["channel"] = ChannelConfig(**doc["radio"])
        if "sync" in doc:
            kw["sync"] = SyncConfig(**doc["sync"])
        if "interpolation" in doc:
            kw["interpolation"] = InterpolationConfig(**doc["interpolation"])
        if "layout" in doc:
            kw["layout"] = layout_from_json(doc["layout"])
        for k in ("master_start_s", "settle_s"):
            if k in doc:
                kw[k] = float(doc[k])
        if "markers" in doc:
            kw["markers"] = tuple(tuple(float(v) for v in p) for p in doc["markers"])
        if "gnss" in doc:
            g = doc["gnss"]
            if "regimes" in g:
                kw["gnss_regimes"] = tuple(
                    GnssRegimeConfig(r["name"], float(r["start_s"]),
                                     math.inf if r.get("end_s") is None else float(r["end_s"]),
                                     float(r["mean_error"])) for r in g["regimes"])
            else:
                kw["gnss_regimes"] = default_gnss_regimes(traj.duration_us / US_PER_S)
            if "rate_hz" in g:
                kw["gnss_rate_hz"] = float(g["rate_hz"])
        elif "trajectory" in doc:
            kw["gnss_regimes"] = default_gnss_regimes(traj.duration_us / US_PER_S)
        if "inputs" in doc:
            kw["inputs"] = dict(doc["inputs"])
        if "analysis" in doc:
            kw["analysis"] = dict(doc["analysis"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    return replace(base, **kw)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    return parse_config(read_json(p), p.parent)
