"""Master/client clock synchronisation.

Each cycle is four messages: a ping at master time ``t_b`` that the client
stamps with its own clock (``t_i``), an acknowledgement received at ``t_e``,
then a time request and a reply carrying ``t_i``.  The cycle's skew is
``t_i - midpoint(t_b, t_e)``.  The initial synchronisation applies the mean
skew directly; later resynchronisations use fewer cycles and are smoothed
with ``delta_j = w * d_bar + (1 - w) * delta_{j-1}``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from typing import Generator, Optional, Sequence

import numpy as np

from .errors import InsufficientDataError, OrderingError, SyncTimeoutError, UninitializedError
from .radio import Kind, Network, decode_time_reply, encode_short
from .types import Timestamp

DEFAULT_W = 0.1
INITIAL_CYCLES = 50
RESYNC_CYCLES = 5


@dataclass(frozen=True)
class ClientClock:
    """Client clock as a function of master time.

    ``client(t) = t + offset_us + drift_ppm * 1e-6 * (t - ref_us)``
    """

    offset_us: float = 0.0
    drift_ppm: float = 0.0
    ref_us: int = 0

    def read(self, t_master: Timestamp) -> Timestamp:
        return int(round(self.exact(t_master)))

    def exact(self, t_master):
        return t_master + self.offset_us + self.drift_ppm * 1e-6 * (np.asarray(t_master) - self.ref_us)

    def to_master(self, t_client):
        """Inverse of :meth:`exact` (float microseconds)."""
        k = 1.0 + self.drift_ppm * 1e-6
        return (np.asarray(t_client, dtype=float) - self.offset_us + self.drift_ppm * 1e-6 * self.ref_us) / k

    def skew_at(self, t_master) -> float:
        return float(self.exact(t_master) - t_master)


@dataclass(frozen=True)
class SyncCycle:
    t_b: Timestamp
    t_e: Timestamp
    t_i: Timestamp

    def __post_init__(self):
        if not self.t_b < self.t_e:
            raise OrderingError(f"cycle must satisfy t_b < t_e, got {self.t_b}, {self.t_e}")

    @property
    def skew(self) -> int:
        return self.t_i - midpoint(self.t_b, self.t_e)


@dataclass(frozen=True)
class SkewEstimate:
    """Correction state for one client.

    ``history`` holds the per-synchronisation mean skews ``d_bar``;
    ``schedule`` holds ``(from_client_us, delta)`` pairs, one per published
    correction, so logged data can be corrected with the value that was in
    force when it was stamped.
    """

    delta: float = 0.0
    j: int = 0
    w: float = DEFAULT_W
    history: tuple[float, ...] = ()
    schedule: tuple[tuple[int, float], ...] = ()
    initialized: bool = False

    @classmethod
    def initial(cls, d_bar: float, w: float = DEFAULT_W, from_client_us: int = 0) -> "SkewEstimate":
        return cls(float(d_bar), 0, w, (float(d_bar),), ((int(from_client_us), float(d_bar)),), True)

    def delta_at(self, t_client: Timestamp) -> float:
        if not self.initialized:
            raise UninitializedError("no synchronisation performed yet")
        if not self.schedule:
            return self.delta
        starts = [s for s, _ in self.schedule]
        i = bisect.bisect_right(starts, t_client) - 1
        return self.schedule[max(i, 0)][1]


def midpoint(t_b: Timestamp, t_e: Timestamp) -> Timestamp:
    """Integer mean of two timestamps; a half microsecond rounds toward ``t_b``."""
    if t_b > t_e:
        raise OrderingError(f"t_b ({t_b}) after t_e ({t_e})")
    return t_b + (t_e - t_b) // 2


def mean_skew(cycles: Sequence[SyncCycle]) -> float:
    if not cycles:
        raise InsufficientDataError("mean skew of zero cycles")
    return float(np.mean([c.skew for c in cycles]))


def update_correction(d_bar: float, prev: SkewEstimate, from_client_us: Optional[int] = None) -> SkewEstimate:
    if not prev.initialized:
        raise UninitializedError("resynchronisation before initial synchronisation")
    delta = prev.w * d_bar + (1.0 - prev.w) * prev.delta
    schedule = prev.schedule
    if from_client_us is not None:
        schedule = schedule + ((int(from_client_us), delta),)
    return replace(prev, delta=delta, j=prev.j + 1, history=prev.history + (float(d_bar),), schedule=schedule)


def apply_correction(t_client: Timestamp, estimate: SkewEstimate) -> Timestamp:
    """Map a client timestamp onto the master clock (uses ``estimate.delta``)."""
    if not estimate.initialized:
        raise UninitializedError("correction requested before synchronisation")
    return int(t_client - round(estimate.delta))


# protocol engine

def sync_cycles(net: Network, client_id: int, n_cycles: int) -> Generator[int, None, list[SyncCycle]]:
    """Run ``n_cycles`` four-message cycles; raises :class:`SyncTimeoutError`."""
    if n_cycles < 1:
        raise InsufficientDataError("need at least one synchronisation cycle")
    sim = net.sim
    yield from net.send(encode_short(Kind.SYNC_BEGIN, client_id), client_id, "sync_begin")
    cycles = []
    try:
        for _ in range(n_cycles):
            t_b = sim.now
            ack = yield from net.request(encode_short(Kind.PING, client_id), client_id, "sync_ping")
            if ack is None:
                raise SyncTimeoutError(f"client {client_id} did not acknowledge ping")
            t_e = ack[1]
            reply = yield from net.request(encode_short(Kind.TIME_REQUEST, client_id), client_id, "time_request")
            if reply is None:
                raise SyncTimeoutError(f"client {client_id} did not return its timestamp")
            _, t_i = decode_time_reply(reply[0])
            cycles.append(SyncCycle(t_b, t_e, t_i))
    except SyncTimeoutError:
        yield from net.send(encode_short(Kind.SYNC_END, client_id), client_id, "sync_end")
        raise
    yield from net.send(encode_short(Kind.SYNC_END, client_id), client_id, "sync_end")
    return cycles


def initial_sync(net: Network, client_id: int, n_cycles: int = INITIAL_CYCLES,
                 w: float = DEFAULT_W) -> Generator[int, None, SkewEstimate]:
    cycles = yield from sync_cycles(net, client_id, n_cycles)
    return SkewEstimate.initial(mean_skew(cycles), w, from_client_us=cycles[-1].t_i)


def resync(net: Network, client_id: int, estimate: SkewEstimate,
           n_cycles: int = RESYNC_CYCLES) -> Generator[int, None, SkewEstimate]:
    if not estimate.initialized:
        raise UninitializedError("resynchronisation before initial synchronisation")
    cycles = yield from sync_cycles(net, client_id, n_cycles)
    return update_correction(mean_skew(cycles), estimate, from_client_us=cycles[-1].t_i)


def run_initial_sync(net: Network, client_id: int, n_cycles: int = INITIAL_CYCLES,
                     w: float = DEFAULT_W) -> SkewEstimate:
    """Blocking initial synchronisation; on timeout nothing is published."""
    return net.sim.run_process(initial_sync(net, client_id, n_cycles, w))


def run_resync(net: Network, client_id: int, estimate: SkewEstimate,
               n_cycles: int = RESYNC_CYCLES) -> SkewEstimate:
    """Blocking resynchronisation; on timeout ``estimate`` stays in force."""
    return net.sim.run_process(resync(net, client_id, estimate, n_cycles))
