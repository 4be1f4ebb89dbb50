"""Single-channel long-range radio: wire formats and a discrete-event simulator.

Message layouts (little-endian):

=================  =====  ====================================================
message            bytes  layout
=================  =====  ====================================================
short messages     2      kind:1, client_id:1
time reply         10     client_id:1, t_i:8 (signed µs), checksum:1
measurement        34     client_id:1, status:1, ha:8, va:8, range:8 (f64),
                          t_client:7 (µs, truncated to 56 bits), checksum:1
=================  =====  ====================================================

The checksum is the sum of all preceding bytes modulo 256.  Messages are
told apart by length first and by the kind byte for the 2-byte family.

Clock-correction sign: a client's skew is ``client - master`` and it is
subtracted from client timestamps to obtain master time.
"""

from __future__ import annotations

import csv
import enum
import heapq
import itertools
import struct
from dataclasses import dataclass, field
from typing import Callable, Generator, Iterable, Optional

import numpy as np

from .errors import ChannelBusyError, ConfigError, WireFormatError
from .types import Frame, RawMeasurement, Status, Timestamp, US_PER_S

MASTER_ID = 0

SHORT_LEN = 2
TIME_REPLY_LEN = 10
MEASUREMENT_LEN = 34
_T56_MASK = (1 << 56) - 1


class Kind(enum.IntEnum):
    MEAS_REQUEST = 0x01
    NO_DATA = 0x02
    SYNC_BEGIN = 0x10
    PING = 0x11
    ACK = 0x12
    TIME_REQUEST = 0x13
    SYNC_END = 0x14


def checksum(data: bytes) -> int:
    return sum(data) & 0xFF


def encode_short(kind: Kind, client_id: int) -> bytes:
    return struct.pack("<BB", int(kind), client_id)


def decode_short(msg: bytes) -> tuple[Kind, int]:
    if len(msg) != SHORT_LEN:
        raise WireFormatError(f"short message must be {SHORT_LEN} bytes, got {len(msg)}")
    kind, cid = struct.unpack("<BB", msg)
    try:
        return Kind(kind), cid
    except ValueError:
        raise WireFormatError(f"unknown message kind 0x{kind:02x}") from None


def encode_time_reply(client_id: int, t_i: int) -> bytes:
    body = struct.pack("<Bq", client_id, t_i)
    return body + bytes([checksum(body)])


def decode_time_reply(msg: bytes) -> tuple[int, int]:
    if len(msg) != TIME_REPLY_LEN:
        raise WireFormatError(f"time reply must be {TIME_REPLY_LEN} bytes, got {len(msg)}")
    if checksum(msg[:-1]) != msg[-1]:
        raise WireFormatError("time reply checksum mismatch")
    return struct.unpack("<Bq", msg[:-1])


def encode_measurement(client_id: int, m: RawMeasurement) -> bytes:
    body = struct.pack("<BBddd", client_id, m.status.code, m.ha, m.va, m.range)
    body += (m.t_client & _T56_MASK).to_bytes(7, "little")
    return body + bytes([checksum(body)])


def decode_measurement(msg: bytes, station: Optional[Frame] = None) -> tuple[int, RawMeasurement]:
    if len(msg) != MEASUREMENT_LEN:
        raise WireFormatError(f"measurement must be {MEASUREMENT_LEN} bytes, got {len(msg)}")
    if checksum(msg[:-1]) != msg[-1]:
        raise WireFormatError("measurement checksum mismatch")
    cid, code, ha, va, rng = struct.unpack("<BBddd", msg[:26])
    t = int.from_bytes(msg[26:33], "little")
    station = station or Frame.station(cid)
    status = Status.from_code(code)
    return cid, RawMeasurement(station, ha, va, rng, t, status)


@dataclass(frozen=True)
class ChannelConfig:
    """Radio link parameters.

    ``message_overhead_us`` is a fixed per-message cost on top of the
    byte-rate airtime (preamble and header airtime, radio mode switching,
    host processing).  Its default is calibrated so that the default
    polling loop, resynchronisations included, delivers about 1.4
    measurements per second in total.
    """

    byte_rate: float = 366.0
    measurement_msg_len: int = MEASUREMENT_LEN
    request_msg_len: int = SHORT_LEN
    jitter_us: int = 5_000
    drop_probability: float = 0.0
    message_overhead_us: int = 222_000
    reply_timeout_us: int = 1_500_000

    def __post_init__(self):
        if not self.byte_rate > 0:
            raise ConfigError("byte_rate must be positive")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigError("drop_probability must be in [0, 1]")
        if self.jitter_us < 0 or self.message_overhead_us < 0:
            raise ConfigError("jitter and overhead must be non-negative")
        if self.measurement_msg_len != MEASUREMENT_LEN or self.request_msg_len != SHORT_LEN:
            raise ConfigError("message lengths are fixed by the wire format (34 B / 2 B)")

    def airtime_us(self, n_bytes: int) -> int:
        """Byte-rate airtime, rounded to the nearest microsecond."""
        return int(round(n_bytes * US_PER_S / self.byte_rate))

    def nominal_duration_us(self, n_bytes: int) -> int:
        return self.message_overhead_us + self.airtime_us(n_bytes)


@dataclass(frozen=True)
class LogEvent:
    sim_time_us: int
    event_kind: str
    src: int
    dst: int
    bytes: int
    dropped: bool


EVENT_LOG_HEADER = ("sim_time_us", "event_kind", "src", "dst", "bytes", "dropped")


class Channel:
    """Half-duplex channel: at most one message in flight.

    :meth:`transmit` returns the delivery time, or ``None`` when the message
    is lost.  A lost message still occupies the channel for its duration.
    """

    def __init__(self, config: ChannelConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.busy_until = 0
        self.log: list[LogEvent] = []

    def transmit(self, msg: bytes, now: Timestamp, src: int = MASTER_ID, dst: int = MASTER_ID,
                 kind: str = "msg") -> Optional[Timestamp]:
        if now < self.busy_until:
            raise ChannelBusyError(f"channel busy until {self.busy_until}, now {now}")
        cfg = self.config
        jitter = int(self.rng.integers(-cfg.jitter_us, cfg.jitter_us + 1)) if cfg.jitter_us else 0
        delivery = max(now, now + cfg.nominal_duration_us(len(msg)) + jitter)
        dropped = cfg.drop_probability > 0 and bool(self.rng.random() < cfg.drop_probability)
        self.busy_until = delivery
        self.log.append(LogEvent(now, f"{kind}:tx", src, dst, len(msg), dropped))
        self.log.append(LogEvent(delivery, f"{kind}:{'drop' if dropped else 'rx'}", src, dst, len(msg), dropped))
        return None if dropped else delivery


def transmit(msg: bytes, config: ChannelConfig, now: Timestamp, rng: Optional[np.random.Generator] = None):
    """One-shot transmission on an idle channel; ``None`` means dropped."""
    return Channel(config, rng if rng is not None else np.random.default_rng(0)).transmit(msg, now)


def write_event_log(path, events: Iterable[LogEvent]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_LOG_HEADER)
        for e in events:
            w.writerow((e.sim_time_us, e.event_kind, e.src, e.dst, e.bytes, int(e.dropped)))


def read_event_log(path) -> list[LogEvent]:
    with open(path, newline="") as fh:
        return [LogEvent(int(r["sim_time_us"]), r["event_kind"], int(r["src"]), int(r["dst"]),
                         int(r["bytes"]), r["dropped"] == "1") for r in csv.DictReader(fh)]


def check_half_duplex(events: Iterable[LogEvent]) -> bool:
    """True if every transmission starts after the previous one has ended.

    Relies on the log's emission order: each ``:tx`` row is followed by the
    matching ``:rx`` or ``:drop`` row.
    """
    events = list(events)
    if len(events) % 2:
        return False
    busy_until = None
    for tx, end in zip(events[::2], events[1::2]):
        if not tx.event_kind.endswith(":tx") or end.event_kind.endswith(":tx"):
            return False
        if end.sim_time_us < tx.sim_time_us:
            return False
        if busy_until is not None and tx.sim_time_us < busy_until:
            return False
        busy_until = end.sim_time_us
    return True


def delivery_rates(events: Iterable[LogEvent], start_us: int, end_us: int) -> dict[int, float]:
    """Delivered measurement replies per second, keyed by client id."""
    span = (end_us - start_us) / US_PER_S
    counts: dict[int, int] = {}
    for e in events:
        if e.event_kind == "measurement:rx" and start_us <= e.sim_time_us <= end_us:
            counts[e.src] = counts.get(e.src, 0) + 1
    return {k: v / span for k, v in sorted(counts.items())}


class EventQueue:
    """Time-ordered events; FIFO among equal times."""

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()

    def push(self, time_us: int, event) -> None:
        heapq.heappush(self._heap, (time_us, next(self._seq), event))

    def pop(self):
        time_us, _, event = heapq.heappop(self._heap)
        return time_us, event

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def __len__(self):
        return len(self._heap)


Process = Generator[int, None, object]


class Simulator:
    """Logical-clock event loop.

    Callbacks are scheduled at absolute times.  A *process* is a generator
    that yields the absolute time at which it wants to resume.
    """

    def __init__(self, start_us: int = 0):
        self.now = start_us
        self.queue = EventQueue()

    def schedule(self, time_us: int, callback: Callable[[], None]) -> None:
        if time_us < self.now:
            raise ValueError(f"cannot schedule in the past ({time_us} < {self.now})")
        self.queue.push(time_us, callback)

    def spawn(self, process: Process, on_done: Optional[Callable[[object], None]] = None) -> None:
        def step():
            try:
                wake = next(process)
            except StopIteration as stop:
                if on_done is not None:
                    on_done(stop.value)
                return
            self.schedule(wake, step)
        self.schedule(self.now, step)

    def run(self, until: Optional[int] = None) -> None:
        while self.queue:
            t = self.queue.peek_time()
            if until is not None and t > until:
                break
            t, callback = self.queue.pop()
            self.now = t
            callback()
        if until is not None and until > self.now:
            self.now = until

    def run_process(self, process: Process):
        """Run ``process`` (and anything else queued) until it returns."""
        box = {}
        self.spawn(process, lambda value: box.setdefault("value", value))
        while "value" not in box:
            if not self.queue:
                raise RuntimeError("process stalled")
            t, callback = self.queue.pop()
            self.now = t
            callback()
        return box["value"]


class Client:
    """Radio client attached to one total station.

    Reacts to master messages; samples pushed with :meth:`offer` become the
    pending measurement, newer ones replacing older unsent ones.
    """

    def __init__(self, client_id: int, clock=None, responsive: bool = True):
        from .timesync import ClientClock  # clocks live with the sync code

        self.client_id = client_id
        self.clock = clock if clock is not None else ClientClock()
        self.responsive = responsive
        self.pending: Optional[RawMeasurement] = None
        self.skipped = 0
        self._t_i: Optional[int] = None
        self.in_sync_mode = False

    @property
    def station(self) -> Frame:
        return Frame.station(self.client_id)

    def offer(self, m: RawMeasurement) -> None:
        if self.pending is not None:
            self.skipped += 1
        self.pending = m

    def handle(self, msg: bytes, now: Timestamp) -> Optional[tuple[bytes, str]]:
        """Process a delivered master message; returns ``(reply, kind)`` or None."""
        if not self.responsive:
            return None
        kind, cid = decode_short(msg)
        if cid != self.client_id:
            return None
        if kind is Kind.MEAS_REQUEST:
            if self.pending is None:
                return encode_short(Kind.NO_DATA, self.client_id), "no_data"
            m, self.pending = self.pending, None
            return encode_measurement(self.client_id, m), "measurement"
        if kind is Kind.SYNC_BEGIN:
            self.in_sync_mode = True
            return None
        if kind is Kind.SYNC_END:
            self.in_sync_mode = False
            return None
        if kind is Kind.PING:
            self._t_i = self.clock.read(now)
            return encode_short(Kind.ACK, self.client_id), "sync_ack"
        if kind is Kind.TIME_REQUEST:
            if self._t_i is None:
                return None
            return encode_time_reply(self.client_id, self._t_i), "time_reply"
        return None


@dataclass
class Network:
    """Master-side view of the radio: simulator, channel and clients."""

    sim: Simulator
    channel: Channel
    clients: dict[int, Client] = field(default_factory=dict)

    def send(self, msg: bytes, dst: int, kind: str) -> Generator[int, None, Optional[Timestamp]]:
        """Master → client message with no reply expected."""
        delivery = self.channel.transmit(msg, self.sim.now, MASTER_ID, dst, kind)
        end = delivery if delivery is not None else self.channel.busy_until
        yield end
        if delivery is not None:
            self.clients[dst].handle(msg, self.sim.now)
        return delivery

    def request(self, msg: bytes, dst: int, kind: str) -> Generator[int, None, Optional[tuple[bytes, Timestamp]]]:
        """Master → client → master exchange.

        Returns ``(reply, arrival_time)`` or ``None`` after the reply timeout.
        """
        start = self.sim.now
        deadline = start + self.channel.config.reply_timeout_us
        delivery = self.channel.transmit(msg, start, MASTER_ID, dst, kind)
        if delivery is None:
            yield max(deadline, self.channel.busy_until)
            return None
        yield delivery
        answer = self.clients[dst].handle(msg, self.sim.now)
        if answer is None:
            yield max(deadline, self.sim.now)
            return None
        reply, reply_kind = answer
        arrival = self.channel.transmit(reply, self.sim.now, dst, MASTER_ID, reply_kind)
        if arrival is None or arrival > deadline:
            yield max(deadline, self.channel.busy_until)
            return None
        yield arrival
        return reply, arrival


def poll_round(net: Network, client_ids: Iterable[int]) -> Generator[int, None, list[RawMeasurement]]:
    """Ask each client in turn for its newest measurement.

    A client without a new sample answers with a 2-byte no-data message; a
    client that does not answer before the timeout is skipped for the round.
    """
    out: list[RawMeasurement] = []
    for cid in client_ids:
        result = yield from net.request(encode_short(Kind.MEAS_REQUEST, cid), cid, "meas_request")
        if result is None:
            continue
        reply, _ = result
        if len(reply) == MEASUREMENT_LEN:
            out.append(decode_measurement(reply)[1])
    return out


def run_poll_round(net: Network, client_ids: Iterable[int]) -> list[RawMeasurement]:
    """Drive one :func:`poll_round` to completion on the network's simulator."""
    return net.sim.run_process(poll_round(net, list(client_ids)))
