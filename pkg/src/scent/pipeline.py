"""Frame sources, bounded per-task queues and the dispatcher.

One producer thread runs a source and the dispatcher: each frame is dissected
once and offered to every running subscriber whose filter accepts it.  A full
queue never blocks the producer; the subscriber's overflow policy decides
whether the frame is dropped or the subscriber is stopped.
"""
from __future__ import annotations

import enum
import logging
import os
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import BinaryIO, Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .codec import (
    BROADCAST16,
    AddrMode,
    FrameError,
    FrameType,
    MacFrame,
    NwkHeader,
    RawFrame,
    parse_mac_frame,
    parse_nwk_header,
    serialize_mac_frame,
)
from .pcapio import PcapReader

log = logging.getLogger(__name__)

DEFAULT_QUEUE_CAPACITY = 4096


class OverflowPolicy(enum.Enum):
    STOP_TASK = "stop"
    DROP_NEWEST = "drop"


@dataclass(slots=True)
class Packet:
    """A frame dissected once by the dispatcher and shared by all consumers."""

    raw: RawFrame
    mac: Optional[MacFrame]
    nwk: Optional[NwkHeader] = None
    error: Optional[str] = None


def dissect(raw: RawFrame, fcs_present: bool) -> Packet:
    try:
        mac = parse_mac_frame(raw, fcs_present)
    except FrameError as e:
        return Packet(raw, None, None, str(e))
    return Packet(raw, mac, parse_nwk_header(mac))


class BoundedQueue:
    """Single-producer/single-consumer queue with drop accounting.

    ``pushed`` counts every offer, so ``pushed == popped + occupancy + dropped``
    whenever neither side is mid-operation.
    """

    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY):
        if capacity < 1:
            raise ValueError("queue capacity must be at least 1")
        self.capacity = capacity
        self._dq: deque = deque()
        self._cond = threading.Condition()
        self._waiting = False
        self._closed = False
        self.pushed = 0
        self.popped = 0
        self.dropped = 0

    @property
    def occupancy(self) -> int:
        return len(self._dq)

    def offer(self, item) -> bool:
        self.pushed += 1
        if len(self._dq) >= self.capacity:
            self.dropped += 1
            return False
        self._dq.append(item)
        if self._waiting:
            with self._cond:
                self._cond.notify()
        return True

    def get(self, timeout: Optional[float] = None):
        """Pop the oldest item; ``None`` once closed and drained or on timeout."""
        try:
            item = self._dq.popleft()
        except IndexError:
            deadline = None if timeout is None else time.monotonic() + timeout
            with self._cond:
                self._waiting = True
                try:
                    while not self._dq:
                        if self._closed:
                            return None
                        remaining = None if deadline is None else deadline - time.monotonic()
                        if remaining is not None and remaining <= 0:
                            return None
                        self._cond.wait(remaining)
                finally:
                    self._waiting = False
                item = self._dq.popleft()
        self.popped += 1
        return item

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed

    def counters(self) -> dict[str, int]:
        return {"capacity": self.capacity, "occupancy": self.occupancy, "pushed": self.pushed,
                "popped": self.popped, "dropped": self.dropped}


class Subscriber:
    """A consumer registered with a :class:`Dispatcher`.

    Subclasses (capture tasks) override :meth:`on_overflow_stop`.
    """

    def __init__(self, queue: BoundedQueue, predicate: Optional[Callable] = None,
                 policy: OverflowPolicy = OverflowPolicy.DROP_NEWEST):
        self.queue = queue
        self.predicate = predicate
        self.policy = policy
        self.accepting = True

    def on_overflow_stop(self) -> None:
        self.accepting = False

    def offer(self, pkt: Packet) -> bool:
        pred = self.predicate
        if pred is not None:
            mac = pkt.mac
            if not pred(mac, pkt.nwk, len(pkt.raw.data)):
                return False
        if self.queue.offer(pkt):
            return True
        if self.policy is OverflowPolicy.STOP_TASK:
            self.accepting = False
            self.on_overflow_stop()
        return False


class Dispatcher:
    """Runs a source on the calling thread and fans frames out to subscribers."""

    def __init__(self, fcs_present: bool = True):
        self.fcs_present = fcs_present
        self._subs: tuple[Subscriber, ...] = ()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self.frames_in = 0
        self.parse_errors = 0

    def register(self, sub: Subscriber) -> None:
        with self._lock:
            self._subs = self._subs + (sub,)

    def unregister(self, sub: Subscriber) -> None:
        with self._lock:
            self._subs = tuple(s for s in self._subs if s is not sub)

    @property
    def subscribers(self) -> tuple[Subscriber, ...]:
        return self._subs

    def dispatch(self, raw: RawFrame) -> list[bool]:
        """Dissect ``raw`` once and offer it to every accepting subscriber."""
        pkt = dissect(raw, self.fcs_present)
        self.frames_in += 1
        if pkt.mac is None:
            self.parse_errors += 1
        return [sub.offer(pkt) if sub.accepting else False for sub in self._subs]

    def run(self, frames: Iterable[RawFrame]) -> int:
        fcs = self.fcs_present
        stop = self._stop
        n = 0
        for raw in frames:
            if stop.is_set():
                break
            pkt = dissect(raw, fcs)
            if pkt.mac is None:
                self.parse_errors += 1
            for sub in self._subs:
                if sub.accepting:
                    sub.offer(pkt)
            n += 1
            self.frames_in += 1
        return n

    def stop(self) -> None:
        self._stop.set()


# ---------------------------------------------------------------------------
# Sources


def paced(frames: Iterable[RawFrame], speed: Optional[float],
          stop: Optional[threading.Event] = None) -> Iterator[RawFrame]:
    """Deliver frames keeping their timestamp gaps scaled by ``1/speed``.

    ``speed=None`` delivers as fast as the consumer pulls.
    """
    if speed is None:
        yield from frames
        return
    if speed <= 0:
        raise ValueError("speed must be positive")
    t0_wall = None
    t0_ts = 0
    for fr in frames:
        if t0_wall is None:
            t0_wall = time.monotonic()
            t0_ts = fr.ts_us
        else:
            due = t0_wall + (fr.ts_us - t0_ts) / 1e6 / speed
            delay = due - time.monotonic()
            if delay > 0:
                if stop is not None:
                    if stop.wait(delay):
                        return
                else:
                    time.sleep(delay)
        yield fr


def parse_speed(value) -> Optional[float]:
    if value is None or (isinstance(value, str) and value.lower() == "max"):
        return None
    return float(value)


def replay_pcap(path: str | os.PathLike, speed: Optional[float] = None) -> Iterator[RawFrame]:
    with PcapReader(path) as reader:
        yield from paced(reader, speed)


class Source:
    kind = "abstract"
    fcs_present = True

    def __init__(self, speed: Optional[float] = None):
        self.speed = speed
        self.state = "idle"
        self._stop = threading.Event()

    def frames(self) -> Iterable[RawFrame]:
        raise NotImplementedError

    def __iter__(self) -> Iterator[RawFrame]:
        self.state = "running"
        try:
            yield from paced(self.frames(), self.speed, self._stop)
        finally:
            self.state = "exhausted"

    def stop(self) -> None:
        self._stop.set()


class PcapReplaySource(Source):
    kind = "pcap"

    def __init__(self, path: str | os.PathLike, speed: Optional[float] = None):
        super().__init__(speed)
        self.path = path
        from .pcapio import read_pcap_header
        self.fcs_present = read_pcap_header(path).fcs_present

    def frames(self) -> Iterable[RawFrame]:
        with PcapReader(self.path) as reader:
            yield from reader


class FrameListSource(Source):
    kind = "list"

    def __init__(self, frames: Sequence[RawFrame], fcs_present: bool = True, speed: Optional[float] = None):
        super().__init__(speed)
        self._frames = frames
        self.fcs_present = fcs_present

    def frames(self) -> Iterable[RawFrame]:
        return iter(self._frames)


# RawStream records: b"S154", u32 PSDU length, u64 timestamp (us), PSDU; little-endian.
RAWSTREAM_MAGIC = b"S154"
_RAWSTREAM_HDR = struct.Struct("<4sIQ")


class RawStreamError(ValueError):
    pass


def encode_rawstream_record(frame: RawFrame) -> bytes:
    return _RAWSTREAM_HDR.pack(RAWSTREAM_MAGIC, len(frame.data), frame.ts_us) + frame.data


def read_rawstream(stream: BinaryIO) -> Iterator[RawFrame]:
    while True:
        hdr = stream.read(_RAWSTREAM_HDR.size)
        if not hdr:
            return
        if len(hdr) < _RAWSTREAM_HDR.size:
            raise RawStreamError("stream ended inside a record header")
        magic, length, ts = _RAWSTREAM_HDR.unpack(hdr)
        if magic != RAWSTREAM_MAGIC:
            raise RawStreamError(f"bad record magic {magic!r}")
        if length > 127:
            raise RawStreamError(f"PSDU length {length} exceeds 127")
        data = stream.read(length)
        if len(data) < length:
            raise RawStreamError("stream ended inside a record body")
        yield RawFrame(data, ts)


class RawStreamSource(Source):
    """Adapter for sniffers that emit length-prefixed PSDU records."""

    kind = "rawstream"

    def __init__(self, stream: BinaryIO | str | os.PathLike, fcs_present: bool = True,
                 speed: Optional[float] = None):
        super().__init__(speed)
        self.stream = stream
        self.fcs_present = fcs_present

    def frames(self) -> Iterable[RawFrame]:
        if isinstance(self.stream, (str, os.PathLike)):
            with open(self.stream, "rb") as f:
                yield from read_rawstream(f)
        else:
            yield from read_rawstream(self.stream)


# ---------------------------------------------------------------------------
# Synthetic traffic


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class Periodic:
    period: float
    jitter: float = 0.0
    phase: float = 0.0


@dataclass(frozen=True)
class Events:
    """Poisson-timed bursts; burst length is geometric with success prob ``burst_p``."""

    rate: float
    burst_p: float = 1.0
    gap: tuple[float, float] = (0.05, 0.25)


@dataclass(frozen=True)
class DeviceProfile:
    addr: int
    label: str = ""
    periodic: Optional[Periodic] = None
    events: Optional[Events] = None
    payload_len: tuple[int, int] = (20, 30)
    dst: Optional[int] = None  # None: the PAN coordinator
    ack_request: bool = True
    relay_to: tuple[int, ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    devices: tuple[DeviceProfile, ...]
    panc_addr: int = 0x0000
    pan_id: int = 0x1A62
    duration: float = 60.0
    seed: int = 0
    start_us: int = 0
    with_fcs: bool = True
    ack_delay_us: int = 1000
    relay_delay: tuple[float, float] = (0.02, 0.06)

    def validate(self) -> None:
        if not self.duration > 0:
            raise InvalidConfig("duration must be positive")
        addrs = [d.addr for d in self.devices]
        if len(set(addrs)) != len(addrs):
            raise InvalidConfig("device addresses must be unique")
        max_payload = 127 - 9 - (2 if self.with_fcs else 0)
        for d in self.devices:
            if not 0 <= d.addr < BROADCAST16:
                raise InvalidConfig(f"address 0x{d.addr:x} is not a unicast short address")
            lo, hi = d.payload_len
            if not 8 <= lo <= hi <= max_payload:
                raise InvalidConfig(f"payload_len {d.payload_len} outside [8, {max_payload}]")
            if d.periodic is not None:
                if not d.periodic.period > 0 or d.periodic.jitter < 0:
                    raise InvalidConfig("periodic profile needs period > 0 and jitter >= 0")
            if d.events is not None:
                if d.events.rate < 0 or not 0 < d.events.burst_p <= 1:
                    raise InvalidConfig("event profile needs rate >= 0 and 0 < burst_p <= 1")
                if not 0 <= d.events.gap[0] <= d.events.gap[1]:
                    raise InvalidConfig("event gap range is invalid")
            for r in d.relay_to:
                if r not in addrs:
                    raise InvalidConfig(f"relay target 0x{r:04x} is not a scenario device")


# Testbed-like roles: coordinator, two periodic sensors, two plugs with both
# periodic reports and bursts, and three event-driven devices.
DEFAULT_DEVICES = (
    DeviceProfile(0x0000, "panc", periodic=Periodic(1.0, 0.02, 0.5), payload_len=(10, 16),
                  dst=BROADCAST16, ack_request=False),
    DeviceProfile(0x1a01, "motion_sensor_a", periodic=Periodic(5.0, 0.3, 0.4), payload_len=(30, 44)),
    DeviceProfile(0x1a02, "plug_b", periodic=Periodic(10.0, 0.5, 1.3),
                  events=Events(0.04, 0.55), payload_len=(40, 54)),
    DeviceProfile(0x1a03, "plug_c", periodic=Periodic(10.0, 0.5, 6.1),
                  events=Events(0.04, 0.55), payload_len=(50, 64)),
    DeviceProfile(0x1a04, "lamp_d", events=Events(0.08, 0.6, (0.3, 0.9)), payload_len=(24, 38)),
    DeviceProfile(0x1a05, "door_sensor_e", events=Events(0.05, 0.7, (0.4, 1.0)), payload_len=(58, 74)),
    DeviceProfile(0x1a06, "motion_sensor_f", periodic=Periodic(5.0, 0.3, 2.7), payload_len=(18, 32)),
    DeviceProfile(0x1a07, "switch_g", events=Events(0.08, 0.45, (0.3, 0.9)), payload_len=(66, 84),
                  relay_to=(0x1a04, 0x1a02)),
)


def default_scenario(duration: float = 300.0, seed: int = 0, **kw) -> ScenarioConfig:
    return ScenarioConfig(devices=DEFAULT_DEVICES, duration=duration, seed=seed, **kw)


def _nwk_payload(rng: np.random.Generator, nwk_dst: int, src: int, nwk_seq: int, length: int) -> bytes:
    hdr = struct.pack("<HHHBB", 0x0008, nwk_dst, src, 30, nwk_seq & 0xFF)
    return hdr + rng.integers(0, 256, length - len(hdr), dtype=np.uint8).tobytes()


def _profile_times(p: DeviceProfile, rng: np.random.Generator, duration: float) -> list[float]:
    times: list[float] = []
    if p.periodic is not None:
        per = p.periodic
        k = 0
        while True:
            base = per.phase + k * per.period
            if base >= duration + per.jitter:
                break
            t = base + (rng.uniform(-per.jitter, per.jitter) if per.jitter > 0 else 0.0)
            if 0 <= t < duration:
                times.append(t)
            k += 1
    if p.events is not None and p.events.rate > 0:
        ev = p.events
        t = rng.exponential(1.0 / ev.rate)
        while t < duration:
            burst = int(rng.geometric(ev.burst_p))
            bt = t
            for _ in range(burst):
                if bt >= duration:
                    break
                times.append(bt)
                bt += rng.uniform(*ev.gap)
            t += rng.exponential(1.0 / ev.rate)
    times.sort()
    return times


def generate_scenario(cfg: ScenarioConfig) -> Iterator[RawFrame]:
    """Deterministic synthetic capture for ``cfg`` in timestamp order."""
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.devices) + 1)
    rngs = [np.random.default_rng(s) for s in seeds]
    relay_rng = rngs[-1]
    end_us = cfg.start_us + int(round(cfg.duration * 1e6))
    index = {d.addr: i for i, d in enumerate(cfg.devices)}
    seq = {d.addr: 0 for d in cfg.devices}
    seq.setdefault(cfg.panc_addr, 0)
    panc_profile = cfg.devices[index[cfg.panc_addr]] if cfg.panc_addr in index else None

    # (ts_us, priority, device index, counter, src, dst, ack_request, payload_len)
    pending: list[tuple] = []
    counter = 0
    for i, p in enumerate(cfg.devices):
        rng = rngs[i]
        dst = cfg.panc_addr if p.dst is None else p.dst
        is_event = set()
        if p.events is not None and p.relay_to:
            # relays follow event traffic only; separate the two streams
            per_times = _profile_times(DeviceProfile(p.addr, periodic=p.periodic), rng, cfg.duration) \
                if p.periodic is not None else []
            ev_times = _profile_times(DeviceProfile(p.addr, events=p.events), rng, cfg.duration)
            times = sorted(per_times + ev_times)
            is_event = set(ev_times)
        else:
            times = _profile_times(p, rng, cfg.duration)
        for t in times:
            ts = cfg.start_us + int(round(t * 1e6))
            plen = int(rng.integers(p.payload_len[0], p.payload_len[1] + 1))
            pending.append((ts, 1, i, counter, p.addr, dst, p.ack_request and dst != BROADCAST16, plen, rng))
            counter += 1
            if t in is_event:
                for target in p.relay_to:
                    rts = ts + int(round(relay_rng.uniform(*cfg.relay_delay) * 1e6))
                    lo, hi = panc_profile.payload_len if panc_profile else (12, 12)
                    rlen = int(relay_rng.integers(lo, hi + 1))
                    pending.append((rts, 1, len(cfg.devices), counter, cfg.panc_addr, target, True, rlen,
                                    relay_rng))
                    counter += 1
    pending.sort(key=lambda e: (e[0], e[2], e[3]))

    frames: list[tuple[int, int, int, bytes]] = []
    for ts, _prio, dev_i, ctr, src, dst, ack_req, plen, rng in pending:
        s = seq[src]
        seq[src] = (s + 1) & 0xFF
        nwk_dst = 0xFFFD if dst == BROADCAST16 else dst
        mac = MacFrame(
            frame_type=FrameType.DATA, seq_no=s, ack_request=ack_req, panid_compression=True,
            dst_mode=AddrMode.SHORT, dst_pan=cfg.pan_id, dst_addr=dst,
            src_mode=AddrMode.SHORT, src_addr=src,
            payload=_nwk_payload(rng, nwk_dst, src, s, plen),
        )
        frames.append((ts, 0, ctr, serialize_mac_frame(mac, cfg.with_fcs)))
        if ack_req:
            ack = MacFrame(frame_type=FrameType.ACK, seq_no=s)
            frames.append((ts + cfg.ack_delay_us, 1, ctr, serialize_mac_frame(ack, cfg.with_fcs)))
    frames.sort(key=lambda f: (f[0], f[1], f[2]))
    for ts, _k, _c, data in frames:
        if ts < end_us:
            yield RawFrame(data, ts)


class SyntheticSource(Source):
    kind = "synthetic"

    def __init__(self, cfg: ScenarioConfig, speed: Optional[float] = None):
        super().__init__(speed)
        cfg.validate()
        self.cfg = cfg
        self.fcs_present = cfg.with_fcs

    def frames(self) -> Iterable[RawFrame]:
        return generate_scenario(self.cfg)
