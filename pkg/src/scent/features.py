"""Per-device, time-windowed traffic features computed online.

For every window and every device, the packet length, MAC payload length and
inter-arrival time are summarised by mean and sample standard deviation, for
all traffic of the device and split by direction (outgoing: the device is the
MAC source; incoming: the device is the unicast MAC destination).
"""
from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

from .codec import BROADCAST16, AddrMode, FrameError, MacFrame, parse_mac_frame
from .pcapio import PcapReader

METRICS = ("pkt_len", "payload_len", "iat")
DIRECTIONS = ("all", "in", "out")
STAT_COLUMNS = tuple(
    f"{stat}_{metric}_{direction}"
    for metric in METRICS
    for direction in DIRECTIONS
    for stat in ("mean", "std")
)
BASE_COLUMNS = ("window_start_us", "window_end_us", "device", "pan_id", "n_total", "n_in", "n_out")
TRAILER_COLUMNS = ("truncated",)


class Moments:
    """Welford accumulator: count, running mean, sum of squared deviations."""

    __slots__ = ("n", "mean", "m2")

    def __init__(self, n: int = 0, mean: float = 0.0, m2: float = 0.0):
        self.n = n
        self.mean = mean
        self.m2 = m2

    def push(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    @property
    def std(self) -> float:
        if self.n < 2:
            return 0.0
        return math.sqrt(max(self.m2, 0.0) / (self.n - 1))

    def copy(self) -> "Moments":
        return Moments(self.n, self.mean, self.m2)

    def __eq__(self, other) -> bool:
        return isinstance(other, Moments) and (self.n, self.mean, self.m2) == (other.n, other.mean, other.m2)

    def __repr__(self) -> str:
        return f"Moments(n={self.n}, mean={self.mean!r}, m2={self.m2!r})"


def moments_update(m: Moments, x: float) -> Moments:
    """Return a new accumulator with ``x`` folded in; ``m`` is untouched."""
    out = m.copy()
    out.push(x)
    return out


class Direction(enum.Enum):
    OUTGOING = "outgoing"
    INCOMING = "incoming"
    UNRELATED = "unrelated"


def device_key(mode: AddrMode, addr: Optional[int]) -> Optional[str]:
    if addr is None or mode == AddrMode.NONE:
        return None
    if mode == AddrMode.SHORT:
        return f"0x{addr:04x}"
    return f"0x{addr:016x}"


def _unicast_dst_key(frame: MacFrame) -> Optional[str]:
    if frame.dst_mode == AddrMode.SHORT and frame.dst_addr == BROADCAST16:
        return None
    return device_key(frame.dst_mode, frame.dst_addr)


def classify_direction(frame: MacFrame, device: str | tuple[AddrMode, int]) -> Direction:
    """Direction of ``frame`` relative to ``device``.

    ``device`` is either a rendered key (``"0x0001"``) or an ``(AddrMode, int)``
    pair.  Broadcast destinations are never incoming for anyone.
    """
    if not isinstance(device, str):
        device = device_key(*device)
    if device_key(frame.src_mode, frame.src_addr) == device:
        return Direction.OUTGOING
    if _unicast_dst_key(frame) == device:
        return Direction.INCOMING
    return Direction.UNRELATED


class DirectionalStats:
    __slots__ = ("pkt_len", "payload_len", "iat", "last_ts")

    def __init__(self):
        self.pkt_len = Moments()
        self.payload_len = Moments()
        self.iat = Moments()
        self.last_ts: Optional[int] = None

    @property
    def count(self) -> int:
        return self.pkt_len.n

    def push(self, ts_us: int, pkt_len: int, payload_len: int) -> None:
        self.pkt_len.push(pkt_len)
        self.payload_len.push(payload_len)
        if self.last_ts is not None:
            self.iat.push((ts_us - self.last_ts) / 1e6)
        self.last_ts = ts_us


class _DeviceWindow:
    __slots__ = ("all", "inc", "out", "pan_id")

    def __init__(self):
        self.all = DirectionalStats()
        self.inc = DirectionalStats()
        self.out = DirectionalStats()
        self.pan_id: Optional[int] = None


@dataclass
class WindowConfig:
    duration: float = 5.0
    selected_features: tuple[str, ...] = STAT_COLUMNS
    direction_split: bool = True

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("window duration must be positive")
        sel = tuple(self.selected_features)
        unknown = set(sel) - set(STAT_COLUMNS)
        if unknown:
            raise ValueError(f"unknown feature columns: {sorted(unknown)}")
        if not self.direction_split:
            sel = tuple(c for c in sel if c.endswith("_all"))
        if not sel:
            raise ValueError("no feature columns selected")
        # keep the fixed schema order whatever order the caller used
        self.selected_features = tuple(c for c in STAT_COLUMNS if c in sel)

    @property
    def duration_us(self) -> int:
        return int(round(self.duration * 1_000_000))

    @property
    def columns(self) -> tuple[str, ...]:
        return BASE_COLUMNS + self.selected_features + TRAILER_COLUMNS

    @classmethod
    def from_spec(cls, duration: float, features: str | Sequence[str] = "all",
                  direction_split: bool = True) -> "WindowConfig":
        """Build from CLI/service style arguments.

        ``features`` is ``"all"``, a comma separated list, or a sequence. Items
        may be full column names or metric names (``iat``) / stat-metric pairs
        (``mean_iat``) that expand to every matching column.
        """
        if isinstance(features, str):
            items = [f.strip() for f in features.split(",") if f.strip()]
        else:
            items = list(features)
        cols: list[str] = []
        for item in items:
            if item == "all":
                cols.extend(STAT_COLUMNS)
                continue
            matched = [c for c in STAT_COLUMNS
                       if c == item or c.startswith(item + "_") or c.split("_", 1)[1].startswith(item + "_")]
            if not matched:
                raise ValueError(f"unknown feature {item!r}")
            cols.extend(matched)
        return cls(duration=duration, selected_features=tuple(cols), direction_split=direction_split)


@dataclass
class FeatureRow:
    window_start: int
    window_end: int
    device: str
    pan_id: Optional[int]
    n_total: int
    n_in: int
    n_out: int
    stats: dict[str, Optional[float]] = field(default_factory=dict)
    truncated: bool = False

    def as_record(self, columns: Sequence[str]) -> list[str]:
        out = []
        for col in columns:
            if col == "window_start_us":
                out.append(str(self.window_start))
            elif col == "window_end_us":
                out.append(str(self.window_end))
            elif col == "device":
                out.append(self.device)
            elif col == "pan_id":
                out.append("" if self.pan_id is None else f"0x{self.pan_id:04x}")
            elif col in ("n_total", "n_in", "n_out"):
                out.append(str(getattr(self, col)))
            elif col == "truncated":
                out.append("1" if self.truncated else "0")
            else:
                v = self.stats.get(col)
                out.append("" if v is None else repr(float(v)))
        return out


def _stat_values(d: DirectionalStats, direction: str, into: dict[str, Optional[float]]) -> None:
    for metric in METRICS:
        m: Moments = getattr(d, metric)
        if m.n == 0:
            into[f"mean_{metric}_{direction}"] = None
            into[f"std_{metric}_{direction}"] = None
        else:
            into[f"mean_{metric}_{direction}"] = m.mean
            into[f"std_{metric}_{direction}"] = m.std


class LateFrame(Exception):
    """Raised only by :meth:`WindowAggregator.ingest_strict`."""


class WindowAggregator:
    """Single-owner window state for one capture task.

    Windows are aligned to the first frame's timestamp.  ``ingest`` returns
    the rows of any windows that the new frame closes.  Frames older than the
    current window are counted in ``late_frames`` and dropped.
    """

    def __init__(self, config: WindowConfig):
        self.config = config
        self.duration_us = config.duration_us
        self.window_start: Optional[int] = None
        self.devices: dict[str, _DeviceWindow] = {}
        self.late_frames = 0
        self.windows_emitted = 0

    def _close(self, truncated: bool = False) -> list[FeatureRow]:
        rows = []
        start = self.window_start
        end = start + self.duration_us
        for key in sorted(self.devices):
            dw = self.devices[key]
            stats: dict[str, Optional[float]] = {}
            _stat_values(dw.all, "all", stats)
            _stat_values(dw.inc, "in", stats)
            _stat_values(dw.out, "out", stats)
            rows.append(FeatureRow(start, end, key, dw.pan_id, dw.all.count, dw.inc.count, dw.out.count,
                                   {c: stats[c] for c in self.config.selected_features}, truncated))
        if rows:
            self.windows_emitted += 1
        self.devices = {}
        return rows

    def ingest(self, frame: MacFrame) -> list[FeatureRow]:
        ts = frame.ts_us
        rows: list[FeatureRow] = []
        if self.window_start is None:
            self.window_start = ts
        elif ts < self.window_start:
            self.late_frames += 1
            return rows
        elif ts >= self.window_start + self.duration_us:
            rows = self._close()
            skipped = (ts - self.window_start) // self.duration_us
            self.window_start += skipped * self.duration_us

        src = device_key(frame.src_mode, frame.src_addr)
        dst = _unicast_dst_key(frame)
        if src is None and dst is None:
            return rows
        length = frame.length
        payload = len(frame.payload)
        if src is not None:
            dw = self.devices.get(src)
            if dw is None:
                dw = self.devices[src] = _DeviceWindow()
            if dw.pan_id is None:
                dw.pan_id = frame.effective_src_pan
            dw.all.push(ts, length, payload)
            dw.out.push(ts, length, payload)
        if dst is not None and dst != src:
            dw = self.devices.get(dst)
            if dw is None:
                dw = self.devices[dst] = _DeviceWindow()
            if dw.pan_id is None:
                dw.pan_id = frame.dst_pan
            dw.all.push(ts, length, payload)
            dw.inc.push(ts, length, payload)
        return rows

    def ingest_strict(self, frame: MacFrame) -> list[FeatureRow]:
        if self.window_start is not None and frame.ts_us < self.window_start:
            self.late_frames += 1
            raise LateFrame(f"frame at {frame.ts_us} precedes window starting {self.window_start}")
        return self.ingest(frame)

    def flush(self, truncated: bool = True) -> list[FeatureRow]:
        """Emit the partially filled current window, if it holds any frame."""
        if self.window_start is None or not self.devices:
            return []
        return self._close(truncated=truncated)


class FeatureCsvWriter:
    def __init__(self, path: str | os.PathLike, config: WindowConfig):
        self.columns = config.columns
        self.count = 0
        self._f = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._f, lineterminator="\r\n")
        self._w.writerow(self.columns)
        self._f.flush()

    def write_rows(self, rows: Iterable[FeatureRow]) -> None:
        n = 0
        for row in rows:
            self._w.writerow(row.as_record(self.columns))
            n += 1
        if n:
            self.count += n
            self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "FeatureCsvWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_feature_csv(rows: Iterable[FeatureRow], path: str | os.PathLike,
                      config: Optional[WindowConfig] = None) -> int:
    with FeatureCsvWriter(path, config or WindowConfig()) as w:
        w.write_rows(rows)
        return w.count


def read_feature_csv(path: str | os.PathLike) -> list[FeatureRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for rec in csv.DictReader(f):
            stats = {c: (float(rec[c]) if rec[c] != "" else None) for c in STAT_COLUMNS if c in rec}
            rows.append(FeatureRow(
                window_start=int(rec["window_start_us"]),
                window_end=int(rec["window_end_us"]),
                device=rec["device"],
                pan_id=int(rec["pan_id"], 16) if rec.get("pan_id") else None,
                n_total=int(rec["n_total"]),
                n_in=int(rec["n_in"]),
                n_out=int(rec["n_out"]),
                stats=stats,
                truncated=rec.get("truncated", "0") == "1",
            ))
    return rows


def iter_features(frames: Iterable[MacFrame], config: WindowConfig) -> Iterator[FeatureRow]:
    agg = WindowAggregator(config)
    for frame in frames:
        yield from agg.ingest(frame)
    yield from agg.flush()


def _dissect_all(reader: PcapReader) -> Iterator[MacFrame]:
    fcs = reader.fcs_present
    for raw in reader:
        try:
            yield parse_mac_frame(raw, fcs)
        except FrameError:
            continue


def extract_from_pcap(path: str | os.PathLike, config: WindowConfig,
                      csv_path: str | os.PathLike | None = None) -> list[FeatureRow]:
    """Offline extraction; output matches a live feature task fed the same frames."""
    with PcapReader(path) as reader:
        rows = list(iter_features(_dissect_all(reader), config))
    if csv_path is not None:
        write_feature_csv(rows, csv_path, config)
    return rows
