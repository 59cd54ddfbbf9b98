"""IEEE 802.15.4 MAC frame and Zigbee NWK header dissection.

Frames are handled as PSDUs (at most 127 bytes).  The frame check sequence
is the 802.15.4 CRC-16 (reflected 0x1021, zero init, no final xor), stored
little-endian after the MAC payload.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Optional

__all__ = [
    "AddrMode",
    "FcsStatus",
    "FrameError",
    "FrameType",
    "InconsistentAddressing",
    "MacFrame",
    "NwkFrameType",
    "NwkHeader",
    "RawFrame",
    "ReservedAddressingMode",
    "Truncated",
    "BROADCAST16",
    "compute_fcs",
    "verify_fcs",
    "parse_mac_frame",
    "parse_nwk_header",
    "serialize_mac_frame",
]

MAX_PSDU = 127
BROADCAST16 = 0xFFFF
NWK_HEADER_LEN = 8


class FrameError(ValueError):
    """Base class for dissection errors."""


class Truncated(FrameError):
    pass


class ReservedAddressingMode(FrameError):
    pass


class InconsistentAddressing(FrameError):
    pass


class FrameType(enum.IntEnum):
    BEACON = 0
    DATA = 1
    ACK = 2
    MAC_COMMAND = 3
    # 4..7 are reserved in 802.15.4-2006; kept distinct so frames round-trip.
    RESERVED = 4
    RESERVED_5 = 5
    RESERVED_6 = 6
    RESERVED_7 = 7

    @property
    def is_reserved(self) -> bool:
        return self >= FrameType.RESERVED


class AddrMode(enum.IntEnum):
    NONE = 0
    # 1 is reserved and rejected
    SHORT = 2
    EXTENDED = 3


class FcsStatus(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    ABSENT = "absent"


class NwkFrameType(enum.IntEnum):
    DATA = 0
    COMMAND = 1
    RESERVED = 2


@dataclass(frozen=True, slots=True)
class RawFrame:
    """A captured PSDU with its timestamp in microseconds."""

    data: bytes
    ts_us: int = 0
    channel: Optional[int] = None
    rssi: Optional[int] = None


def _build_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0x8408 if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _build_table()


def compute_fcs(data: bytes) -> int:
    """CRC-16 of ``data`` as appended by an 802.15.4 transmitter."""
    crc = 0
    table = _CRC_TABLE
    for b in data:
        crc = (crc >> 8) ^ table[(crc ^ b) & 0xFF]
    return crc


def verify_fcs(psdu: bytes) -> FcsStatus:
    if len(psdu) < 2:
        return FcsStatus.INVALID
    expected = psdu[-2] | (psdu[-1] << 8)
    return FcsStatus.VALID if compute_fcs(psdu[:-2]) == expected else FcsStatus.INVALID


@dataclass(slots=True)
class MacFrame:
    frame_type: FrameType
    seq_no: int = 0
    security_enabled: bool = False
    frame_pending: bool = False
    ack_request: bool = False
    panid_compression: bool = False
    frame_version: int = 0
    dst_mode: AddrMode = AddrMode.NONE
    dst_pan: Optional[int] = None
    dst_addr: Optional[int] = None
    src_mode: AddrMode = AddrMode.NONE
    src_pan: Optional[int] = None
    src_addr: Optional[int] = None
    payload: bytes = b""
    fcs: Optional[int] = None
    fcs_ok: FcsStatus = FcsStatus.ABSENT
    # FCF bits 7-9, reserved for frame versions 0/1
    fcf_reserved: int = 0
    ts_us: int = 0
    length: int = field(default=0, compare=False)

    @property
    def version_unsupported(self) -> bool:
        """Set for 802.15.4-2015 frames, which were parsed with 2006 rules."""
        return self.frame_version >= 2

    @property
    def src16(self) -> Optional[int]:
        return self.src_addr if self.src_mode == AddrMode.SHORT else None

    @property
    def dst16(self) -> Optional[int]:
        return self.dst_addr if self.dst_mode == AddrMode.SHORT else None

    @property
    def src64(self) -> Optional[int]:
        return self.src_addr if self.src_mode == AddrMode.EXTENDED else None

    @property
    def dst64(self) -> Optional[int]:
        return self.dst_addr if self.dst_mode == AddrMode.EXTENDED else None

    @property
    def effective_src_pan(self) -> Optional[int]:
        if self.src_mode == AddrMode.NONE:
            return None
        if self.panid_compression:
            return self.dst_pan
        return self.src_pan

    @property
    def header_len(self) -> int:
        n = 3
        if self.dst_mode != AddrMode.NONE:
            n += 2 + (2 if self.dst_mode == AddrMode.SHORT else 8)
        if self.src_mode != AddrMode.NONE:
            if not self.panid_compression:
                n += 2
            n += 2 if self.src_mode == AddrMode.SHORT else 8
        return n


@dataclass(frozen=True, slots=True)
class NwkHeader:
    frame_type: NwkFrameType
    protocol_version: int
    discover_route: int
    security: bool
    dst: int
    src: int
    radius: int
    seq_no: int
    fcf: int = 0


_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")


def _read_addr(buf: bytes, pos: int, mode: int, end: int) -> tuple[int, int]:
    size = 2 if mode == AddrMode.SHORT else 8
    if pos + size > end:
        raise Truncated(f"address field at offset {pos} runs past end of frame ({end})")
    if size == 2:
        return _U16.unpack_from(buf, pos)[0], pos + 2
    return _U64.unpack_from(buf, pos)[0], pos + 8


def parse_mac_frame(raw: RawFrame | bytes, fcs_present: bool = True) -> MacFrame:
    """Decompose a PSDU into its MAC header fields and payload.

    Raises ``Truncated`` when a declared field runs past the end of the frame
    (the FCS, when present, is never counted as header space) and
    ``ReservedAddressingMode`` for addressing mode 0b01.
    """
    if isinstance(raw, RawFrame):
        buf, ts = raw.data, raw.ts_us
    else:
        buf, ts = bytes(raw), 0
    n = len(buf)
    end = n - 2 if fcs_present else n
    if end < 3:
        raise Truncated(f"frame of {n} bytes is too short for FCF and sequence number")

    fcf = buf[0] | (buf[1] << 8)
    dst_mode = (fcf >> 10) & 0x3
    src_mode = (fcf >> 14) & 0x3
    if dst_mode == 1 or src_mode == 1:
        raise ReservedAddressingMode(f"FCF 0x{fcf:04x} uses reserved addressing mode")
    compressed = bool(fcf & 0x40)

    pos = 3
    dst_pan = dst_addr = src_pan = src_addr = None
    if dst_mode:
        if pos + 2 > end:
            raise Truncated("destination PAN runs past end of frame")
        dst_pan = _U16.unpack_from(buf, pos)[0]
        dst_addr, pos = _read_addr(buf, pos + 2, dst_mode, end)
    if src_mode:
        if not compressed:
            if pos + 2 > end:
                raise Truncated("source PAN runs past end of frame")
            src_pan = _U16.unpack_from(buf, pos)[0]
            pos += 2
        src_addr, pos = _read_addr(buf, pos, src_mode, end)

    if fcs_present:
        fcs = buf[-2] | (buf[-1] << 8)
        fcs_ok = FcsStatus.VALID if compute_fcs(buf[:-2]) == fcs else FcsStatus.INVALID
    else:
        fcs = None
        fcs_ok = FcsStatus.ABSENT

    return MacFrame(
        frame_type=FrameType(fcf & 0x7),
        seq_no=buf[2],
        security_enabled=bool(fcf & 0x08),
        frame_pending=bool(fcf & 0x10),
        ack_request=bool(fcf & 0x20),
        panid_compression=compressed,
        frame_version=(fcf >> 12) & 0x3,
        dst_mode=AddrMode(dst_mode),
        dst_pan=dst_pan,
        dst_addr=dst_addr,
        src_mode=AddrMode(src_mode),
        src_pan=src_pan,
        src_addr=src_addr,
        payload=buf[pos:end],
        fcs=fcs,
        fcs_ok=fcs_ok,
        fcf_reserved=(fcf >> 7) & 0x7,
        ts_us=ts,
        length=n,
    )


def parse_nwk_header(mac: MacFrame) -> Optional[NwkHeader]:
    """Best-effort Zigbee NWK header parse; ``None`` when not applicable."""
    if mac.frame_type != FrameType.DATA or len(mac.payload) < NWK_HEADER_LEN:
        return None
    p = mac.payload
    fcf = p[0] | (p[1] << 8)
    ftype = fcf & 0x3
    return NwkHeader(
        frame_type=NwkFrameType(min(ftype, 2)),
        protocol_version=(fcf >> 2) & 0xF,
        discover_route=(fcf >> 6) & 0x3,
        security=bool(fcf & 0x0200),
        dst=p[2] | (p[3] << 8),
        src=p[4] | (p[5] << 8),
        radius=p[6],
        seq_no=p[7],
        fcf=fcf,
    )


def _check_addressing(frame: MacFrame) -> None:
    for side, mode, pan, addr in (
        ("dst", frame.dst_mode, frame.dst_pan, frame.dst_addr),
        ("src", frame.src_mode, frame.src_pan, frame.src_addr),
    ):
        if mode not in (AddrMode.NONE, AddrMode.SHORT, AddrMode.EXTENDED):
            raise InconsistentAddressing(f"{side} addressing mode {mode!r} is not encodable")
        if mode == AddrMode.NONE:
            if addr is not None or pan is not None:
                raise InconsistentAddressing(f"{side} mode is none but {side} fields are set")
            continue
        if addr is None:
            raise InconsistentAddressing(f"{side} mode is {mode.name.lower()} but {side}_addr is missing")
        limit = 0xFFFF if mode == AddrMode.SHORT else 0xFFFFFFFFFFFFFFFF
        if not 0 <= addr <= limit:
            raise InconsistentAddressing(f"{side}_addr 0x{addr:x} does not fit mode {mode.name.lower()}")
    if frame.dst_mode != AddrMode.NONE and frame.dst_pan is None:
        raise InconsistentAddressing("destination address present without destination PAN")
    if frame.src_mode != AddrMode.NONE:
        if frame.panid_compression and frame.src_pan is not None:
            raise InconsistentAddressing("PAN ID compression set but src_pan given")
        if not frame.panid_compression and frame.src_pan is None:
            raise InconsistentAddressing("source address present without source PAN")


def serialize_mac_frame(frame: MacFrame, append_fcs: bool = True) -> bytes:
    _check_addressing(frame)
    fcf = (
        (int(frame.frame_type) & 0x7)
        | (0x08 if frame.security_enabled else 0)
        | (0x10 if frame.frame_pending else 0)
        | (0x20 if frame.ack_request else 0)
        | (0x40 if frame.panid_compression else 0)
        | ((frame.fcf_reserved & 0x7) << 7)
        | (int(frame.dst_mode) << 10)
        | ((frame.frame_version & 0x3) << 12)
        | (int(frame.src_mode) << 14)
    )
    out = bytearray(_U16.pack(fcf))
    out.append(frame.seq_no & 0xFF)
    if frame.dst_mode != AddrMode.NONE:
        out += _U16.pack(frame.dst_pan)
        out += _U16.pack(frame.dst_addr) if frame.dst_mode == AddrMode.SHORT else _U64.pack(frame.dst_addr)
    if frame.src_mode != AddrMode.NONE:
        if not frame.panid_compression:
            out += _U16.pack(frame.src_pan)
        out += _U16.pack(frame.src_addr) if frame.src_mode == AddrMode.SHORT else _U64.pack(frame.src_addr)
    out += frame.payload
    if append_fcs:
        out += _U16.pack(compute_fcs(out))
    return bytes(out)
