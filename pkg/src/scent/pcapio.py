"""Classic PCAP reading and writing for 802.15.4 captures.

Only the two 802.15.4 link types are accepted: 195 (PSDU with FCS) and
230 (PSDU without FCS).  Timestamps are carried as integer microseconds.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator

from .codec import RawFrame

LINKTYPE_IEEE802_15_4_WITHFCS = 195
LINKTYPE_IEEE802_15_4_NOFCS = 230
SUPPORTED_LINKTYPES = (LINKTYPE_IEEE802_15_4_WITHFCS, LINKTYPE_IEEE802_15_4_NOFCS)

MAGIC_MICRO = 0xA1B2C3D4
MAGIC_NANO = 0xA1B23C4D
DEFAULT_SNAPLEN = 256
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16


class PcapError(Exception):
    pass


class BadMagic(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


class TruncatedRecord(PcapError):
    pass


class IoFailure(PcapError, OSError):
    pass


@dataclass(frozen=True)
class PcapHeader:
    magic: int
    linktype: int
    snaplen: int
    ts_resolution: str  # "micro" or "nano"
    byteorder: str = "<"

    @property
    def fcs_present(self) -> bool:
        return self.linktype == LINKTYPE_IEEE802_15_4_WITHFCS


def _parse_global_header(data: bytes) -> PcapHeader:
    if len(data) < GLOBAL_HEADER_LEN:
        raise BadMagic(f"file too short for a PCAP header ({len(data)} bytes)")
    for order in ("<", ">"):
        magic = struct.unpack_from(order + "I", data)[0]
        if magic in (MAGIC_MICRO, MAGIC_NANO):
            break
    else:
        raise BadMagic(f"unrecognised magic {data[:4].hex()}")
    _, _vmaj, _vmin, _zone, _sigfigs, snaplen, linktype = struct.unpack(order + "IHHiIII", data[:GLOBAL_HEADER_LEN])
    if linktype not in SUPPORTED_LINKTYPES:
        raise UnsupportedLinkType(f"link type {linktype} is not IEEE 802.15.4 (195/230)")
    return PcapHeader(
        magic=magic,
        linktype=linktype,
        snaplen=snaplen,
        ts_resolution="nano" if magic == MAGIC_NANO else "micro",
        byteorder=order,
    )


class PcapReader:
    """Streaming reader; iterate to get :class:`RawFrame` objects in file order."""

    def __init__(self, path: str | os.PathLike):
        self._f: BinaryIO = open(path, "rb")
        try:
            self.header = _parse_global_header(self._f.read(GLOBAL_HEADER_LEN))
        except Exception:
            self._f.close()
            raise
        self._rec = struct.Struct(self.header.byteorder + "IIII")

    @property
    def fcs_present(self) -> bool:
        return self.header.fcs_present

    def __iter__(self) -> Iterator[RawFrame]:
        f = self._f
        rec = self._rec
        nano = self.header.ts_resolution == "nano"
        while True:
            hdr = f.read(RECORD_HEADER_LEN)
            if not hdr:
                return
            if len(hdr) < RECORD_HEADER_LEN:
                raise TruncatedRecord(f"record header cut short at offset {f.tell() - len(hdr)}")
            sec, frac, incl_len, _orig_len = rec.unpack(hdr)
            data = f.read(incl_len)
            if len(data) < incl_len:
                raise TruncatedRecord(f"record data cut short: wanted {incl_len}, got {len(data)}")
            usec = frac // 1000 if nano else frac
            yield RawFrame(data, sec * 1_000_000 + usec)

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "PcapReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_pcap(path: str | os.PathLike) -> Iterator[RawFrame]:
    """Yield frames from ``path``; header errors are raised on first ``next()``."""
    with PcapReader(path) as reader:
        yield from reader


def read_pcap_header(path: str | os.PathLike) -> PcapHeader:
    with open(path, "rb") as f:
        return _parse_global_header(f.read(GLOBAL_HEADER_LEN))


class PcapWriter:
    def __init__(self, path: str | os.PathLike, with_fcs: bool = True, snaplen: int = DEFAULT_SNAPLEN,
                 byteorder: str = "<"):
        if snaplen < 127:
            raise ValueError("snaplen must cover a full 127-byte PSDU")
        self.linktype = LINKTYPE_IEEE802_15_4_WITHFCS if with_fcs else LINKTYPE_IEEE802_15_4_NOFCS
        self._rec = struct.Struct(byteorder + "IIII")
        self.count = 0
        try:
            self._f: BinaryIO = open(path, "wb")
            self._f.write(struct.pack(byteorder + "IHHiIII", MAGIC_MICRO, 2, 4, 0, 0, snaplen, self.linktype))
        except OSError as e:
            raise IoFailure(str(e)) from e

    def write(self, frame: RawFrame) -> None:
        sec, usec = divmod(frame.ts_us, 1_000_000)
        n = len(frame.data)
        try:
            self._f.write(self._rec.pack(sec, usec, n, n))
            self._f.write(frame.data)
        except OSError as e:
            raise IoFailure(str(e)) from e
        self.count += 1

    def flush(self) -> None:
        self._f.flush()

    def close(self) -> None:
        if not self._f.closed:
            try:
                self._f.close()
            except OSError as e:
                raise IoFailure(str(e)) from e

    def __enter__(self) -> "PcapWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_pcap(path: str | os.PathLike, frames: Iterable[RawFrame], with_fcs: bool = True) -> int:
    with PcapWriter(path, with_fcs=with_fcs) as w:
        for fr in frames:
            w.write(fr)
        return w.count
