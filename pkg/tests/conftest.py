"""Shared hypothesis strategies and acceptance reporting."""
from __future__ import annotations

import hypothesis.strategies as st
import pytest

from scent.codec import AddrMode, FrameType, MacFrame

MODES = [AddrMode.NONE, AddrMode.SHORT, AddrMode.EXTENDED]
u16 = st.integers(0, 0xFFFF)
u64 = st.integers(0, 2**64 - 1)


@st.composite
def mac_frames(draw, max_psdu: int = 127, fcs: bool = True):
    """Well-formed MAC frames whose serialisation fits in ``max_psdu`` bytes."""
    dst_mode = draw(st.sampled_from(MODES))
    src_mode = draw(st.sampled_from(MODES))
    compress = draw(st.booleans())

    def addr(mode):
        if mode == AddrMode.NONE:
            return None
        return draw(u16 if mode == AddrMode.SHORT else u64)

    f = MacFrame(
        frame_type=FrameType(draw(st.integers(0, 7))),
        seq_no=draw(st.integers(0, 255)),
        security_enabled=draw(st.booleans()),
        frame_pending=draw(st.booleans()),
        ack_request=draw(st.booleans()),
        panid_compression=compress,
        frame_version=draw(st.integers(0, 3)),
        dst_mode=dst_mode,
        dst_pan=draw(u16) if dst_mode != AddrMode.NONE else None,
        dst_addr=addr(dst_mode),
        src_mode=src_mode,
        src_pan=draw(u16) if src_mode != AddrMode.NONE and not compress else None,
        src_addr=addr(src_mode),
        fcf_reserved=draw(st.integers(0, 7)),
    )
    room = max_psdu - f.header_len - (2 if fcs else 0)
    f.payload = draw(st.binary(max_size=room))
    return f


@pytest.fixture
def tmp_pcap(tmp_path):
    return tmp_path / "cap.pcap"


# -- acceptance reporting -------------------------------------------------------

_CRITERIA: list[str] = []


class _Criterion:
    def __init__(self, number: int):
        self.number = number

    def _log(self, verdict: str, detail: str) -> str:
        line = f"criterion {self.number:>2}: {verdict}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return line

    def __call__(self, ok: bool, detail: str) -> None:
        line = self._log("PASS" if ok else "FAIL", detail)
        assert ok, line

    def skip(self, reason: str) -> None:
        self._log("SKIP", reason)
        pytest.skip(reason)


@pytest.fixture
def criterion(request):
    """``criterion(ok, detail)`` records and asserts one PASS/FAIL line."""
    return _Criterion(request.node.get_closest_marker("criterion").args[0])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
