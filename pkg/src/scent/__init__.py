"""Capture and analysis toolkit for IEEE 802.15.4 / Zigbee traffic."""
from .codec import (
    AddrMode,
    FcsStatus,
    FrameType,
    MacFrame,
    NwkHeader,
    RawFrame,
    compute_fcs,
    parse_mac_frame,
    parse_nwk_header,
    serialize_mac_frame,
    verify_fcs,
)
from .features import FeatureRow, Moments, WindowAggregator, WindowConfig, extract_from_pcap, write_feature_csv
from .filters import eval_filter, parse_filter
from .pcapio import read_pcap, write_pcap

__version__ = "0.1.0"

__all__ = [
    "AddrMode", "FcsStatus", "FrameType", "MacFrame", "NwkHeader", "RawFrame", "compute_fcs",
    "parse_mac_frame", "parse_nwk_header", "serialize_mac_frame", "verify_fcs", "FeatureRow", "Moments",
    "WindowAggregator", "WindowConfig", "extract_from_pcap", "write_feature_csv", "eval_filter",
    "parse_filter", "read_pcap", "write_pcap",
]
