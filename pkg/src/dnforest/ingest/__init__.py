"""Turn captures and event logs into DomainEvent streams."""

from .events import DomainEvent, LogStats, Protocol, format_event, read_event_log, write_event_log
from .pcap import CaptureStats, extract_from_pcap, looks_like_pcap

__all__ = [
    "CaptureStats",
    "DomainEvent",
    "LogStats",
    "Protocol",
    "extract_from_pcap",
    "format_event",
    "looks_like_pcap",
    "read_event_log",
    "write_event_log",
]
