"""DomainEvent and the canonical JSON-lines event log."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from ..errors import FileUnreadable

log = logging.getLogger(__name__)


class Protocol(str, enum.Enum):
    DNS = "dns"
    TLS = "tls"
    HTTP = "http"

    def __str__(self):
        return self.value


@dataclass(frozen=True, slots=True)
class DomainEvent:
    timestamp: float
    source: str
    protocol: Protocol
    domain: str

    def __post_init__(self):
        if not isinstance(self.timestamp, (int, float)) or isinstance(self.timestamp, bool):
            raise ValueError(f"timestamp must be a number, got {self.timestamp!r}")
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise ValueError(f"timestamp must be finite and non-negative, got {self.timestamp!r}")
        if not isinstance(self.protocol, Protocol):
            object.__setattr__(self, "protocol", Protocol(str(self.protocol).lower()))

    def to_record(self) -> dict:
        return {"ts": self.timestamp, "src": self.source, "proto": self.protocol.value, "domain": self.domain}

    @classmethod
    def from_record(cls, rec: dict) -> "DomainEvent":
        src = rec["src"]
        domain = rec["domain"]
        if not isinstance(src, str) or not isinstance(domain, str):
            raise ValueError("src and domain must be strings")
        return cls(rec["ts"], src, Protocol(str(rec["proto"]).lower()), domain)


@dataclass
class LogStats:
    lines: int = 0
    events: int = 0
    parse_failures: int = 0


def format_event(ev: DomainEvent) -> str:
    return json.dumps(ev.to_record(), separators=(",", ":"))


def write_event_log(events: Iterable[DomainEvent], dest: str | os.PathLike | IO[str]) -> int:
    """Write events one per line; returns the number written."""
    if hasattr(dest, "write"):
        return _write(events, dest)
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        return _write(events, fh)


def _write(events, fh) -> int:
    n = 0
    for ev in events:
        fh.write(format_event(ev))
        fh.write("\n")
        n += 1
    return n


def read_event_log(path: str | os.PathLike, stats: LogStats | None = None) -> Iterator[DomainEvent]:
    """Yield events from a canonical log in file order.

    Malformed lines are skipped with a warning and counted in ``stats``.
    The file is opened eagerly so an unreadable path fails at call time.
    """
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot open event log {path}: {exc}") from exc
    return _iter_log(fh, stats if stats is not None else LogStats(), str(path))


def _iter_log(fh, stats: LogStats, name: str) -> Iterator[DomainEvent]:
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            stats.lines += 1
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
                ev = DomainEvent.from_record(rec)
            except (ValueError, KeyError, TypeError) as exc:
                stats.parse_failures += 1
                log.warning("%s:%d: skipping malformed event record (%s)", name, lineno, exc)
                continue
            stats.events += 1
            yield ev
