"""Labeled evaluation samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from ..errors import DuplicateLabelsInMerge
from ..ingest.events import DomainEvent

BACKGROUND = "__background__"


@dataclass(frozen=True)
class LabeledSample:
    events: tuple[DomainEvent, ...]
    truth: frozenset[str]

    def __post_init__(self):
        if not self.truth:
            raise ValueError("truth label set must be non-empty")
        if BACKGROUND in self.truth and len(self.truth) > 1:
            raise ValueError("background samples carry only the background label")

    @property
    def is_background(self) -> bool:
        return self.truth == {BACKGROUND}

    @property
    def source(self) -> str:
        return self.events[0].source if self.events else ""

    @property
    def start(self) -> float:
        return min(e.timestamp for e in self.events) if self.events else 0.0

    def truth_record(self) -> dict:
        return {"src": self.source, "window_start": self.start, "labels": sorted(self.truth)}


def merge_samples(parts: Sequence[LabeledSample], source: str | None = None) -> LabeledSample:
    """Overlay several single-device windows as if seen behind one address.

    Each part is shifted to start at the earliest part's start; the first
    event of the merged window keeps the DNS trigger of the earliest part.
    """
    labels: list[str] = []
    for p in parts:
        labels.extend(p.truth)
    if len(set(labels)) != len(labels) or BACKGROUND in labels:
        raise DuplicateLabelsInMerge(f"cannot merge windows with labels {sorted(labels)}")
    t0 = min(p.start for p in parts)
    src = source if source is not None else parts[0].source
    events: list[DomainEvent] = []
    for p in parts:
        shift = t0 - p.start
        events.extend(DomainEvent(round(e.timestamp + shift, 6), src, e.protocol, e.domain) for e in p.events)
    events.sort(key=lambda e: (e.timestamp, e.protocol.value != "dns"))
    return LabeledSample(tuple(events), frozenset(labels))


def flatten_events(samples: Iterable[LabeledSample]) -> list[DomainEvent]:
    """All events of the samples in timestamp order (stable)."""
    out = [e for s in samples for e in s.events]
    out.sort(key=lambda e: e.timestamp)
    return out
