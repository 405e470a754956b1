"""Loader for a locally fetched NetCess2023 copy.

Nothing here downloads anything.  Point ``DNFOREST_NETCESS_DIR`` at a
directory laid out as::

    ScenarioA/<brand>/<model>/*.pcap   training captures, one access each
    ScenarioB/<brand>/<model>/*.pcap   initial-access test captures
    ScenarioC/<brand>/<model>/*.pcap   repetitive-access test captures
    ScenarioD/**/*.pcap                background only

Each test capture becomes one labeled sample cut to the first ``tau``
seconds after its first DNS event.  Background captures are cut into
consecutive DNS-triggered windows.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

from ..detector import DetectionConfig, window_stream
from ..errors import IngestError
from ..ingest import extract_from_pcap
from ..ingest.events import Protocol
from .samples import BACKGROUND, LabeledSample

log = logging.getLogger(__name__)

ENV_VAR = "DNFOREST_NETCESS_DIR"
SCENARIOS = ("ScenarioA", "ScenarioB", "ScenarioC", "ScenarioD")


def dataset_dir() -> Path | None:
    """The configured dataset root, or None when absent or incomplete."""
    root = os.environ.get(ENV_VAR)
    if not root:
        return None
    path = Path(root)
    if not all((path / s).is_dir() for s in ("ScenarioA", "ScenarioB", "ScenarioD")):
        return None
    return path


def _label(pcap: Path, scenario_dir: Path, level: str) -> str:
    parts = pcap.relative_to(scenario_dir).parts
    if len(parts) < 3:
        raise ValueError(f"{pcap}: expected <brand>/<model>/<file>.pcap")
    return parts[0] if level == "brand" else f"{parts[0]}/{parts[1]}"


def _events(pcap: Path) -> list:
    try:
        events, _ = extract_from_pcap(pcap)
        out = list(events)
    except IngestError as exc:
        log.warning("skipping %s: %s", pcap, exc)
        return []
    out.sort(key=lambda e: e.timestamp)
    return out


def training_events(root: Path, level: str = "brand") -> dict[str, list]:
    scen = root / "ScenarioA"
    out: dict[str, list] = {}
    for pcap in sorted(scen.rglob("*.pcap")):
        out.setdefault(_label(pcap, scen, level), []).extend(_events(pcap))
    return out


def access_samples(root: Path, scenario: str = "ScenarioB", level: str = "brand", tau: float = 15.0) -> list[LabeledSample]:
    scen = root / scenario
    samples = []
    for pcap in sorted(scen.rglob("*.pcap")):
        events = _events(pcap)
        first = next((e for e in events if e.protocol is Protocol.DNS), None)
        if first is None:
            continue
        cut = [e for e in events
               if e.source == first.source and first.timestamp <= e.timestamp <= first.timestamp + tau]
        samples.append(LabeledSample(tuple(cut), frozenset([_label(pcap, scen, level)])))
    return samples


def background_samples(root: Path, tau: float = 15.0) -> list[LabeledSample]:
    config = DetectionConfig(tau=tau)
    samples = []
    for pcap in sorted((root / "ScenarioD").rglob("*.pcap")):
        for win in window_stream(_events(pcap), config):
            samples.append(LabeledSample(tuple(win.events), frozenset([BACKGROUND])))
    return samples
