"""Windowed real-time detection against distilled fingerprints.

A DNS event from a source with no open window opens a window of ``tau``
seconds for that source.  When it closes, the window's deduplicated name set
is matched against every class forest; classes scoring above ``epsilon``
are reported.  With the collector on, a tree whose matched-node fraction
exceeds ``gamma`` contributes its whole distilled mass.

Window names are matched as observed by default.  ``expand_test_side``
also adds every parent level; since a tree's root then always matches and
carries most of the distilled mass, the collector has little left to add.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator

from .domain import DEFAULT_LEVEL_CAP, SuffixRules, expanded_names
from .errors import ConfigError, MalformedDomain, BareSuffix, IpLiteral, NotDistilled, OutOfOrderBeyondSlack
from .fingerprint import DnForest
from .ingest.events import DomainEvent, Protocol

log = logging.getLogger(__name__)

_DOMAIN_ERRORS = (MalformedDomain, BareSuffix, IpLiteral)


@dataclass(frozen=True)
class DetectionConfig:
    tau: float = 15.0
    epsilon: float = 0.4
    gamma: float = 0.5
    collector_enabled: bool = True
    expand_test_side: bool = False
    trigger_any: bool = False
    calibrate: bool = True
    reorder_slack: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigError(f"tau must be positive, got {self.tau!r}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon!r}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma!r}")
        if not self.reorder_slack >= 0:
            raise ConfigError(f"reorder_slack must be non-negative, got {self.reorder_slack!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DetectionWindow:
    source: str
    start: float
    events: list[DomainEvent] = field(default_factory=list)
    features: frozenset[str] = frozenset()


@dataclass
class Detection:
    window: DetectionWindow
    scores: dict[str, float]
    matched: frozenset[str]
    collector_fired: frozenset[tuple[str, str]] = frozenset()

    def to_record(self) -> dict:
        return {
            "src": self.window.source,
            "window_start": self.window.start,
            "scores": dict(sorted(self.scores.items())),
            "matched": sorted(self.matched),
            "collector": sorted(f"{c}/{root}" for c, root in self.collector_fired),
        }


def window_features(events: Iterable, rules: SuffixRules | None = None, expand: bool = True,
                    level_cap: int = DEFAULT_LEVEL_CAP) -> frozenset[str]:
    """The window's name set: deduplicated and, if ``expand``, level-expanded."""
    out: set[str] = set()
    for ev in events:
        text = ev if isinstance(ev, str) else ev.domain
        try:
            names = expanded_names(text, rules, level_cap)
        except _DOMAIN_ERRORS:
            continue
        if expand:
            out.update(names)
        else:
            out.add(names[-1])
    return frozenset(out)


def make_window(events: list[DomainEvent], config: DetectionConfig = DetectionConfig(),
                rules: SuffixRules | None = None, level_cap: int = DEFAULT_LEVEL_CAP,
                source: str | None = None) -> DetectionWindow:
    """Window over an explicit event slice (used for labeled evaluation samples)."""
    events = sorted(events, key=lambda e: e.timestamp)
    start = events[0].timestamp if events else 0.0
    src = source if source is not None else (events[0].source if events else "")
    return DetectionWindow(src, start, events,
                           window_features(events, rules, config.expand_test_side, level_cap))


# ---------------------------------------------------------------------------
# scoring


def score_window(window: DetectionWindow | Iterable[str], forest: DnForest,
                 config: DetectionConfig = DetectionConfig()) -> tuple[float, set[str]]:
    """Uncalibrated match score of a window against one forest.

    Returns ``(score, roots_where_collector_fired)``.
    """
    names = window.features if isinstance(window, DetectionWindow) else frozenset(window)
    size = forest.total_nodes
    if size == 0:
        return 0.0, set()
    total = 0.0
    fired = set()
    for root, tree in forest.trees.items():
        index = tree.index
        hits = [index[d] for d in names if d in index]
        if not hits:
            continue
        if config.collector_enabled and len(hits) / len(index) > config.gamma:
            total += sum(n.distilled_value for n in index.values())
            fired.add(root)
        else:
            total += sum(n.distilled_value for n in hits)
    return total / size, fired


def calibration_scales(fset) -> dict[str, float]:
    """Per-class factor mapping the score of the class's own full name set to 1."""
    scales = {}
    for label, forest in fset.forests.items():
        size = forest.total_nodes
        mass = sum(n.distilled_value for n in forest.nodes())
        scales[label] = size / mass if mass > 0 else 0.0
    return scales


class Detector:
    """Compiled matcher over a whole fingerprint set.

    Builds a name -> postings index once so a window costs one dict probe
    per name, independent of how many classes or trees exist.
    """

    def __init__(self, fset, config: DetectionConfig = DetectionConfig(), rules: SuffixRules | None = None):
        if not fset.distilled:
            raise NotDistilled(f"fingerprint set is {fset.stage!r}; distill it before detection")
        self.fset = fset
        self.config = config
        self.rules = rules if rules is not None else SuffixRules.default()
        if self.rules.digest() != fset.suffix_digest:
            log.warning("suffix rules differ from those the fingerprints were built with")
        self.level_cap = fset.level_cap
        self.labels = list(fset.class_labels)
        if config.calibrate:
            scales = fset.calibration or calibration_scales(fset)
            self._scale = [scales.get(lbl, 0.0) for lbl in self.labels]
        else:
            self._scale = [1.0] * len(self.labels)
        self._size = []
        self._tree_class: list[int] = []
        self._tree_root: list[str] = []
        self._tree_nodes: list[int] = []
        self._tree_mass: list[float] = []
        postings: dict[str, list[tuple[int, float]]] = {}
        for ci, label in enumerate(self.labels):
            forest = fset.forests[label]
            self._size.append(forest.total_nodes)
            for root, tree in forest.trees.items():
                slot = len(self._tree_class)
                self._tree_class.append(ci)
                self._tree_root.append(root)
                self._tree_nodes.append(tree.node_count)
                mass = 0.0
                for node in tree.nodes():
                    mass += node.distilled_value
                    postings.setdefault(node.name, []).append((slot, node.distilled_value))
                self._tree_mass.append(mass)
        self._postings = {k: tuple(v) for k, v in postings.items()}

    def features(self, events: Iterable) -> frozenset[str]:
        return window_features(events, self.rules, self.config.expand_test_side, self.level_cap)

    def raw_scores(self, features: Iterable[str]) -> tuple[list[float], list[int]]:
        """Uncalibrated per-class scores and the tree slots where the collector fired."""
        sums: dict[int, float] = {}
        hits: dict[int, int] = {}
        postings = self._postings
        for d in features:
            plist = postings.get(d)
            if plist is None:
                continue
            for slot, value in plist:
                if slot in sums:
                    sums[slot] += value
                    hits[slot] += 1
                else:
                    sums[slot] = value
                    hits[slot] = 1
        scores = [0.0] * len(self.labels)
        fired = []
        collector = self.config.collector_enabled
        gamma = self.config.gamma
        for slot, s in sums.items():
            if collector and hits[slot] / self._tree_nodes[slot] > gamma:
                s = self._tree_mass[slot]
                fired.append(slot)
            scores[self._tree_class[slot]] += s
        for ci, size in enumerate(self._size):
            scores[ci] = scores[ci] / size if size else 0.0
        return scores, fired

    def scores(self, features: Iterable[str]) -> tuple[dict[str, float], frozenset[tuple[str, str]]]:
        raw, fired = self.raw_scores(features)
        scores = {lbl: r * s for lbl, r, s in zip(self.labels, raw, self._scale)}
        return scores, frozenset((self.labels[self._tree_class[t]], self._tree_root[t]) for t in fired)

    def classify(self, window: DetectionWindow) -> Detection:
        scores, fired = self.scores(window.features)
        eps = self.config.epsilon
        return Detection(window, scores, frozenset(k for k, v in scores.items() if v > eps), fired)


def classify_window(window: DetectionWindow, fset, config: DetectionConfig = DetectionConfig(),
                    rules: SuffixRules | None = None) -> Detection:
    """Score ``window`` against every class independently and threshold at epsilon."""
    return Detector(fset, config, rules).classify(window)


# ---------------------------------------------------------------------------
# streaming


class WindowTracker:
    """Incremental per-source windowing with a bounded reorder buffer."""

    def __init__(self, config: DetectionConfig = DetectionConfig(), rules: SuffixRules | None = None,
                 level_cap: int = DEFAULT_LEVEL_CAP):
        self.config = config
        self.rules = rules
        self.level_cap = level_cap
        self._open: dict[str, DetectionWindow] = {}
        self._closing: list[tuple[float, int, str]] = []
        self._buffer: list[tuple[float, int, DomainEvent]] = []
        self._seq = 0
        self.high_water = -math.inf
        self.untriggered = 0

    def push(self, ev: DomainEvent) -> list[DetectionWindow]:
        slack = self.config.reorder_slack
        ts = ev.timestamp
        if ts < self.high_water - slack:
            raise OutOfOrderBeyondSlack(
                f"event at {ts} is {self.high_water - ts:.3f}s behind the stream (slack {slack}s)")
        if ts > self.high_water:
            self.high_water = ts
        if slack == 0:
            return self._process(ev)
        self._seq += 1
        heapq.heappush(self._buffer, (ts, self._seq, ev))
        out: list[DetectionWindow] = []
        release = self.high_water - slack
        buf = self._buffer
        while buf and buf[0][0] < release:
            out.extend(self._process(heapq.heappop(buf)[2]))
        return out

    def flush(self) -> list[DetectionWindow]:
        out: list[DetectionWindow] = []
        while self._buffer:
            out.extend(self._process(heapq.heappop(self._buffer)[2]))
        while self._closing:
            out.append(self._close(heapq.heappop(self._closing)[2]))
        return out

    def _process(self, ev: DomainEvent) -> list[DetectionWindow]:
        out = []
        ts = ev.timestamp
        closing = self._closing
        while closing and closing[0][0] < ts:
            out.append(self._close(heapq.heappop(closing)[2]))
        win = self._open.get(ev.source)
        if win is not None:
            win.events.append(ev)
        elif ev.protocol is Protocol.DNS or self.config.trigger_any:
            self._open[ev.source] = DetectionWindow(ev.source, ts, [ev])
            self._seq += 1
            heapq.heappush(closing, (ts + self.config.tau, self._seq, ev.source))
        else:
            self.untriggered += 1
        return out

    def _close(self, source: str) -> DetectionWindow:
        win = self._open.pop(source)
        win.features = window_features(win.events, self.rules, self.config.expand_test_side, self.level_cap)
        return win


def window_stream(events: Iterable[DomainEvent], config: DetectionConfig = DetectionConfig(),
                  rules: SuffixRules | None = None, level_cap: int = DEFAULT_LEVEL_CAP) -> Iterator[DetectionWindow]:
    """Group a time-ordered event stream into DNS-triggered per-source windows."""
    tracker = WindowTracker(config, rules, level_cap)
    for ev in events:
        yield from tracker.push(ev)
    yield from tracker.flush()


def detect_stream(events: Iterable[DomainEvent], fset, config: DetectionConfig = DetectionConfig(),
                  rules: SuffixRules | None = None) -> Iterator[Detection]:
    """Windows classified as they close, in close order."""
    detector = Detector(fset, config, rules)
    for win in window_stream(events, config, detector.rules, fset.level_cap):
        yield detector.classify(win)
