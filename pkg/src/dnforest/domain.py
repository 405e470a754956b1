"""Domain-name parsing, registrable-root resolution and feature accumulation.

A *registrable root* is the public suffix plus one label (``apple.com``,
``b.co.uk``).  Levels count labels above the public suffix, so the root is
level 1.  Without a rule file the suffix is simply the rightmost label.
"""

from __future__ import annotations

import hashlib
import ipaddress
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import BareSuffix, FileUnreadable, IpLiteral, MalformedDomain

log = logging.getLogger(__name__)

DEFAULT_LEVEL_CAP = 6
SUFFIX_FILE_ENV = "DNFOREST_SUFFIX_FILE"

_LABEL_RE = re.compile(r"^[a-z0-9_-]+$")
_MAX_LABEL = 63
_MAX_NAME = 253


@dataclass(frozen=True)
class DomainName:
    labels: tuple[str, ...]
    raw: str = field(default="", compare=False, hash=False)

    @property
    def text(self) -> str:
        return ".".join(self.labels)

    def parent(self) -> "DomainName":
        return DomainName(self.labels[1:], raw=".".join(self.labels[1:]))

    def __str__(self) -> str:
        return self.text

    def __len__(self) -> int:
        return len(self.labels)


class SuffixRules:
    """Set of plain public-suffix rules with longest-match lookup.

    The single rightmost label is always a suffix, so lookup never fails.
    """

    def __init__(self, suffixes: Iterable[str] = ()):
        rules = set()
        for s in suffixes:
            s = s.strip().strip(".").lower()
            if s:
                rules.add(s)
        self.suffixes: frozenset[str] = frozenset(rules)
        self._max_labels = max((s.count(".") + 1 for s in self.suffixes), default=1)
        self._cache: dict[str, tuple[str, ...]] = {}

    def __eq__(self, other):
        return isinstance(other, SuffixRules) and other.suffixes == self.suffixes

    def __hash__(self):
        return hash(self.suffixes)

    def __repr__(self):
        return f"SuffixRules({len(self.suffixes)} rules)"

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "SuffixRules":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FileUnreadable(f"cannot read suffix rules {path}: {exc}") from exc
        return cls.parse(text.splitlines())

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "SuffixRules":
        rules = []
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("//"):
                continue
            token = line.split()[0]
            if token.startswith("*") or token.startswith("!"):
                log.debug("suffix rules line %d: wildcard/exception rule %r ignored", lineno, token)
                continue
            rules.append(token)
        return cls(rules)

    @classmethod
    def default(cls) -> "SuffixRules":
        """Rules from ``$DNFOREST_SUFFIX_FILE`` if set, else single-label only."""
        path = os.environ.get(SUFFIX_FILE_ENV)
        if path:
            return cls.from_file(path)
        return cls()

    def digest(self) -> str:
        h = hashlib.sha256()
        for s in sorted(self.suffixes):
            h.update(s.encode("ascii", "replace") + b"\n")
        return h.hexdigest()

    def suffix_length(self, labels: tuple[str, ...]) -> int:
        """Number of trailing labels forming the longest matching suffix."""
        n = len(labels)
        for k in range(min(self._max_labels, n), 1, -1):
            if ".".join(labels[n - k:]) in self.suffixes:
                return k
        return 1


def normalize(text: str) -> DomainName:
    """Lowercase, strip the trailing dot and validate label syntax."""
    if not isinstance(text, str):
        raise MalformedDomain(f"expected str, got {type(text).__name__}")
    raw = text
    name = text.strip()
    if name.endswith("."):
        name = name[:-1]
    if not name:
        raise MalformedDomain("empty domain")
    if ":" in name or (name.startswith("[") and name.endswith("]")):
        try:
            ipaddress.ip_address(name.strip("[]"))
        except ValueError:
            raise MalformedDomain(f"illegal character in {raw!r}") from None
        raise IpLiteral(f"{raw!r} is an IP address literal")
    name = name.lower()
    if len(name) > _MAX_NAME:
        raise MalformedDomain(f"domain longer than {_MAX_NAME} characters")
    labels = tuple(name.split("."))
    for label in labels:
        if not label:
            raise MalformedDomain(f"empty label in {raw!r}")
        if len(label) > _MAX_LABEL:
            raise MalformedDomain(f"label longer than {_MAX_LABEL} characters in {raw!r}")
        if not _LABEL_RE.match(label):
            raise MalformedDomain(f"illegal character in {raw!r}")
    if len(labels) == 4 and all(label.isdigit() for label in labels):
        try:
            ipaddress.IPv4Address(name)
        except ValueError:
            pass
        else:
            raise IpLiteral(f"{raw!r} is an IP address literal")
    return DomainName(labels, raw=raw)


def parse_and_root(text: str, rules: SuffixRules | None = None) -> tuple[DomainName, DomainName]:
    """Return ``(name, registrable_root)`` for a hostname."""
    rules = rules if rules is not None else SuffixRules()
    name = normalize(text)
    k = rules.suffix_length(name.labels)
    if len(name.labels) <= k:
        raise BareSuffix(f"{name.text!r} is a public suffix")
    root_labels = name.labels[-(k + 1):]
    return name, DomainName(root_labels, raw=".".join(root_labels))


@dataclass(frozen=True)
class LevelExpansion:
    names: tuple[tuple[str, int], ...]

    @property
    def root(self) -> str:
        return self.names[0][0]

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)


def expand_levels(
    name: DomainName | str,
    rules: SuffixRules | None = None,
    level_cap: int = DEFAULT_LEVEL_CAP,
) -> LevelExpansion:
    """Every suffix of ``name`` from the registrable root (level 1) upward.

    Names deeper than ``level_cap`` are truncated to their ancestor at the cap.
    """
    text = name.text if isinstance(name, DomainName) else name
    return LevelExpansion(tuple(zip(_expand_cached(text, rules, level_cap), range(1, level_cap + 1))))


def _expand_cached(text: str, rules: SuffixRules | None, level_cap: int) -> tuple[str, ...]:
    rules = rules if rules is not None else _DEFAULT_RULES
    key = text if level_cap == DEFAULT_LEVEL_CAP else f"{level_cap}|{text}"
    hit = rules._cache.get(key)
    if hit is not None:
        return hit
    name, root = parse_and_root(text, rules)
    depth = len(name.labels) - len(root.labels) + 1
    depth = min(depth, level_cap)
    labels = name.labels
    n = len(root.labels)
    out = tuple(".".join(labels[-(n + i):]) for i in range(depth))
    if len(rules._cache) > 1_000_000:
        rules._cache.clear()
    rules._cache[key] = out
    return out


def expanded_names(text: str, rules: SuffixRules | None = None, level_cap: int = DEFAULT_LEVEL_CAP) -> tuple[str, ...]:
    """Expanded names root-first as plain strings (hot path for counting and scoring)."""
    return _expand_cached(text, rules, level_cap)


_DEFAULT_RULES = SuffixRules()


@dataclass
class DomainFeatureSet:
    """Counts of level-expanded names observed for one device class."""

    class_label: str
    entries: dict[str, int] = field(default_factory=dict)
    roots: dict[str, str] = field(default_factory=dict)
    total_events: int = 0
    skipped: int = 0

    @classmethod
    def from_counts(cls, label: str, counts: dict[str, int], rules: SuffixRules | None = None) -> "DomainFeatureSet":
        """Wrap an explicit name->count map (no expansion is applied)."""
        fs = cls(label)
        for text, n in counts.items():
            name, root = parse_and_root(text, rules)
            if n <= 0:
                raise ValueError(f"count for {text!r} must be positive")
            fs.entries[name.text] = int(n)
            fs.roots[name.text] = root.text
        fs.total_events = sum(n for name, n in fs.entries.items() if fs.roots[name] == name)
        return fs

    def root_of(self, name: str) -> str:
        return self.roots[name]

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def update(self, other: "DomainFeatureSet") -> None:
        for name, n in other.entries.items():
            self.entries[name] = self.entries.get(name, 0) + n
        self.roots.update(other.roots)
        self.total_events += other.total_events
        self.skipped += other.skipped


def accumulate_features(
    events: Iterable,
    label: str,
    rules: SuffixRules | None = None,
    level_cap: int = DEFAULT_LEVEL_CAP,
    into: DomainFeatureSet | None = None,
) -> DomainFeatureSet:
    """Fold an event stream into a feature set.

    ``events`` may hold DomainEvent objects or bare hostname strings.  Every
    parseable domain adds 1 to each of its expanded names; unparseable ones
    are logged and tallied in ``skipped``.
    """
    fs = into if into is not None else DomainFeatureSet(label)
    counts: Counter[str] = Counter()
    roots = fs.roots
    parsed = 0
    skipped = 0
    for ev in events:
        text = ev if isinstance(ev, str) else ev.domain
        try:
            names = _expand_cached(text, rules, level_cap)
        except (MalformedDomain, BareSuffix, IpLiteral) as exc:
            skipped += 1
            log.debug("skipping %r: %s", text, exc)
            continue
        parsed += 1
        counts.update(names)
        root = names[0]
        for n in names:
            roots[n] = root
    entries = fs.entries
    for name, n in counts.items():
        entries[name] = entries.get(name, 0) + n
    fs.total_events += parsed
    fs.skipped += skipped
    if skipped:
        log.info("%s: skipped %d unparseable domains", label, skipped)
    return fs


def iter_parents(name: str) -> Iterator[str]:
    labels = name.split(".")
    for i in range(1, len(labels)):
        yield ".".join(labels[i:])
