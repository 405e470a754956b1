"""Synthetic network-access scenarios.

Each device class owns one proprietary multi-level domain tree and also
talks to a shared pool of background domains, most of them under their own
registrable root.  Generated material mirrors the four capture scenarios:

* training bursts per class (clean captures used for fingerprinting),
* labeled access windows (initial access; with ``dns_cache_drop_fraction``
  > 0 a fixed share of the proprietary names is missing, as on repeated
  access with a warm DNS cache),
* background windows drawn only from the shared pool.
"""

from __future__ import annotations

import json
import os
import random
import string
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError
from ..ingest.events import DomainEvent, Protocol, write_event_log
from .samples import BACKGROUND, LabeledSample


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 8
    proprietary_domains_per_class: int = 20
    shared_background_domains: int = 50
    events_per_access: int = 120
    access_windows_per_class: int = 50
    background_windows: int = 500
    dns_cache_drop_fraction: float = 0.0
    seed: int = 0
    training_accesses_per_class: int = 20
    background_events_per_window: int = 40
    tau: float = 15.0
    background_usage: float = 0.9
    background_root_share: float = 0.7

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("seed", "dns_cache_drop_fraction", "background_root_share"):
                continue
            if not v > 0:
                raise ConfigError(f"{f.name} must be positive, got {v!r}")
        if not 0 <= self.background_root_share <= 1:
            raise ConfigError("background_root_share must be in [0, 1]")
        if not 0 < self.background_usage <= 1:
            raise ConfigError("background_usage must be in (0, 1]")
        if not 0 <= self.dns_cache_drop_fraction < 1:
            raise ConfigError("dns_cache_drop_fraction must be in [0, 1)")

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "SynthSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except ValueError as exc:
                raise ConfigError(f"{path}: synth spec is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: synth spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SynthCorpus:
    spec: SynthSpec
    profiles: dict[str, list[str]]
    pool: list[str]
    training: dict[str, list[DomainEvent]]
    access: list[LabeledSample]
    background: list[LabeledSample]
    class_pool_weights: dict[str, list[float]] = field(repr=False, default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return sorted(self.profiles)


_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


def _word(rng: random.Random, syllables: int) -> str:
    return "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(syllables))


def _proprietary_tree(rng: random.Random, root: str, size: int, max_level: int = 4) -> list[str]:
    """Grow a random tree of ``size`` names under ``root`` (root included)."""
    names = [root]
    level = {root: 1}
    taken: dict[str, set[str]] = {root: set()}
    bias = {1: 3.0, 2: 2.0, 3: 1.0}
    while len(names) < size:
        parents = [n for n in names if level[n] < max_level]
        parent = rng.choices(parents, weights=[bias.get(level[p], 1.0) for p in parents])[0]
        label = rng.choice(("api", "cdn", "push", "sync", "cfg", "log", "img", "upd", "acc", "msg", "dl", "ota"))
        if label in taken[parent]:
            label = label + str(len(taken[parent]))
        taken[parent].add(label)
        child = f"{label}.{parent}"
        names.append(child)
        level[child] = level[parent] + 1
        taken[child] = set()
    return names


def _background_pool(rng: random.Random, size: int, root_share: float) -> list[str]:
    pool = []
    tlds = ("com", "net", "org", "io", "cn")
    deep = root_share + (1 - root_share) * 0.85
    for i in range(size):
        root = f"{_word(rng, 3)}{i}.{rng.choice(tlds)}"
        shape = rng.random()
        if shape < root_share:
            pool.append(root)
        elif shape < deep:
            pool.append(f"{rng.choice(('www', 'cdn', 'api', 'static', 'img'))}.{root}")
        else:
            pool.append(f"{rng.choice(('a', 'b', 'edge'))}.{rng.choice(('v1', 'v2', 'm'))}.{root}")
    return pool


def _protocol(rng: random.Random) -> Protocol:
    r = rng.random()
    return Protocol.DNS if r < 0.6 else Protocol.TLS if r < 0.9 else Protocol.HTTP


def _burst(rng: random.Random, t0: float, tau: float, source: str, names: list[str]) -> list[DomainEvent]:
    """Events for ``names`` spread over the window; the first one is a DNS query."""
    rng.shuffle(names)
    offsets = sorted(rng.uniform(0, 0.9 * tau) for _ in names)
    events = []
    for i, (name, dt) in enumerate(zip(names, offsets)):
        proto = Protocol.DNS if i == 0 else _protocol(rng)
        t = t0 if i == 0 else t0 + dt
        events.append(DomainEvent(round(t, 6), source, proto, name))
    events.sort(key=lambda e: e.timestamp)
    return events


def _jitter(rng: random.Random, n: int) -> int:
    """Background volume varies +-50% between bursts."""
    return rng.randint(n - n // 2, n + n // 2) if n > 1 else n


def _ip(prefix: int, i: int) -> str:
    return f"{prefix}.{(i >> 16) & 255}.{(i >> 8) & 255}.{i & 255}"


def generate_synthetic(spec: SynthSpec = SynthSpec()) -> SynthCorpus:
    """Deterministic corpus for ``spec`` (same seed, same output)."""
    rng = random.Random(spec.seed)
    n_prop = spec.proprietary_domains_per_class
    labels = [f"class{c:02d}" for c in range(spec.n_classes)]
    profiles = {}
    for c, label in enumerate(labels):
        root = f"{_word(rng, 2)}{c}{rng.choice(string.ascii_lowercase)}.com"
        profiles[label] = _proprietary_tree(rng, root, n_prop)
    pool = _background_pool(rng, spec.shared_background_domains, spec.background_root_share)

    # shared app popularity, perturbed per class over the subset of apps it runs
    ranks = list(range(1, len(pool) + 1))
    rng.shuffle(ranks)
    popularity = [1.0 / r for r in ranks]
    weights = {}
    for label in labels:
        weights[label] = [p * rng.lognormvariate(0, 0.5) if rng.random() < spec.background_usage else 0.0
                          for p in popularity]
        if not any(weights[label]):
            weights[label][rng.randrange(len(pool))] = 1.0

    n_bg = max(0, spec.events_per_access - n_prop)
    tau = spec.tau

    training = {}
    for c, label in enumerate(labels):
        events = []
        for k in range(spec.training_accesses_per_class):
            names = list(profiles[label]) + rng.choices(pool, weights[label], k=_jitter(rng, n_bg))
            events.extend(_burst(rng, k * 2 * tau, tau, _ip(172, (c << 12) + k), names))
        training[label] = events

    n_drop = round(spec.dns_cache_drop_fraction * n_prop)
    total_windows = spec.n_classes * spec.access_windows_per_class + spec.background_windows
    span = total_windows * 0.5
    base = 1_000_000.0
    access = []
    idx = 0
    for label in labels:
        for _ in range(spec.access_windows_per_class):
            prop = list(profiles[label])
            if n_drop:
                rng.shuffle(prop)
                prop = prop[n_drop:]
            names = prop + rng.choices(pool, weights[label], k=_jitter(rng, n_bg))
            events = _burst(rng, base + rng.uniform(0, span), tau, _ip(10, idx + 1), names)
            access.append(LabeledSample(tuple(events), frozenset([label])))
            idx += 1

    background = []
    for _ in range(spec.background_windows):
        names = rng.choices(pool, popularity, k=_jitter(rng, spec.background_events_per_window))
        events = _burst(rng, base + rng.uniform(0, span), tau, _ip(10, idx + 1), names)
        background.append(LabeledSample(tuple(events), frozenset([BACKGROUND])))
        idx += 1

    return SynthCorpus(spec, profiles, pool, training, access, background, weights)


def write_corpus(corpus: SynthCorpus, out_dir: str | os.PathLike, pcap: bool = False) -> dict[str, str]:
    """Write training logs, the mixed test log and its truth file into ``out_dir``.

    Returns a map of artifact name -> path.  With ``pcap`` the training and
    test events are also rendered as captures.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    train_dir = out / "train"
    train_dir.mkdir(exist_ok=True)
    for label, events in corpus.training.items():
        p = train_dir / f"{label}.jsonl"
        write_event_log(events, p)
        paths[f"train/{label}"] = str(p)
    samples = corpus.access + corpus.background
    test_events = sorted((e for s in samples for e in s.events), key=lambda e: e.timestamp)
    p = out / "test.jsonl"
    write_event_log(test_events, p)
    paths["test"] = str(p)
    p = out / "truth.jsonl"
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.truth_record(), separators=(",", ":")) + "\n")
    paths["truth"] = str(p)
    p = out / "spec.json"
    p.write_text(json.dumps(asdict(corpus.spec), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["spec"] = str(p)
    if pcap:
        from ..ingest.craft import write_events_pcap

        for label, events in corpus.training.items():
            pp = train_dir / f"{label}.pcap"
            write_events_pcap(events, pp)
            paths[f"train/{label}.pcap"] = str(pp)
        pp = out / "test.pcap"
        write_events_pcap(test_events, pp)
        paths["test.pcap"] = str(pp)
    return paths
