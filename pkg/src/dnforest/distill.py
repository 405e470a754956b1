"""Two-stage fingerprint distillation.

Stage one scales every count in a tree by the tree's structural weight,
computed from the effective-count ratios along its root-to-leaf paths.
Stage two applies a tree-level TF-IDF across classes so that names shared
by many classes lose mass and class-specific names gain it.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field

from .domain import DEFAULT_LEVEL_CAP, DomainFeatureSet, SuffixRules
from .errors import ConfigError, NotBalanced, ZeroEffectiveCount
from .fingerprint import DecisionPath, DnForest, DnTree, build_forest, decision_paths


@dataclass(frozen=True)
class DistillationParams:
    sigma: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"sigma must be positive, got {self.sigma!r}")


RAW, BALANCED, DISTILLED = "raw", "balanced", "distilled"


@dataclass
class FingerprintSet:
    """Per-class forests plus the parameters they were built with.

    ``stage`` is ``raw`` after building, ``balanced`` after intra-class
    balancing and ``distilled`` after TF-IDF.  ``variant`` is ``distilled``
    for the normal pipeline and ``undistilled`` for the ablation view whose
    matching values are the raw counts.
    """

    forests: dict[str, DnForest] = field(default_factory=dict)
    params: DistillationParams = field(default_factory=DistillationParams)
    stage: str = RAW
    variant: str = DISTILLED
    level_cap: int = DEFAULT_LEVEL_CAP
    suffix_digest: str = field(default_factory=lambda: SuffixRules().digest())
    calibration: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def class_labels(self) -> list[str]:
        return sorted(self.forests)

    @property
    def distilled(self) -> bool:
        return self.stage == DISTILLED

    def copy(self) -> "FingerprintSet":
        return FingerprintSet(
            {k: f.copy() for k, f in self.forests.items()},
            self.params, self.stage, self.variant, self.level_cap, self.suffix_digest,
            dict(self.calibration), dict(self.metadata),
        )

    def add_features(self, features: DomainFeatureSet) -> None:
        """Merge a class's feature set, rebuilding its forest from raw counts."""
        label = features.class_label
        if label in self.forests:
            merged = self.forests[label].to_features()
            merged.update(features)
            features = merged
        self.forests[label] = build_forest(features)
        self.forests = dict(sorted(self.forests.items()))
        self.stage = RAW
        self.calibration = {}
        events = self.metadata.setdefault("events", {})
        events[label] = features.total_events
        self.metadata["events"] = dict(sorted(events.items()))


def build_fingerprints(feature_sets, rules: SuffixRules | None = None,
                       level_cap: int = DEFAULT_LEVEL_CAP) -> FingerprintSet:
    fset = FingerprintSet(level_cap=level_cap,
                          suffix_digest=(rules or SuffixRules()).digest())
    for fs in feature_sets:
        fset.add_features(fs)
    fset.metadata["built_at"] = time.time()
    return fset


def path_contribution(path: DecisionPath, params: DistillationParams = DistillationParams()) -> float:
    """Product over consecutive path nodes of ``log(f(parent)/f(child) + sigma)``."""
    counts = path.counts
    w = 1.0
    for parent, child in zip(counts, counts[1:]):
        if child == 0:
            raise ZeroEffectiveCount(f"zero effective count below {path.nodes[0][0].name!r}")
        w *= math.log(parent / child + params.sigma)
    return w


def tree_weight(tree: DnTree, params: DistillationParams = DistillationParams()) -> float:
    """``log(sum of path contributions + 1)``; paths ending in a zero-count leaf add 0.

    The weight is stored on the tree as well as returned.
    """
    total = 0.0
    for path in decision_paths(tree):
        if path.counts[-1] == 0:
            continue
        total += path_contribution(path, params)
    tree.weight = math.log(total + 1.0)
    return tree.weight


def intra_balance(forest: DnForest, params: DistillationParams = DistillationParams()) -> DnForest:
    """Fresh copy of ``forest`` with ``balanced_count = W * raw_count`` everywhere."""
    out = forest.copy()
    for tree in out.trees.values():
        w = tree_weight(tree, params)
        for node in tree.nodes():
            node.balanced_count = w * node.raw_count
            node.distilled_value = float(node.raw_count)
    return out


def document_frequency(forests) -> Counter:
    """Number of class forests containing each observed (non-structural) name."""
    df: Counter = Counter()
    for forest in forests:
        for node in forest.nodes():
            if node.raw_count > 0:
                df[node.name] += 1
    return df


def tfidf_distill(fset: FingerprintSet) -> FingerprintSet:
    """Fresh copy with ``distilled_value = TF * IDF * balanced_count`` on every node.

    TF is the balanced count over the forest's node count, IDF the balanced
    count over the number of classes whose forest contains the name.
    """
    if fset.stage != BALANCED:
        raise NotBalanced(f"fingerprint set is {fset.stage!r}; run intra_balance first")
    out = fset.copy()
    df = document_frequency(out.forests.values())
    for forest in out.forests.values():
        size = forest.total_nodes
        for node in forest.nodes():
            nbar = node.balanced_count
            if node.raw_count == 0 or nbar == 0:
                node.distilled_value = 0.0
                continue
            node.distilled_value = (nbar / size) * (nbar / df[node.name]) * nbar
    out.stage = DISTILLED
    out.variant = DISTILLED
    return out


def balance_all(fset: FingerprintSet, params: DistillationParams | None = None) -> FingerprintSet:
    params = params or fset.params
    out = fset.copy()
    out.params = params
    out.forests = {k: intra_balance(f, params) for k, f in fset.forests.items()}
    out.stage = BALANCED
    return out


def distill(fset: FingerprintSet, params: DistillationParams | None = None, calibrate: bool = True) -> FingerprintSet:
    """Run both stages on a copy and (by default) record per-class score scales."""
    out = tfidf_distill(balance_all(fset, params))
    if calibrate:
        from .detector import calibration_scales

        out.calibration = calibration_scales(out)
    return out


def undistilled_view(fset: FingerprintSet, calibrate: bool = True) -> FingerprintSet:
    """Matching values reset to raw counts; the ablation's 'without distillation' set."""
    out = fset.copy()
    for forest in out.forests.values():
        for node in forest.nodes():
            node.distilled_value = float(node.raw_count)
    out.stage = DISTILLED
    out.variant = "undistilled"
    out.calibration = {}
    if calibrate:
        from .detector import calibration_scales

        out.calibration = calibration_scales(out)
    return out
