"""Detection rate, false alarm rate, confidence divergence and sweeps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..detector import DetectionConfig, Detector, detect_stream
from ..domain import SuffixRules
from ..errors import EmptySamples, LengthMismatch, NonBackgroundTruth
from .samples import BACKGROUND, LabeledSample, flatten_events


def _label_set(pred) -> frozenset[str]:
    return frozenset(pred) - {BACKGROUND}


def detection_rate(samples: Sequence[LabeledSample], predictions: Sequence[Iterable[str]]) -> float:
    """Share of samples whose predicted class set equals the truth exactly."""
    if len(samples) != len(predictions):
        raise LengthMismatch(f"{len(samples)} samples vs {len(predictions)} predictions")
    if not samples:
        return 0.0
    hits = sum(1 for s, p in zip(samples, predictions) if _label_set(p) == s.truth)
    return hits / len(samples)


def false_alarm_rate(background: Sequence[LabeledSample], predictions: Sequence[Iterable[str]]) -> float:
    """Share of background samples predicted as any device class."""
    if len(background) != len(predictions):
        raise LengthMismatch(f"{len(background)} samples vs {len(predictions)} predictions")
    for s in background:
        if not s.is_background:
            raise NonBackgroundTruth(f"sample with truth {sorted(s.truth)} is not background")
    if not background:
        return 0.0
    return sum(1 for p in predictions if _label_set(p)) / len(background)


@dataclass
class EvalReport:
    dr: float
    far: float
    per_class: dict[str, tuple[int, int]]
    n_access: int
    n_background: int
    config: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "dr": self.dr,
            "far": self.far,
            "n_access": self.n_access,
            "n_background": self.n_background,
            "per_class": {k: {"hits": h, "misses": m} for k, (h, m) in sorted(self.per_class.items())},
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))

    def table(self) -> str:
        lines = [
            f"DR  {self.dr * 100:7.2f}%   ({self.n_access} access samples)",
            f"FAR {self.far * 100:7.2f}%   ({self.n_background} background samples)",
        ]
        if self.per_class:
            lines.append(f"{'class':<24}{'hits':>8}{'misses':>8}")
            for label, (h, m) in sorted(self.per_class.items()):
                lines.append(f"{label:<24}{h:>8}{m:>8}")
        return "\n".join(lines)


def per_class_hits(samples: Sequence[LabeledSample], predictions: Sequence[Iterable[str]]) -> dict[str, tuple[int, int]]:
    out: dict[str, list[int]] = {}
    for s, p in zip(samples, predictions):
        pred = set(p)
        for label in s.truth:
            rec = out.setdefault(label, [0, 0])
            rec[0 if label in pred else 1] += 1
    return {k: (v[0], v[1]) for k, v in sorted(out.items())}


def make_report(access: Sequence[LabeledSample], access_pred, background: Sequence[LabeledSample],
                background_pred, config: dict | None = None) -> EvalReport:
    return EvalReport(
        dr=detection_rate(access, access_pred),
        far=false_alarm_rate(background, background_pred),
        per_class=per_class_hits(access, access_pred),
        n_access=len(access),
        n_background=len(background),
        config=dict(config or {}),
    )


def score_samples(fset, samples: Sequence[LabeledSample], config: DetectionConfig = DetectionConfig(),
                  rules: SuffixRules | None = None) -> list[dict[str, float]]:
    """Calibrated per-class scores for each sample window."""
    det = Detector(fset, config, rules if rules is not None else SuffixRules())
    return [det.scores(det.features(s.events))[0] for s in samples]


def threshold(scores: Sequence[dict[str, float]], epsilon: float) -> list[frozenset[str]]:
    return [frozenset(k for k, v in sc.items() if v > epsilon) for sc in scores]


def evaluate(fset, access: Sequence[LabeledSample], background: Sequence[LabeledSample],
             config: DetectionConfig = DetectionConfig(), rules: SuffixRules | None = None) -> EvalReport:
    """DR over ``access`` and FAR over ``background`` with each sample scored as one window."""
    a = threshold(score_samples(fset, access, config, rules), config.epsilon)
    b = threshold(score_samples(fset, background, config, rules), config.epsilon)
    cfg = config.to_dict()
    cfg["variant"] = fset.variant
    return make_report(access, a, background, b, cfg)


def evaluate_stream(fset, access: Sequence[LabeledSample], background: Sequence[LabeledSample],
                    config: DetectionConfig = DetectionConfig(), rules: SuffixRules | None = None,
                    tolerance: float = 1e-3) -> EvalReport:
    """DR/FAR with windows formed by the streaming detector instead of given slices.

    All sample events are merged into one time-ordered stream; each sample is
    credited with the detection whose source matches and whose window starts
    within ``tolerance`` seconds of the sample start.  A sample with no such
    window counts as predicting nothing.
    """
    samples = list(access) + list(background)
    found: dict[str, list] = {}
    for det in detect_stream(flatten_events(samples), fset, config, rules):
        found.setdefault(det.window.source, []).append(det)

    def predict(s):
        for det in found.get(s.source, ()):
            if abs(det.window.start - s.start) <= tolerance:
                return det.matched
        return frozenset()

    cfg = config.to_dict()
    cfg["variant"] = fset.variant
    return make_report(access, [predict(s) for s in access], background, [predict(s) for s in background], cfg)


def epsilon_sweep(access_scores: Sequence[dict[str, float]], access: Sequence[LabeledSample],
                  background_scores: Sequence[dict[str, float]], background: Sequence[LabeledSample],
                  epsilons: Iterable[float]) -> list[tuple[float, float, float]]:
    """``(epsilon, dr, far)`` re-thresholding one fixed set of scores."""
    out = []
    for eps in epsilons:
        dr = detection_rate(access, threshold(access_scores, eps))
        far = false_alarm_rate(background, threshold(background_scores, eps))
        out.append((eps, dr, far))
    return out


def multi_device_eval(fset, k: int, samples: Sequence[LabeledSample],
                      config: DetectionConfig = DetectionConfig(), rules: SuffixRules | None = None) -> EvalReport:
    """Exact-set DR over windows that each merge ``k`` distinct devices."""
    for s in samples:
        if len(s.truth) != k:
            raise ValueError(f"sample with {len(s.truth)} labels in a K={k} evaluation")
    pred = threshold(score_samples(fset, samples, config, rules), config.epsilon)
    cfg = config.to_dict()
    cfg["k"] = k
    return make_report(samples, pred, [], [], cfg)


@dataclass
class ConfidenceReport:
    conf_correct: float
    conf_wrong: float
    variant: str
    n_samples: int

    @property
    def gap(self) -> float:
        return self.conf_correct - self.conf_wrong


def confidence(fset, samples: Sequence[LabeledSample], config: DetectionConfig = DetectionConfig(),
               rules: SuffixRules | None = None) -> ConfidenceReport:
    """Mean own-class score and mean cross-class score (summed over others, over |Y|)."""
    samples = [s for s in samples if not s.is_background]
    if not samples:
        raise EmptySamples("no labeled access samples")
    n_classes = len(fset.class_labels)
    correct = wrong = 0.0
    for s, sc in zip(samples, score_samples(fset, samples, config, rules)):
        own = [sc.get(y, 0.0) for y in s.truth]
        correct += sum(own) / len(own)
        wrong += sum(v for c, v in sc.items() if c not in s.truth) / n_classes
    return ConfidenceReport(correct / len(samples), wrong / len(samples), fset.variant, len(samples))


def confidence_divergence(set_pre, set_post, samples: Sequence[LabeledSample],
                          config: DetectionConfig = DetectionConfig(),
                          rules: SuffixRules | None = None) -> tuple[ConfidenceReport, ConfidenceReport]:
    """Confidence reports for the same samples before and after distillation."""
    return confidence(set_pre, samples, config, rules), confidence(set_post, samples, config, rules)
