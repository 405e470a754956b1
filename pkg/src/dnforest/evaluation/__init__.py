"""Metrics, synthetic scenarios and evaluation drivers."""

from .metrics import (
    ConfidenceReport,
    EvalReport,
    confidence,
    confidence_divergence,
    detection_rate,
    epsilon_sweep,
    evaluate,
    evaluate_stream,
    false_alarm_rate,
    multi_device_eval,
    score_samples,
    threshold,
)
from .samples import BACKGROUND, LabeledSample, merge_samples
from .synth import SynthCorpus, SynthSpec, generate_synthetic, write_corpus

__all__ = [
    "BACKGROUND",
    "ConfidenceReport",
    "EvalReport",
    "LabeledSample",
    "SynthCorpus",
    "SynthSpec",
    "confidence",
    "confidence_divergence",
    "detection_rate",
    "epsilon_sweep",
    "evaluate",
    "evaluate_stream",
    "false_alarm_rate",
    "generate_synthetic",
    "merge_samples",
    "multi_device_eval",
    "score_samples",
    "threshold",
    "write_corpus",
]
