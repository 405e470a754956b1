import json
from dataclasses import replace

import pytest

from dnforest.detector import DetectionConfig
from dnforest.distill import undistilled_view
from dnforest.errors import ConfigError, DuplicateLabelsInMerge, EmptySamples, LengthMismatch, NonBackgroundTruth
from dnforest.evaluation import (
    BACKGROUND,
    LabeledSample,
    SynthSpec,
    confidence,
    confidence_divergence,
    detection_rate,
    epsilon_sweep,
    evaluate,
    false_alarm_rate,
    generate_synthetic,
    merge_samples,
    multi_device_eval,
    score_samples,
    write_corpus,
)
from dnforest.ingest import DomainEvent, Protocol


def _s(*labels):
    return LabeledSample((DomainEvent(0.0, "s", Protocol.DNS, "a.com"),), frozenset(labels))


BG = BACKGROUND


def test_detection_rate_examples():
    assert detection_rate([_s("A"), _s("B")], [{"A"}, {"B"}]) == 1.0
    assert detection_rate([_s("A", "B")], [{"A"}]) == 0.0
    samples = [_s("A"), _s("B"), _s("C"), _s("D")]
    assert detection_rate(samples, [{"A"}, {"B"}, {"C"}, {"A"}]) == 0.75
    assert detection_rate(samples, [{"A"}, {"B"}, {"C"}, {"D", "A"}]) == 0.75
    with pytest.raises(LengthMismatch):
        detection_rate(samples, [{"A"}])


def test_false_alarm_rate_examples():
    bg = [_s(BG) for _ in range(200)]
    assert false_alarm_rate(bg, [set()] * 200) == 0.0
    assert false_alarm_rate(bg, [{"A"}] + [set()] * 199) == 0.005
    assert false_alarm_rate(bg, [{"A"}] * 200) == 1.0
    with pytest.raises(NonBackgroundTruth):
        false_alarm_rate([_s("A")], [set()])
    with pytest.raises(LengthMismatch):
        false_alarm_rate(bg, [])


def test_sample_validation():
    with pytest.raises(ValueError):
        LabeledSample((), frozenset())
    with pytest.raises(ValueError):
        LabeledSample((), frozenset({"A", BG}))


def test_synth_sizes_match_spec():
    spec = SynthSpec(n_classes=8, proprietary_domains_per_class=20, shared_background_domains=50,
                     access_windows_per_class=50, background_windows=500, seed=3)
    corpus = generate_synthetic(spec)
    assert len(corpus.profiles) == 8 and all(len(p) == 20 for p in corpus.profiles.values())
    assert len(set(corpus.pool)) == 50
    assert len(corpus.access) == 400 and len(corpus.background) == 500
    per_class = {}
    for s in corpus.access:
        (label,) = s.truth
        per_class[label] = per_class.get(label, 0) + 1
    assert set(per_class.values()) == {50}
    pool = set(corpus.pool)
    assert all(e.domain in pool for s in corpus.background for e in s.events)


def test_synth_drop_zero_has_full_profiles():
    corpus = generate_synthetic(SynthSpec(n_classes=3, access_windows_per_class=5, background_windows=5))
    for s in corpus.access:
        (label,) = s.truth
        assert set(corpus.profiles[label]) <= {e.domain for e in s.events}
        assert s.events[0].protocol is Protocol.DNS


def test_synth_drop_fraction_removes_exact_share():
    spec = SynthSpec(n_classes=3, access_windows_per_class=5, background_windows=5, dns_cache_drop_fraction=0.4)
    corpus = generate_synthetic(spec)
    for s in corpus.access:
        (label,) = s.truth
        seen = set(corpus.profiles[label]) & {e.domain for e in s.events}
        assert len(seen) == 12


def test_synth_deterministic_bytes(tmp_path):
    spec = SynthSpec(n_classes=2, access_windows_per_class=3, background_windows=4, seed=11)
    a = write_corpus(generate_synthetic(spec), tmp_path / "a")
    b = write_corpus(generate_synthetic(spec), tmp_path / "b")
    for key in a:
        assert open(a[key], "rb").read() == open(b[key], "rb").read(), key
    c = write_corpus(generate_synthetic(replace(spec, seed=12)), tmp_path / "c")
    assert open(a["test"], "rb").read() != open(c["test"], "rb").read()


def test_synth_spec_validation(tmp_path):
    with pytest.raises(ConfigError):
        SynthSpec(n_classes=0)
    with pytest.raises(ConfigError):
        SynthSpec(dns_cache_drop_fraction=1.0)
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"n_classes": 2, "bogus": 1}), encoding="utf-8")
    with pytest.raises(ConfigError):
        SynthSpec.from_file(p)
    p.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        SynthSpec.from_file(p)


def test_merge_samples(small_corpus, small_distilled):
    a = small_corpus.access[0]
    b = next(s for s in small_corpus.access if s.truth != a.truth)
    m = merge_samples([a, b])
    assert m.truth == a.truth | b.truth
    assert m.start == min(a.start, b.start) and len(m.events) == len(a.events) + len(b.events)
    assert {e.source for e in m.events} == {a.source}
    assert m.events[0].protocol is Protocol.DNS
    report = multi_device_eval(small_distilled, 2, [m])
    assert report.dr == 1.0
    with pytest.raises(DuplicateLabelsInMerge):
        merge_samples([a, a])
    with pytest.raises(ValueError):
        multi_device_eval(small_distilled, 3, [m])


def test_evaluate_and_report(small_corpus, small_distilled):
    report = evaluate(small_distilled, small_corpus.access, small_corpus.background)
    assert report.dr == 1.0 and report.far == 0.0
    assert sum(h + m for h, m in report.per_class.values()) == len(small_corpus.access)
    rec = json.loads(report.to_json())
    assert rec["dr"] == report.dr and rec["config"]["epsilon"] == 0.4
    assert "DR" in report.table() and "class00" in report.table()


def test_report_recomputable_from_scores(small_corpus, small_distilled):
    cfg = DetectionConfig()
    a = score_samples(small_distilled, small_corpus.access, cfg)
    b = score_samples(small_distilled, small_corpus.background, cfg)
    ((eps, dr, far),) = epsilon_sweep(a, small_corpus.access, b, small_corpus.background, [cfg.epsilon])
    report = evaluate(small_distilled, small_corpus.access, small_corpus.background, cfg)
    assert (dr, far) == (report.dr, report.far)


def test_far_monotone_in_epsilon(small_corpus, small_fingerprints):
    # the undistilled view scores background high enough for FAR to move across the sweep
    fset = undistilled_view(small_fingerprints)
    a = score_samples(fset, small_corpus.access)
    b = score_samples(fset, small_corpus.background)
    rows = epsilon_sweep(a, small_corpus.access, b, small_corpus.background, [i / 20 for i in range(1, 20)])
    fars = [r[2] for r in rows]
    assert fars[0] > fars[-1]
    assert all(x >= y for x, y in zip(fars, fars[1:]))


def test_exact_set_dr_can_rise_with_epsilon():
    # a low threshold admits a spurious second class; raising it makes the prediction exact
    samples = [_s("A")]
    scores = [{"A": 0.9, "B": 0.3}]
    rows = epsilon_sweep(scores, samples, [], [], [0.2, 0.5])
    assert [r[1] for r in rows] == [0.0, 1.0]


def test_confidence(small_corpus, small_fingerprints, small_distilled):
    pre, post = confidence_divergence(undistilled_view(small_fingerprints), small_distilled, small_corpus.access)
    assert pre.variant == "undistilled" and post.variant == "distilled"
    assert post.gap > pre.gap
    same_a, same_b = confidence_divergence(small_distilled, small_distilled, small_corpus.access)
    assert same_a == same_b
    with pytest.raises(EmptySamples):
        confidence(small_distilled, small_corpus.background)
