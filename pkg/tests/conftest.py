import pytest

from dnforest.domain import SuffixRules, accumulate_features
from dnforest.distill import build_fingerprints, distill
from dnforest.evaluation.synth import SynthSpec, generate_synthetic


@pytest.fixture(autouse=True)
def _no_suffix_env(monkeypatch):
    monkeypatch.delenv("DNFOREST_SUFFIX_FILE", raising=False)


@pytest.fixture(scope="session")
def small_corpus():
    spec = SynthSpec(n_classes=3, access_windows_per_class=10, background_windows=40, seed=7)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def small_fingerprints(small_corpus):
    rules = SuffixRules()
    feats = [accumulate_features(evs, label, rules) for label, evs in small_corpus.training.items()]
    return build_fingerprints(feats, rules)


@pytest.fixture(scope="session")
def small_distilled(small_fingerprints):
    return distill(small_fingerprints)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
