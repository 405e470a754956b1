"""Command-line interface: ``dnforest <subcommand> ...``.

Each subcommand's output feeds the next one::

    dnforest synth spec.json -o corpus
    dnforest build corpus/train/class00.jsonl --label class00 -o raw.fp
    dnforest distill raw.fp -o dist.fp
    dnforest detect dist.fp corpus/test.jsonl -o detections.jsonl
    dnforest eval detections.jsonl corpus/truth.jsonl

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace

from . import __version__
from .detector import DetectionConfig, detect_stream
from .distill import RAW, DistillationParams, FingerprintSet, distill, undistilled_view
from .domain import DEFAULT_LEVEL_CAP, SuffixRules, accumulate_features
from .errors import ConfigError, DnForestError, SchemaViolation
from .evaluation.metrics import detection_rate, false_alarm_rate, make_report, threshold
from .evaluation.samples import BACKGROUND
from .evaluation.synth import SynthSpec, generate_synthetic, write_corpus
from .ingest import extract_from_pcap, looks_like_pcap, read_event_log, write_event_log
from .ingest.events import LogStats
from .store import load_fingerprints, save_fingerprints

log = logging.getLogger("dnforest")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
WINDOW_MATCH_TOLERANCE = 1e-3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Prints the (sub)command help and raises instead of exiting with 2."""

    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass(frozen=True)
class RunConfig:
    detection: DetectionConfig
    distillation: DistillationParams
    fingerprints: str | None = None
    events: str | None = None
    output: str | None = None
    undistilled: bool = False


def _detection_config(args) -> DetectionConfig:
    return DetectionConfig(
        tau=args.tau,
        epsilon=args.epsilon,
        gamma=args.gamma,
        collector_enabled=not args.no_collector,
        expand_test_side=args.expand_test_side,
        trigger_any=args.trigger_any,
        calibrate=not args.no_calibrate,
        reorder_slack=args.reorder_slack,
    )


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _read_events(path):
    """Events from a capture or an event log, sniffed by magic number."""
    if looks_like_pcap(path):
        events, stats = extract_from_pcap(path)
        return events, stats
    stats = LogStats()
    return read_event_log(path, stats), stats


# ---------------------------------------------------------------------------
# subcommands


def cmd_extract(args) -> int:
    events, stats = extract_from_pcap(args.pcap)
    with _output(args.output) as fh:
        n = write_event_log(events, fh)
    log.info("extract: %d packets, %d events, %d parse failures %s",
             stats.packets_seen, n, stats.failures, dict(stats.parse_failures))
    return EXIT_OK


def cmd_build(args) -> int:
    rules = SuffixRules.default()
    if args.output and os.path.exists(args.output):
        fset = load_fingerprints(args.output)
        if fset.stage != RAW:
            raise SchemaViolation(f"{args.output} holds {fset.stage} fingerprints; build merges only into raw sets")
        if fset.level_cap != args.level_cap or fset.suffix_digest != rules.digest():
            raise SchemaViolation(f"{args.output} was built with a different level cap or suffix rules")
    else:
        fset = FingerprintSet(level_cap=args.level_cap, suffix_digest=rules.digest())
    features = None
    for path in args.events:
        events, _ = _read_events(path)
        features = accumulate_features(events, args.label, rules, args.level_cap, into=features)
    if not features:
        raise SchemaViolation(f"no parseable domains for class {args.label!r}")
    fset.add_features(features)
    fset.metadata["built_at"] = time.time()
    save_fingerprints(fset, args.output or "raw.fp")
    log.info("build: class %s, %d events, %d names, %d trees", args.label, features.total_events,
             len(features), len(fset.forests[args.label].trees))
    return EXIT_OK


def cmd_distill(args) -> int:
    params = DistillationParams(sigma=args.sigma)
    fset = load_fingerprints(args.fingerprints)
    out = distill(fset, params)
    save_fingerprints(out, args.output)
    log.info("distill: %d classes, %d nodes", len(out.forests), sum(f.total_nodes for f in out.forests.values()))
    return EXIT_OK


def cmd_detect(args) -> int:
    run = RunConfig(_detection_config(args), DistillationParams(), args.fingerprints, args.events,
                    args.output, args.undistilled)
    fset = load_fingerprints(run.fingerprints)
    if run.undistilled:
        fset = undistilled_view(fset, calibrate=run.detection.calibrate)
    events, stats = _read_events(run.events)
    header = {
        "config": run.detection.to_dict(),
        "fingerprints": os.path.basename(run.fingerprints),
        "variant": fset.variant,
        "classes": fset.class_labels,
        "version": __version__,
    }
    n = 0
    with _output(run.output) as fh:
        fh.write(json.dumps({"header": header}, sort_keys=True, separators=(",", ":")) + "\n")
        for det in detect_stream(events, fset, run.detection):
            fh.write(json.dumps(det.to_record(), sort_keys=True, separators=(",", ":")) + "\n")
            n += 1
    log.info("detect: %d windows", n)
    return EXIT_OK


def _parse_sweep(text: str) -> list[float]:
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"--sweep-epsilon expects lo:hi:step, got {text!r}") from None
    if not (step > 0 and lo > 0 and hi >= lo):
        raise UsageError(f"--sweep-epsilon needs 0 < lo <= hi and step > 0, got {text!r}")
    n = int(math.floor((hi - lo) / step + 1e-9))
    return [round(lo + i * step, 12) for i in range(n + 1)]


def _read_jsonl(path, what):
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise SchemaViolation(f"cannot read {what} {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except ValueError as exc:
                raise SchemaViolation(f"{path}:{lineno}: invalid {what} record: {exc}") from exc
    return out


class _TruthSample:
    # just enough of LabeledSample for the metric functions
    __slots__ = ("truth",)

    def __init__(self, labels):
        self.truth = frozenset(labels)

    @property
    def is_background(self):
        return self.truth == {BACKGROUND}


def load_detection_log(path) -> tuple[dict, dict[str, list[tuple[float, dict]]]]:
    """Header config and per-source ``(window_start, scores)`` lists."""
    header: dict = {}
    by_src: dict[str, list[tuple[float, dict]]] = {}
    for rec in _read_jsonl(path, "detection"):
        if "header" in rec:
            header = rec["header"]
            continue
        try:
            by_src.setdefault(rec["src"], []).append((float(rec["window_start"]), dict(rec["scores"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"{path}: malformed detection record {rec!r}") from exc
    return header, by_src


def align_truth(by_src, truth_records):
    """Pair each truth window with the detection for the same source and start."""
    samples, scores, unmatched = [], [], 0
    for rec in truth_records:
        try:
            src, start, labels = rec["src"], float(rec["window_start"]), rec["labels"]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"malformed truth record {rec!r}") from exc
        found = None
        for ws, sc in by_src.get(src, ()):
            if abs(ws - start) <= WINDOW_MATCH_TOLERANCE:
                found = sc
                break
        if found is None:
            unmatched += 1
            found = {}
        samples.append(_TruthSample(labels))
        scores.append(found)
    return samples, scores, unmatched


def cmd_eval(args) -> int:
    sweep = _parse_sweep(args.sweep_epsilon) if args.sweep_epsilon else None
    header, by_src = load_detection_log(args.detections)
    truth = _read_jsonl(args.truth, "truth")
    samples, scores, unmatched = align_truth(by_src, truth)
    if unmatched:
        log.warning("eval: %d truth windows had no detection window (scored as empty)", unmatched)
    config = dict(header.get("config", {}))
    eps = args.epsilon if args.epsilon is not None else config.get("epsilon", DetectionConfig.epsilon)
    config["epsilon"] = eps
    if "variant" in header:
        config["variant"] = header["variant"]
    access = [(s, sc) for s, sc in zip(samples, scores) if not s.is_background]
    background = [(s, sc) for s, sc in zip(samples, scores) if s.is_background]
    a_s, a_sc = [s for s, _ in access], [sc for _, sc in access]
    b_s, b_sc = [s for s, _ in background], [sc for _, sc in background]
    report = make_report(a_s, threshold(a_sc, eps), b_s, threshold(b_sc, eps), config)
    print(report.to_json())
    print(report.table())
    if sweep:
        for e in sweep:
            dr = detection_rate(a_s, threshold(a_sc, e))
            far = false_alarm_rate(b_s, threshold(b_sc, e))
            print(json.dumps({"epsilon": e, "dr": dr, "far": far}, sort_keys=True, separators=(",", ":")))
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec.from_file(args.spec) if args.spec != "-" else SynthSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    paths = write_corpus(generate_synthetic(spec), args.output, pcap=args.pcap)
    for name, path in sorted(paths.items()):
        log.info("synth: %s -> %s", name, path)
    return EXIT_OK


def cmd_inspect(args) -> int:
    fset = load_fingerprints(args.fingerprints)
    classes = {}
    for label, forest in fset.forests.items():
        trees = {
            root: {
                "nodes": tree.node_count,
                "weight": tree.weight,
                "raw": sum(n.raw_count for n in tree.nodes()),
                "mass": sum(n.distilled_value for n in tree.nodes()),
            }
            for root, tree in forest.trees.items()
        }
        classes[label] = {"trees": trees, "nodes": forest.total_nodes,
                          "events": fset.metadata.get("events", {}).get(label)}
    if args.json:
        print(json.dumps({"stage": fset.stage, "variant": fset.variant, "sigma": fset.params.sigma,
                          "level_cap": fset.level_cap, "classes": classes}, sort_keys=True))
        return EXIT_OK
    print(f"stage {fset.stage}  variant {fset.variant}  sigma {fset.params.sigma}  level cap {fset.level_cap}")
    for label, info in classes.items():
        print(f"{label}: {len(info['trees'])} trees, {info['nodes']} nodes, {info['events']} events")
        ranked = sorted(info["trees"].items(), key=lambda kv: (-kv[1]["weight"], kv[0]))
        for root, t in ranked[: args.top]:
            print(f"  {root:<40} nodes {t['nodes']:>4}  W {t['weight']:.4f}  mass {t['mass']:.4g}")
        if len(ranked) > args.top:
            print(f"  ... {len(ranked) - args.top} more")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dnforest", description="Network-access detection with domain-name forests.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("extract", help="pull DNS/TLS/HTTP domain events out of a pcap")
    s.add_argument("pcap")
    s.add_argument("-o", "--output", default="-", help="event log to write (default stdout)")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("build", help="add one class's traffic to a raw fingerprint file")
    s.add_argument("events", nargs="+", help="event logs or pcaps for the class")
    s.add_argument("--label", required=True)
    s.add_argument("-o", "--output", default="raw.fp", help="raw fingerprint file; merged into if it exists")
    s.add_argument("--level-cap", type=_positive_int, default=DEFAULT_LEVEL_CAP)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("distill", help="balance and TF-IDF weight a raw fingerprint file")
    s.add_argument("fingerprints")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--sigma", type=float, default=DistillationParams.sigma)
    s.set_defaults(func=cmd_distill)

    s = sub.add_parser("detect", help="window an event stream and score it against fingerprints")
    s.add_argument("fingerprints")
    s.add_argument("events", help="event log or pcap, time ordered")
    s.add_argument("-o", "--output", default="-", help="detection log to write (default stdout)")
    s.add_argument("--tau", type=float, default=DetectionConfig.tau, help="window length in seconds")
    s.add_argument("--epsilon", type=float, default=DetectionConfig.epsilon, help="score threshold")
    s.add_argument("--gamma", type=float, default=DetectionConfig.gamma, help="collector coverage threshold")
    s.add_argument("--no-collector", action="store_true")
    s.add_argument("--trigger-any", action="store_true", help="open windows on any protocol, not just DNS")
    s.add_argument("--expand-test-side", action="store_true", help="also match parent levels of window names")
    s.add_argument("--no-calibrate", action="store_true", help="report raw scores")
    s.add_argument("--undistilled", action="store_true", help="match raw counts instead of distilled values")
    s.add_argument("--reorder-slack", type=float, default=DetectionConfig.reorder_slack)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", help="DR/FAR of a detection log against truth windows")
    s.add_argument("detections")
    s.add_argument("truth")
    s.add_argument("--epsilon", type=float, default=None, help="re-threshold (default: the detect run's)")
    s.add_argument("--sweep-epsilon", metavar="LO:HI:STEP", help="also print (epsilon, dr, far) rows")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    s.add_argument("spec", help="JSON spec file ('-' for defaults)")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--pcap", action="store_true", help="also write pcaps")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inspect", help="per-class tree statistics of a fingerprint file")
    s.add_argument("fingerprints")
    s.add_argument("--top", type=_positive_int, default=10, help="trees shown per class")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_inspect)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dnforest {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"dnforest {args.command}: invalid option: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DnForestError, OSError) as exc:
        print(f"dnforest {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())
