"""Fingerprint persistence.

A fingerprint file is one JSON document.  Classes, trees and nodes are
sorted (label, root, name) so equal sets serialize to identical bytes, and
floats are written in shortest round-trip form so every value reloads
exactly.  Raw, balanced and distilled values are all kept, which lets the
undistilled ablation run from the same file.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

from .distill import BALANCED, DISTILLED, RAW, DistillationParams, FingerprintSet
from .errors import ConfigError, IoFailure, SchemaViolation, UnsupportedVersion
from .fingerprint import DnForest, DnNode, DnTree

FORMAT_NAME = "dnforest-fingerprints"
FORMAT_VERSION = 1


def to_document(fset: FingerprintSet) -> dict:
    classes = []
    for label in sorted(fset.forests):
        forest = fset.forests[label]
        trees = []
        for root in sorted(forest.trees):
            tree = forest.trees[root]
            nodes = [
                {
                    "name": n.name,
                    "level": n.level,
                    "raw_count": n.raw_count,
                    "balanced_count": float(n.balanced_count),
                    "distilled_value": float(n.distilled_value),
                }
                for n in sorted(tree.nodes(), key=lambda n: n.name)
            ]
            trees.append({"root": root, "weight": float(tree.weight), "nodes": nodes})
        classes.append({"label": label, "trees": trees})
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "params": {
            "sigma": float(fset.params.sigma),
            "level_cap": fset.level_cap,
            "suffix_digest": fset.suffix_digest,
            "calibration": {k: float(v) for k, v in sorted(fset.calibration.items())},
        },
        "stage": fset.stage,
        "variant": fset.variant,
        "distilled": fset.distilled,
        "metadata": fset.metadata,
        "classes": classes,
    }


def dumps(fset: FingerprintSet) -> str:
    return json.dumps(to_document(fset), indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_fingerprints(fset: FingerprintSet, path: str | os.PathLike) -> None:
    text = dumps(fset)
    target = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=".fp-", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except OSError as exc:
        raise IoFailure(f"cannot write fingerprints to {path}: {exc}") from exc


def load_fingerprints(path: str | os.PathLike) -> FingerprintSet:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read fingerprints {path}: {exc}") from exc
    return loads(text)


def loads(text: str) -> FingerprintSet:
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise SchemaViolation(f"fingerprint document is not valid JSON: {exc}") from exc
    return from_document(doc)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaViolation(msg)


def _number(value, what: str) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), f"{what} must be a number")
    _require(math.isfinite(value) and value >= 0, f"{what} must be finite and non-negative")
    return float(value)


def from_document(doc) -> FingerprintSet:
    _require(isinstance(doc, dict), "fingerprint document must be an object")
    _require(doc.get("format") == FORMAT_NAME, "not a dnforest fingerprint document")
    version = doc.get("format_version")
    _require(isinstance(version, int) and not isinstance(version, bool), "format_version must be an integer")
    if version > FORMAT_VERSION:
        raise UnsupportedVersion(f"format_version {version} is newer than supported {FORMAT_VERSION}")
    _require(version >= 1, f"invalid format_version {version}")
    for key in ("params", "stage", "variant", "classes"):
        _require(key in doc, f"missing key {key!r}")
    params = doc["params"]
    _require(isinstance(params, dict), "params must be an object")
    try:
        dparams = DistillationParams(sigma=_number(params.get("sigma"), "params.sigma"))
    except ConfigError as exc:
        raise SchemaViolation(str(exc)) from exc
    level_cap = params.get("level_cap")
    _require(isinstance(level_cap, int) and level_cap >= 1, "params.level_cap must be a positive integer")
    digest = params.get("suffix_digest")
    _require(isinstance(digest, str), "params.suffix_digest must be a string")
    calibration = params.get("calibration", {})
    _require(isinstance(calibration, dict), "params.calibration must be an object")
    stage = doc["stage"]
    _require(stage in (RAW, BALANCED, DISTILLED), f"unknown stage {stage!r}")
    _require(doc["variant"] in ("distilled", "undistilled"), f"unknown variant {doc['variant']!r}")
    metadata = doc.get("metadata", {})
    _require(isinstance(metadata, dict), "metadata must be an object")

    forests = {}
    _require(isinstance(doc["classes"], list), "classes must be a list")
    for cls in doc["classes"]:
        _require(isinstance(cls, dict) and isinstance(cls.get("label"), str), "class entry needs a label")
        label = cls["label"]
        _require(label not in forests, f"duplicate class label {label!r}")
        _require(isinstance(cls.get("trees"), list), f"class {label!r}: trees must be a list")
        forest = DnForest(label)
        for t in cls["trees"]:
            tree = _tree_from_doc(t, label)
            _require(tree.name not in forest.trees, f"class {label!r}: duplicate tree root {tree.name!r}")
            forest.trees[tree.name] = tree
        forests[label] = forest
    for k in calibration:
        _require(k in forests, f"calibration for unknown class {k!r}")
    return FingerprintSet(
        forests=dict(sorted(forests.items())),
        params=dparams,
        stage=stage,
        variant=doc["variant"],
        level_cap=level_cap,
        suffix_digest=digest,
        calibration={k: _number(v, f"calibration[{k}]") for k, v in calibration.items()},
        metadata=metadata,
    )


def _tree_from_doc(t, label: str) -> DnTree:
    _require(isinstance(t, dict), f"class {label!r}: tree entry must be an object")
    root = t.get("root")
    _require(isinstance(root, str) and root, f"class {label!r}: tree needs a root name")
    weight = _number(t.get("weight"), f"{root}: weight")
    rows = t.get("nodes")
    _require(isinstance(rows, list) and rows, f"{root}: nodes must be a non-empty list")
    nodes: dict[str, DnNode] = {}
    for row in rows:
        _require(isinstance(row, dict), f"{root}: node entry must be an object")
        name = row.get("name")
        _require(isinstance(name, str) and name, f"{root}: node needs a name")
        _require(name not in nodes, f"{root}: duplicate node {name!r}")
        _require(name == root or name.endswith("." + root), f"{root}: node {name!r} is outside the tree")
        raw = row.get("raw_count")
        _require(isinstance(raw, int) and not isinstance(raw, bool) and raw >= 0, f"{name}: raw_count must be a non-negative integer")
        level = row.get("level")
        _require(isinstance(level, int) and not isinstance(level, bool), f"{name}: level must be an integer")
        nodes[name] = DnNode(name, level, raw,
                             _number(row.get("balanced_count"), f"{name}: balanced_count"),
                             _number(row.get("distilled_value"), f"{name}: distilled_value"))
    _require(root in nodes, f"{root}: root node missing")
    _require(nodes[root].level == 1, f"{root}: root must have level 1")
    for name, node in nodes.items():
        if name == root:
            continue
        parent = nodes.get(name.split(".", 1)[1])
        _require(parent is not None, f"{name}: parent node missing")
        _require(node.level == parent.level + 1, f"{name}: level must be one more than its parent's")
        parent.children[name] = node
    return DnTree(nodes[root], weight)
