import json

import pytest

from dnforest.distill import undistilled_view
from dnforest.errors import IoFailure, SchemaViolation, UnsupportedVersion
from dnforest.store import dumps, load_fingerprints, loads, save_fingerprints


def _equal(a, b):
    assert a.class_labels == b.class_labels
    assert (a.stage, a.variant, a.level_cap, a.suffix_digest) == (b.stage, b.variant, b.level_cap, b.suffix_digest)
    assert a.params == b.params and a.calibration == b.calibration and a.metadata == b.metadata
    for label in a.class_labels:
        fa, fb = a.forests[label], b.forests[label]
        assert list(fa.trees) == list(fb.trees)
        for root in fa.trees:
            ta, tb = fa.trees[root], fb.trees[root]
            assert ta.weight == tb.weight
            na = {n.name: (n.level, n.raw_count, n.balanced_count, n.distilled_value, sorted(n.children)) for n in ta.nodes()}
            nb = {n.name: (n.level, n.raw_count, n.balanced_count, n.distilled_value, sorted(n.children)) for n in tb.nodes()}
            assert na == nb


@pytest.mark.parametrize("which", ["raw", "distilled", "undistilled"])
def test_round_trip_exact(tmp_path, which, small_fingerprints, small_distilled):
    fset = {"raw": small_fingerprints, "distilled": small_distilled,
            "undistilled": undistilled_view(small_fingerprints)}[which]
    p = tmp_path / "f.fp"
    save_fingerprints(fset, p)
    back = load_fingerprints(p)
    _equal(fset, back)
    save_fingerprints(back, tmp_path / "g.fp")
    assert p.read_bytes() == (tmp_path / "g.fp").read_bytes()


def test_deterministic_bytes(tmp_path, small_distilled):
    save_fingerprints(small_distilled, tmp_path / "a.fp")
    save_fingerprints(small_distilled.copy(), tmp_path / "b.fp")
    assert (tmp_path / "a.fp").read_bytes() == (tmp_path / "b.fp").read_bytes()


def test_awkward_floats_round_trip(small_distilled):
    fset = small_distilled.copy()
    node = next(iter(fset.forests["class00"].nodes()))
    node.distilled_value = 0.1 + 0.2
    node.balanced_count = 1e-310  # subnormal
    back = loads(dumps(fset))
    got = back.forests["class00"].trees[node.name.split(".", node.name.count(".") - 1)[-1]].get(node.name)
    assert got.distilled_value == 0.1 + 0.2 and got.balanced_count == 1e-310


def _doc(fset):
    return json.loads(dumps(fset))


def test_higher_version_rejected(small_distilled):
    doc = _doc(small_distilled)
    doc["format_version"] = 2
    with pytest.raises(UnsupportedVersion):
        loads(json.dumps(doc))


def test_duplicate_roots_rejected(small_distilled):
    doc = _doc(small_distilled)
    trees = doc["classes"][0]["trees"]
    trees.append(trees[0])
    with pytest.raises(SchemaViolation):
        loads(json.dumps(doc))


def test_truncated_rejected(tmp_path, small_distilled):
    text = dumps(small_distilled)
    p = tmp_path / "t.fp"
    p.write_text(text[: len(text) // 2], encoding="utf-8")
    with pytest.raises(SchemaViolation):
        load_fingerprints(p)


@pytest.mark.parametrize("corrupt", [
    lambda d: d["classes"][0]["trees"][0]["nodes"][0].update(level=3),
    lambda d: d["classes"][0]["trees"][0]["nodes"][0].update(raw_count=-1),
    lambda d: d["classes"][0]["trees"][0]["nodes"][0].update(distilled_value="x"),
    lambda d: d["classes"][0]["trees"][0]["nodes"].append({"name": "zz.elsewhere.org", "level": 2, "raw_count": 1,
                                                         "balanced_count": 1.0, "distilled_value": 1.0}),
    lambda d: d["classes"].append(d["classes"][0]),
    lambda d: d.update(stage="cooked"),
    lambda d: d.pop("classes"),
    lambda d: d.update(format="something-else"),
    lambda d: d["params"].update(sigma=0),
])
def test_corrupt_structure_rejected(small_distilled, corrupt):
    doc = _doc(small_distilled)
    corrupt(doc)
    with pytest.raises(SchemaViolation):
        loads(json.dumps(doc))


def test_orphan_node_rejected(small_distilled):
    doc = _doc(small_distilled)
    # find a tree with a level-3 node and drop its level-2 parent
    for cls in doc["classes"]:
        for tree in cls["trees"]:
            deep = [n for n in tree["nodes"] if n["level"] == 3]
            if deep:
                parent = deep[0]["name"].split(".", 1)[1]
                tree["nodes"] = [n for n in tree["nodes"] if n["name"] != parent]
                with pytest.raises(SchemaViolation):
                    loads(json.dumps(doc))
                return
    pytest.fail("fixture has no level-3 node")


def test_io_failures(tmp_path, small_distilled):
    with pytest.raises(IoFailure):
        load_fingerprints(tmp_path / "missing.fp")
    with pytest.raises(IoFailure):
        save_fingerprints(small_distilled, tmp_path / "no" / "such" / "dir.fp")
