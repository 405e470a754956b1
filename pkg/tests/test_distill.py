import math

import pytest

from dnforest.domain import DomainFeatureSet
from dnforest.distill import (
    DistillationParams,
    FingerprintSet,
    balance_all,
    build_fingerprints,
    distill,
    document_frequency,
    intra_balance,
    path_contribution,
    tfidf_distill,
    tree_weight,
    undistilled_view,
)
from dnforest.errors import ConfigError, NotBalanced, ZeroEffectiveCount
from dnforest.fingerprint import DecisionPath, DnNode, DnTree, build_forest

TOL = 1e-12


def _path(*counts):
    nodes = tuple((DnNode(f"n{i}.a.com", i + 1, int(c)), float(c)) for i, c in enumerate(counts))
    return DecisionPath(nodes)


def _fset(*classes):
    return build_fingerprints([DomainFeatureSet.from_counts(label, c) for label, c in classes])


def test_path_contribution_examples():
    assert path_contribution(_path(7)) == 1.0
    assert math.isclose(path_contribution(_path(5, 3)), math.log(5 / 3 + 1), rel_tol=TOL)
    assert abs(path_contribution(_path(5, 3)) - 0.9808) < 5e-5
    got = path_contribution(_path(8, 4, 2))
    assert math.isclose(got, math.log(3) ** 2, rel_tol=TOL)
    assert abs(got - 1.2069) < 5e-5
    sigma2 = path_contribution(_path(8, 4), DistillationParams(sigma=2.0))
    assert math.isclose(sigma2, math.log(4), rel_tol=TOL)
    with pytest.raises(ZeroEffectiveCount):
        path_contribution(_path(3, 0))


def test_tree_weight_examples():
    assert math.isclose(tree_weight(DnTree(DnNode("a.com", 1, 4))), math.log(2), rel_tol=TOL)
    # root f=5 (children 3 and 2): contributions ln(5/3+1) and ln(5/2+1)
    t = DnTree(DnNode("a.com", 1, 5))
    t.insert("x.a.com", 3)
    t.insert("y.a.com", 2)
    w1, w2 = math.log(5 / 3 + 1), math.log(5 / 2 + 1)
    expected = math.log(w1 + w2 + 1)
    assert math.isclose(tree_weight(t), expected, rel_tol=TOL)
    assert t.weight == tree_weight(t)
    # the two contributions quoted as 0.9808 and 1.2528 give W close to 1.1737;
    # at full precision ln(3.2336) is 1.17360, so the quoted last digit is rounding
    assert abs(w1 - 0.9808) < 5e-5 and abs(w2 - 1.2528) < 5e-5
    assert math.isclose(math.log(0.9808 + 1.2528 + 1), math.log(3.2336), rel_tol=TOL)
    assert abs(expected - 1.1737) < 2e-4


def test_tree_weight_structural_only():
    t = DnTree(DnNode("a.com", 1, 0))
    t.insert("x.a.com", 0)
    assert tree_weight(t) == 0.0


def test_intra_balance_examples():
    t = DnTree(DnNode("a.com", 1, 5))
    t.insert("x.a.com", 3)
    t.insert("y.a.com", 4)
    from dnforest.fingerprint import DnForest

    forest = DnForest("A", {"a.com": t})
    out = intra_balance(forest)
    W = math.log(math.log(7 / 3 + 1) + math.log(7 / 4 + 1) + 1)
    assert math.isclose(out.trees["a.com"].get("y.a.com").balanced_count, 4 * W, rel_tol=TOL)
    assert t.get("y.a.com").balanced_count == 4.0  # input untouched
    # the single-number example: raw 4 under W=1.1737
    assert abs(4 * 1.1737 - 4.6948) < 1e-12

    singles = build_forest(DomainFeatureSet.from_counts("B", {"p.com": 3, "q.net": 5}))
    for node in intra_balance(singles).nodes():
        assert math.isclose(node.balanced_count, math.log(2) * node.raw_count, rel_tol=TOL)


def test_structural_nodes_stay_zero():
    fs = DomainFeatureSet("A", {"s.m.a.com": 2}, {"s.m.a.com": "a.com"})
    out = distill(build_fingerprints([fs]))
    tree = out.forests["A"].trees["a.com"]
    assert tree.get("m.a.com").balanced_count == 0 and tree.get("m.a.com").distilled_value == 0


def test_document_frequency_skips_structural():
    fs = DomainFeatureSet("A", {"s.m.a.com": 2}, {"s.m.a.com": "a.com"})
    fset = build_fingerprints([fs, DomainFeatureSet.from_counts("B", {"m.a.com": 1})])
    df = document_frequency(fset.forests.values())
    assert df["m.a.com"] == 1 and df["s.m.a.com"] == 1 and "a.com" not in df or df["a.com"] == 1


def test_tfidf_substitution():
    # single class of 4 single-node trees; one of them has balanced count 2
    fset = balance_all(_fset(("A", {"a.com": 1, "b.com": 1, "c.com": 1, "d.com": 1})))
    fset.forests["A"].trees["a.com"].root.balanced_count = 2.0
    out = tfidf_distill(fset)
    assert math.isclose(out.forests["A"].trees["a.com"].root.distilled_value, (2 / 4) * (2 / 1) * 2, rel_tol=TOL)
    assert out.stage == "distilled" and fset.stage == "balanced"

    # a name shared by all 3 classes, each forest of size 3, balanced count 3
    classes = [(c, {"s.com": 1, f"{c}1.com": 1, f"{c}2.com": 1}) for c in "ABC"]
    bal = balance_all(_fset(*classes))
    for forest in bal.forests.values():
        forest.trees["s.com"].root.balanced_count = 3.0
    out = tfidf_distill(bal)
    for forest in out.forests.values():
        assert math.isclose(forest.trees["s.com"].root.distilled_value, 3.0, rel_tol=TOL)


def test_tfidf_requires_balanced():
    with pytest.raises(NotBalanced):
        tfidf_distill(_fset(("A", {"a.com": 1})))


def _oracle_distill(classes, sigma=1.0):
    """Independent re-derivation from plain dicts, no package tree code."""
    def parent(n):
        return n.split(".", 1)[1]

    def root_of(n):
        return ".".join(n.split(".")[-2:])

    per_class = {}
    for label, counts in classes:
        names = set(counts)
        for n in list(names):
            while n != root_of(n):
                n = parent(n)
                names.add(n)
        kids = {n: [m for m in names if m != root_of(m) and parent(m) == n] for n in names}

        def f(n):
            return counts.get(n, 0) if not kids[n] else sum(f(k) for k in kids[n])

        weights = {}
        for r in {root_of(n) for n in names}:
            total = 0.0
            stack = [(r, 1.0)]
            while stack:
                n, w = stack.pop()
                if not kids[n]:
                    if f(n) > 0:
                        total += w
                    continue
                for k in kids[n]:
                    if f(k) > 0:
                        stack.append((k, w * math.log(f(n) / f(k) + sigma)))
                    else:
                        stack.append((k, 0.0))
            weights[r] = math.log(total + 1)
        nbar = {n: weights[root_of(n)] * counts.get(n, 0) for n in names}
        per_class[label] = nbar
    df = {}
    for label, counts in classes:
        for n in counts:
            df[n] = df.get(n, 0) + 1
    out = {}
    for label, nbar in per_class.items():
        size = len(nbar)
        out[label] = {n: (v / size) * (v / df[n]) * v if v else 0.0 for n, v in nbar.items()}
    return out


def test_distill_matches_independent_oracle():
    classes = [
        ("A", {"a.com": 6, "x.a.com": 4, "y.x.a.com": 1, "z.x.a.com": 3, "w.a.com": 2, "s.net": 5}),
        ("B", {"s.net": 9, "b.org": 2, "cdn.b.org": 2, "a.com": 1}),
        ("C", {"c.io": 3, "m.c.io": 1, "n.c.io": 1, "o.c.io": 1, "s.net": 1}),
    ]
    got = distill(_fset(*classes), calibrate=False)
    want = _oracle_distill(classes)
    for label, values in want.items():
        for name, v in values.items():
            node = [n for n in got.forests[label].nodes() if n.name == name][0]
            assert math.isclose(node.distilled_value, v, rel_tol=1e-12, abs_tol=1e-300), (label, name)


def test_distill_records_calibration_and_keeps_raw():
    fset = _fset(("A", {"a.com": 2, "x.a.com": 2}), ("B", {"b.com": 1}))
    out = distill(fset)
    assert set(out.calibration) == {"A", "B"}
    for label, forest in out.forests.items():
        mass = sum(n.distilled_value for n in forest.nodes())
        assert math.isclose(out.calibration[label] * mass, forest.total_nodes, rel_tol=TOL)
    assert out.forests["A"].trees["a.com"].root.raw_count == 2
    assert fset.stage == "raw"


def test_undistilled_view():
    out = distill(_fset(("A", {"a.com": 2, "x.a.com": 2}), ("B", {"b.com": 1})))
    raw = undistilled_view(out)
    assert raw.variant == "undistilled" and raw.distilled
    assert all(n.distilled_value == n.raw_count for n in raw.forests["A"].nodes())


def test_sigma_validation():
    with pytest.raises(ConfigError):
        DistillationParams(sigma=0)
    with pytest.raises(ConfigError):
        DistillationParams(sigma=float("nan"))


def test_add_features_merges_counts():
    fset = FingerprintSet()
    fset.add_features(DomainFeatureSet.from_counts("A", {"a.com": 1}))
    fset.add_features(DomainFeatureSet.from_counts("A", {"a.com": 2, "x.a.com": 1}))
    assert fset.forests["A"].trees["a.com"].root.raw_count == 3
    assert fset.metadata["events"]["A"] == 3
