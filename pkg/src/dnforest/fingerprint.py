"""Domain-name trees and forests built from per-class feature sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

from .domain import DomainFeatureSet
from .errors import EmptyFeatureSet


class DnNode:
    __slots__ = ("name", "level", "raw_count", "balanced_count", "distilled_value", "children")

    def __init__(self, name: str, level: int, raw_count: int = 0,
                 balanced_count: float | None = None, distilled_value: float | None = None):
        self.name = name
        self.level = level
        self.raw_count = raw_count
        self.balanced_count = float(raw_count) if balanced_count is None else balanced_count
        self.distilled_value = float(raw_count) if distilled_value is None else distilled_value
        self.children: dict[str, DnNode] = {}

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def structural(self) -> bool:
        """Inserted only to connect observed descendants to the root."""
        return self.raw_count == 0

    def walk(self) -> Iterator["DnNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children.values())

    def copy(self) -> "DnNode":
        clone = DnNode(self.name, self.level, self.raw_count, self.balanced_count, self.distilled_value)
        for key, child in self.children.items():
            clone.children[key] = child.copy()
        return clone

    def __repr__(self):
        return (f"DnNode({self.name!r}, level={self.level}, raw={self.raw_count}, "
                f"balanced={self.balanced_count:.6g}, distilled={self.distilled_value:.6g}, "
                f"children={len(self.children)})")


class DnTree:
    """Tree of names under one registrable root; edges join direct subdomains."""

    __slots__ = ("root", "weight", "_index")

    def __init__(self, root: DnNode, weight: float = 1.0):
        self.root = root
        self.weight = weight
        self._index: dict[str, DnNode] | None = None

    @property
    def name(self) -> str:
        return self.root.name

    @property
    def index(self) -> dict[str, DnNode]:
        if self._index is None:
            self._index = {n.name: n for n in self.root.walk()}
        return self._index

    @property
    def node_count(self) -> int:
        return len(self.index)

    def nodes(self) -> Iterator[DnNode]:
        return self.root.walk()

    def leaves(self) -> list[DnNode]:
        return [n for n in self.root.walk() if n.is_leaf]

    def get(self, name: str) -> DnNode | None:
        return self.index.get(name)

    def copy(self) -> "DnTree":
        return DnTree(self.root.copy(), self.weight)

    def insert(self, name: str, raw_count: int) -> DnNode:
        """Add ``name`` (a subdomain of the root), creating missing parents with count 0."""
        root = self.root
        if name == root.name:
            root.raw_count += raw_count
            root.balanced_count = root.distilled_value = float(root.raw_count)
            return root
        suffix = "." + root.name
        if not name.endswith(suffix):
            raise ValueError(f"{name!r} is not under root {root.name!r}")
        extra = name[: -len(suffix)].split(".")
        node = root
        for depth in range(len(extra) - 1, -1, -1):
            child_name = ".".join(extra[depth:]) + suffix
            child = node.children.get(child_name)
            if child is None:
                child = DnNode(child_name, node.level + 1)
                node.children[child_name] = child
            node = child
        node.raw_count += raw_count
        node.balanced_count = node.distilled_value = float(node.raw_count)
        self._index = None
        return node

    def __repr__(self):
        return f"DnTree({self.name!r}, nodes={self.node_count}, weight={self.weight:.6g})"


@dataclass
class DnForest:
    class_label: str
    trees: dict[str, DnTree] = field(default_factory=dict)

    @property
    def total_nodes(self) -> int:
        return sum(t.node_count for t in self.trees.values())

    def nodes(self) -> Iterator[DnNode]:
        for tree in self.trees.values():
            yield from tree.nodes()

    def copy(self) -> "DnForest":
        return DnForest(self.class_label, {k: t.copy() for k, t in self.trees.items()})

    def to_features(self) -> DomainFeatureSet:
        """Recover the raw counts this forest was built from."""
        fs = DomainFeatureSet(self.class_label)
        for root, tree in self.trees.items():
            for node in tree.nodes():
                if node.raw_count > 0:
                    fs.entries[node.name] = node.raw_count
                    fs.roots[node.name] = root
            fs.total_events += tree.root.raw_count
        return fs


def build_forest(features: DomainFeatureSet) -> DnForest:
    """One tree per registrable root; every feature name becomes one node."""
    if not features.entries:
        raise EmptyFeatureSet(f"no domain features for class {features.class_label!r}")
    forest = DnForest(features.class_label)
    # shallow names first so parents exist before children (insert repairs gaps anyway)
    for name in sorted(features.entries, key=lambda n: (n.count("."), n)):
        root = features.root_of(name)
        tree = forest.trees.get(root)
        if tree is None:
            tree = forest.trees[root] = DnTree(DnNode(root, 1))
        tree.insert(name, features.entries[name])
    forest.trees = dict(sorted(forest.trees.items()))
    return forest


def effective_count(node: DnNode) -> float:
    """Leaf: its raw count.  Internal: sum over children (own count ignored)."""
    if not node.children:
        return node.raw_count
    return sum(effective_count(c) for c in node.children.values())


def effective_counts(tree: DnTree) -> dict[str, float]:
    """``effective_count`` for every node of ``tree`` in one post-order pass."""
    out: dict[str, float] = {}
    order = list(tree.nodes())
    for node in reversed(order):  # children are visited after parents in walk()
        if node.children:
            out[node.name] = sum(out[c] for c in node.children)
        else:
            out[node.name] = node.raw_count
    return out


@dataclass(frozen=True)
class DecisionPath:
    nodes: tuple[tuple[DnNode, float], ...]

    @property
    def length(self) -> int:
        return len(self.nodes)

    @property
    def leaf(self) -> DnNode:
        return self.nodes[-1][0]

    @property
    def counts(self) -> tuple[float, ...]:
        return tuple(f for _, f in self.nodes)


def decision_paths(tree: DnTree) -> list[DecisionPath]:
    """Root-to-leaf paths, one per childless node, ordered by leaf name."""
    f = effective_counts(tree)
    paths = []
    stack: list[tuple[DnNode, tuple]] = [(tree.root, ())]
    while stack:
        node, prefix = stack.pop()
        here = prefix + ((node, f[node.name]),)
        if not node.children:
            paths.append(DecisionPath(here))
        else:
            stack.extend((c, here) for c in node.children.values())
    paths.sort(key=lambda p: p.leaf.name)
    return paths
