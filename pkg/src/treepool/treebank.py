"""Penn-style bracketed constituency trees and their adjacency-matrix view."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

DEFAULT_MAX_NODES = 256
OOV = "__OOV__"


class TreeParseError(ValueError):
    """``offset`` is 1-based and counted in UTF-8 bytes; end of input is len+1."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class TreeSizeError(ValueError):
    pass


@dataclass
class Node:
    id: int
    label: str
    parent: int | None
    children: list[int] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class ConstituencyTree:
    """Ordered labelled tree; node ids follow depth-first pre-order from the root."""

    nodes: list[Node]
    root: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def labels(self) -> list[str]:
        return [n.label for n in self.nodes]

    def leaves(self) -> list[int]:
        return [n.id for n in self.nodes if n.is_leaf]

    def tokens(self) -> list[str]:
        return [self.nodes[i].label for i in self.leaves()]

    def is_preterminal(self, i: int) -> bool:
        ch = self.nodes[i].children
        return len(ch) > 0 and all(self.nodes[c].is_leaf for c in ch)

    def descendants(self, i: int) -> list[int]:
        out = []
        stack = [i]
        while stack:
            j = stack.pop()
            out.append(j)
            stack.extend(reversed(self.nodes[j].children))
        return sorted(out)

    def subtree(self, i: int) -> "ConstituencyTree":
        return induced_tree(self, self.descendants(i))

    def validate(self) -> None:
        roots = [n.id for n in self.nodes if n.parent is None]
        if len(roots) != 1 or roots[0] != self.root:
            raise ValueError(f"expected exactly one root, found {roots}")
        for n in self.nodes:
            for c in n.children:
                if self.nodes[c].parent != n.id:
                    raise ValueError(f"child {c} of {n.id} points to parent {self.nodes[c].parent}")
            if n.parent is not None and n.id not in self.nodes[n.parent].children:
                raise ValueError(f"node {n.id} missing from its parent's children")
            if not n.label:
                raise ValueError(f"node {n.id} has an empty label")
        if len(self.descendants(self.root)) != self.n_nodes:
            raise ValueError("not every node is reachable from the root")

    def __str__(self) -> str:
        return render_bracketed(self)


def _tokenize(text: str) -> Iterator[tuple[str, int]]:
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            yield ch, i
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            yield text[i:j], i
            i = j


def parse_bracketed(text: str, max_nodes: int | None = DEFAULT_MAX_NODES) -> ConstituencyTree:
    """Parse ``(S (NP (PRP it)) (VP (VBZ works)))`` into a tree.

    A bare word becomes a leaf; ``(X)`` is a childless node labelled X.
    """
    def err(message: str, pos: int) -> TreeParseError:
        return TreeParseError(message, len(text[:pos].encode("utf-8")) + 1)

    nodes: list[Node] = []
    stack: list[int] = []
    expect_label = False
    closed_root = False
    for tok, pos in _tokenize(text):
        if closed_root:
            raise err("unbalanced ')'" if tok == ")" else "multiple roots", pos)
        if tok == "(":
            if expect_label:
                raise err("empty label", pos)
            expect_label = True
            open_pos = pos
        elif tok == ")":
            if expect_label:
                raise err("empty label", open_pos)
            if not stack:
                raise err("unbalanced ')'", pos)
            stack.pop()
            if not stack:
                closed_root = True
        else:
            parent = stack[-1] if stack else None
            if parent is None and not expect_label:
                raise err("token outside brackets", pos)
            if parent is None and nodes:
                raise err("multiple roots", pos)
            node = Node(len(nodes), tok, parent)
            nodes.append(node)
            if parent is not None:
                nodes[parent].children.append(node.id)
            if expect_label:
                stack.append(node.id)
                expect_label = False
        if max_nodes is not None and len(nodes) > max_nodes:
            raise TreeSizeError(f"tree exceeds the {max_nodes}-node cap")
    if expect_label:
        raise err("empty label", len(text))
    if stack:
        raise err("unbalanced '('", len(text))
    if not nodes:
        raise err("empty input", 0)
    tree = ConstituencyTree(nodes, 0)
    tree.validate()
    return tree


def render_bracketed(tree: ConstituencyTree, node: int | None = None) -> str:
    """Canonical single-space form; a lone root renders as ``(X)``."""
    root = tree.root if node is None else node
    if tree.nodes[root].is_leaf:
        return f"({tree.nodes[root].label})"
    parts: list[str] = []

    def emit(i: int) -> None:
        n = tree.nodes[i]
        if n.is_leaf:
            parts.append(n.label)
            return
        parts.append("(" + n.label)
        for c in n.children:
            parts.append(" ")
            emit(c)
        parts.append(")")

    emit(root)
    return "".join(parts)


def build_tree(label: str, children: Iterable["ConstituencyTree | str"] = ()) -> ConstituencyTree:
    """Assemble a tree from a root label and child trees (strings become leaves)."""
    nodes = [Node(0, label, None)]
    for ch in children:
        sub = ConstituencyTree([Node(0, ch, None)]) if isinstance(ch, str) else ch
        offset = len(nodes)
        nodes[0].children.append(offset)
        for n in sub.nodes:
            parent = 0 if n.parent is None else n.parent + offset
            nodes.append(Node(n.id + offset, n.label, parent, [c + offset for c in n.children]))
    return ConstituencyTree(nodes, 0)


def induced_tree(tree: ConstituencyTree, node_set: Iterable[int]) -> ConstituencyTree:
    """Tree induced by a connected node set, re-indexed in pre-order.

    Raises ValueError if the set is empty or not connected.
    """
    keep = set(node_set)
    if not keep:
        raise ValueError("empty node set")
    tops = [i for i in keep if tree.nodes[i].parent not in keep]
    if len(tops) != 1:
        raise ValueError(f"node set is not connected ({len(tops)} components)")
    nodes: list[Node] = []

    def visit(i: int, parent: int | None) -> None:
        nid = len(nodes)
        nodes.append(Node(nid, tree.nodes[i].label, parent))
        if parent is not None:
            nodes[parent].children.append(nid)
        for c in tree.nodes[i].children:
            if c in keep:
                visit(c, nid)

    visit(tops[0], None)
    return ConstituencyTree(nodes, 0)


def tree_depth(tree: ConstituencyTree) -> int:
    depth = {tree.root: 1}
    for n in tree.nodes:  # pre-order: parents come first
        if n.parent is not None:
            depth[n.id] = depth[n.parent] + 1
    return max(depth.values())


# ---------------------------------------------------------------------------
# vocabulary and graph view


@dataclass
class Vocabulary:
    """Two label namespaces (tags, tokens) mapped into one index space.

    Index 0 is the tag OOV bucket, index 1 the token OOV bucket.
    """

    tags: dict[str, int]
    tokens: dict[str, int]
    lowercase_tokens: bool = False

    @classmethod
    def build(cls, trees: Iterable[ConstituencyTree], lowercase_tokens: bool = False,
              min_count: int = 1) -> "Vocabulary":
        tag_counts: Counter = Counter()
        tok_counts: Counter = Counter()
        for t in trees:
            for n in t.nodes:
                if n.is_leaf and n.id != t.root:
                    tok_counts[n.label.lower() if lowercase_tokens else n.label] += 1
                else:
                    tag_counts[n.label] += 1
        tags = {OOV: 0}
        tokens = {OOV: 1}
        nxt = 2
        for lab in sorted(k for k, v in tag_counts.items() if v >= min_count):
            tags[lab] = nxt
            nxt += 1
        for lab in sorted(k for k, v in tok_counts.items() if v >= min_count):
            tokens[lab] = nxt
            nxt += 1
        return cls(tags, tokens, lowercase_tokens)

    def __len__(self) -> int:
        return len(self.tags) + len(self.tokens)

    def index(self, label: str, is_token: bool) -> int:
        if is_token:
            key = label.lower() if self.lowercase_tokens else label
            return self.tokens.get(key, self.tokens[OOV])
        return self.tags.get(label, self.tags[OOV])

    def to_json(self) -> dict:
        return {"tags": self.tags, "tokens": self.tokens, "lowercase_tokens": self.lowercase_tokens}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(dict(obj["tags"]), dict(obj["tokens"]), bool(obj.get("lowercase_tokens", False)))

    def digest(self) -> str:
        import hashlib

        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TreeGraph:
    a_fwd: np.ndarray
    a_bwd: np.ndarray
    d_fwd: np.ndarray
    d_bwd: np.ndarray
    leaf_mask: np.ndarray
    feature_ids: np.ndarray

    @property
    def n(self) -> int:
        return self.a_fwd.shape[0]

    @property
    def a_sym(self) -> np.ndarray:
        return self.a_fwd + self.a_bwd

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]],
                   feature_ids: np.ndarray | None = None) -> "TreeGraph":
        a = np.zeros((n, n))
        for p, c in edges:
            a[p, c] = 1.0
        d_fwd = a.sum(axis=1)
        return cls(a, a.T.copy(), d_fwd, a.T.sum(axis=1), (d_fwd == 0).astype(float),
                   np.zeros(n, dtype=np.int64) if feature_ids is None else feature_ids)


def to_graph(tree: ConstituencyTree, vocab: Vocabulary | None = None) -> TreeGraph:
    n = tree.n_nodes
    edges = [(node.id, c) for node in tree.nodes for c in node.children]
    if vocab is None:
        feats = np.zeros(n, dtype=np.int64)
    else:
        feats = np.array(
            [vocab.index(nd.label, nd.is_leaf and nd.id != tree.root) for nd in tree.nodes],
            dtype=np.int64,
        )
    return TreeGraph.from_edges(n, edges, feats)


# ---------------------------------------------------------------------------
# dataset files


@dataclass
class Record:
    id: str
    label: str
    tree: ConstituencyTree


def read_jsonl(path: str | Path, max_nodes: int | None = DEFAULT_MAX_NODES) -> list[Record]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                tree = parse_bracketed(obj["tree"], max_nodes=max_nodes)
            except (TreeParseError, TreeSizeError) as exc:
                raise ValueError(f"{path}:{lineno} ({obj.get('id')}): {exc}") from exc
            out.append(Record(str(obj["id"]), str(obj["label"]), tree))
    return out


def write_jsonl(path: str | Path, records: Iterable[Record]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "label": r.label, "tree": render_bracketed(r.tree)},
                                ensure_ascii=False) + "\n")
