"""Synthetic constituency-tree corpus with a planted class pattern.

Sentences come from a small probabilistic grammar.  Every tree of the positive
class has the planted fragment grafted in as its main verb phrase (frontier
nodes of the fragment are expanded by the grammar); negative trees are drawn
from the same grammar with the planted lexical anchor removed, and are checked
fragment-by-fragment to be pattern free.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .kernels import KernelKind, fragment_counts
from .treebank import (ConstituencyTree, Record, build_tree, parse_bracketed, render_bracketed,
                       tree_depth, write_jsonl)

LEXICON: dict[str, list[str]] = {
    "DT": ["the", "a", "this", "every", "some"],
    "NN": ["law", "policy", "school", "student", "tax", "city", "government", "study", "market", "child"],
    "NNS": ["people", "students", "topics", "studies", "taxes", "parents", "cities", "results"],
    "JJ": ["new", "public", "strict", "young", "local", "high", "recent", "important"],
    "PRP": ["it", "they", "we", "he", "she"],
    "PRP$": ["their", "our", "its", "his"],
    "VBZ": ["is", "has", "shows", "needs", "makes", "suggests"],
    "VBD": ["was", "had", "showed", "made", "found", "helped"],
    "VB": ["be", "help", "reduce", "make", "support", "change"],
    "VBN": ["banned", "taught", "reduced", "allowed", "funded", "changed"],
    "MD": ["can", "could", "may", "might", "will", "would"],
    "IN": ["in", "of", "for", "with", "from", "about"],
    "RB": ["very", "often", "not", "also", "rarely"],
}


def _pick(rng: random.Random, seq):
    return seq[rng.randrange(len(seq))]


class Grammar:
    """Hand-written PCFG; ``depth`` bounds recursion through NP/VP/PP."""

    def __init__(self, rng: random.Random, max_depth: int, branching: float, modal_tokens: list[str]):
        self.rng = rng
        self.max_depth = max_depth
        self.branching = branching
        self.modals = modal_tokens

    def pre(self, tag: str, words: list[str] | None = None) -> ConstituencyTree:
        return build_tree(tag, [_pick(self.rng, words or LEXICON[tag])])

    def np_(self, depth: int) -> ConstituencyTree:
        r = self.rng.random()
        if depth >= self.max_depth - 2 or r < 0.2:
            return build_tree("NP", [self.pre(_pick(self.rng, ["PRP", "NNS"]))])
        if r < 0.45:
            return build_tree("NP", [self.pre("DT"), self.pre("NN")])
        if r < 0.65:
            return build_tree("NP", [self.pre("DT"), self.pre("JJ"), self.pre("NN")])
        if r < 0.8:
            return build_tree("NP", [self.pre("PRP$"), self.pre("NNS")])
        if depth < self.max_depth - 3 and self.rng.random() < self.branching:
            return build_tree("NP", [self.np_(depth + 1), self.pp(depth + 1)])
        return build_tree("NP", [self.pre("JJ"), self.pre("NNS")])

    def pp(self, depth: int) -> ConstituencyTree:
        return build_tree("PP", [self.pre("IN"), self.np_(depth + 1)])

    def adjp(self) -> ConstituencyTree:
        if self.rng.random() < 0.4:
            return build_tree("ADJP", [self.pre("RB"), self.pre("JJ")])
        return build_tree("ADJP", [self.pre("JJ")])

    def inner_vp(self, depth: int) -> ConstituencyTree:
        """Base-form VP (the complement of a modal)."""
        r = self.rng.random()
        if r < 0.35:
            return build_tree("VP", [self.pre("VB", ["be"]), self.adjp()])
        if r < 0.6 and depth < self.max_depth - 3:
            return build_tree("VP", [self.pre("VB", ["be"]), build_tree("VP", [self.pre("VBN")])])
        return build_tree("VP", [self.pre("VB"), self.np_(depth + 1)])

    def vp(self, depth: int, allow_modal: bool = True) -> ConstituencyTree:
        r = self.rng.random()
        if allow_modal and self.modals and r < 0.3 and depth < self.max_depth - 3:
            return build_tree("VP", [self.pre("MD", self.modals), self.inner_vp(depth + 1)])
        if r < 0.55:
            return build_tree("VP", [self.pre("VBZ"), self.np_(depth + 1)])
        if r < 0.75 and depth < self.max_depth - 3:
            return build_tree("VP", [self.pre("VBD"), self.np_(depth + 1), self.pp(depth + 1)])
        return build_tree("VP", [self.pre("VBZ"), self.adjp()])

    def expand(self, label: str, depth: int) -> ConstituencyTree:
        """Expand a frontier node of a planted fragment."""
        if label == "NP":
            return self.np_(depth)
        if label == "VP":
            return self.inner_vp(depth)
        if label == "PP":
            return self.pp(depth)
        if label == "ADJP":
            return self.adjp()
        if label in LEXICON:
            return self.pre(label)
        raise ValueError(f"no expansion rule for frontier label {label!r}")

    def sentence(self, vp: ConstituencyTree | None = None) -> ConstituencyTree:
        subj = self.np_(1)
        kids = [subj, vp if vp is not None else self.vp(1)]
        if self.rng.random() < 0.5:
            kids.append(build_tree(".", ["."]))
        return build_tree("S", kids)


def instantiate(pattern: ConstituencyTree, grammar: Grammar, depth: int = 1) -> ConstituencyTree:
    """Copy ``pattern``, expanding childless nonterminal nodes with the grammar.

    A childless node whose label is a lexicon tag or phrase label is a frontier;
    any other childless node is a literal token.
    """
    def build(i: int, d: int) -> ConstituencyTree:
        node = pattern.nodes[i]
        if not node.children:
            return grammar.expand(node.label, d)
        kids = []
        for c in node.children:
            cn = pattern.nodes[c]
            if not cn.children and not _is_category(cn.label):
                kids.append(cn.label)
            else:
                kids.append(build(c, d + 1))
        return build_tree(node.label, kids)

    return build(pattern.root, depth)


def _is_category(label: str) -> bool:
    return label in LEXICON or label in {"NP", "VP", "PP", "ADJP", "S"}


@dataclass
class SynthCorpusSpec:
    n_per_class: int = 500
    classes: tuple[str, str] = ("claim", "other")
    planted_pattern: str = "(VP (MD should) (VP))"
    anchor_tokens: tuple[str, ...] = ("should",)
    max_depth: int = 8
    branching: float = 0.3
    max_nodes: int = 64
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.anchor_tokens = tuple(self.anchor_tokens)
        if len(self.classes) < 2 or len(set(self.classes)) != len(self.classes):
            raise ValueError("need at least two distinct classes")
        if not 0.0 <= self.noise < 0.5:
            raise ValueError(f"noise must be in [0, 0.5), got {self.noise}")
        pattern = parse_bracketed(self.planted_pattern)
        if tree_depth(pattern) + 2 > self.max_depth:
            raise ValueError(
                f"planted pattern depth {tree_depth(pattern)} does not fit max_depth {self.max_depth}"
            )
        for tok in self.anchor_tokens:
            if tok not in pattern.labels():
                raise ValueError(f"anchor token {tok!r} is not part of the planted pattern")

    @property
    def pattern_tree(self) -> ConstituencyTree:
        return parse_bracketed(self.planted_pattern)

    def to_json(self) -> dict:
        d = asdict(self)
        d["classes"] = list(self.classes)
        d["anchor_tokens"] = list(self.anchor_tokens)
        return d


def contains_pattern(tree: ConstituencyTree, pattern: ConstituencyTree) -> bool:
    """True if ``pattern`` occurs in ``tree`` as an SST fragment, or any anchor token occurs.

    Uses SST enumeration on the smallest subtree that could host the pattern;
    the token check makes the test cheap on large trees.
    """
    target = render_bracketed(pattern)
    root_label = pattern.nodes[pattern.root].label
    for node in tree.nodes:
        if node.label != root_label or not node.children:
            continue
        sub = tree.subtree(node.id)
        counts = fragment_counts(sub, KernelKind.SSTK, max_nodes=sub.n_nodes)
        if target in counts:
            return True
    return False


def generate(spec: SynthCorpusSpec) -> list[Record]:
    """Deterministic in ``spec.seed``; positives are the first class."""
    rng = random.Random(spec.seed)
    pattern = spec.pattern_tree
    anchors = set(spec.anchor_tokens)
    neg_modals = [m for m in LEXICON["MD"] if m not in anchors]
    pos_class, neg_classes = spec.classes[0], spec.classes[1:]
    out: list[Record] = []
    attempts = 0
    for cls_idx, cls in enumerate(spec.classes):
        made = 0
        while made < spec.n_per_class:
            attempts += 1
            if attempts > 50 * spec.n_per_class * len(spec.classes):
                raise RuntimeError("generator could not satisfy the size cap; raise max_nodes")
            g = Grammar(rng, spec.max_depth, spec.branching, neg_modals)
            if cls == pos_class:
                tree = g.sentence(instantiate(pattern, g, depth=1))
            else:
                tree = g.sentence()
            if tree.n_nodes > spec.max_nodes or tree_depth(tree) > spec.max_depth + 2:
                continue
            if cls != pos_class and (anchors & set(tree.tokens()) or contains_pattern(tree, pattern)):
                continue
            label = cls
            if spec.noise and rng.random() < spec.noise:
                others = [c for c in spec.classes if c != cls]
                label = others[rng.randrange(len(others))]
            out.append(Record(f"{cls}-{made:05d}", label, tree))
            made += 1
    order = list(range(len(out)))
    rng.shuffle(order)
    return [out[i] for i in order]


def write_corpus(spec: SynthCorpusSpec, path: str | Path) -> list[Record]:
    records = generate(spec)
    write_jsonl(path, records)
    meta = Path(str(path) + ".spec.json")
    meta.write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True) + "\n")
    return records
