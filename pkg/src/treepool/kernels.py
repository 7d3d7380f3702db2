"""Subtree (STK), subset-tree (SSTK) and partial-tree (PTK) kernels.

Fragments are identified by their canonical bracketed string: the induced tree
rendered with :func:`render_bracketed`, so a childless fragment root prints as
``(X)`` and every other childless node prints bare.  Node matching in all three
kernels is by label only, which is exactly what this string captures.
"""
from __future__ import annotations

import enum
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .treebank import ConstituencyTree, induced_tree, parse_bracketed, render_bracketed

PTK_ENUMERATION_CAP = 12
MAX_FRAGMENTS = 500_000


class KernelKind(str, enum.Enum):
    STK = "stk"
    SSTK = "sstk"
    PTK = "ptk"

    @classmethod
    def parse(cls, value: "str | KernelKind") -> "KernelKind":
        return value if isinstance(value, cls) else cls(str(value).lower())


class EnumerationSizeError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    kind: KernelKind = KernelKind.SSTK
    decay_lambda: float = 0.4
    decay_mu: float = 0.4
    normalized: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind.parse(self.kind))
        if not 0 < self.decay_lambda <= 1:
            raise ValueError(f"decay_lambda must be in (0, 1], got {self.decay_lambda}")
        if not 0 < self.decay_mu <= 1:
            raise ValueError(f"decay_mu must be in (0, 1], got {self.decay_mu}")


@dataclass(frozen=True)
class Fragment:
    canonical: str
    kind: KernelKind

    @property
    def tree(self) -> ConstituencyTree:
        return parse_bracketed(self.canonical)

    @property
    def n_nodes(self) -> int:
        return self.tree.n_nodes


def canonical_form(tree: ConstituencyTree, node_set: Sequence[int] | None = None) -> str:
    """Canonical string of the fragment induced by ``node_set`` (whole tree if None)."""
    if node_set is None:
        return render_bracketed(tree)
    return render_bracketed(induced_tree(tree, node_set))


def display_form(tree: ConstituencyTree, node_set: Sequence[int]) -> str:
    """Like :func:`canonical_form` but truncated internal nodes print as ``(X)``."""
    keep = set(node_set)
    top = next(i for i in keep if tree.nodes[i].parent not in keep)

    def emit(i: int, is_root: bool) -> str:
        node = tree.nodes[i]
        kids = [c for c in node.children if c in keep]
        if not kids:
            return f"({node.label})" if (is_root or node.children) else node.label
        return "(" + node.label + " " + " ".join(emit(c, False) for c in kids) + ")"

    return emit(top, True)


# ---------------------------------------------------------------------------
# exhaustive enumeration (the correctness reference at unit decay)


def _inner(label: str, kids: Sequence[str]) -> str:
    return f"({label} {' '.join(kids)})" if kids else label


def _as_root(s: str) -> str:
    return s if s.startswith("(") else f"({s})"


def _rooted_strings(tree: ConstituencyTree, kind: KernelKind, limit: int) -> list[list[str]]:
    """For each node, every fragment rooted there in non-root rendering (with multiplicity)."""
    out: list[list[str]] = [[] for _ in tree.nodes]
    total = 0
    for i in reversed(range(tree.n_nodes)):  # children have larger pre-order ids
        node = tree.nodes[i]
        lab = node.label
        kids = node.children
        if kind is KernelKind.STK:
            if kids:
                full = [_full_string(tree, c) for c in kids]
                out[i] = [_inner(lab, full)]
        elif kind is KernelKind.SSTK:
            if kids:
                options = [[tree.nodes[c].label] + out[c] for c in kids]
                est = math.prod(len(o) for o in options)
                if total + est > limit:
                    raise EnumerationSizeError(f"more than {limit} fragments")
                out[i] = [_inner(lab, combo) for combo in itertools.product(*options)]
        else:
            # node alone, or any non-empty ordered child subset with each child partial
            options = [out[c] for c in kids]
            est = math.prod(1 + len(o) for o in options)
            if total + est > limit:
                raise EnumerationSizeError(f"more than {limit} fragments")
            frags = [lab]
            for r in range(1, len(kids) + 1):
                for subset in itertools.combinations(range(len(kids)), r):
                    for combo in itertools.product(*(options[k] for k in subset)):
                        frags.append(_inner(lab, combo))
            out[i] = frags
        total += len(out[i])
    return out


def _full_string(tree: ConstituencyTree, i: int) -> str:
    node = tree.nodes[i]
    return _inner(node.label, [_full_string(tree, c) for c in node.children])


def fragment_counts(tree: ConstituencyTree, kind: "KernelKind | str",
                    max_nodes: int | None = None, limit: int = MAX_FRAGMENTS) -> Counter:
    """Multiset of fragment occurrences (one per distinct rooted node set)."""
    kind = KernelKind.parse(kind)
    cap = PTK_ENUMERATION_CAP if max_nodes is None else max_nodes
    if kind is not KernelKind.STK and tree.n_nodes > cap:
        raise EnumerationSizeError(
            f"{kind.value} enumeration refused for {tree.n_nodes} nodes (cap {cap})"
        )
    counts: Counter = Counter()
    for frags in _rooted_strings(tree, kind, limit):
        counts.update(_as_root(s) for s in frags)
    return counts


def enumerate_fragments(tree: ConstituencyTree, kind: "KernelKind | str",
                        max_nodes: int | None = None) -> list[Fragment]:
    """All distinct fragments of ``tree`` under ``kind``, sorted by canonical form."""
    kind = KernelKind.parse(kind)
    return [Fragment(s, kind) for s in sorted(fragment_counts(tree, kind, max_nodes))]


def common_fragment_pairs(tx: ConstituencyTree, tz: ConstituencyTree, kind: "KernelKind | str",
                          max_nodes: int | None = None) -> int:
    cx = fragment_counts(tx, kind, max_nodes)
    cz = fragment_counts(tz, kind, max_nodes)
    if len(cz) < len(cx):
        cx, cz = cz, cx
    return sum(v * cz[k] for k, v in cx.items() if k in cz)


# ---------------------------------------------------------------------------
# kernel recursions


def _stk(tx: ConstituencyTree, tz: ConstituencyTree, lam: float) -> float:
    def table(t: ConstituencyTree) -> Counter:
        c: Counter = Counter()
        size = [1] * t.n_nodes
        for i in reversed(range(t.n_nodes)):
            kids = t.nodes[i].children
            size[i] += sum(size[k] for k in kids)
            if kids:
                c[(_full_string(t, i), size[i])] += 1
        return c

    a, b = table(tx), table(tz)
    return float(sum(v * b[k] * lam ** k[1] for k, v in a.items() if k in b))



def _sstk(tx: ConstituencyTree, tz: ConstituencyTree, lam: float) -> float:
    def productions(t: ConstituencyTree):
        return [
            (n.label, tuple(t.nodes[c].label for c in n.children)) if n.children else None
            for n in t.nodes
        ]

    px, pz = productions(tx), productions(tz)
    delta = np.zeros((tx.n_nodes, tz.n_nodes))
    total = 0.0
    for i in reversed(range(tx.n_nodes)):
        if px[i] is None:
            continue
        ci = tx.nodes[i].children
        for j in reversed(range(tz.n_nodes)):
            if px[i] != pz[j]:
                continue
            cj = tz.nodes[j].children
            v = lam
            for a, b in zip(ci, cj):
                v *= 1.0 + delta[a, b]
            delta[i, j] = v
            total += v
    return total


def _ptk(tx: ConstituencyTree, tz: ConstituencyTree, lam: float, mu: float) -> float:
    lx, lz = tx.labels(), tz.labels()
    delta = np.zeros((tx.n_nodes, tz.n_nodes))
    lam2 = lam * lam
    total = 0.0
    for i in reversed(range(tx.n_nodes)):
        ci = tx.nodes[i].children
        for j in reversed(range(tz.n_nodes)):
            if lx[i] != lz[j]:
                continue
            cj = tz.nodes[j].children
            # s[a, b]: weighted sum over aligned child subsequences ending at (a, b);
            # g is its gap-decayed 2-D prefix sum
            acc = 0.0
            if ci and cj:
                na, nb = len(ci), len(cj)
                g = np.zeros((na + 1, nb + 1))
                for a in range(1, na + 1):
                    for b in range(1, nb + 1):
                        d = delta[ci[a - 1], cj[b - 1]]
                        s = d * lam2 * (1.0 + g[a - 1, b - 1]) if d else 0.0
                        acc += s
                        g[a, b] = s + lam * g[a - 1, b] + lam * g[a, b - 1] - lam2 * g[a - 1, b - 1]
            v = mu * (lam2 + acc)
            delta[i, j] = v
            total += v
    return total


def raw_kernel(tx: ConstituencyTree, tz: ConstituencyTree, cfg: KernelConfig) -> float:
    if cfg.kind is KernelKind.STK:
        return _stk(tx, tz, cfg.decay_lambda)
    if cfg.kind is KernelKind.SSTK:
        return _sstk(tx, tz, cfg.decay_lambda)
    return _ptk(tx, tz, cfg.decay_lambda, cfg.decay_mu)


def kernel(tx: ConstituencyTree, tz: ConstituencyTree, cfg: KernelConfig = KernelConfig()) -> float:
    k = raw_kernel(tx, tz, cfg)
    if not cfg.normalized:
        return k
    kxx = raw_kernel(tx, tx, cfg)
    kzz = raw_kernel(tz, tz, cfg)
    if kxx <= 0 or kzz <= 0:
        return 0.0
    return k / math.sqrt(kxx * kzz)


def gram(trees: Sequence[ConstituencyTree], cfg: KernelConfig = KernelConfig(),
         others: Sequence[ConstituencyTree] | None = None) -> np.ndarray:
    """Kernel matrix over ``trees`` (or between ``trees`` and ``others``)."""
    if not trees:
        raise ValueError("gram needs at least one tree")
    raw = KernelConfig(cfg.kind, cfg.decay_lambda, cfg.decay_mu, normalized=False)
    self_x = [raw_kernel(t, t, raw) for t in trees]
    if others is None:
        n = len(trees)
        g = np.zeros((n, n))
        for i in range(n):
            g[i, i] = self_x[i]
            for j in range(i + 1, n):
                g[i, j] = g[j, i] = raw_kernel(trees[i], trees[j], raw)
        self_z = self_x
    else:
        g = np.array([[raw_kernel(a, b, raw) for b in others] for a in trees], dtype=float)
        self_z = [raw_kernel(t, t, raw) for t in others]
    if cfg.normalized:
        sx = np.sqrt(np.asarray(self_x))
        sz = np.sqrt(np.asarray(self_z))
        denom = np.outer(sx, sz)
        g = np.divide(g, denom, out=np.zeros_like(g), where=denom > 0)
    return g


# ---------------------------------------------------------------------------
# kernel perceptron (sanity classifier)


class KernelPerceptron:
    """Binary dual perceptron over a tree kernel.

    Labels are mapped to -1/+1 by sorted order of the two class names; a score
    of exactly zero predicts the first class.
    """

    def __init__(self, cfg: KernelConfig = KernelConfig(), epochs: int = 10, seed: int = 0):
        self.cfg = cfg
        self.epochs = epochs
        self.seed = seed
        self.classes: list[str] = []
        self.alpha: np.ndarray | None = None
        self.train_trees: list[ConstituencyTree] = []
        self.y: np.ndarray | None = None
        self.epochs_run = 0

    def fit(self, trees: Sequence[ConstituencyTree], labels: Sequence[str]) -> "KernelPerceptron":
        classes = sorted(set(labels))
        if len(classes) != 2:
            raise ValueError(f"kernel perceptron needs exactly two classes, got {classes}")
        self.classes = classes
        y = np.array([1.0 if lab == classes[1] else -1.0 for lab in labels])
        g = gram(list(trees), self.cfg)
        alpha = np.zeros(len(trees))
        rng = np.random.default_rng(self.seed)
        for epoch in range(self.epochs):
            mistakes = 0
            for i in rng.permutation(len(trees)):
                if y[i] * float((alpha * y) @ g[:, i]) <= 0:
                    alpha[i] += 1.0
                    mistakes += 1
            self.epochs_run = epoch + 1
            if mistakes == 0:
                break
        self.alpha, self.y, self.train_trees = alpha, y, list(trees)
        return self

    def decision_function(self, trees: Sequence[ConstituencyTree]) -> np.ndarray:
        if self.alpha is None:
            raise RuntimeError("fit() first")
        if not trees:
            return np.zeros(0)
        k = gram(self.train_trees, self.cfg, others=list(trees))
        return (self.alpha * self.y) @ k

    def predict(self, trees: Sequence[ConstituencyTree]) -> list[str]:
        scores = self.decision_function(trees)
        return [self.classes[1] if s > 0 else self.classes[0] for s in scores]
