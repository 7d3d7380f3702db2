"""Seeded verification suites shared by the CLI, the tests and the scripts."""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numcore as nc
from .constraints import (ConstraintSet, contiguity, master_equivalence, min_intensity, overlap,
                          sst_constraint, st_constraint)
from .kernels import KernelConfig, KernelKind, fragment_counts, raw_kernel
from .model import ModelConfig, forward, gcn_layer, init_params, normalized_adjacency, pool, total_loss
from .treebank import ConstituencyTree, Node, to_graph

INTERNAL_LABELS = ("A", "B", "C")
LEAF_LABELS = ("a", "b")


def random_tree(rng: np.random.Generator, max_nodes: int, min_nodes: int = 1,
                internal: tuple[str, ...] = INTERNAL_LABELS, leaves: tuple[str, ...] = LEAF_LABELS
                ) -> ConstituencyTree:
    """Random ordered tree; leaves get lowercase labels, internal nodes uppercase.

    A small label alphabet makes shared fragments between trees common.
    """
    target = int(rng.integers(min_nodes, max_nodes + 1))
    nodes = [Node(0, "", None)]
    frontier = [0]
    while len(nodes) < target and frontier:
        parent = frontier[int(rng.integers(len(frontier)))]
        nid = len(nodes)
        nodes.append(Node(nid, "", parent))
        nodes[parent].children.append(nid)
        frontier.append(nid)
        if len(nodes[parent].children) >= 3:
            frontier.remove(parent)
    # renumber in pre-order so ids follow the usual convention
    order: list[int] = []
    stack = [0]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(nodes[i].children))
    new_id = {old: new for new, old in enumerate(order)}
    out = []
    for old in order:
        n = nodes[old]
        labels = leaves if not n.children else internal
        out.append(Node(new_id[old], labels[int(rng.integers(len(labels)))],
                        None if n.parent is None else new_id[n.parent], [new_id[c] for c in n.children]))
    tree = ConstituencyTree(out, 0)
    tree.validate()
    return tree


def random_trees(n: int, max_nodes: int, seed: int = 0, min_nodes: int = 1) -> list[ConstituencyTree]:
    rng = np.random.default_rng(seed)
    return [random_tree(rng, max_nodes, min_nodes) for _ in range(n)]


# ---------------------------------------------------------------------------
# kernel / enumeration equivalence


@dataclass
class KernelSuiteReport:
    n_trees: int = 0
    n_pairs: int = 0
    checked: dict[str, int] = field(default_factory=dict)
    mismatches: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.mismatches and self.n_pairs > 0

    def to_json(self) -> dict:
        return {"n_trees": self.n_trees, "n_pairs": self.n_pairs, "checked": self.checked,
                "mismatches": self.mismatches[:20], "seconds": self.seconds, "passed": self.passed}


def kernel_oracle_suite(n_trees: int = 200, max_nodes: int = 12, seed: int = 0, partners: int | None = None,
                        kinds: tuple[KernelKind, ...] = tuple(KernelKind)) -> KernelSuiteReport:
    """Unit-decay kernels against brute-force common-fragment counts.

    Every tree is paired with itself and with the next ``partners`` trees
    (all later trees when None).
    """
    t0 = time.perf_counter()
    trees = random_trees(n_trees, max_nodes, seed)
    rep = KernelSuiteReport(n_trees=len(trees))
    for kind in kinds:
        cfg = KernelConfig(kind, 1.0, 1.0, normalized=False)
        counts = [fragment_counts(t, kind, max_nodes) for t in trees]
        for i, tx in enumerate(trees):
            span = len(trees) - i if partners is None else min(partners + 1, len(trees))
            for d in range(span):
                j = (i + d) % len(trees)
                tz = trees[j]
                expected = sum(v * counts[j][f] for f, v in counts[i].items() if f in counts[j])
                got = raw_kernel(tx, tz, cfg)
                rep.checked[kind.value] = rep.checked.get(kind.value, 0) + 1
                if got != expected:
                    rep.mismatches.append({"kind": kind.value, "x": str(tx), "z": str(tz),
                                           "kernel": got, "enumeration": expected})
    rep.n_pairs = sum(rep.checked.values())
    rep.seconds = time.perf_counter() - t0
    return rep


def constraint_oracle_suite(n_trees: int = 50, max_nodes: int = 8, seed: int = 0):
    return master_equivalence(random_trees(n_trees, max_nodes, seed), max_nodes=max_nodes)


# ---------------------------------------------------------------------------
# gradient registry

GradCase = Callable[[np.random.Generator], nc.GradCheckReport]


def _tree_and_logits(rng: np.random.Generator, k: int = 3):
    tree = random_tree(rng, 10, min_nodes=5)
    graph = to_graph(tree)
    return graph, rng.uniform(-2, 2, size=(graph.n, k))


def _constraint_case(fn) -> GradCase:
    def case(rng: np.random.Generator) -> nc.GradCheckReport:
        graph, x = _tree_and_logits(rng)
        return nc.grad_check(lambda t: fn(nc.sigmoid(t), graph).value, x)
    return case


def _gcn_case(rng: np.random.Generator) -> nc.GradCheckReport:
    graph, _ = _tree_and_logits(rng)
    h = rng.uniform(-2, 2, size=(graph.n, 4))
    w = rng.uniform(-2, 2, size=(4, 3))
    r = rng.uniform(-1, 1, size=(graph.n, 3))
    adj = normalized_adjacency(graph.a_sym)
    return nc.grad_check(lambda th, tw: nc.sum(gcn_layer(th, adj, tw) * r), h, w)


def _pool_case(activation: str) -> GradCase:
    def case(rng: np.random.Generator) -> nc.GradCheckReport:
        graph, _ = _tree_and_logits(rng)
        h = rng.uniform(-2, 2, size=(graph.n, 4))
        w = rng.uniform(-2, 2, size=(4, 3))
        r1 = rng.uniform(-1, 1, size=(3, 4))
        r2 = rng.uniform(-1, 1, size=(3, 3))

        def f(th, tw):
            res = pool(th, graph.a_sym, tw, activation, 3)
            return nc.sum(res.h * r1) + nc.sum(res.adj * r2)
        return nc.grad_check(f, h, w)
    return case


def _ce_case(rng: np.random.Generator) -> nc.GradCheckReport:
    logits = rng.uniform(-2, 2, size=(1, 4))
    label = int(rng.integers(4))
    return nc.grad_check(lambda t: nc.cross_entropy(t, label), logits)


def _full_loss_case(rng: np.random.Generator) -> nc.GradCheckReport:
    tree = random_tree(rng, 10, min_nodes=5)
    cset = ConstraintSet(kind=KernelKind.SSTK, delta=0.05, alpha=0.9)
    cfg = ModelConfig(vocab_size=6, embed_dim=3, hidden_dim=3, gcn_layers_per_block=(1, 1), pool_ks=(3, 1),
                      mlp_hidden=3, n_classes=2, constraint_set=cset, seed=int(rng.integers(1 << 30)),
                      pool_init_scale=3.0)
    graph = to_graph(tree)
    graph.feature_ids = rng.integers(0, cfg.vocab_size, size=graph.n)
    # a generic point: zero biases on a dead ReLU layer sit exactly on a kink
    params = {k: v + rng.uniform(-0.5, 0.5, size=v.shape) for k, v in init_params(cfg).items()}
    names = list(params)
    lambdas = {(0, c): float(rng.uniform(0.1, 1.0)) for c in cset.names}
    label = int(rng.integers(2))

    def f(*ts):
        trace = forward(graph, cfg, dict(zip(names, ts)))
        return total_loss(trace, label, cfg, lambdas)[0]
    return nc.grad_check(f, *(params[n] for n in names))


GRADIENT_REGISTRY: dict[str, GradCase] = {
    "contiguity": _constraint_case(lambda p, g: contiguity(p, g)),
    "st": _constraint_case(st_constraint),
    "sst": _constraint_case(sst_constraint),
    "overlap": _constraint_case(lambda p, g: overlap(p, 0.05)),
    "intensity": _constraint_case(lambda p, g: min_intensity(p, 0.9)),
    "gcn_layer": _gcn_case,
    "pool_sigmoid": _pool_case("sigmoid"),
    "pool_softmax": _pool_case("softmax"),
    "cross_entropy": _ce_case,
    "full_loss": _full_loss_case,
}


@dataclass
class GradSuiteReport:
    results: dict[str, list[float]] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return bool(self.results) and not self.failures

    def to_json(self) -> dict:
        return {"tol": self.tol, "passed": self.passed, "failures": self.failures[:20],
                "max_rel_error": {k: max(v) for k, v in self.results.items()}}


def gradient_suite(n_seeds: int = 20, tol: float = 1e-4, names: list[str] | None = None) -> GradSuiteReport:
    rep = GradSuiteReport(tol=tol)
    for name in names or list(GRADIENT_REGISTRY):
        case = GRADIENT_REGISTRY[name]
        for seed in range(n_seeds):
            r = case(np.random.default_rng([seed, zlib.crc32(name.encode())]))
            rep.results.setdefault(name, []).append(r.max_rel_error)
            if not r.max_rel_error < tol:
                rep.failures.append({"function": name, "seed": seed, "max_rel_error": r.max_rel_error,
                                     "diagnostics": r.diagnostics})
    return rep
