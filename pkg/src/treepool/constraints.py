"""Differentiable tree-structure regularizers on a pooling assignment matrix.

All five constraints take an ``n x k`` assignment tensor ``p`` and the directed
:class:`TreeGraph` of the input tree.  The tree constraints (contiguity, ST,
SST) are ratios of traces and are clamped at zero: a soft assignment can push
the ratio above one, which already counts as satisfied.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import numcore as nc
from .kernels import KernelKind
from .numcore import DENOM_FLOOR, Tensor
from .treebank import ConstituencyTree, TreeGraph, to_graph

# binary-column zero test used by the oracle comparisons
ZERO_TOL = 1e-9


class Constraint(str, enum.Enum):
    CONTIGUITY = "contiguity"
    ST = "st"
    SST = "sst"
    OVERLAP = "overlap"
    INTENSITY = "intensity"


class OracleKind(str, enum.Enum):
    CONNECTED = "connected"
    ST = "st"
    SST = "sst"


KERNEL_CONSTRAINTS: dict[KernelKind, tuple[Constraint, ...]] = {
    KernelKind.STK: (Constraint.CONTIGUITY, Constraint.ST, Constraint.OVERLAP, Constraint.INTENSITY),
    KernelKind.SSTK: (Constraint.CONTIGUITY, Constraint.SST, Constraint.OVERLAP, Constraint.INTENSITY),
    KernelKind.PTK: (Constraint.CONTIGUITY, Constraint.OVERLAP, Constraint.INTENSITY),
}

# tree constraints whose joint zero set must match each oracle
ORACLE_CONSTRAINTS: dict[OracleKind, tuple[Constraint, ...]] = {
    OracleKind.CONNECTED: (Constraint.CONTIGUITY,),
    OracleKind.ST: (Constraint.CONTIGUITY, Constraint.ST),
    OracleKind.SST: (Constraint.CONTIGUITY, Constraint.SST),
}


@dataclass
class ConstraintSet:
    kind: KernelKind = KernelKind.SSTK
    epsilon: float = 1e-4
    delta: float = 0.3
    alpha: float = 0.5
    enabled: tuple[Constraint, ...] | None = None

    def __post_init__(self):
        self.kind = KernelKind.parse(self.kind)
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be small and positive, got {self.epsilon}")
        if self.enabled is not None:
            self.enabled = tuple(Constraint(c) for c in self.enabled)

    @property
    def names(self) -> tuple[Constraint, ...]:
        return self.enabled if self.enabled is not None else KERNEL_CONSTRAINTS[self.kind]

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "alpha": self.alpha,
            "enabled": None if self.enabled is None else [c.value for c in self.enabled],
        }

    @classmethod
    def from_json(cls, obj: dict | None) -> "ConstraintSet | None":
        if obj is None:
            return None
        return cls(**obj)


class ConstraintValue(NamedTuple):
    value: Tensor
    degenerate: bool


@dataclass
class PoolingAssignment:
    p: Tensor
    activation: str
    graph: TreeGraph

    def __post_init__(self):
        if self.p.shape[0] != self.graph.n:
            raise nc.DimensionError(
                f"assignment has {self.p.shape[0]} rows but the graph has {self.graph.n} nodes"
            )


def _ratio_violation(num: Tensor, den: Tensor) -> ConstraintValue:
    if den.item() <= DENOM_FLOOR:
        return ConstraintValue(Tensor(0.0), True)
    return ConstraintValue(nc.relu(1.0 - num / (den + DENOM_FLOOR)), False)


def contiguity(p: Tensor, graph: TreeGraph, epsilon: float = 1e-4) -> ConstraintValue:
    """One minus pooled forward edges over pooled nodes-minus-one.

    The node count of column ``c`` is the number of entries with squared
    intensity at least ``epsilon``; the denominator is
    ``sum_c s_c * (1 - 1/N_c)`` with ``s_c`` the column self-intensity.
    """
    a = graph.a_fwd - np.diag(np.diag(graph.a_fwd))
    num = nc.quad_trace(p, a)
    counts = (p.data * p.data >= epsilon).sum(axis=0)
    weight = np.where(counts > 0, 1.0 - 1.0 / np.maximum(counts, 1), 0.0).reshape(1, -1)
    self_int = nc.sum(p * p, axis=0)
    den = nc.sum(self_int * weight)
    return _ratio_violation(num, den)


def st_constraint(p: Tensor, graph: TreeGraph) -> ConstraintValue:
    """Pooled nodes must bring all their children; a pooled leaf must bring its parent."""
    leaf = graph.leaf_mask
    m_num = graph.a_fwd + leaf[:, None] * graph.a_bwd
    m_den = np.diag(graph.d_fwd + leaf * graph.d_bwd)
    return _ratio_violation(nc.quad_trace(p, m_num), nc.quad_trace(p, m_den))


def sst_constraint(p: Tensor, graph: TreeGraph) -> ConstraintValue:
    """Production completeness restricted to non-leaf nodes."""
    keep = 1.0 - graph.leaf_mask
    a = keep[:, None] * graph.a_fwd * keep[None, :]
    d = a.sum(axis=1)
    return _ratio_violation(nc.quad_trace(p, a), nc.quad_trace(p, np.diag(d)))


def overlap(p: Tensor, delta: float = 0.3) -> ConstraintValue:
    """Frobenius norm of pairwise cluster co-intensities above ``delta``.

    Co-intensities are normalized by the total self-intensity of all clusters.
    """
    g = nc.gram(p)
    total = nc.sum(nc.diag(g))
    if total.item() <= DENOM_FLOOR:
        return ConstraintValue(Tensor(0.0), True)
    ratio = nc.offdiag(g) / (total + DENOM_FLOOR)
    return ConstraintValue(nc.frobenius(nc.relu(ratio - delta)), False)


def min_intensity(p: Tensor, alpha: float = 0.5) -> ConstraintValue:
    """Frobenius norm of each cluster's shortfall below ``alpha * n / k``."""
    n, k = p.shape
    self_int = nc.sum(p * p, axis=0)
    return ConstraintValue(nc.frobenius(nc.relu(alpha * n / k - self_int)), False)


def evaluate(p: Tensor, graph: TreeGraph, cset: ConstraintSet,
             names: Iterable[Constraint] | None = None) -> dict[Constraint, ConstraintValue]:
    out: dict[Constraint, ConstraintValue] = {}
    for name in (cset.names if names is None else names):
        name = Constraint(name)
        if name is Constraint.CONTIGUITY:
            out[name] = contiguity(p, graph, cset.epsilon)
        elif name is Constraint.ST:
            out[name] = st_constraint(p, graph)
        elif name is Constraint.SST:
            out[name] = sst_constraint(p, graph)
        elif name is Constraint.OVERLAP:
            out[name] = overlap(p, cset.delta)
        else:
            out[name] = min_intensity(p, cset.alpha)
    return out


def overlap_ratios(p: np.ndarray) -> np.ndarray:
    """Off-diagonal co-intensities over total self-intensity (plain numpy)."""
    g = p.T @ p
    tot = np.trace(g)
    r = (g - np.diag(np.diag(g))) / (tot + DENOM_FLOOR)
    return r


# ---------------------------------------------------------------------------
# combinatorial oracles


def _parents(graph: TreeGraph) -> np.ndarray:
    par = np.full(graph.n, -1, dtype=np.int64)
    src, dst = np.nonzero(graph.a_fwd)
    par[dst] = src
    return par


def binary_validity_oracle(graph: TreeGraph, node_set: Iterable[int], kind: OracleKind | str) -> bool:
    """Exact integer check that ``node_set`` is a valid fragment of the given kind.

    CONNECTED: the induced subgraph is connected (a single top node).
    ST: connected, top node internal, and every pooled node brings all its children.
    SST: connected, and every non-leaf child of a pooled non-leaf node is pooled.
    """
    kind = OracleKind(kind)
    s = set(int(i) for i in node_set)
    if not s:
        return False
    par = _parents(graph)
    children: list[list[int]] = [[] for _ in range(graph.n)]
    for c, p in enumerate(par):
        if p >= 0:
            children[p].append(c)
    tops = [i for i in s if par[i] < 0 or int(par[i]) not in s]
    if len(tops) != 1:
        return False
    if kind is OracleKind.CONNECTED:
        return True
    if kind is OracleKind.ST:
        if not children[tops[0]]:
            return False
        return all(c in s for i in s for c in children[i])
    return all(c in s for i in s if children[i] for c in children[i] if children[c])


@dataclass
class MasterReport:
    n_trees: int = 0
    n_subsets: int = 0
    checked: dict[str, int] = field(default_factory=dict)
    agree: dict[str, int] = field(default_factory=dict)
    excluded: dict[str, int] = field(default_factory=dict)
    disagreements: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.disagreements and all(self.checked.get(k, 0) == self.agree.get(k, 0)
                                              for k in self.checked)

    def to_json(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "n_subsets": self.n_subsets,
            "checked": self.checked,
            "agree": self.agree,
            "excluded": self.excluded,
            "disagreements": self.disagreements[:20],
            "passed": self.passed,
        }


def _excluded(kind: OracleKind, node_set: Sequence[int], graph: TreeGraph) -> bool:
    """Documented degenerate cases: singleton-leaf ST and leaf-only SST columns."""
    leaf = graph.leaf_mask
    if kind is OracleKind.ST:
        return len(node_set) == 1 and leaf[node_set[0]] == 1
    if kind is OracleKind.SST:
        return all(leaf[i] == 1 for i in node_set)
    return False


def master_equivalence(trees: Sequence[ConstituencyTree], max_nodes: int = 8,
                       epsilon: float = 1e-4) -> MasterReport:
    """Compare binary-column constraint zero sets with the oracles over all subsets."""
    report = MasterReport()
    cset = ConstraintSet(epsilon=epsilon)
    names = (Constraint.CONTIGUITY, Constraint.ST, Constraint.SST)
    for tree in trees:
        if tree.n_nodes > max_nodes:
            continue
        report.n_trees += 1
        graph = to_graph(tree)
        n = graph.n
        for r in range(1, n + 1):
            for subset in itertools.combinations(range(n), r):
                report.n_subsets += 1
                col = np.zeros((n, 1))
                col[list(subset), 0] = 1.0
                vals = evaluate(Tensor(col), graph, cset, names)
                for kind, needed in ORACLE_CONSTRAINTS.items():
                    key = kind.value
                    if _excluded(kind, subset, graph):
                        report.excluded[key] = report.excluded.get(key, 0) + 1
                        continue
                    report.checked[key] = report.checked.get(key, 0) + 1
                    soft_ok = all(vals[c].value.item() <= ZERO_TOL for c in needed)
                    exact_ok = binary_validity_oracle(graph, subset, kind)
                    if soft_ok == exact_ok:
                        report.agree[key] = report.agree.get(key, 0) + 1
                    else:
                        report.disagreements.append({
                            "tree": str(tree), "subset": list(subset), "kind": key,
                            "oracle": exact_ok,
                            "values": {c.value: vals[c].value.item() for c in needed},
                        })
    return report
