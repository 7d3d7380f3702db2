"""GCN + differentiable pooling classifier with tree-constrained pooling layers."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import numcore as nc
from .constraints import Constraint, ConstraintSet, evaluate
from .numcore import Tensor
from .treebank import TreeGraph

ACTIVATIONS = ("softmax", "sigmoid")


@dataclass
class ModelConfig:
    vocab_size: int = 2
    embed_dim: int = 32
    hidden_dim: int = 32
    gcn_layers_per_block: tuple[int, ...] = (2, 1)
    pool_ks: tuple[int, ...] = (8, 1)
    pooling_activation: str = "sigmoid"
    final_pooling_activation: str = "softmax"
    pool_init_scale: float = 1.0
    mlp_hidden: int = 32
    n_classes: int = 2
    constraint_set: ConstraintSet | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.gcn_layers_per_block, int):
            self.gcn_layers_per_block = (self.gcn_layers_per_block,) * len(self.pool_ks)
        self.gcn_layers_per_block = tuple(int(x) for x in self.gcn_layers_per_block)
        self.pool_ks = tuple(int(k) for k in self.pool_ks)
        if not self.pool_ks:
            raise ValueError("pool_ks must not be empty")
        if self.pool_ks[-1] != 1:
            self.pool_ks = self.pool_ks[:-1] + (1,)
        if len(self.gcn_layers_per_block) != len(self.pool_ks):
            raise ValueError("need one gcn layer count per pooling block")
        for name in ("vocab_size", "embed_dim", "hidden_dim", "mlp_hidden", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if any(k < 1 for k in self.pool_ks) or any(g < 0 for g in self.gcn_layers_per_block):
            raise ValueError("cluster counts must be >= 1 and layer counts >= 0")
        for act in (self.pooling_activation, self.final_pooling_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown pooling activation {act!r}")
        if isinstance(self.constraint_set, dict):
            self.constraint_set = ConstraintSet.from_json(self.constraint_set)

    @property
    def constrained_layers(self) -> tuple[int, ...]:
        """Pooling blocks that carry tree constraints (all but the final k=1 block)."""
        if self.constraint_set is None:
            return ()
        return tuple(range(len(self.pool_ks) - 1))

    def activation(self, block: int) -> str:
        return self.final_pooling_activation if block == len(self.pool_ks) - 1 else self.pooling_activation

    def to_json(self) -> dict:
        d = asdict(self)
        d["gcn_layers_per_block"] = list(self.gcn_layers_per_block)
        d["pool_ks"] = list(self.pool_ks)
        d["constraint_set"] = None if self.constraint_set is None else self.constraint_set.to_json()
        return d

    @classmethod
    def from_json(cls, obj: Mapping) -> "ModelConfig":
        obj = dict(obj)
        obj["constraint_set"] = ConstraintSet.from_json(obj.get("constraint_set"))
        return cls(**obj)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float = 1.0) -> np.ndarray:
    lim = scale * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Parameter arrays keyed by name; insertion order is the canonical order."""
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, np.ndarray] = {"embed": rng.uniform(-0.1, 0.1, size=(cfg.vocab_size, cfg.embed_dim))}
    dim = cfg.embed_dim
    for b, (n_gcn, k) in enumerate(zip(cfg.gcn_layers_per_block, cfg.pool_ks)):
        for layer in range(n_gcn):
            params[f"gcn{b}.{layer}"] = _glorot(rng, dim, cfg.hidden_dim)
            dim = cfg.hidden_dim
        if k > 1 or cfg.activation(b) == "sigmoid":
            params[f"pool{b}"] = _glorot(rng, dim, k, cfg.pool_init_scale)
    params["mlp.w1"] = _glorot(rng, dim, cfg.mlp_hidden)
    params["mlp.b1"] = np.zeros((1, cfg.mlp_hidden))
    params["mlp.w2"] = _glorot(rng, cfg.mlp_hidden, cfg.n_classes)
    params["mlp.b2"] = np.zeros((1, cfg.n_classes))
    return params


def normalized_adjacency(a_sym: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` for a symmetric 0/1 adjacency."""
    a = a_sym + np.eye(a_sym.shape[0])
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return dinv[:, None] * a * dinv[None, :]


def _normalized_adjacency_t(a: Tensor) -> Tensor:
    a = a + np.eye(a.shape[0])
    dinv = nc.power(nc.sum(a, axis=1), -0.5)
    return dinv * a * nc.transpose(dinv)


def gcn_layer(h: Tensor, adj_norm, w: Tensor) -> Tensor:
    """``ReLU(adj_norm @ h @ w)``; ``adj_norm`` may be a constant array or a Tensor."""
    if h.shape[0] != adj_norm.shape[0]:
        raise nc.DimensionError(f"gcn_layer: features {h.shape} vs adjacency {adj_norm.shape}")
    return nc.relu(nc.matmul(nc.matmul(Tensor._lift(adj_norm), h), w))


@dataclass
class PoolResult:
    p: Tensor
    h: Tensor
    adj: Tensor


def pool(h: Tensor, adj, w_p: Tensor | None, activation: str, k: int = 1) -> PoolResult:
    """Soft assignment ``P = act(h @ w_p)``; returns ``P``, ``P^T h`` and ``P^T A P``.

    With ``w_p`` None the assignment is the all-ones column (softmax over one cluster).
    """
    adj = Tensor._lift(adj)
    if h.shape[0] != adj.shape[0]:
        raise nc.DimensionError(f"pool: features {h.shape} vs adjacency {adj.shape}")
    if w_p is None:
        if k != 1 or activation != "softmax":
            raise ValueError("only a softmax k=1 pool may omit its weights")
        p = Tensor(np.ones((h.shape[0], 1)))
    else:
        logits = nc.matmul(h, w_p)
        p = nc.softmax_rows(logits) if activation == "softmax" else nc.sigmoid(logits)
    pt = nc.transpose(p)
    return PoolResult(p, nc.matmul(pt, h), nc.matmul(nc.matmul(pt, adj), p))


@dataclass
class ForwardTrace:
    assignments: list[Tensor] = field(default_factory=list)
    pooled_h: list[Tensor] = field(default_factory=list)
    pooled_adj: list[Tensor] = field(default_factory=list)
    embedding: Tensor | None = None
    logits: Tensor | None = None
    graph: TreeGraph | None = None

    def cumulative_assignment(self, block: int) -> Tensor:
        """Assignment of input nodes to the clusters of ``block`` (``P_0 P_1 ... P_block``)."""
        p = self.assignments[0]
        for nxt in self.assignments[1:block + 1]:
            p = nc.matmul(p, nxt)
        return p

    def shape_chain(self) -> list[int]:
        return [self.graph.n] + [p.shape[1] for p in self.assignments]


def as_leaves(params: Mapping[str, np.ndarray], requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def forward(graph: TreeGraph, cfg: ModelConfig, params: Mapping[str, "Tensor | np.ndarray"]) -> ForwardTrace:
    leaves = {k: Tensor._lift(v) for k, v in params.items()}
    trace = ForwardTrace(graph=graph)
    h = nc.rows(leaves["embed"], graph.feature_ids)
    adj_norm = normalized_adjacency(graph.a_sym)
    adj = graph.a_sym
    for b, (n_gcn, k) in enumerate(zip(cfg.gcn_layers_per_block, cfg.pool_ks)):
        for layer in range(n_gcn):
            h = gcn_layer(h, adj_norm, leaves[f"gcn{b}.{layer}"])
        res = pool(h, adj, leaves.get(f"pool{b}"), cfg.activation(b), k)
        trace.assignments.append(res.p)
        trace.pooled_h.append(res.h)
        trace.pooled_adj.append(res.adj)
        h, adj = res.h, res.adj
        adj_norm = _normalized_adjacency_t(adj)
    trace.embedding = h
    z = nc.relu(nc.matmul(h, leaves["mlp.w1"]) + leaves["mlp.b1"])
    trace.logits = nc.matmul(z, leaves["mlp.w2"]) + leaves["mlp.b2"]
    return trace


@dataclass
class ConstraintReport:
    values: dict[tuple[int, Constraint], float] = field(default_factory=dict)
    degenerate: dict[tuple[int, Constraint], bool] = field(default_factory=dict)
    lambdas: dict[tuple[int, Constraint], float] = field(default_factory=dict)

    def mean_violation(self) -> float:
        return float(np.mean(list(self.values.values()))) if self.values else 0.0

    def to_json(self) -> dict:
        return {
            "values": {f"{b}:{c.value}": v for (b, c), v in self.values.items()},
            "degenerate": {f"{b}:{c.value}": v for (b, c), v in self.degenerate.items()},
            "lambdas": {f"{b}:{c.value}": v for (b, c), v in self.lambdas.items()},
        }


def constraint_terms(trace: ForwardTrace, cfg: ModelConfig,
                     cset: ConstraintSet | None = None) -> dict[tuple[int, Constraint], "object"]:
    cset = cset or cfg.constraint_set
    out = {}
    if cset is None:
        return out
    for b in range(len(cfg.pool_ks) - 1):
        p = trace.cumulative_assignment(b)
        for name, cv in evaluate(p, trace.graph, cset).items():
            out[(b, name)] = cv
    return out


def total_loss(trace: ForwardTrace, label: int, cfg: ModelConfig,
               lambdas: Mapping[tuple[int, Constraint], float] | None = None,
               cset: ConstraintSet | None = None) -> tuple[Tensor, ConstraintReport]:
    """Cross-entropy plus ``sum_i lambda_i * C_i`` over (pooling block, constraint) pairs."""
    lambdas = lambdas or {}
    for key, lam in lambdas.items():
        if lam < 0:
            raise ValueError(f"negative multiplier {lam} for {key}")
    loss = nc.cross_entropy(trace.logits, label)
    report = ConstraintReport()
    for key, cv in constraint_terms(trace, cfg, cset).items():
        report.values[key] = cv.value.item()
        report.degenerate[key] = cv.degenerate
        lam = float(lambdas.get(key, 0.0))
        report.lambdas[key] = lam
        if lam != 0.0:
            loss = loss + nc.scale(cv.value, lam)
    return loss, report
