"""Planted-corpus experiments shared by the acceptance suite and the scripts."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .constraints import Constraint, ConstraintSet, evaluate, overlap_ratios
from .fragments import DEFAULT_THRESHOLD, class_unique, extract_dataset, flag_stats, recovers_pattern
from .kernels import KernelKind
from .model import ModelConfig, forward
from .synth import SynthCorpusSpec, generate
from .trainer import Checkpoint, RunReport, TrainConfig, split, train
from .treebank import Record, to_graph

FRAGMENT_CONSTRAINTS = (Constraint.CONTIGUITY, Constraint.ST, Constraint.SST)


@dataclass
class PlantedSetup:
    """Desk-scale training recipe for the planted two-class corpus."""
    n_per_class: int = 500
    pool_ks: tuple[int, ...] = (2, 1)
    epochs: int = 40
    lr: float = 1e-2
    batch_size: int = 16
    lambda_step: float = 5.0
    lambda_update_period: int = 10
    fixed_lambda: float = 1.0
    select_window: int = 10  # only the last epochs are eligible for model selection
    patience: int = 5
    delta: float = 0.3
    alpha: float = 0.5
    pool_init_scale: float = 3.0  # sharper initial assignments

    def model_config(self, kind: "KernelKind | str | None", seed: int) -> ModelConfig:
        if kind is None:
            return ModelConfig(pool_ks=self.pool_ks, pooling_activation="softmax", constraint_set=None,
                               pool_init_scale=self.pool_init_scale, seed=seed)
        cset = ConstraintSet(kind=kind, delta=self.delta, alpha=self.alpha)
        return ModelConfig(pool_ks=self.pool_ks, constraint_set=cset, pool_init_scale=self.pool_init_scale,
                           seed=seed)

    def train_config(self, mode: str, seed: int) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size, patience=self.patience,
                           lambda_mode=mode, fixed_lambdas=self.fixed_lambda, lambda_step=self.lambda_step,
                           lambda_update_period=self.lambda_update_period,
                           select_from_epoch=max(0, self.epochs - self.select_window), seed=seed)


@dataclass
class RunResult:
    seed: int
    kind: str | None
    mode: str
    ckpt: Checkpoint
    report: RunReport
    train: list[Record]
    val: list[Record]
    corpus: SynthCorpusSpec
    seconds: float = 0.0


def planted_data(seed: int, setup: PlantedSetup = PlantedSetup()):
    corpus = SynthCorpusSpec(n_per_class=setup.n_per_class, seed=seed)
    recs = generate(corpus)
    sp = split([r.label for r in recs], seed=seed)[0]
    return corpus, [recs[i] for i in sp.train], [recs[i] for i in sp.val]


def run_planted(seed: int, kind: "KernelKind | str | None", mode: str = "dual",
                setup: PlantedSetup = PlantedSetup()) -> RunResult:
    """Train one model; ``kind=None`` is plain softmax DiffPool without constraints."""
    corpus, tr, va = planted_data(seed, setup)
    t0 = time.perf_counter()
    tcfg = setup.train_config(mode if kind is not None else "fixed", seed)
    if kind is None:
        tcfg = replace(tcfg, fixed_lambdas=0.0)
    ckpt, rep = train(tr, va, setup.model_config(kind, seed), tcfg)
    kind_s = None if kind is None else KernelKind.parse(kind).value
    return RunResult(seed, kind_s, mode, ckpt, rep, tr, va, corpus, time.perf_counter() - t0)


def fragment_violation(ckpt: Checkpoint, records: list[Record], cset: ConstraintSet | None = None) -> float:
    """Mean fragment-constraint value over samples, constrained blocks and constraints.

    Overlap and intensity are excluded; they shape clusters but do not define fragments.
    """
    cfg = ckpt.model_config
    cset = cset or cfg.constraint_set
    names = [c for c in cset.names if c in FRAGMENT_CONSTRAINTS]
    blocks = range(len(cfg.pool_ks) - 1)
    vals = []
    for r in records:
        g = to_graph(r.tree, ckpt.vocab)
        trace = forward(g, cfg, ckpt.params)
        for b in blocks:
            for cv in evaluate(trace.cumulative_assignment(b), g, cset, names).values():
                vals.append(cv.value.item())
    return float(np.mean(vals)) if vals else 0.0


def degenerate_check(ckpt: Checkpoint, records: list[Record], delta: float, alpha: float,
                     margin: float = 0.05, intensity_frac: float = 0.9) -> dict:
    """Fraction of samples whose every constrained block avoids both degenerate scenarios."""
    cfg = ckpt.model_config
    ok_overlap = ok_intensity = ok_both = 0
    worst_overlap = 0.0
    for r in records:
        g = to_graph(r.tree, ckpt.vocab)
        trace = forward(g, cfg, ckpt.params)
        o = i = True
        for b in range(len(cfg.pool_ks) - 1):
            p = trace.cumulative_assignment(b).data
            n, k = p.shape
            ratios = overlap_ratios(p)
            worst_overlap = max(worst_overlap, float(ratios.max(initial=0.0)))
            o &= bool(np.all(ratios <= delta + margin))
            i &= bool(np.all((p * p).sum(axis=0) >= intensity_frac * alpha * n / k))
        ok_overlap += o
        ok_intensity += i
        ok_both += o and i
    n = max(len(records), 1)
    return {"overlap_rate": ok_overlap / n, "intensity_rate": ok_intensity / n, "rate": ok_both / n,
            "worst_overlap": worst_overlap}


def fragment_summary(res: RunResult, top: int = 5, threshold: float = DEFAULT_THRESHOLD) -> dict:
    """Class-unique fragments on validation, planted-pattern recovery and oracle pass rates."""
    records = extract_dataset(res.ckpt, res.val, threshold)
    uniq = class_unique(records, res.ckpt.classes)
    target = res.corpus.classes[0]
    head = [r.fragment for r in uniq[target][:top]]
    hit = any(recovers_pattern(f, res.corpus.planted_pattern, res.corpus.anchor_tokens) for f in head)
    return {"recovered": hit, "top": head, "flags": flag_stats(records), "n_records": len(records),
            "n_sets": sum(r.frequency for r in records)}
