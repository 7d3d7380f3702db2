"""Training loop with dual-Lagrangian or fixed constraint multipliers."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .constraints import Constraint, ConstraintSet
from .model import (ConstraintReport, ModelConfig, as_leaves, constraint_terms, forward,
                    init_params, total_loss)
from .treebank import Record, TreeGraph, Vocabulary, to_graph

log = logging.getLogger(__name__)

LambdaKey = tuple[int, Constraint]


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: "Checkpoint | None"):
        super().__init__(message)
        self.last_good = last_good


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 16
    patience: int = 5
    multi_start: int = 1
    lambda_mode: str = "dual"
    fixed_lambdas: dict[str, float] | float = 1.0
    lambda_init: float = 0.0
    lambda_step: float = 0.1
    lambda_update_period: int = 0  # optimizer steps; 0 means once per epoch
    select_from_epoch: int = 0  # epochs before this are not eligible for early stopping
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lambda_mode not in ("dual", "fixed"):
            raise ValueError(f"lambda_mode must be 'dual' or 'fixed', got {self.lambda_mode!r}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.multi_start < 1:
            raise ValueError("multi_start must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.select_from_epoch < self.epochs:
            raise ValueError("select_from_epoch must lie in [0, epochs)")
        if self.lambda_step < 0 or self.lambda_init < 0:
            raise ValueError("lambda_step and lambda_init must be non-negative")

    def fixed_value(self, key: LambdaKey) -> float:
        if isinstance(self.fixed_lambdas, (int, float)):
            return float(self.fixed_lambdas)
        block, name = key
        for k in (f"{block}:{name.value}", name.value):
            if k in self.fixed_lambdas:
                return float(self.fixed_lambdas[k])
        return 0.0

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Lagrangian multipliers


@dataclass
class LagrangianState:
    lambdas: dict[LambdaKey, float]
    step_size: float = 0.1
    update_period: int = 0
    history: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "lambdas": {_key_str(k): v for k, v in self.lambdas.items()},
            "step_size": self.step_size,
            "update_period": self.update_period,
            "history": self.history,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "LagrangianState":
        return cls({_parse_key(k): float(v) for k, v in obj["lambdas"].items()},
                   float(obj["step_size"]), int(obj["update_period"]), list(obj.get("history", [])))


def _key_str(key: LambdaKey) -> str:
    return f"{key[0]}:{key[1].value}"


def _parse_key(s: str) -> LambdaKey:
    b, name = s.split(":", 1)
    return int(b), Constraint(name)


def dual_update(state: LagrangianState, violations: Mapping[LambdaKey, float],
                step: int | None = None) -> LagrangianState:
    """Projected dual ascent: ``lambda <- max(0, lambda + eta * violation)``."""
    new = dict(state.lambdas)
    for key, v in violations.items():
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"violation for {key} must be finite and >= 0, got {v}")
        new[key] = max(0.0, new.get(key, 0.0) + state.step_size * v)
    entry = {
        "step": step if step is not None else len(state.history),
        "violations": {_key_str(k): float(v) for k, v in violations.items()},
        "lambdas": {_key_str(k): v for k, v in new.items()},
    }
    return LagrangianState(new, state.step_size, state.update_period, state.history + [entry])


# ---------------------------------------------------------------------------
# metrics and splits


@dataclass
class F1Report:
    per_class: dict[str, float]
    macro: float
    precision: dict[str, float]
    recall: dict[str, float]


def f1_scores(predictions: Sequence[str], golds: Sequence[str], classes: Sequence[str]) -> F1Report:
    if len(predictions) != len(golds):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(golds)} golds")
    per, prec, rec = {}, {}, {}
    for c in classes:
        tp = sum(1 for p, g in zip(predictions, golds) if p == c and g == c)
        n_pred = sum(1 for p in predictions if p == c)
        n_gold = sum(1 for g in golds if g == c)
        if n_gold == 0:
            warnings.warn(f"class {c!r} absent from gold labels; its F1 is defined as 0", stacklevel=2)
        prec[c] = tp / n_pred if n_pred else 0.0
        rec[c] = tp / n_gold if n_gold else 0.0
        s = prec[c] + rec[c]
        per[c] = 2 * prec[c] * rec[c] / s if s > 0 else 0.0
    macro = float(np.mean(list(per.values()))) if per else 0.0
    return F1Report(per, macro, prec, rec)


@dataclass
class Split:
    train: list[int]
    val: list[int]
    test: list[int]


def _stratified_folds(labels: Sequence[str], k: int, rng: np.random.Generator) -> list[list[int]]:
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for lab in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == lab]
        if len(idx) < k:
            warnings.warn(f"class {lab!r} has {len(idx)} samples for {k} folds", stacklevel=3)
        for i in rng.permutation(idx):
            folds[cursor % k].append(int(i))
            cursor += 1
    return [sorted(f) for f in folds]


def split(labels: Sequence[str], scheme: str = "holdout", seed: int = 0,
          fractions: tuple[float, float, float] = (0.8, 0.2, 0.0), k: int = 5,
          repeats: int = 1) -> list[Split]:
    """Stratified splits: ``holdout`` (train/val/test fractions), ``kfold`` or ``repeated`` holdout."""
    n = len(labels)
    rng = np.random.default_rng(seed)
    if scheme == "kfold":
        if n < k:
            raise ValueError(f"{n} samples cannot make {k} folds")
        folds = _stratified_folds(labels, k, rng)
        out = []
        for i in range(k):
            val_i = (i + 1) % k
            train = sorted(j for f in range(k) if f not in (i, val_i) for j in folds[f])
            out.append(Split(train, folds[val_i], folds[i]))
        return out
    if scheme not in ("holdout", "repeated"):
        raise ValueError(f"unknown split scheme {scheme!r}")
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    out = []
    for _ in range(repeats if scheme == "repeated" else 1):
        parts: list[list[int]] = [[], [], []]
        for lab in sorted(set(labels)):
            idx = [int(i) for i in rng.permutation([i for i, l in enumerate(labels) if l == lab])]
            n_tr = int(round(fractions[0] * len(idx)))
            n_va = int(round(fractions[1] * len(idx)))
            if fractions[2] == 0:
                n_va = len(idx) - n_tr
            parts[0] += idx[:n_tr]
            parts[1] += idx[n_tr:n_tr + n_va]
            parts[2] += idx[n_tr + n_va:]
        out.append(Split(*(sorted(p) for p in parts)))
    return out


# ---------------------------------------------------------------------------
# optimizers


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": {k: v.tolist() for k, v in self.m.items()},
                "v": {k: v.tolist() for k, v in self.v.items()}}


class SGD:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g

    def state(self) -> dict:
        return {}


# ---------------------------------------------------------------------------
# checkpoints and reports


@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab: Vocabulary
    classes: list[str]
    params: dict[str, np.ndarray]
    lagrangian: LagrangianState
    epoch: int
    rng_state: dict
    val_macro_f1: float = 0.0
    optimizer_state: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "model_config": self.model_config.to_json(),
            "vocab": self.vocab.to_json(),
            "vocab_digest": self.vocab.digest(),
            "classes": self.classes,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "lagrangian": self.lagrangian.to_json(),
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "val_macro_f1": self.val_macro_f1,
            "optimizer_state": self.optimizer_state,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Checkpoint":
        return cls(
            ModelConfig.from_json(obj["model_config"]),
            Vocabulary.from_json(obj["vocab"]),
            list(obj["classes"]),
            {k: np.array(v, dtype=float) for k, v in obj["params"].items()},
            LagrangianState.from_json(obj["lagrangian"]),
            int(obj["epoch"]),
            obj["rng_state"],
            float(obj.get("val_macro_f1", 0.0)),
            obj.get("optimizer_state", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_json(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


@dataclass
class RunReport:
    epochs: list[dict] = field(default_factory=list)
    lambda_history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_macro_f1: float = -1.0
    restarts: list[dict] = field(default_factory=list)
    diverged: bool = False

    def to_json(self) -> dict:
        return asdict(self)

    def metrics_csv(self) -> str:
        cols = ["epoch", "loss", "ce", "train_violation", "val_macro_f1", "val_violation"]
        lines = [",".join(cols)]
        for e in self.epochs:
            lines.append(",".join(repr(e[c]) if isinstance(e[c], float) else str(e[c]) for c in cols))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class Example:
    graph: TreeGraph
    label: int
    record: Record


def prepare(records: Sequence[Record], vocab: Vocabulary, classes: Sequence[str]) -> list[Example]:
    index = {c: i for i, c in enumerate(classes)}
    out = []
    for r in records:
        if r.label not in index:
            raise ValueError(f"label {r.label!r} of {r.id} not among classes {list(classes)}")
        out.append(Example(to_graph(r.tree, vocab), index[r.label], r))
    return out


@dataclass
class EvalResult:
    predictions: list[str]
    golds: list[str]
    f1: F1Report
    constraint_means: dict[str, float]
    mean_violation: float
    ce: float


def evaluate_examples(examples: Sequence[Example], cfg: ModelConfig, params: Mapping[str, np.ndarray],
                      classes: Sequence[str], cset: ConstraintSet | None = None) -> EvalResult:
    preds, golds, ce = [], [], 0.0
    sums: dict[LambdaKey, float] = {}
    for ex in examples:
        trace = forward(ex.graph, cfg, params)
        logits = trace.logits.data[0]
        preds.append(classes[int(np.argmax(logits))])
        golds.append(classes[ex.label])
        ce += nc.cross_entropy(trace.logits, ex.label).item()
        for key, cv in constraint_terms(trace, cfg, cset).items():
            sums[key] = sums.get(key, 0.0) + cv.value.item()
    n = max(len(examples), 1)
    means = {_key_str(k): v / n for k, v in sums.items()}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        f1 = f1_scores(preds, golds, classes)
    return EvalResult(preds, golds, f1, means,
                      float(np.mean(list(means.values()))) if means else 0.0, ce / n)


# ---------------------------------------------------------------------------
# training


def _snapshot(cfg, vocab, classes, params, lag, epoch, rng, f1, opt) -> Checkpoint:
    return Checkpoint(copy.deepcopy(cfg), vocab, list(classes), {k: v.copy() for k, v in params.items()},
                      copy.deepcopy(lag), epoch, copy.deepcopy(rng.bit_generator.state), f1, opt.state())


def train_once(train_ex: Sequence[Example], val_ex: Sequence[Example], cfg: ModelConfig,
               tcfg: TrainConfig, vocab: Vocabulary, classes: Sequence[str]) -> tuple[Checkpoint, RunReport]:
    if not train_ex or not val_ex:
        raise ValueError("train and validation splits must be non-empty")
    params = init_params(cfg)
    rng = np.random.default_rng(tcfg.seed)
    opt = Adam(params, tcfg.lr) if tcfg.optimizer == "adam" else SGD(params, tcfg.lr)
    keys = [(b, name) for b in cfg.constrained_layers for name in cfg.constraint_set.names]
    if tcfg.lambda_mode == "dual":
        lag = LagrangianState({k: tcfg.lambda_init for k in keys}, tcfg.lambda_step, tcfg.lambda_update_period)
    else:
        lag = LagrangianState({k: tcfg.fixed_value(k) for k in keys}, 0.0, 0)
    for k, v in lag.lambdas.items():
        if v < 0:
            raise ValueError(f"negative initial multiplier for {k}")
    n_batches = math.ceil(len(train_ex) / tcfg.batch_size)
    period = tcfg.lambda_update_period or n_batches
    report = RunReport()
    best: Checkpoint | None = None
    since_best = 0
    step = 0
    period_sums: dict[LambdaKey, float] = {k: 0.0 for k in keys}
    period_batches = 0
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(train_ex))
        ep_loss = ep_ce = 0.0
        ep_viol: dict[LambdaKey, float] = {k: 0.0 for k in keys}
        for bstart in range(0, len(order), tcfg.batch_size):
            batch = [train_ex[i] for i in order[bstart:bstart + tcfg.batch_size]]
            leaves = as_leaves(params)
            batch_viol = {k: 0.0 for k in keys}
            scale = 1.0 / len(batch)
            for ex in batch:
                trace = forward(ex.graph, cfg, leaves)
                loss, rep = total_loss(trace, ex.label, cfg, lag.lambdas)
                if not math.isfinite(loss.item()):
                    report.diverged = True
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}", best)
                nc.scale(loss, scale).backward()
                ep_loss += loss.item()
                ep_ce += loss.item() - sum(lag.lambdas.get(k, 0.0) * v for k, v in rep.values.items())
                for k, v in rep.values.items():
                    batch_viol[k] += v * scale
            grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
            opt.step(params, grads)
            step += 1
            for k in keys:
                period_sums[k] += batch_viol[k]
                ep_viol[k] += batch_viol[k] / n_batches
            period_batches += 1
            if tcfg.lambda_mode == "dual" and keys and period_batches >= period:
                means = {k: period_sums[k] / period_batches for k in keys}
                lag = dual_update(lag, means, step)
                lag.history[-1]["last_batch"] = {_key_str(k): batch_viol[k] for k in keys}
                period_sums = {k: 0.0 for k in keys}
                period_batches = 0
        ev = evaluate_examples(val_ex, cfg, params, classes)
        entry = {
            "epoch": epoch,
            "loss": ep_loss / len(train_ex),
            "ce": ep_ce / len(train_ex),
            "train_violation": float(np.mean(list(ep_viol.values()))) if keys else 0.0,
            "train_constraints": {_key_str(k): v for k, v in ep_viol.items()},
            "val_macro_f1": ev.f1.macro,
            "val_f1": ev.f1.per_class,
            "val_violation": ev.mean_violation,
            "val_constraints": ev.constraint_means,
            "lambdas": {_key_str(k): v for k, v in lag.lambdas.items()},
        }
        report.epochs.append(entry)
        log.info("epoch %d loss %.4f val F1 %.4f viol %.4f", epoch, entry["loss"], ev.f1.macro,
                 ev.mean_violation)
        if epoch < tcfg.select_from_epoch:
            continue
        if best is None or ev.f1.macro > best.val_macro_f1:
            best = _snapshot(cfg, vocab, classes, params, lag, epoch, rng, ev.f1.macro, opt)
            report.best_epoch = epoch
            report.best_val_macro_f1 = ev.f1.macro
            since_best = 0
        else:
            since_best += 1
            if since_best >= tcfg.patience:
                break
    report.lambda_history = lag.history
    return best, report


def restart_seed(seed: int, restart: int) -> int:
    return seed if restart == 0 else int(np.random.SeedSequence([seed, restart]).generate_state(1)[0])


def train(train_records: Sequence[Record], val_records: Sequence[Record], cfg: ModelConfig,
          tcfg: TrainConfig, vocab: Vocabulary | None = None,
          classes: Sequence[str] | None = None) -> tuple[Checkpoint, RunReport]:
    """Train with multi-start; returns the checkpoint with the best validation macro-F1."""
    classes = list(classes) if classes is not None else sorted({r.label for r in train_records})
    val_labels = {r.label for r in val_records}
    if not val_labels <= set(classes):
        raise ValueError(f"validation labels {sorted(val_labels - set(classes))} unseen in training")
    vocab = vocab or Vocabulary.build(r.tree for r in train_records)
    cfg = copy.deepcopy(cfg)
    cfg.vocab_size = len(vocab)
    cfg.n_classes = len(classes)
    train_ex = prepare(train_records, vocab, classes)
    val_ex = prepare(val_records, vocab, classes)
    best_ckpt, best_report, summaries = None, None, []
    for r in range(tcfg.multi_start):
        rcfg = copy.deepcopy(cfg)
        rcfg.seed = restart_seed(cfg.seed, r)
        rt = copy.deepcopy(tcfg)
        rt.seed = restart_seed(tcfg.seed, r)
        ckpt, rep = train_once(train_ex, val_ex, rcfg, rt, vocab, classes)
        summaries.append({"restart": r, "model_seed": rcfg.seed, "train_seed": rt.seed,
                          "best_epoch": rep.best_epoch, "best_val_macro_f1": rep.best_val_macro_f1})
        if best_ckpt is None or ckpt.val_macro_f1 > best_ckpt.val_macro_f1:
            best_ckpt, best_report = ckpt, rep
    best_report.restarts = summaries
    return best_ckpt, best_report


def evaluate(ckpt: Checkpoint, records: Sequence[Record]) -> EvalResult:
    ex = prepare(records, ckpt.vocab, ckpt.classes)
    return evaluate_examples(ex, ckpt.model_config, ckpt.params, ckpt.classes)


def calibrate_fixed(train_records: Sequence[Record], val_records: Sequence[Record], cfg: ModelConfig,
                    tcfg: TrainConfig, grid: Sequence[float]) -> list[dict]:
    """Fixed-coefficient runs over a grid of shared multiplier values."""
    rows = []
    for value in grid:
        t = copy.deepcopy(tcfg)
        t.lambda_mode = "fixed"
        t.fixed_lambdas = float(value)
        ckpt, rep = train(train_records, val_records, cfg, t)
        ev = evaluate(ckpt, val_records)
        rows.append({"lambda": float(value), "val_macro_f1": ev.f1.macro, "val_violation": ev.mean_violation,
                     "best_epoch": rep.best_epoch})
    return rows
