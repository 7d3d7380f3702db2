"""Command-line entry point: ``treepool <subcommand> ...``."""
from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fragments as fr
from .constraints import Constraint, ConstraintSet, evaluate as evaluate_constraints
from .kernels import KernelConfig, KernelKind, gram, kernel, raw_kernel
from .model import ModelConfig
from .numcore import Tensor
from .suites import constraint_oracle_suite, gradient_suite, kernel_oracle_suite
from .synth import SynthCorpusSpec, write_corpus
from .trainer import Checkpoint, TrainConfig, evaluate, f1_scores, split, train
from .treebank import (DEFAULT_MAX_NODES, TreeParseError, parse_bracketed, read_jsonl, render_bracketed,
                       to_graph, tree_depth)


class CliError(Exception):
    pass


@dataclass
class ExperimentConfig:
    """Everything a ``train`` run reads; written back with defaults filled in."""

    data: str = ""
    val_data: str | None = None
    test_data: str | None = None
    split_fractions: tuple[float, float, float] = (0.8, 0.2, 0.0)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    constraints: ConstraintSet | None = field(default_factory=ConstraintSet)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    threshold: float = fr.DEFAULT_THRESHOLD
    max_nodes: int = DEFAULT_MAX_NODES
    seed: int = 0

    def to_json(self) -> dict:
        model = self.model.to_json()
        model["constraint_set"] = None
        return {
            "data": self.data,
            "val_data": self.val_data,
            "test_data": self.test_data,
            "split_fractions": list(self.split_fractions),
            "model": model,
            "train": self.train.to_json(),
            "constraints": None if self.constraints is None else self.constraints.to_json(),
            "kernel": {"kind": self.kernel.kind.value, "decay_lambda": self.kernel.decay_lambda,
                       "decay_mu": self.kernel.decay_mu, "normalized": self.kernel.normalized},
            "threshold": self.threshold,
            "max_nodes": self.max_nodes,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict, check_files: bool = True) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(
            data=obj.get("data", ""),
            val_data=obj.get("val_data"),
            test_data=obj.get("test_data"),
            split_fractions=tuple(obj.get("split_fractions", (0.8, 0.2, 0.0))),
            model=ModelConfig(**{k: v for k, v in obj.get("model", {}).items() if k != "constraint_set"}),
            train=TrainConfig(**obj.get("train", {})),
            constraints=ConstraintSet.from_json(obj["constraints"]) if "constraints" in obj else ConstraintSet(),
            kernel=KernelConfig(**obj.get("kernel", {})),
            threshold=float(obj.get("threshold", fr.DEFAULT_THRESHOLD)),
            max_nodes=int(obj.get("max_nodes", DEFAULT_MAX_NODES)),
            seed=int(obj.get("seed", 0)),
        )
        if check_files:
            for path in (cfg.data, cfg.val_data, cfg.test_data):
                if path and not Path(path).exists():
                    raise CliError(f"referenced file does not exist: {path}")
        return cfg

    def resolved(self) -> "ExperimentConfig":
        """Propagate the seed and the constraint set into the sub-configs."""
        out = copy.deepcopy(self)
        out.model.seed = out.seed
        out.train.seed = out.seed
        out.model.constraint_set = out.constraints
        if out.constraints is not None:
            out.constraints.kind = out.kernel.kind
        return out


def parse_lambda_mode(text: str, names: Sequence[Constraint]) -> tuple[str, dict[str, float] | float]:
    """``dual`` or ``fixed:<csv>``; csv is one value, one value per constraint, or name=value pairs."""
    if text == "dual":
        return "dual", 1.0
    if not text.startswith("fixed:"):
        raise CliError(f"--lambda-mode must be 'dual' or 'fixed:<csv>', got {text!r}")
    items = [s.strip() for s in text[len("fixed:"):].split(",") if s.strip()]
    if not items:
        raise CliError("fixed lambda mode needs at least one value")
    try:
        if all("=" in s for s in items):
            return "fixed", {k.strip(): float(v) for k, v in (s.split("=", 1) for s in items)}
        values = [float(s) for s in items]
    except ValueError as exc:
        raise CliError(f"bad lambda value in {text!r}") from exc
    if len(values) == 1:
        return "fixed", values[0]
    if len(values) != len(names):
        raise CliError(f"{len(values)} lambda values for {len(names)} constraints {[n.value for n in names]}")
    return "fixed", {n.value: v for n, v in zip(names, values)}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sidecar(out: Path, argv: Sequence[str]) -> None:
    _write_json(out / "meta.json", {"argv": list(argv), "finished_unix": time.time()})


def _load_experiment(args) -> ExperimentConfig:
    obj = json.loads(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    cfg = ExperimentConfig.from_json(obj, check_files=False)
    if getattr(args, "data", None):
        cfg.data = args.data
    if getattr(args, "val_data", None):
        cfg.val_data = args.val_data
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "kernel", None):
        cfg.kernel = KernelConfig(args.kernel, cfg.kernel.decay_lambda, cfg.kernel.decay_mu, cfg.kernel.normalized)
    if getattr(args, "threshold", None) is not None:
        cfg.threshold = args.threshold
    if getattr(args, "max_nodes", None):
        cfg.max_nodes = args.max_nodes
    if getattr(args, "lambda_mode", None):
        names = () if cfg.constraints is None else ConstraintSet(cfg.kernel.kind,
                                                                 enabled=cfg.constraints.enabled).names
        cfg.train.lambda_mode, fixed = parse_lambda_mode(args.lambda_mode, names)
        if cfg.train.lambda_mode == "fixed":
            cfg.train.fixed_lambdas = fixed
    cfg = ExperimentConfig.from_json(cfg.to_json())  # re-validate, check files
    if not cfg.data:
        raise CliError("no dataset given (--data or config 'data')")
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_parse(args) -> int:
    texts = [args.tree] if args.tree else Path(args.input).read_text(encoding="utf-8").splitlines()
    for text in texts:
        if not text.strip():
            continue
        t = parse_bracketed(text, max_nodes=args.max_nodes)
        print(json.dumps({"tree": render_bracketed(t), "n_nodes": t.n_nodes, "depth": tree_depth(t),
                          "tokens": t.tokens()}))
    return 0


def cmd_kernel(args) -> int:
    cfg = KernelConfig(args.kernel or "sstk", args.decay_lambda, args.decay_mu, not args.raw)
    if args.data:
        trees = [r.tree for r in read_jsonl(args.data, args.max_nodes)]
        print(json.dumps({"kernel": cfg.kind.value, "gram": gram(trees, cfg).tolist()}))
        return 0
    if len(args.trees) != 2:
        raise CliError("kernel needs two bracketed trees or --data")
    tx, tz = (parse_bracketed(t, max_nodes=args.max_nodes) for t in args.trees)
    value = kernel(tx, tz, cfg) if cfg.normalized else raw_kernel(tx, tz, cfg)
    print(json.dumps({"kernel": cfg.kind.value, "normalized": cfg.normalized, "value": value}))
    return 0


def cmd_check_constraints(args) -> int:
    tree = parse_bracketed(args.tree, max_nodes=args.max_nodes)
    graph = to_graph(tree)
    if args.assignment:
        p = np.array(json.loads(args.assignment), dtype=float)
    elif args.node_set:
        p = np.zeros((graph.n, 1))
        p[[int(i) for i in args.node_set.split(",")], 0] = 1.0
    else:
        raise CliError("give --assignment (JSON matrix) or --node-set (comma-separated ids)")
    if p.ndim != 2 or p.shape[0] != graph.n:
        raise CliError(f"assignment must be {graph.n} x k, got shape {p.shape}")
    cset = ConstraintSet(args.kernel or "sstk", delta=args.delta, alpha=args.alpha)
    names = list(Constraint) if args.all else None
    vals = evaluate_constraints(Tensor(p), graph, cset, names)
    print(json.dumps({c.value: {"value": v.value.item(), "degenerate": v.degenerate} for c, v in vals.items()}))
    return 0


def cmd_gradcheck(args) -> int:
    rep = gradient_suite(args.seeds, args.tol)
    print(json.dumps(rep.to_json(), indent=2, sort_keys=True))
    return 0 if rep.passed else 1


def cmd_oracle_verify(args) -> int:
    seed = args.seed or 0
    crep = constraint_oracle_suite(args.trees, args.max_nodes, seed)
    krep = kernel_oracle_suite(args.kernel_trees, args.kernel_max_nodes, seed)
    out = {"constraints": crep.to_json(), "kernels": krep.to_json(), "passed": crep.passed and krep.passed}
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0 if out["passed"] else 1


def cmd_train(args) -> int:
    cfg = _load_experiment(args).resolved()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = read_jsonl(cfg.data, cfg.max_nodes)
    if cfg.val_data:
        train_recs, val_recs = records, read_jsonl(cfg.val_data, cfg.max_nodes)
    else:
        sp = split([r.label for r in records], "holdout", cfg.seed, cfg.split_fractions)[0]
        train_recs = [records[i] for i in sp.train]
        val_recs = [records[i] for i in sp.val]
    _write_json(out / "config.json", cfg.to_json())
    ckpt, report = train(train_recs, val_recs, cfg.model, cfg.train)
    ckpt.save(out / "checkpoint.json")
    _write_json(out / "report.json", report.to_json())
    (out / "metrics.csv").write_text(report.metrics_csv())
    frags = fr.extract_dataset(ckpt, val_recs, cfg.threshold)
    (out / "fragments.txt").write_text(fr.render_report(frags))
    _sidecar(out, sys.argv)
    print(json.dumps({"out": str(out), "best_epoch": report.best_epoch,
                      "val_macro_f1": report.best_val_macro_f1}))
    return 0


def _f1_csv(res) -> str:
    lines = ["class,precision,recall,f1"]
    for c in res.f1.per_class:
        lines.append(f"{c},{res.f1.precision[c]:.6f},{res.f1.recall[c]:.6f},{res.f1.per_class[c]:.6f}")
    lines.append(f"macro,,,{res.f1.macro:.6f}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    records = read_jsonl(args.data, args.max_nodes)
    res = evaluate(ckpt, records)
    text = _f1_csv(res)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.csv").write_text(text)
        _write_json(out / "eval_config.json", {"checkpoint": args.checkpoint, "data": args.data,
                                               "max_nodes": args.max_nodes,
                                               "constraint_means": res.constraint_means})
        _sidecar(out, sys.argv)
    sys.stdout.write(text)
    return 0


def cmd_extract(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    records = read_jsonl(args.data, args.max_nodes)
    frags = fr.extract_dataset(ckpt, records, args.threshold, largest_cc=args.largest_cc)
    report = fr.render_report(frags, top=args.top)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "fragments.jsonl", "w") as fh:
            for r in frags:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
        (out / "fragments.txt").write_text(report)
        _write_json(out / "extract_config.json", {"checkpoint": args.checkpoint, "data": args.data,
                                                  "threshold": args.threshold, "largest_cc": args.largest_cc,
                                                  "top": args.top, "max_nodes": args.max_nodes})
        _sidecar(out, sys.argv)
    sys.stdout.write(report)
    return 0


def cmd_gen_corpus(args) -> int:
    obj = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.n_per_class is not None:
        obj["n_per_class"] = args.n_per_class
    if args.noise is not None:
        obj["noise"] = args.noise
    if args.max_nodes is not None:
        obj["max_nodes"] = args.max_nodes
    spec = SynthCorpusSpec(**obj)
    recs = write_corpus(spec, args.out)
    print(json.dumps({"out": args.out, "n": len(recs), "classes": list(spec.classes)}))
    return 0


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors also emit a JSON line on stderr before exiting with status 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="treepool", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True, max_nodes=DEFAULT_MAX_NODES):
        if seed:
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--max-nodes", type=int, default=max_nodes)

    p = sub.add_parser("parse", help="parse bracketed trees and print their canonical form")
    p.add_argument("tree", nargs="?")
    p.add_argument("--input")
    common(p, seed=False)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("kernel", help="tree kernel between two trees, or a Gram matrix over --data")
    p.add_argument("trees", nargs="*")
    p.add_argument("--kernel", choices=[k.value for k in KernelKind])
    p.add_argument("--decay-lambda", type=float, default=0.4)
    p.add_argument("--decay-mu", type=float, default=0.4)
    p.add_argument("--raw", action="store_true", help="unnormalized value")
    p.add_argument("--data")
    common(p, seed=False)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("check-constraints", help="constraint values of an assignment on a tree")
    p.add_argument("tree")
    p.add_argument("--assignment")
    p.add_argument("--node-set")
    p.add_argument("--kernel", choices=[k.value for k in KernelKind])
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--all", action="store_true", help="evaluate all five constraints")
    common(p, seed=False)
    p.set_defaults(func=cmd_check_constraints)

    p = sub.add_parser("gradcheck", help="finite-difference check of every registered function")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-verify", help="exhaustive constraint and kernel oracle suites")
    p.add_argument("--trees", type=int, default=50)
    p.add_argument("--kernel-trees", type=int, default=200)
    p.add_argument("--kernel-max-nodes", type=int, default=12)
    common(p, max_nodes=8)
    p.set_defaults(func=cmd_oracle_verify)

    p = sub.add_parser("train", help="train a model; writes config, checkpoint, report, metrics")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--val-data")
    p.add_argument("--out", required=True)
    p.add_argument("--kernel", choices=[k.value for k in KernelKind])
    p.add_argument("--lambda-mode")
    p.add_argument("--threshold", type=float)
    common(p, max_nodes=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="F1 table of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    common(p, seed=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("extract-fragments", help="thresholded fragments and class-unique report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float, default=fr.DEFAULT_THRESHOLD)
    p.add_argument("--largest-cc", action="store_true", help="keep only the largest connected component")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out")
    common(p, seed=False)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("gen-corpus", help="synthetic corpus with a planted class pattern")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-nodes", type=int, default=None)
    p.set_defaults(func=cmd_gen_corpus)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TreeParseError as exc:
        err = {"error": "TreeParseError", "message": str(exc), "offset": exc.offset}
    except (CliError, ValueError, KeyError, OSError, TypeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(err), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
