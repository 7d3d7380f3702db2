"""Grid of shared fixed multipliers on one planted-corpus seed, with the dual run for reference.

    python3 scripts/calibrate_fixed.py --grid 0 0.1 1 10 --seed 0
"""
import argparse
import sys

from treepool.experiments import PlantedSetup, fragment_violation, planted_data, run_planted
from treepool.trainer import calibrate_fixed


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--grid", type=float, nargs="+", default=[0.0, 0.1, 1.0, 10.0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--kernel", default="sstk", choices=["stk", "sstk", "ptk"])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--n-per-class", type=int, default=500)
    args = ap.parse_args(argv)
    setup = PlantedSetup(n_per_class=args.n_per_class, epochs=args.epochs)
    _, tr, va = planted_data(args.seed, setup)

    rows = calibrate_fixed(tr, va, setup.model_config(args.kernel, args.seed),
                           setup.train_config("fixed", args.seed), args.grid)
    print("lambda,val_macro_f1,val_violation,best_epoch")
    for r in rows:
        print(f"{r['lambda']},{r['val_macro_f1']:.4f},{r['val_violation']:.4f},{r['best_epoch']}")
    dual = run_planted(args.seed, args.kernel, "dual", setup)
    print(f"dual: macro-F1 {dual.ckpt.val_macro_f1:.4f}, C^frag {fragment_violation(dual.ckpt, dual.val):.4f}")


if __name__ == "__main__":
    sys.exit(main())
