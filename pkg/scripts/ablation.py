"""Attention ablation on the synthetic benchmark: mean AUC / mAA per variant."""
import argparse

import numpy as np

from milattn.experiments import ABLATIONS, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iterations", type=int)
    args = ap.parse_args()
    for name, flags in ABLATIONS.items():
        runs = [run_benchmark(s, args.iterations, **flags) for s in args.seeds]
        for s, (auc, maa) in zip(args.seeds, runs):
            print(f"{name:14s} seed {s}: AUC {auc:.4f}  mAA {maa:.4f}", flush=True)
        auc, maa = np.mean(runs, axis=0)
        print(f"{name:14s} mean  : AUC {auc:.4f}  mAA {maa:.4f}", flush=True)


if __name__ == "__main__":
    main()
