"""Generate the synthetic benchmark, train on it and evaluate, all through the CLI."""
import argparse
import sys
from pathlib import Path

from milattn.cli import main as cli

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", default="synthetic_run")
    ap.add_argument("--seed", type=int, default=0, help="training seed")
    ap.add_argument("--data-seed", type=int, default=0)
    args = ap.parse_args()
    work = Path(args.work_dir)
    data = work / "data"
    steps = [
        ["synth", "--out-dir", str(data), "--seed", str(args.data_seed),
         "--config", str(ROOT / "configs" / "bench_synth.txt")],
        ["-v", "train", "--config", str(ROOT / "configs" / "bench_run.txt"),
         "--manifest", str(data / "manifest.csv"), "--features-dir", str(data),
         "--out-dir", str(work / "run"), "--seed", str(args.seed)],
        ["eval", "--checkpoint", str(work / "run" / "checkpoint_final.bin"),
         "--manifest", str(data / "manifest.csv"), "--annotations", str(data / "annotations.csv"),
         "--features-dir", str(data), "--out-dir", str(work / "eval")],
    ]
    for argv in steps:
        code = cli(argv)
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
