"""Command line interface for the video anomaly detector.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import (DataError, SynthSpec, load_features, read_annotations, read_manifest,
                   segment_pool, synth_generate, write_synth)
from .evaluation import evaluate, write_report
from .gradcheck import TINY, gradient_check
from .model import ModelConfig, model_forward
from .optimizer import NonFiniteGradientError
from .train import NumericalFailure, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4

log = logging.getLogger("milattn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in (("manifest", args.manifest), ("features_dir", args.features_dir),
                                   ("out_dir", args.out_dir), ("seed", args.seed)) if v is not None}
    cfg = cfg.replace(**overrides)
    if not cfg.manifest:
        raise UsageError("train needs a manifest (--manifest or config key)")
    train(cfg, out_dir=cfg.out_dir)
    print(f"final checkpoint: {Path(cfg.out_dir) / 'checkpoint_final.bin'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config, params, _ = load_checkpoint(args.checkpoint)
    records = read_manifest(args.manifest, config.C + 1)
    annotations = read_annotations(args.annotations) if args.annotations else {}
    report = evaluate(params, records, annotations, config, args.features_dir,
                      include_normal=not args.exclude_normal)
    out = args.out_dir or "."
    write_report(report, out)
    print(f"AUC {report.auc:.6f}  mAA {report.mAA:.6f}  (report in {out})")
    return EXIT_OK


def cmd_score(args) -> int:
    config, params, _ = load_checkpoint(args.checkpoint)
    clips = load_features(args.features)
    if clips.shape[1] != config.n:
        raise DataError(f"feature dimension mismatch: checkpoint expects n={config.n}, "
                        f"file has {clips.shape[1]}")
    trace = model_forward(segment_pool(clips, config.T), params, config)
    lines = ["segment,score,alpha,beta"]
    for t in range(config.T):
        a = "" if trace.alpha is None else repr(float(trace.alpha[t]))
        b = "" if trace.beta is None else repr(float(trace.beta[t]))
        lines.append(f"{t},{float(trace.S[t])!r},{a},{b}")
    lines.append("class,probability")
    for c, p in enumerate(trace.y_hat):
        lines.append(f"{c},{float(p)!r}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    changes = {f.name: getattr(args, f.name) for f in fields(SynthSpec)
               if getattr(args, f.name) is not None}
    seed = args.seed if args.seed is not None else 0
    try:
        spec = SynthSpec.from_text(Path(args.config).read_text()) if args.config else SynthSpec()
        spec = SynthSpec(**{**vars(spec), **changes})
        dataset = synth_generate(spec, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_synth(dataset, spec, args.out_dir, seed)
    print(f"wrote {len(dataset.records)} videos to {args.out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = [f.name for f in fields(ModelConfig) if f.type == "int"]
    config = ModelConfig(**{k: getattr(args, k) or getattr(TINY, k) for k in names})
    if config.T > 4 or config.n > 8:
        raise UsageError("gradcheck is meant for tiny configs (T <= 4, n <= 8)")
    report = gradient_check(config, args.seed or 0)
    failed = False
    print(f"{'parameter':<14}{'max_rel_err':>14}  status")
    for name, err in report.items():
        ok = err < GRADCHECK_TOL
        failed |= not ok
        print(f"{name:<14}{err:>14.3e}  {'pass' if ok else 'FAIL'}")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="milattn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("--config")
    p.add_argument("--manifest")
    p.add_argument("--features-dir")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="frame-level AUC and mAA on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations")
    p.add_argument("--features-dir")
    p.add_argument("--out-dir")
    p.add_argument("--exclude-normal", action="store_true", help="leave Normal out of mAA")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="per-segment scores for one feature file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synth", help="generate a planted-anomaly dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key = value synth spec file")
    for f in fields(SynthSpec):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                       type=float if f.type == "float" else int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    for f in fields(ModelConfig):
        if f.type == "int":
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on --help and on usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError, tc.ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, NonFiniteGradientError, tc.NonFiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
