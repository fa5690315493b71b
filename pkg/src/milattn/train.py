"""Joint training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import DataError, VideoRecord, load_segments, read_manifest, sample_batch
from .evaluation import classify_videos, roc_auc
from .losses import compute_class_weights, total_loss
from .model import bind_params, forward_graph, init_params, model_forward
from .optimizer import Adam, NonFiniteGradientError

log = logging.getLogger(__name__)


class NumericalFailure(FloatingPointError):
    pass


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    adam: Adam
    history: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    holdout: list[tuple[int, float, float]] = field(default_factory=list)


def split_holdout(labels, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-polarity random hold-out of the training pool."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 0x401d])
    keep, held = [], []
    for mask in (labels > 0, labels == 0):
        idx = rng.permutation(np.flatnonzero(mask))
        k = int(round(fraction * len(idx)))
        held.append(idx[:k])
        keep.append(idx[k:])
    return np.sort(np.concatenate(keep)), np.sort(np.concatenate(held))


def batch_rng(seed: int, iteration: int) -> np.random.Generator:
    # one stream per iteration so a resumed run draws the same batches
    return np.random.default_rng([seed, iteration])


def train_step(params, adam: Adam, feats: np.ndarray, labels, weights, class_freq, config):
    g = tc.Graph()
    p = bind_params(g, params)
    trace = forward_graph(g.constant(feats), p, config)
    parts = total_loss(trace, labels, weights, class_freq)
    total = float(parts.total.value)
    if not np.isfinite(total):
        raise NumericalFailure(f"non-finite loss {total}")
    grads = tc.backward(g, parts.total)
    adam.step(params, grads)
    for name, v in params.items():
        if not np.all(np.isfinite(v)):
            raise NumericalFailure(f"parameter {name!r} became non-finite after the update")
    return parts, total, grads


def holdout_metrics(params, feats, labels, config, include_normal=True):
    """Video-level AUC (max segment score) and mAA on held-out training videos."""
    trace = model_forward(feats, params, config)
    video_scores = trace.S.max(axis=1)
    y = np.asarray(labels) > 0
    auc = roc_auc(video_scores, y)[1] if 0 < y.sum() < len(y) else float("nan")
    _, _, maa = classify_videos(trace.y_hat, labels, config.C + 1, include_normal)
    return auc, maa


def load_training_pool(cfg: RunConfig) -> tuple[list[VideoRecord], np.ndarray]:
    records = [r for r in read_manifest(cfg.manifest, cfg.C + 1) if r.split == "train"]
    if not records:
        raise DataError("no training videos in manifest")
    feats = np.stack([load_segments(r, cfg.T, cfg.features_dir or None, views=[0])[0]
                      for r in records])
    if feats.shape[-1] != cfg.n:
        raise DataError(f"features have dimension {feats.shape[-1]}, config expects n={cfg.n}")
    return records, feats


def train(cfg: RunConfig, records=None, feats=None, out_dir=None) -> TrainResult:
    """Run the training loop described by ``cfg``.

    ``records``/``feats`` may be passed pre-loaded (pooled view-0 features);
    otherwise they are read from ``cfg.manifest``. With ``out_dir`` set, the
    run config, a CSV log and checkpoints are written there.
    """
    config = cfg.model_config()
    weights = cfg.loss_weights()
    if records is None:
        records, feats = load_training_pool(cfg)
    labels = np.array([r.class_label for r in records])
    class_freq = compute_class_weights(labels, config.C + 1).freq

    held = np.array([], dtype=np.intp)
    pool = np.arange(len(records))
    if cfg.eval_every > 0 and cfg.holdout_fraction > 0:
        pool, held = split_holdout(labels, cfg.holdout_fraction, cfg.seed)

    if cfg.resume:
        ck_config, params, adam = load_checkpoint(cfg.resume)
        if ck_config != config:
            raise DataError("resume checkpoint config differs from run config")
        if adam is None:
            raise DataError("resume checkpoint carries no optimizer state")
    else:
        params = init_params(config, cfg.seed)
        adam = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.clip_norm)

    out = Path(out_dir) if out_dir else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "run_config.txt").write_text(cfg.to_text())
        log_fh = open(out / "train_log.csv", "a" if cfg.resume else "w")
        if not cfg.resume:
            log_fh.write("iteration,loss_d,loss_c,loss_att,total\n")
    for line in cfg.to_text().splitlines():
        log.info("config %s", line)

    result = TrainResult(params, adam)
    try:
        for it in range(adam.step_count + 1, cfg.iterations + 1):
            batch = sample_batch(labels[pool], batch_rng(cfg.seed, it), cfg.n_anomaly, cfg.n_normal)
            idx = pool[batch.indices]
            last_good = {k: v.copy() for k, v in params.items()} if out is not None else None
            try:
                parts, total, _ = train_step(params, adam, feats[idx], labels[idx],
                                             weights, class_freq, config)
            except (NumericalFailure, NonFiniteGradientError, tc.NonFiniteError):
                if out is not None:
                    save_checkpoint(out / "checkpoint_last_good.bin", config, last_good)
                raise
            row = (it, parts.detection, parts.classification, parts.attention, total)
            result.history.append(row)
            if log_fh is not None:
                log_fh.write(",".join(repr(v) for v in row) + "\n")
            if cfg.log_every and it % cfg.log_every == 0:
                log.info("iter %d  L_D %.6f  L_C %.6f  L_att %.6f  total %.6f", *row)
            if len(held) and it % cfg.eval_every == 0:
                auc, maa = holdout_metrics(params, feats[held], labels[held], config,
                                           cfg.include_normal_in_maa)
                result.holdout.append((it, auc, maa))
                log.info("iter %d  holdout video AUC %.4f  mAA %.4f", it, auc, maa)
            if out is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint_{it:06d}.bin", config, params, adam)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out is not None:
        save_checkpoint(out / "checkpoint_final.bin", config, params, adam)
    return result
