"""Desk-scale synthetic benchmark shared by the acceptance tests and scripts/."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import SynthDataset, SynthSpec, segment_pool, synth_generate
from .evaluation import classify_videos, expand_scores, frame_labels, roc_auc
from .model import ModelConfig, init_params, model_forward
from .train import train

BENCH_SPEC = SynthSpec(n=64, T=32, C=3, train_per_class=60, test_per_class=20,
                       delta=4.0, sigma=1.0)
BENCH_DATA_SEED = 0

# n : n_h kept near the 7168 : 1024 ratio of the full-size model
BENCH_RUN = RunConfig(
    T=32, n=64, n_h=8, d_att1=16, n_det1=32, n_L=16, d_att2=8, n_cls=32, C=3,
    iterations=3000, eval_every=0, checkpoint_every=0, log_every=0,
)

ABLATIONS = {
    "no_attention": dict(use_attn1=False, use_attn2=False),
    "second_level": dict(use_attn1=False, use_attn2=True),
    "both_levels": dict(use_attn1=True, use_attn2=True),
}


@dataclass
class Split:
    records: list
    feats: np.ndarray


def pooled_splits(dataset: SynthDataset, T: int) -> tuple[Split, Split]:
    out = []
    for split in ("train", "test"):
        recs = [r for r in dataset.records if r.split == split]
        feats = np.stack([segment_pool(dataset.clips[r.video_id][0], T) for r in recs])
        out.append(Split(recs, feats))
    return out[0], out[1]


def score_split(params, config: ModelConfig, test: Split, annotations) -> tuple[float, float]:
    """Frame-level AUC and mAA on pre-pooled single-view test features."""
    trace = model_forward(test.feats, params, config)
    scores = np.concatenate([expand_scores(s, r.n_frames) for s, r in zip(trace.S, test.records)])
    labels = np.concatenate([frame_labels(r.n_frames, annotations.get(r.video_id, []))
                             for r in test.records])
    auc = roc_auc(scores, labels)[1]
    _, _, maa = classify_videos(trace.y_hat, [r.class_label for r in test.records], config.C + 1)
    return auc, maa


def run_benchmark(seed: int, iterations: int | None = None, spec: SynthSpec = BENCH_SPEC,
                  data_seed: int = BENCH_DATA_SEED, **overrides) -> tuple[float, float]:
    """Train on the synthetic split with ``seed`` and return (AUC, mAA)."""
    dataset = synth_generate(spec, data_seed)
    train_split, test_split = pooled_splits(dataset, spec.T)
    changes = dict(seed=seed, **overrides)
    if iterations is not None:
        changes["iterations"] = iterations
    cfg = BENCH_RUN.replace(**changes)
    result = train(cfg, train_split.records, train_split.feats)
    return score_split(result.params, cfg.model_config(), test_split, dataset.annotations)


def untrained_auc(seeds, spec: SynthSpec = BENCH_SPEC, data_seed: int = BENCH_DATA_SEED) -> list[float]:
    dataset = synth_generate(spec, data_seed)
    _, test_split = pooled_splits(dataset, spec.T)
    config = BENCH_RUN.model_config()
    return [score_split(init_params(config, s), config, test_split, dataset.annotations)[0]
            for s in seeds]
