"""Frame-level ROC/AUC and mean per-class accuracy."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, VideoRecord, load_segments, multiview_average
from .model import ModelConfig, model_forward

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    roc_points: np.ndarray          # (K, 2) columns fpr, tpr
    auc: float
    per_class_accuracy: np.ndarray  # NaN for classes absent from the test set
    mAA: float
    confusion: np.ndarray


def expand_scores(segment_scores, n_frames: int) -> np.ndarray:
    """Frame j takes the score of segment ``floor(j T / n_frames)``."""
    s = np.asarray(segment_scores, dtype=np.float64)
    T = len(s)
    idx = np.minimum(np.arange(n_frames) * T // n_frames, T - 1)
    return s[idx]


def frame_labels(n_frames: int, intervals) -> np.ndarray:
    """0/1 per frame from 1-based inclusive intervals."""
    y = np.zeros(n_frames, dtype=np.int8)
    for start, end in intervals:
        y[max(start, 1) - 1:min(end, n_frames)] = 1
    return y


def roc_auc(scores, labels) -> tuple[np.ndarray, float]:
    """ROC points over every distinct threshold and the trapezoidal area."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    P = int(labels.sum())
    N = labels.size - P
    if P == 0 or N == 0:
        raise ValueError("ROC needs both positive and negative labels")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    cut = np.flatnonzero(np.diff(s) != 0)
    ends = np.concatenate([cut, [len(s) - 1]])
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    tpr = np.concatenate([[0.0], tp / P])
    fpr = np.concatenate([[0.0], fp / N])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return np.column_stack([fpr, tpr]), auc


def classify_videos(y_hats, labels, n_classes: int | None = None,
                    include_normal: bool = True):
    """Confusion matrix, per-class accuracy and their unweighted mean.

    Prediction is argmax with ties to the lowest index. Classes with no test
    video get NaN accuracy and are left out of the mean.
    """
    y_hats = np.asarray(y_hats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size == 0:
        raise ValueError("empty test set")
    n_classes = n_classes or y_hats.shape[1]
    pred = np.argmax(y_hats, axis=1)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    return (confusion, *accuracy_from_confusion(confusion, include_normal))


def accuracy_from_confusion(confusion, include_normal: bool = True):
    confusion = np.asarray(confusion)
    rows = confusion.sum(axis=1)
    acc = np.full(len(rows), np.nan)
    present = rows > 0
    acc[present] = np.diag(confusion)[present] / rows[present]
    counted = present.copy()
    if not include_normal:
        counted[0] = False
    missing = np.flatnonzero(~present)
    if len(missing):
        log.warning("classes absent from the test set, excluded from mAA: %s", missing.tolist())
    if not counted.any():
        raise ValueError("no class left to average")
    return acc, float(np.mean(acc[counted]))


def predict_video(record: VideoRecord, params, config: ModelConfig, features_dir=None):
    """Detection scores and class posteriors, averaged over crop views."""
    views = load_segments(record, config.T, features_dir)
    trace = model_forward(views, params, config)
    return multiview_average(list(trace.S)), multiview_average(list(trace.y_hat))


def evaluate(params, records, annotations, config: ModelConfig, features_dir=None,
             include_normal: bool = True) -> EvalReport:
    """Global frame-level ROC over all test videos plus classification metrics."""
    records = [r for r in records if r.split == "test"]
    if not records:
        raise DataError("no test videos in manifest")
    for r in records:
        if r.is_anomaly and not annotations.get(r.video_id):
            raise DataError(f"missing annotation for anomaly test video {r.video_id!r}")
    frame_scores, frame_y, y_hats = [], [], []
    for r in records:
        S, y_hat = predict_video(r, params, config, features_dir)
        frame_scores.append(expand_scores(S, r.n_frames))
        frame_y.append(frame_labels(r.n_frames, annotations.get(r.video_id, [])))
        y_hats.append(y_hat)
    roc, auc = roc_auc(np.concatenate(frame_scores), np.concatenate(frame_y))
    confusion, acc, mAA = classify_videos(np.stack(y_hats), [r.class_label for r in records],
                                          config.C + 1, include_normal)
    return EvalReport(roc, auc, acc, mAA, confusion)


# ---------------------------------------------------------------- report files

def write_report(report: EvalReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"auc = {float(report.auc)!r}", f"mAA = {float(report.mAA)!r}",
             "per_class_accuracy = " + " ".join(repr(float(a)) for a in report.per_class_accuracy)]
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    with open(out / "roc.csv", "w") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in report.roc_points:
            fh.write(f"{float(fpr)!r},{float(tpr)!r}\n")
    np.savetxt(out / "confusion.csv", report.confusion, fmt="%d", delimiter=",")


def read_report(out_dir) -> EvalReport:
    out = Path(out_dir)
    kv = {}
    for line in (out / "metrics.txt").read_text().splitlines():
        key, _, val = line.partition("=")
        kv[key.strip()] = val.strip()
    roc = np.loadtxt(out / "roc.csv", delimiter=",", skiprows=1, ndmin=2)
    confusion = np.loadtxt(out / "confusion.csv", delimiter=",", dtype=np.int64, ndmin=2)
    acc = np.array([float(a) for a in kv["per_class_accuracy"].split()])
    return EvalReport(roc, float(kv["auc"]), acc, float(kv["mAA"]), confusion)
