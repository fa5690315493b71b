"""Feature files, manifests, segment pooling, batch sampling, synthetic data."""
from __future__ import annotations

import csv
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

FEATURE_MAGIC = b"FEAT0001"
_HEADER = struct.Struct("<8sII")
MAX_ELEMENTS = 1 << 31
MANIFEST_HEADER = ["video_id", "split", "class_label", "n_frames", "feature_paths"]
ANNOTATION_HEADER = ["video_id", "start_frame", "end_frame"]


class DataError(Exception):
    """Bad input data: files, manifests, annotations."""


class FeatureFileError(DataError):
    pass


class BadMagicError(FeatureFileError):
    pass


class DimensionOverflowError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


# ---------------------------------------------------------------- feature files

def encode_features(clips: np.ndarray) -> bytes:
    clips = np.asarray(clips)
    if clips.ndim != 2 or clips.shape[0] < 1 or clips.shape[1] < 1:
        raise ValueError(f"clip features must be a non-empty M x n matrix, got {clips.shape}")
    M, n = clips.shape
    return _HEADER.pack(FEATURE_MAGIC, M, n) + clips.astype("<f4").tobytes()


def decode_features(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError(f"file has {len(buf)} bytes, header needs {_HEADER.size}")
    magic, M, n = _HEADER.unpack_from(buf)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if M == 0 or n == 0 or M * n > MAX_ELEMENTS:
        raise DimensionOverflowError(f"invalid dimensions M={M}, n={n}")
    payload = len(buf) - _HEADER.size
    if payload != 4 * M * n:
        raise TruncatedPayloadError(
            f"header declares {M}x{n} = {M * n} floats, payload holds {payload / 4:g}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    return data.reshape(M, n)


def save_features(path, clips: np.ndarray) -> None:
    """Write an ``M x n`` clip matrix; values are stored as float32."""
    Path(path).write_bytes(encode_features(clips))


def load_features(path) -> np.ndarray:
    data = decode_features(Path(path).read_bytes())
    if not np.all(np.isfinite(data)):
        raise FeatureFileError(f"{path}: non-finite feature values")
    return data


# ---------------------------------------------------------------- segments

def segment_bounds(M: int, T: int) -> list[tuple[int, int]]:
    """Clip index range ``[floor(tM/T), floor((t+1)M/T))`` of each segment."""
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    return [(t * M // T, (t + 1) * M // T) for t in range(T)]


def segment_pool(clips: np.ndarray, T: int) -> np.ndarray:
    """Max-pool ``M`` clip vectors into ``T`` segment vectors.

    When a segment's range is empty (``M < T``) it copies clip
    ``min(floor(tM/T), M-1)``.
    """
    clips = np.asarray(clips, dtype=np.float64)
    M = clips.shape[0]
    if M < 1:
        raise ValueError("need at least one clip")
    out = np.empty((T, clips.shape[1]))
    for t, (lo, hi) in enumerate(segment_bounds(M, T)):
        if hi > lo:
            out[t] = clips[lo:hi].max(axis=0)
        else:
            out[t] = clips[min(lo, M - 1)]
    return out


def multiview_average(views: Sequence[np.ndarray]) -> np.ndarray:
    """Mean over crop views of per-segment (or per-class) outputs."""
    if len(views) == 0:
        raise ValueError("no views")
    views = [np.asarray(v, dtype=np.float64) for v in views]
    if len({v.shape for v in views}) != 1:
        raise ValueError(f"views disagree in shape: {[v.shape for v in views]}")
    if len(views) == 1:
        return views[0].copy()
    return np.mean(np.stack(views), axis=0)


# ---------------------------------------------------------------- manifests

@dataclass
class VideoRecord:
    video_id: str
    split: str
    class_label: int
    n_frames: int
    feature_paths: list[str]

    @property
    def is_anomaly(self) -> bool:
        return self.class_label > 0


def read_manifest(path, n_classes: int | None = None) -> list[VideoRecord]:
    """Parse a manifest CSV. ``n_classes`` (Normal included) bounds labels."""
    records, seen = [], set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise DataError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = VideoRecord(row["video_id"], row["split"], int(row["class_label"]),
                                  int(row["n_frames"]),
                                  [p for p in row["feature_paths"].split(";") if p])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
            if rec.video_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate video_id {rec.video_id!r}")
            if rec.split not in ("train", "test"):
                raise DataError(f"{path}:{lineno}: split must be train or test")
            if rec.class_label < 0 or (n_classes is not None and rec.class_label >= n_classes):
                raise DataError(f"{path}:{lineno}: class_label {rec.class_label} out of range")
            if rec.n_frames < 1 or not rec.feature_paths:
                raise DataError(f"{path}:{lineno}: need n_frames >= 1 and a feature path")
            seen.add(rec.video_id)
            records.append(rec)
    return records


def write_manifest(path, records: Sequence[VideoRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow([r.video_id, r.split, r.class_label, r.n_frames, ";".join(r.feature_paths)])


def read_annotations(path) -> dict[str, list[tuple[int, int]]]:
    """Anomalous intervals per video, 1-based inclusive, merged when overlapping."""
    raw: dict[str, list[tuple[int, int]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ANNOTATION_HEADER:
            raise DataError(f"{path}: annotation header must be {','.join(ANNOTATION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                start, end = int(row["start_frame"]), int(row["end_frame"])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: malformed interval") from None
            if not 1 <= start <= end:
                raise DataError(f"{path}:{lineno}: need 1 <= start <= end")
            raw.setdefault(row["video_id"], []).append((start, end))
    return {vid: _merge(iv) for vid, iv in raw.items()}


def _merge(intervals):
    out = []
    for s, e in sorted(intervals):
        if out and s <= out[-1][1] + 1:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out


def write_annotations(path, annotations: dict[str, list[tuple[int, int]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for vid, intervals in annotations.items():
            for s, e in intervals:
                w.writerow([vid, s, e])


def resolve_path(path: str, features_dir=None) -> Path:
    p = Path(path)
    if not p.is_absolute() and features_dir is not None:
        p = Path(features_dir) / p
    return p


def load_segments(record: VideoRecord, T: int, features_dir=None,
                  views: Sequence[int] | None = None) -> np.ndarray:
    """Pooled ``(V, T, n)`` features for the selected crop views (all by default)."""
    idx = range(len(record.feature_paths)) if views is None else views
    out = []
    for v in idx:
        clips = load_features(resolve_path(record.feature_paths[v], features_dir))
        out.append(segment_pool(clips, T))
    return np.stack(out)


# ---------------------------------------------------------------- batches

@dataclass
class Batch:
    indices: np.ndarray   # into the record pool; anomalies first
    labels: np.ndarray


def sample_batch(labels, rng: np.random.Generator, n_anomaly: int = 30,
                 n_normal: int = 30) -> Batch:
    """Uniform draw without replacement of anomaly and normal videos."""
    labels = np.asarray(labels)
    anom = np.flatnonzero(labels > 0)
    norm = np.flatnonzero(labels == 0)
    if len(anom) < n_anomaly or len(norm) < n_normal:
        raise DataError(f"need {n_anomaly} anomaly and {n_normal} normal videos, "
                        f"have {len(anom)} and {len(norm)}")
    idx = np.concatenate([rng.choice(anom, n_anomaly, replace=False),
                          rng.choice(norm, n_normal, replace=False)])
    return Batch(idx, labels[idx])


# ---------------------------------------------------------------- synthetic data

@dataclass
class SynthSpec:
    n: int = 64
    T: int = 32
    C: int = 3
    train_per_class: int = 60
    test_per_class: int = 20
    anomaly_fraction: float = 0.25
    delta: float = 4.0
    sigma: float = 1.0
    clips_min: int = 48
    clips_max: int = 96
    frames_per_clip: int = 16
    n_views: int = 1
    view_noise: float = 0.1

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "SynthSpec":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = (s.strip() for s in line.partition("="))
            if key == "seed":
                continue
            if key not in types:
                raise ValueError(f"unknown synth key {key!r}")
            kw[key] = float(val) if types[key] == "float" else int(val)
        return cls(**kw)


@dataclass
class SynthDataset:
    records: list[VideoRecord]
    annotations: dict[str, list[tuple[int, int]]]
    background: np.ndarray
    directions: np.ndarray          # (C, n) orthonormal rows
    clips: dict[str, list[np.ndarray]] = field(repr=False, default_factory=dict)


def synth_generate(spec: SynthSpec, seed: int) -> SynthDataset:
    """Planted-anomaly features: Gaussian clips around a shared background,
    one contiguous run shifted by ``delta * d_c`` in each class-c video."""
    if spec.C > spec.n:
        raise ValueError(f"cannot build {spec.C} orthogonal directions in {spec.n} dims")
    if not 0 < spec.anomaly_fraction <= 1:
        raise ValueError("anomaly_fraction must lie in (0, 1]")
    if not 1 <= spec.clips_min <= spec.clips_max:
        raise ValueError("need 1 <= clips_min <= clips_max")
    rng = np.random.default_rng(seed)
    background = rng.normal(0.0, 1.0, spec.n)
    q, _ = np.linalg.qr(rng.normal(size=(spec.n, spec.C)))
    directions = q.T.copy()

    records, annotations, clips_by_id = [], {}, {}
    for split, per_class in (("train", spec.train_per_class), ("test", spec.test_per_class)):
        # normals match the total anomaly count
        plan = [(0, i) for i in range(per_class * spec.C)]
        plan += [(c, i) for c in range(1, spec.C + 1) for i in range(per_class)]
        for label, i in plan:
            vid = f"{split}_c{label:02d}_{i:04d}"
            M = int(rng.integers(spec.clips_min, spec.clips_max + 1))
            base = background + spec.sigma * rng.normal(size=(M, spec.n))
            intervals = []
            if label > 0:
                run = max(1, int(round(spec.anomaly_fraction * M)))
                start = int(rng.integers(0, M - run + 1))
                base[start:start + run] += spec.delta * directions[label - 1]
                intervals = [(start * spec.frames_per_clip + 1,
                              (start + run) * spec.frames_per_clip)]
            views = [base]
            for _ in range(1, spec.n_views):
                views.append(base + spec.view_noise * rng.normal(size=base.shape))
            paths = [f"features/{vid}_v{v}.feat" for v in range(spec.n_views)]
            records.append(VideoRecord(vid, split, label, M * spec.frames_per_clip, paths))
            annotations[vid] = intervals
            clips_by_id[vid] = views
    return SynthDataset(records, annotations, background, directions, clips_by_id)


def write_synth(dataset: SynthDataset, spec: SynthSpec, out_dir, seed: int) -> None:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    for rec in dataset.records:
        for path, clips in zip(rec.feature_paths, dataset.clips[rec.video_id]):
            save_features(out / path, clips)
    write_manifest(out / "manifest.csv", dataset.records)
    write_annotations(out / "annotations.csv",
                      {k: v for k, v in dataset.annotations.items() if v})
    (out / "synth_spec.txt").write_text(spec.to_text() + f"seed = {seed}\n")
