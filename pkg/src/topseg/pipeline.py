"""Recording-level glue: chunked extraction, caching, label alignment, segmentation."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .decoder import Decoder, DecoderConfig
from .errors import CacheInvalidError, LabelError
from .features import (BRANCHES, FeatureConfig, FrameFeatureMatrix, cache_read, cache_write,
                       calibrate_grid, extract_features, frame_count)
from .labels import LabelSequence, PosteriorSequence, labels_from_intervals
from .refine import RefineConfig, build_target, constrained_decode, refine_pgd
from .signal import PreprocessConfig, Recording, chunk_or_loop, preprocess

CALIBRATION_FILE = "calibration.json"


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)


def featurize_recording(raw: Recording, cfg: PipelineConfig) -> FrameFeatureMatrix:
    """Preprocess the whole recording, then extract features chunk by chunk.

    Chunks follow inference mode (a trailing partial chunk is looped to full
    length) and are stacked row-wise. ``meta`` records the chunk layout and the
    true frame count so that both training and inference views can be cut out.
    """
    rec = preprocess(raw, cfg.preprocess)
    chunk_s = cfg.preprocess.chunk_seconds
    chunks = chunk_or_loop(rec, chunk_s, training=False)
    mats = [extract_features(c, cfg.features) for c in chunks]
    per_chunk = mats[0].T
    feats = np.concatenate([m.features for m in mats], axis=0)
    n_full = max(1, int(len(rec) // int(round(chunk_s * rec.sample_rate))))
    meta = dict(mats[0].meta)
    meta.update(n_chunks=len(mats), chunk_frames=per_chunk, full_chunks=n_full,
                n_frames=frame_count(raw.duration, cfg.features.frame_rate),
                duration=raw.duration)
    return FrameFeatureMatrix(feats, cfg.features.frame_rate, raw.id, meta)


def inference_view(fm: FrameFeatureMatrix) -> np.ndarray:
    """Rows covering the original recording, in order."""
    return fm.features[: int(fm.meta["n_frames"])]


def training_chunks(fm: FrameFeatureMatrix, intervals, duration: float | None = None
                    ) -> list[tuple[np.ndarray, np.ndarray]]:
    """(features, labels) per full chunk; a recording shorter than one chunk
    contributes its looped chunk with looped labels."""
    duration = float(fm.meta["duration"] if duration is None else duration)
    rate = fm.frame_rate
    cf = int(fm.meta["chunk_frames"])
    T_true = frame_count(duration, rate)
    truth = labels_from_intervals(intervals, rate, T_true).states
    out = []
    for k in range(int(fm.meta["full_chunks"])):
        t = k * cf / rate + (np.arange(cf) + 0.5) / rate
        idx = np.minimum(np.floor(np.mod(t, duration) * rate).astype(np.int64), T_true - 1)
        out.append((fm.features[k * cf:(k + 1) * cf], truth[idx]))
    return out


def truth_labels(intervals, duration: float, frame_rate: float) -> LabelSequence:
    return labels_from_intervals(intervals, frame_rate, frame_count(duration, frame_rate))


# --------------------------------------------------------------------------
# cache


def cache_path(cache_dir: str | Path, rec_id: str) -> Path:
    return Path(cache_dir) / f"{rec_id}.tseg"


def load_cached(cache_dir: str | Path, rec_id: str, cfg: FeatureConfig,
                dtype=np.float64) -> FrameFeatureMatrix | None:
    """The cached matrix when present and built with ``cfg``; None otherwise."""
    path = cache_path(cache_dir, rec_id)
    if not path.exists():
        return None
    try:
        fm = cache_read(path, expect=cfg.signature(), dtype=dtype)
    except CacheInvalidError:
        return None
    if "n_frames" not in fm.meta or fm.d_topo != cfg.d_topo:
        return None
    return fm


def load_calibration(cache_dir: str | Path) -> dict[str, float] | None:
    path = Path(cache_dir) / CALIBRATION_FILE
    if not path.exists():
        return None
    try:
        grid = json.loads(path.read_text())
        return {b: float(grid[b]) for b in BRANCHES}
    except (ValueError, KeyError, TypeError) as exc:
        raise CacheInvalidError(f"{path}: unreadable calibration") from exc


def save_calibration(cache_dir: str | Path, grid: dict[str, float]) -> None:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump({b: grid[b] for b in BRANCHES}, fh, sort_keys=True)
    os.replace(tmp, cache_dir / CALIBRATION_FILE)


def calibrate(raws: list[Recording], cfg: PipelineConfig, max_recordings: int = 8) -> dict[str, float]:
    """Grid support per branch from the first chunks of up to ``max_recordings``."""
    chunks = []
    for raw in sorted(raws, key=lambda r: r.id)[:max_recordings]:
        rec = preprocess(raw, cfg.preprocess)
        chunks.append(chunk_or_loop(rec, cfg.preprocess.chunk_seconds, training=False)[0])
    return calibrate_grid(chunks, cfg.features)


def with_grid(cfg: PipelineConfig, grid: dict[str, float]) -> PipelineConfig:
    return replace(cfg, features=replace(cfg.features, grid=dict(grid)))


# --------------------------------------------------------------------------
# segmentation


@dataclass
class Segmentation:
    raw: PosteriorSequence
    refined: PosteriorSequence | None
    labels: LabelSequence


def segment_features(model: Decoder, X: np.ndarray, cfg: PipelineConfig,
                     refine: bool = True) -> Segmentation:
    """Decoder posteriors, optional refinement, then constrained decoding."""
    rate = cfg.features.frame_rate
    raw = model.forward(X, rate)
    if not refine:
        return Segmentation(raw, None, constrained_decode(raw, cfg.refine.min_durations))
    fc = cfg.features
    b = fc.block_dim
    fine = np.asarray(X[:, 2 * b:3 * b], dtype=np.float64)
    target = build_target(fine, fc.K, fc.G, rate, cfg.refine)
    ref = refine_pgd(raw, target, cfg.refine)
    return Segmentation(raw, ref, constrained_decode(ref, cfg.refine.min_durations))


def check_labels_cover(intervals, rec_id: str) -> None:
    if not intervals:
        raise LabelError(f"recording {rec_id!r} has an empty label file")
