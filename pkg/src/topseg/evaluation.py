"""Tolerant four-state scoring, pooled reports and subject-level subsampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AggregationError, ConfigError, EvaluationError
from .labels import STATES, LabelSequence, runs

DEFAULT_TOLERANCE = 0.060


def tolerance_frames(tol: float, frame_rate: float) -> int:
    """Whole frames of slack; 60 ms at 60 Hz gives 3."""
    if tol < 0:
        raise ConfigError("tolerance must be non-negative")
    return int(math.floor(tol * frame_rate + 1e-9))


def _dilate(mask: np.ndarray, w: int) -> np.ndarray:
    """out[t] = any(mask[t-w .. t+w])."""
    if w == 0:
        return mask.copy()
    c = np.concatenate([[0], np.cumsum(mask, dtype=np.int64)])
    T = len(mask)
    idx = np.arange(T)
    hi = np.minimum(idx + w + 1, T)
    lo = np.maximum(idx - w, 0)
    return (c[hi] - c[lo]) > 0


@dataclass
class ClassCounts:
    """Per-class tallies: matched/total predicted frames and matched/total truth frames."""

    tp_pred: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    n_pred: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    tp_truth: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))
    n_truth: np.ndarray = field(default_factory=lambda: np.zeros(4, dtype=np.int64))

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(self.tp_pred + other.tp_pred, self.n_pred + other.n_pred,
                           self.tp_truth + other.tp_truth, self.n_truth + other.n_truth)


@dataclass
class EvalReport:
    macro_f1: float
    per_class_f1: tuple[float, ...]
    per_class_precision: tuple[float, ...]
    per_class_recall: tuple[float, ...]
    boundary_tolerance: float
    n_recordings: int
    counts: ClassCounts

    @classmethod
    def from_counts(cls, counts: ClassCounts, tol: float, n_recordings: int) -> "EvalReport":
        prec, rec, f1 = [], [], []
        for c in range(4):
            npd, ntr = counts.n_pred[c], counts.n_truth[c]
            if npd == 0 and ntr == 0:
                # class absent on both sides: nothing to get wrong
                p = r = f = 1.0
            else:
                p = counts.tp_pred[c] / npd if npd else 0.0
                r = counts.tp_truth[c] / ntr if ntr else 0.0
                f = 2 * p * r / (p + r) if p + r > 0 else 0.0
            prec.append(float(p))
            rec.append(float(r))
            f1.append(float(f))
        return cls(float(sum(f1) / 4.0), tuple(f1), tuple(prec), tuple(rec), tol,
                   n_recordings, counts)

    def to_text(self) -> str:
        lines = [f"recordings: {self.n_recordings}",
                 f"tolerance_s: {self.boundary_tolerance:.3f}",
                 f"macro_f1: {self.macro_f1:.4f}"]
        for name, p, r, f in zip(STATES, self.per_class_precision, self.per_class_recall,
                                 self.per_class_f1):
            lines.append(f"  {name:<9s} P={p:.4f} R={r:.4f} F1={f:.4f}")
        return "\n".join(lines)

    def to_keyvalue(self) -> dict[str, str]:
        kv = {"n_recordings": str(self.n_recordings),
              "tolerance": f"{self.boundary_tolerance:.6f}",
              "macro_f1": f"{self.macro_f1:.6f}"}
        for name, p, r, f in zip(STATES, self.per_class_precision, self.per_class_recall,
                                 self.per_class_f1):
            kv[f"f1.{name}"] = f"{f:.6f}"
            kv[f"precision.{name}"] = f"{p:.6f}"
            kv[f"recall.{name}"] = f"{r:.6f}"
        return kv


def _check_pair(pred: LabelSequence, truth: LabelSequence) -> None:
    if abs(pred.frame_rate - truth.frame_rate) > 1e-9:
        raise EvaluationError(f"frame rates differ ({pred.frame_rate} vs {truth.frame_rate})")
    if len(pred) != len(truth):
        raise EvaluationError(f"lengths differ ({len(pred)} vs {len(truth)} frames)")


def score_counts(pred: LabelSequence, truth: LabelSequence,
                 tol: float = DEFAULT_TOLERANCE) -> ClassCounts:
    _check_pair(pred, truth)
    w = tolerance_frames(tol, truth.frame_rate)
    out = ClassCounts()
    for c in range(4):
        pm = pred.states == c
        tm = truth.states == c
        out.n_pred[c] = pm.sum()
        out.n_truth[c] = tm.sum()
        out.tp_pred[c] = np.sum(pm & _dilate(tm, w))
        out.tp_truth[c] = np.sum(tm & _dilate(pm, w))
    return out


def score(pred: LabelSequence, truth: LabelSequence, tol: float = DEFAULT_TOLERANCE) -> EvalReport:
    """Frame-tolerant scoring of one recording.

    A predicted frame is a hit when a truth frame of its class lies within
    +-tol, and symmetrically for recall; precision and recall are counted
    independently and combined into per-class F1.
    """
    return EvalReport.from_counts(score_counts(pred, truth, tol), tol, 1)


def aggregate(reports: list[EvalReport]) -> EvalReport:
    """Pool counts over recordings, then macro-average across classes."""
    if not reports:
        raise AggregationError("no reports to aggregate")
    tols = {r.boundary_tolerance for r in reports}
    if len(tols) != 1:
        raise AggregationError("reports use different tolerances")
    total = ClassCounts()
    for r in reports:
        total = total + r.counts
    return EvalReport.from_counts(total, tols.pop(), sum(r.n_recordings for r in reports))


def score_events(pred: LabelSequence, truth: LabelSequence,
                 tol: float = DEFAULT_TOLERANCE) -> dict[str, float]:
    """Diagnostic onset scoring: greedy one-to-one onset matching within +-tol."""
    _check_pair(pred, truth)
    w = tol * truth.frame_rate + 1e-9
    out = {}
    f1s = []
    for c in range(4):
        po = [s for k, s, _ in runs(pred.states) if k == c]
        to = [s for k, s, _ in runs(truth.states) if k == c]
        used = set()
        tp = 0
        for p in po:
            best = None
            for j, t in enumerate(to):
                if j in used or abs(p - t) > w:
                    continue
                if best is None or abs(p - t) < abs(p - to[best]):
                    best = j
            if best is not None:
                used.add(best)
                tp += 1
        if not po and not to:
            f = 1.0
        else:
            f = 2 * tp / (len(po) + len(to))
        out[STATES[c]] = f
        f1s.append(f)
    out["macro"] = float(np.mean(f1s))
    return out


def subsample_subjects(manifest: dict[str, str], pct: float, seed: int) -> dict[str, str]:
    """Keep all recordings of ceil(pct * n_subjects) randomly chosen subjects.

    ``manifest`` maps recording id to subject id; insertion order is kept.
    """
    if not 0.0 < pct <= 1.0:
        raise ConfigError(f"budget fraction {pct} outside (0, 1]")
    subjects = sorted(set(manifest.values()))
    n = math.ceil(pct * len(subjects) - 1e-9)
    rng = np.random.default_rng(seed)
    chosen = {subjects[i] for i in rng.permutation(len(subjects))[:n]}
    return {r: s for r, s in manifest.items() if s in chosen}


def split_subjects(manifest: dict[str, str], val_fraction: float,
                   seed: int) -> tuple[dict[str, str], dict[str, str]]:
    """Subject-disjoint (train, validation) split; validation gets at least one subject
    whenever there are two or more."""
    subjects = sorted(set(manifest.values()))
    if len(subjects) < 2 or val_fraction <= 0:
        return dict(manifest), {}
    n_val = min(len(subjects) - 1, max(1, round(val_fraction * len(subjects))))
    rng = np.random.default_rng(seed)
    val = {subjects[i] for i in rng.permutation(len(subjects))[:n_val]}
    return ({r: s for r, s in manifest.items() if s not in val},
            {r: s for r, s in manifest.items() if s in val})
