"""Framewise sequences (labels, posteriors) and the plain-text interval format.

A label file holds one ``start_seconds end_seconds state`` line per interval,
state being S1, systole, S2, diastole or the integer codes 1-4.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, LabelError

STATES = ("S1", "systole", "S2", "diastole")
S1, SYSTOLE, S2, DIASTOLE = range(4)
_BY_NAME = {name.lower(): i for i, name in enumerate(STATES)}


@dataclass
class LabelSequence:
    states: np.ndarray  # int codes 0..3
    frame_rate: float

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        if self.states.size and (self.states.min() < 0 or self.states.max() > 3):
            raise LabelError("label codes must lie in 0..3")

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class PosteriorSequence:
    """(T, 4) class posteriors, columns ordered S1, systole, S2, diastole."""

    P: np.ndarray
    frame_rate: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        if self.P.ndim != 2 or self.P.shape[1] != 4:
            raise ValueError(f"posteriors must be (T, 4), got {self.P.shape}")

    def __len__(self) -> int:
        return len(self.P)

    def argmax(self) -> LabelSequence:
        return LabelSequence(np.argmax(self.P, axis=1), self.frame_rate)


def parse_state(token: str) -> int:
    tok = token.strip()
    if tok.isdigit():
        code = int(tok)
        if 1 <= code <= 4:
            return code - 1
        raise FormatError(f"state code {code} outside 1-4")
    try:
        return _BY_NAME[tok.lower()]
    except KeyError:
        raise FormatError(f"unknown state {token!r}") from None


def read_intervals(path: str | Path) -> list[tuple[float, float, int]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'start end state', got {line!r}")
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad time value in {line!r}") from None
        if end < start:
            raise FormatError(f"{path}:{lineno}: interval ends before it starts")
        out.append((start, end, parse_state(parts[2])))
    return out


def write_intervals(path: str | Path, intervals) -> None:
    lines = [f"{s:.6f} {e:.6f} {STATES[k]}" for s, e, k in intervals]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def labels_from_intervals(intervals, frame_rate: float, T: int) -> LabelSequence:
    """Label frame t by the interval containing its center (t + 0.5) / frame_rate.

    Frames in gaps keep the previous frame's state; a leading gap is diastole.
    """
    ivs = sorted(intervals, key=lambda iv: (iv[0], iv[1]))
    for (s0, e0, _), (s1, _, _) in zip(ivs, ivs[1:]):
        if s1 < e0 - 1e-9:
            raise LabelError(f"overlapping intervals at {s1:.4f} s (previous ends {e0:.4f} s)")
    centers = (np.arange(T) + 0.5) / frame_rate
    states = np.full(T, -1, dtype=np.int64)
    for s, e, k in ivs:
        lo = np.searchsorted(centers, s, side="left")
        hi = np.searchsorted(centers, e, side="left")
        states[lo:hi] = k
    prev = DIASTOLE
    for t in range(T):
        if states[t] < 0:
            states[t] = prev
        prev = states[t]
    return LabelSequence(states, frame_rate)


def intervals_from_labels(labels: LabelSequence) -> list[tuple[float, float, int]]:
    """Runs of equal state as (start, end, state) with frame-boundary times."""
    s = labels.states
    if len(s) == 0:
        return []
    cut = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], cut])
    ends = np.concatenate([cut, [len(s)]])
    return [(a / labels.frame_rate, b / labels.frame_rate, int(s[a])) for a, b in zip(starts, ends)]


def runs(states: np.ndarray) -> list[tuple[int, int, int]]:
    """(state, start, length) for each run of equal values."""
    s = np.asarray(states)
    if len(s) == 0:
        return []
    cut = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], cut])
    ends = np.concatenate([cut, [len(s)]])
    return [(int(s[a]), int(a), int(b - a)) for a, b in zip(starts, ends)]
