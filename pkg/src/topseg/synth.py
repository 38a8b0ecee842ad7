"""Synthetic phonocardiograms with exact four-state labels."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .labels import DIASTOLE, S1, S2, SYSTOLE, LabelSequence, labels_from_intervals
from .signal import Recording

SYSTOLE_FRACTION = 0.3  # S1 onset to S2 onset, as a fraction of the cycle


@dataclass
class SynthConfig:
    heart_rate: float = 75.0  # bpm
    s1_dur: float = 100.0  # ms
    s2_dur: float = 90.0  # ms
    s1_freq: float = 60.0  # Hz
    s2_freq: float = 85.0  # Hz
    noise_snr: float = 20.0  # dB, math.inf for a clean signal
    hr_jitter: float = 0.05
    duration: float = 10.0  # s
    sample_rate: float = 2000.0
    frame_rate: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if not 30.0 <= self.heart_rate <= 240.0:
            raise ConfigError(f"heart_rate {self.heart_rate} bpm is implausible")
        period = 60.0 / self.heart_rate * (1.0 - self.hr_jitter)
        s1, s2 = self.s1_dur / 1000.0, self.s2_dur / 1000.0
        if s1 + s2 >= period or s1 >= SYSTOLE_FRACTION * period \
                or SYSTOLE_FRACTION * period + s2 >= period:
            raise ConfigError("S1/S2 durations do not fit in the shortest cardiac cycle")
        if not 0.0 <= self.hr_jitter < 0.5:
            raise ConfigError("hr_jitter must lie in [0, 0.5)")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ConfigError("duration and sample_rate must be positive")


@dataclass
class SynthRecording:
    recording: Recording
    labels: LabelSequence
    intervals: list[tuple[float, float, int]]


def _burst(t: np.ndarray, start: float, dur: float, freq: float, amp: float,
           phase: float) -> np.ndarray:
    """Gaussian-windowed tone, exactly zero outside [start, start + dur)."""
    inside = (t >= start) & (t < start + dur)
    out = np.zeros_like(t)
    tt = t[inside] - start
    sigma = dur / 6.0
    out[inside] = amp * np.exp(-0.5 * ((tt - dur / 2) / sigma) ** 2) * np.sin(2 * np.pi * freq * tt + phase)
    return out


def synthesize(cfg: SynthConfig, rec_id: str = "synth") -> SynthRecording:
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration * cfg.sample_rate))
    t = np.arange(n) / cfg.sample_rate
    clean = np.zeros(n)
    s1, s2 = cfg.s1_dur / 1000.0, cfg.s2_dur / 1000.0
    base = 60.0 / cfg.heart_rate

    intervals = []
    onset = rng.uniform(0.05, 0.5) * base
    intervals.append((0.0, onset, DIASTOLE))
    while onset < cfg.duration:
        period = base * (1.0 + rng.uniform(-cfg.hr_jitter, cfg.hr_jitter))
        s2_on = onset + SYSTOLE_FRACTION * period
        nxt = onset + period
        clean += _burst(t, onset, s1, cfg.s1_freq, 1.0 + 0.1 * rng.standard_normal(),
                        rng.uniform(0, 2 * np.pi))
        clean += _burst(t, s2_on, s2, cfg.s2_freq, 0.7 + 0.07 * rng.standard_normal(),
                        rng.uniform(0, 2 * np.pi))
        intervals += [(onset, onset + s1, S1), (onset + s1, s2_on, SYSTOLE),
                      (s2_on, s2_on + s2, S2), (s2_on + s2, nxt, DIASTOLE)]
        onset = nxt
    intervals = [(a, min(b, cfg.duration), k) for a, b, k in intervals if a < cfg.duration]

    x = clean
    if math.isfinite(cfg.noise_snr):
        p_sig = np.mean(clean ** 2)
        sd = math.sqrt(p_sig / 10.0 ** (cfg.noise_snr / 10.0))
        x = clean + sd * rng.standard_normal(n)
    T = int(math.ceil(cfg.duration * cfg.frame_rate - 1e-9))
    labels = labels_from_intervals(intervals, cfg.frame_rate, T)
    return SynthRecording(Recording(rec_id, x, cfg.sample_rate), labels, intervals)


def generate(cfg: SynthConfig) -> tuple[Recording, LabelSequence]:
    out = synthesize(cfg)
    return out.recording, out.labels
