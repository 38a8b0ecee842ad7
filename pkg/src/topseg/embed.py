"""Delay-coordinate embedding at the global, meso and fine scales."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientLengthError
from .signal import Recording

GLOBAL_SCALES = ("Global2", "Global4", "Global8")
SCALE_NAMES = GLOBAL_SCALES + ("Meso", "Fine")


@dataclass(frozen=True)
class ScaleConfig:
    name: str
    stream_rate: float  # Hz
    tau: float  # s
    dim: int
    window_multiplier: float = 2.0

    def __post_init__(self):
        if self.name not in SCALE_NAMES:
            raise ConfigError(f"unknown scale {self.name!r}")
        if self.dim < 1 or self.tau <= 0 or self.stream_rate <= 0:
            raise ConfigError(f"{self.name}: need dim >= 1, tau > 0, stream_rate > 0")
        lag = self.tau * self.stream_rate
        if abs(lag - round(lag)) > 1e-6:
            raise ConfigError(
                f"{self.name}: tau = {self.tau} s is not a whole number of samples at "
                f"{self.stream_rate} Hz")

    @property
    def lag(self) -> int:
        """Delay in samples."""
        return int(round(self.tau * self.stream_rate))

    @property
    def span(self) -> int:
        """Samples covered by one embedded point beyond its first sample."""
        return (self.dim - 1) * self.lag

    @property
    def window(self) -> float:
        """Effective window W = (dim - 1) * tau in seconds."""
        return (self.dim - 1) * self.tau

    @property
    def is_global(self) -> bool:
        return self.name in GLOBAL_SCALES


def default_scales() -> list[ScaleConfig]:
    return [
        ScaleConfig("Global2", 60.0, 0.100, 21),
        ScaleConfig("Global4", 60.0, 0.200, 21),
        ScaleConfig("Global8", 60.0, 0.200, 41),
        ScaleConfig("Meso", 600.0, 0.025, 21),
        ScaleConfig("Fine", 600.0, 0.010, 11),
    ]


@dataclass
class EmbeddedTrajectory:
    points: np.ndarray  # (N, dim)
    stream_rate: float
    origin_time: float = 0.0
    lag: int = 1

    def __len__(self) -> int:
        return len(self.points)


def delay_embed(signal: Recording, cfg: ScaleConfig, origin_time: float = 0.0) -> EmbeddedTrajectory:
    """Point i is (s[i], s[i+L], ..., s[i+(dim-1)L]) with L = cfg.lag samples."""
    if abs(signal.sample_rate - cfg.stream_rate) > 1e-9:
        raise ConfigError(
            f"{cfg.name} expects a {cfg.stream_rate} Hz stream, got {signal.sample_rate} Hz")
    x = signal.samples
    n_points = len(x) - cfg.span
    if n_points < 1:
        raise InsufficientLengthError(
            f"scale {cfg.name}: signal of {len(x)} samples is shorter than the embedding "
            f"span of {cfg.span + 1} samples")
    idx = np.arange(n_points)[:, None] + cfg.lag * np.arange(cfg.dim)[None, :]
    return EmbeddedTrajectory(np.ascontiguousarray(x[idx]), cfg.stream_rate, origin_time, cfg.lag)


def average_mutual_information(signal: Recording | np.ndarray, max_lag: int,
                               bins: int = 16) -> np.ndarray:
    """Histogram AMI (nats) for lags 1..max_lag.

    Diagnostic only: the embedding parameters stay at their configured values.
    """
    x = signal.samples if isinstance(signal, Recording) else np.asarray(signal, dtype=float)
    if len(x) < 4 * max_lag:
        raise InsufficientLengthError(f"need at least {4 * max_lag} samples for max_lag={max_lag}")
    edges = np.linspace(x.min(), x.max(), bins + 1)
    codes = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
    out = np.empty(max_lag)
    for lag in range(1, max_lag + 1):
        a = codes[:-lag]
        b = codes[lag:]
        joint = np.bincount(a * bins + b, minlength=bins * bins).reshape(bins, bins)
        pxy = joint / joint.sum()
        px = pxy.sum(axis=1, keepdims=True)
        py = pxy.sum(axis=0, keepdims=True)
        nz = pxy > 0
        out[lag - 1] = np.sum(pxy[nz] * np.log(pxy[nz] / (px @ py)[nz]))
    return out
