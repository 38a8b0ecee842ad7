"""Recording ingestion and preprocessing: band-pass, decimation, z-score, chunking."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .errors import (ConfigError, ConstantSignalError, EmptyRecordingError, FormatError,
                     UnsupportedFormatError)


@dataclass
class Recording:
    id: str
    samples: np.ndarray
    sample_rate: float
    label_path: Path | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def with_samples(self, samples: np.ndarray, sample_rate: float | None = None) -> "Recording":
        return replace(self, samples=samples,
                       sample_rate=self.sample_rate if sample_rate is None else sample_rate)


@dataclass
class PreprocessConfig:
    band_low: float = 20.0
    band_high: float = 200.0
    filter_order: int = 4
    target_rate_fine: float = 600.0
    target_rate_global: float = 60.0
    chunk_seconds: float = 10.0

    def __post_init__(self):
        if not 0 < self.band_low < self.band_high < self.target_rate_fine / 2:
            raise ConfigError(
                "need 0 < band_low < band_high < target_rate_fine / 2, got "
                f"{self.band_low}, {self.band_high}, {self.target_rate_fine}")
        if self.filter_order < 1:
            raise ConfigError("filter_order must be >= 1")
        if self.chunk_seconds <= 0:
            raise ConfigError("chunk_seconds must be positive")


_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def load_wav(path: str | Path) -> Recording:
    """Read a PCM WAV file; multichannel files keep channel 0 only."""
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported bit depth" in msg:
            raise UnsupportedFormatError(f"{path}: {msg}") from exc
        raise FormatError(f"{path}: {msg}") from exc
    except Exception as exc:  # struct errors, EOF, ...
        raise FormatError(f"{path}: malformed WAV ({exc})") from exc

    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in _INT_SCALE:
        # scipy left-aligns 24-bit samples in int32, so one scale fits both
        x = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported sample type {data.dtype}")
    if len(x) == 0:
        raise EmptyRecordingError(f"{path}: no audio frames")
    if not np.all(np.isfinite(x)):
        raise FormatError(f"{path}: non-finite samples")
    return Recording(path.stem, x, float(rate))


def write_wav(path: str | Path, rec: Recording, pcm16: bool = True) -> None:
    """Write mono 16-bit PCM (peak-normalized to 0.9 if needed) or 32-bit float."""
    x = np.asarray(rec.samples, dtype=np.float64)
    if pcm16:
        peak = np.max(np.abs(x)) if len(x) else 0.0
        if peak > 0.9:
            x = x * (0.9 / peak)
        data = np.round(x * 32767.0).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(Path(path), int(round(rec.sample_rate)), data)


def bandpass_zero_phase(rec: Recording, cfg: PreprocessConfig) -> Recording:
    if not rec.sample_rate > 2 * cfg.band_high:
        raise ConfigError(
            f"sample rate {rec.sample_rate} Hz must exceed twice band_high ({cfg.band_high} Hz)")
    sos = sps.butter(cfg.filter_order, [cfg.band_low, cfg.band_high], btype="bandpass",
                     output="sos", fs=rec.sample_rate)
    # Pad by odd reflection until the slowest pole has decayed below 1e-13, so the
    # start-up transients of both passes never reach the data. This makes the
    # result covariant under time reversal to rounding error.
    radius = max(np.max(np.abs(np.roots(sec[3:]))) for sec in sos)
    npad = int(math.ceil(math.log(1e-13) / math.log(radius))) if radius > 0 else 1
    x = rec.samples
    if len(x) >= 2:
        ext = np.pad(x, npad, mode="reflect", reflect_type="odd")
    else:
        ext = np.pad(x, npad, mode="edge")
    y = sps.sosfiltfilt(sos, ext, padlen=0)[npad:npad + len(x)]
    return rec.with_samples(y)


def _antialias_fir(up: int, down: int, target_rate: float, fs_up: float) -> np.ndarray:
    # cutoff (-6 dB) at 0.45 * target; 60 dB stop band from the new Nyquist on
    width = 0.1 * target_rate
    numtaps, beta = sps.kaiserord(60.0, width / (0.5 * fs_up))
    numtaps |= 1
    # unit DC gain; resample_poly applies the factor ``up`` itself
    return sps.firwin(numtaps, 0.45 * target_rate, window=("kaiser", beta), fs=fs_up)


def decimate_polyphase(rec: Recording, target_rate: float) -> Recording:
    """Anti-aliased polyphase rate change to ``target_rate``.

    Integer ratios are a plain decimation (up = 1); other ratios go through
    the smallest rational up/down pair.
    """
    if target_rate >= rec.sample_rate:
        raise ConfigError(f"target rate {target_rate} Hz must be below {rec.sample_rate} Hz")
    ratio = Fraction(rec.sample_rate / target_rate).limit_denominator(1000)
    down, up = ratio.numerator, ratio.denominator
    if abs(rec.sample_rate * up / down - target_rate) > 1e-9 * target_rate:
        raise ConfigError(f"cannot express {rec.sample_rate} -> {target_rate} Hz as a rational ratio")
    h = _antialias_fir(up, down, target_rate, rec.sample_rate * up)
    y = sps.resample_poly(rec.samples, up, down, window=h)
    return rec.with_samples(y, float(target_rate))


def zscore(rec: Recording) -> Recording:
    x = rec.samples
    if len(x) < 2:
        raise ConstantSignalError("z-score needs at least two samples")
    mu = x.mean()
    sd = x.std()
    if not sd > 0 or not np.isfinite(sd):
        raise ConstantSignalError(f"recording {rec.id!r} has zero variance")
    return rec.with_samples((x - mu) / sd)


def loop_to_length(x: np.ndarray, n: int) -> np.ndarray:
    reps = math.ceil(n / len(x))
    return np.tile(x, reps)[:n]


def chunk_or_loop(rec: Recording, chunk_seconds: float = 10.0,
                  training: bool = True) -> list[Recording]:
    """Cut into non-overlapping chunks of ``chunk_seconds``.

    Shorter recordings are looped up to one full chunk. A trailing remainder
    is dropped when ``training`` and otherwise looped up to a full chunk.
    Chunk ids are ``<id>#<k>``.
    """
    n = len(rec)
    if n < 1:
        raise EmptyRecordingError(f"recording {rec.id!r} is empty")
    size = int(round(chunk_seconds * rec.sample_rate))
    if n <= size:
        x = rec.samples if n == size else loop_to_length(rec.samples, size)
        return [replace(rec, id=f"{rec.id}#0", samples=x.copy())]
    chunks = []
    full = n // size
    for k in range(full):
        chunks.append(replace(rec, id=f"{rec.id}#{k}", samples=rec.samples[k * size:(k + 1) * size].copy()))
    rest = rec.samples[full * size:]
    if len(rest) and not training:
        chunks.append(replace(rec, id=f"{rec.id}#{full}", samples=loop_to_length(rest, size)))
    return chunks


def preprocess(rec: Recording, cfg: PreprocessConfig | None = None) -> Recording:
    """Band-pass, bring to the fine rate, z-score."""
    cfg = cfg or PreprocessConfig()
    x = bandpass_zero_phase(rec, cfg)
    if x.sample_rate != cfg.target_rate_fine:
        x = decimate_polyphase(x, cfg.target_rate_fine)
    return zscore(x)
