"""Multi-scale window sweeps, frame assignment, concatenation and the feature cache.

Column layout of a frame feature matrix is [global | meso | fine], and inside
every block [H0 landscapes | H1 landscapes], each row-major (K, G).
"""
from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .embed import EmbeddedTrajectory, ScaleConfig, default_scales, delay_embed
from .errors import CacheInvalidError, ConfigError, InsufficientLengthError
from .homology import DEFAULT_Q, _sparse_edges, _distances, _window_pairs, knn_k
from .landscape import DEFAULT_G, DEFAULT_K, _landscape, grid_points
from .signal import PreprocessConfig, Recording, decimate_polyphase

BRANCHES = ("global", "meso", "fine")
CACHE_MAGIC = b"TSEG"
CACHE_VERSION = 1


def branch_of(scale: ScaleConfig) -> str:
    return "global" if scale.is_global else scale.name.lower()


@dataclass
class FeatureConfig:
    K: int = DEFAULT_K
    G: int = DEFAULT_G
    q: float = DEFAULT_Q
    m: float = 2.0
    frame_rate: float = 60.0
    scales: list[ScaleConfig] = field(default_factory=default_scales)
    # landscape grid support [0, R] per branch; None means "calibrate"
    grid: dict[str, float] | None = None

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ConfigError(f"q must lie in (0, 1], got {self.q}")
        if not 1.0 <= self.m:
            raise ConfigError(f"window multiplier m must be >= 1, got {self.m}")
        if self.K < 1 or self.G < 2:
            raise ConfigError("need K >= 1 and G >= 2")
        names = {s.name for s in self.scales}
        if names != {"Global2", "Global4", "Global8", "Meso", "Fine"}:
            raise ConfigError(f"expected the five standard scales, got {sorted(names)}")

    @property
    def block_dim(self) -> int:
        return 2 * self.K * self.G

    @property
    def d_topo(self) -> int:
        return len(BRANCHES) * self.block_dim

    def scale(self, name: str) -> ScaleConfig:
        return next(s for s in self.scales if s.name == name)

    def signature(self) -> dict:
        """Everything a cached matrix depends on."""
        return {
            "K": self.K, "G": self.G, "q": self.q, "m": self.m,
            "frame_rate": self.frame_rate,
            "scales": [asdict(s) for s in self.scales],
            "grid": None if self.grid is None else {b: float(self.grid[b]) for b in BRANCHES},
        }


@dataclass
class WindowSweepConfig:
    scale: ScaleConfig
    m: float = 2.0
    max_window_samples: int | None = None

    @property
    def window_samples(self) -> int:
        n = int(round(self.m * self.scale.window * self.scale.stream_rate))
        if self.max_window_samples is not None:
            n = min(n, self.max_window_samples)
        return n

    @property
    def window_len(self) -> float:
        return self.window_samples / self.scale.stream_rate

    @property
    def hop(self) -> float:
        return 1.0 / self.scale.stream_rate

    @property
    def points_per_window(self) -> int:
        return self.window_samples - self.scale.span


@dataclass
class FrameFeatureMatrix:
    features: np.ndarray  # (T, D)
    frame_rate: float
    recording_id: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def d_topo(self) -> int:
        return self.features.shape[1]


def frame_count(duration: float, frame_rate: float) -> int:
    return int(math.ceil(duration * frame_rate - 1e-9))


def frame_times(T: int, frame_rate: float) -> np.ndarray:
    return (np.arange(T) + 0.5) / frame_rate


# --------------------------------------------------------------------------
# sweeps


@njit(cache=True)
def _sweep(traj, starts, n_points, k, q, K, grid):
    G = grid.shape[0]
    out = np.zeros((starts.shape[0], 2 * K * G))
    for r in range(starts.shape[0]):
        pts = traj[starts[r]:starts[r] + n_points]
        h0, h1, clip = _window_pairs(pts, k, q)
        out[r, :K * G] = _landscape(h0, K, grid).ravel()
        out[r, K * G:] = _landscape(h1, K, grid).ravel()
    return out


@njit(cache=True)
def _sweep_clip(traj, starts, n_points, k, q):
    out = np.empty(starts.shape[0])
    for r in range(starts.shape[0]):
        pts = traj[starts[r]:starts[r] + n_points]
        out[r] = _sparse_edges(_distances(pts), k, q)[3]
    return out


def _window_centers(traj: EmbeddedTrajectory, cfg: WindowSweepConfig, n_windows: int) -> np.ndarray:
    half = (cfg.window_samples - 1) / 2.0
    return traj.origin_time + (np.arange(n_windows) + half) / traj.stream_rate


def _n_windows(traj: EmbeddedTrajectory, cfg: WindowSweepConfig) -> int:
    return len(traj) - cfg.points_per_window + 1


def bracketing_windows(centers: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Indices of the windows that linear interpolation at ``times`` reads."""
    j = np.searchsorted(centers, times, side="right") - 1
    idx = np.concatenate([j, j + 1])
    idx = np.clip(idx, 0, len(centers) - 1)
    return np.unique(idx)


def sweep_scale(traj: EmbeddedTrajectory, cfg: WindowSweepConfig, K: int, G: int,
                grid_max: float, q: float = DEFAULT_Q,
                times: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Slide a window one sample at a time, returning (centers, (N, 2KG) landscapes).

    A window starting at sample i holds the embedded points i .. i+n-1 where
    n = window_samples - span, so every point lies inside the window. With
    ``times`` only the windows bracketing those times are evaluated; linear
    interpolation at ``times`` is unchanged by the omission.
    """
    n_points = cfg.points_per_window
    n_win = _n_windows(traj, cfg)
    if n_points < 2 or n_win < 1:
        warnings.warn(f"scale {cfg.scale.name}: trajectory of {len(traj)} points is shorter "
                      f"than one window", stacklevel=2)
        return np.empty(0), np.empty((0, 2 * K * G))
    centers = _window_centers(traj, cfg, n_win)
    starts = np.arange(n_win) if times is None else bracketing_windows(centers, times)
    grid = grid_points(0.0, grid_max, G)
    vecs = _sweep(traj.points, starts.astype(np.int64), n_points, knn_k(n_points), float(q),
                  int(K), grid)
    return centers[starts], vecs


def interpolate_stream(centers: np.ndarray, values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Per-column linear interpolation with constant extrapolation at the ends."""
    values = np.asarray(values, dtype=float)
    if len(centers) == 0:
        raise ValueError("cannot interpolate an empty stream")
    if len(centers) == 1:
        return np.repeat(values[:1], len(times), axis=0)
    j = np.clip(np.searchsorted(centers, times, side="right") - 1, 0, len(centers) - 2)
    c0 = centers[j]
    c1 = centers[j + 1]
    w = np.clip((times - c0) / (c1 - c0), 0.0, 1.0)[:, None]
    return values[j] * (1.0 - w) + values[j + 1] * w


def resample_to_frames(centers: np.ndarray, values: np.ndarray, target_rate: float,
                       T: int) -> np.ndarray:
    return interpolate_stream(centers, values, frame_times(T, target_rate))


def assemble_global(streams: list[tuple[np.ndarray, np.ndarray]],
                    times: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Element-wise mean of the global-scale streams.

    At each time only the streams whose center range covers it contribute;
    times covered by none copy the nearest covered time.
    """
    streams = [(np.asarray(c, float), np.asarray(v, float)) for c, v in streams if len(c)]
    if not streams:
        raise InsufficientLengthError("no global-scale stream produced a window")
    if times is None:
        times = np.unique(np.concatenate([c for c, _ in streams]))
    times = np.asarray(times, dtype=float)
    total = np.zeros((len(times), streams[0][1].shape[1]))
    count = np.zeros(len(times))
    for c, v in streams:
        inside = (times >= c[0]) & (times <= c[-1])
        if inside.any():
            total[inside] += interpolate_stream(c, v, times[inside])
            count[inside] += 1
    defined = np.flatnonzero(count > 0)
    if len(defined) == 0:
        # no time is covered by any stream: fall back to the nearest stream values
        allc = np.concatenate([c for c, _ in streams])
        allv = np.concatenate([v for _, v in streams])
        order = np.argsort(allc, kind="mergesort")
        return times, interpolate_stream(allc[order], allv[order], times)
    out = np.empty_like(total)
    out[defined] = total[defined] / count[defined, None]
    missing = np.flatnonzero(count == 0)
    if len(missing):
        nearest = defined[np.clip(np.searchsorted(defined, missing), 0, len(defined) - 1)]
        left = defined[np.clip(np.searchsorted(defined, missing) - 1, 0, len(defined) - 1)]
        pick = np.where(np.abs(times[left] - times[missing]) <= np.abs(times[nearest] - times[missing]),
                        left, nearest)
        out[missing] = out[pick]
    return times, out


# --------------------------------------------------------------------------
# extraction


def _sweep_configs(cfg: FeatureConfig, n60: int, n600: int) -> dict[str, WindowSweepConfig]:
    out = {}
    for sc in cfg.scales:
        cap = n60 if sc.is_global else n600
        # the 8 s global window with m = 2 outruns a 10 s chunk; cap it
        out[sc.name] = WindowSweepConfig(sc, cfg.m, cap if sc.is_global else None)
    return out


def _streams(rec600: Recording, rec60: Recording, cfg: FeatureConfig):
    sweeps = _sweep_configs(cfg, len(rec60), len(rec600))
    for sc in cfg.scales:
        src = rec60 if sc.is_global else rec600
        sw = sweeps[sc.name]
        if sw.points_per_window < 2 or len(src) < sw.window_samples:
            raise InsufficientLengthError(
                f"recording {rec600.id!r} ({rec600.duration:.2f} s) is too short for scale "
                f"{sc.name} (window {sw.window_len:.2f} s, embedding span "
                f"{sc.span / sc.stream_rate:.2f} s)")
        yield sc, sw, delay_embed(src, sc)


def global_stream(rec600: Recording, cfg: PreprocessConfig | None = None) -> Recording:
    cfg = cfg or PreprocessConfig()
    return decimate_polyphase(rec600, cfg.target_rate_global)


def calibrate_grid(recordings: list[Recording], cfg: FeatureConfig,
                   windows_per_scale: int = 64) -> dict[str, float]:
    """Median clip radius per branch over evenly spaced windows of ``recordings``.

    ``recordings`` are preprocessed fine-rate streams.
    """
    radii: dict[str, list[float]] = {b: [] for b in BRANCHES}
    for rec in recordings:
        rec60 = global_stream(rec)
        for sc, sw, traj in _streams(rec, rec60, cfg):
            n_win = _n_windows(traj, sw)
            starts = np.unique(np.linspace(0, n_win - 1, min(windows_per_scale, n_win)).astype(np.int64))
            n = sw.points_per_window
            radii[branch_of(sc)].extend(_sweep_clip(traj.points, starts, n, knn_k(n), float(cfg.q)))
    out = {}
    for b, vals in radii.items():
        r = float(np.median(vals)) if vals else 0.0
        out[b] = r if r > 0 else 1.0
    return out


def extract_features(rec600: Recording, cfg: FeatureConfig | None = None,
                     rec60: Recording | None = None) -> FrameFeatureMatrix:
    """Topological frame features for one preprocessed fine-rate recording.

    Frames sit at (t + 0.5) / frame_rate. If ``cfg.grid`` is None the grid
    support is calibrated on this recording alone.
    """
    cfg = cfg or FeatureConfig()
    if rec60 is None:
        rec60 = global_stream(rec600)
    grid = cfg.grid if cfg.grid is not None else calibrate_grid([rec600], cfg)
    T = frame_count(rec600.duration, cfg.frame_rate)
    times = frame_times(T, cfg.frame_rate)

    global_streams = []
    blocks = {}
    for sc, sw, traj in _streams(rec600, rec60, cfg):
        centers, vecs = sweep_scale(traj, sw, cfg.K, cfg.G, grid[branch_of(sc)], cfg.q, times)
        if sc.is_global:
            global_streams.append((centers, vecs))
        else:
            blocks[branch_of(sc)] = interpolate_stream(centers, vecs, times)
    blocks["global"] = assemble_global(global_streams, times)[1]
    feats = np.concatenate([blocks[b] for b in BRANCHES], axis=1)
    meta = cfg.signature()
    meta["grid"] = {b: float(grid[b]) for b in BRANCHES}
    return FrameFeatureMatrix(feats, cfg.frame_rate, rec600.id, meta)


# --------------------------------------------------------------------------
# cache


def cache_write(fm: FrameFeatureMatrix, path: str | Path) -> None:
    """Atomically write ``TSEG | version | header | float32 matrix`` (little endian)."""
    path = Path(path)
    header = dict(fm.meta)
    header.update(recording_id=fm.recording_id, frame_rate=fm.frame_rate,
                  rows=int(fm.features.shape[0]), cols=int(fm.features.shape[1]))
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    data = np.ascontiguousarray(fm.features, dtype="<f4").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<II", CACHE_VERSION, len(blob)))
            fh.write(blob)
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path: Path, magic: bytes, version: int) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CacheInvalidError(f"{path}: {exc}") from exc
    head = len(magic) + 8
    if len(raw) < head or raw[:len(magic)] != magic:
        raise CacheInvalidError(f"{path}: bad magic")
    ver, hlen = struct.unpack("<II", raw[len(magic):head])
    if ver != version:
        raise CacheInvalidError(f"{path}: format version {ver}, expected {version}")
    if len(raw) < head + hlen:
        raise CacheInvalidError(f"{path}: truncated header")
    try:
        header = json.loads(raw[head:head + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CacheInvalidError(f"{path}: unreadable header") from exc
    return header, raw[head + hlen:]


def cache_read(path: str | Path, expect: dict | None = None,
               dtype=np.float64) -> FrameFeatureMatrix:
    """Read a cache file; ``expect`` (a FeatureConfig.signature()) must match its header."""
    header, body = read_container(Path(path), CACHE_MAGIC, CACHE_VERSION)
    try:
        rows, cols = int(header["rows"]), int(header["cols"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CacheInvalidError(f"{path}: header lacks shape") from exc
    if len(body) != rows * cols * 4:
        raise CacheInvalidError(f"{path}: expected {rows * cols * 4} data bytes, found {len(body)}")
    if expect is not None:
        for key, val in expect.items():
            if val is None and key == "grid":
                continue
            if json.loads(json.dumps(val)) != header.get(key):
                raise CacheInvalidError(f"{path}: {key} differs from the current config")
    feats = np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(dtype)
    meta = {k: v for k, v in header.items() if k not in ("rows", "cols", "recording_id")}
    return FrameFeatureMatrix(feats, float(header["frame_rate"]), header.get("recording_id", ""), meta)
