"""INI run configuration.

Sections mirror the modules::

    [preprocess]      band_low, band_high, filter_order, target_rate_fine, ...
    [features]        K, G, q, m, frame_rate
    [scales.Meso]     tau, dim, stream_rate (one section per scale)
    [refine]          lambda_s, lambda_b, lambda, theta_max, n_iter, ...,
                      min_duration.S1, min_duration.systole, ...
    [decoder]         arch, channels, blocks, kernel, dilations, lr, epochs, ...
    [run]             data_dir, cache_dir, model, out_dir, budget, seed, jobs, tol

Command-line flags override file values, which override defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

from .decoder import DecoderConfig
from .errors import ConfigError
from .evaluation import DEFAULT_TOLERANCE
from .features import FeatureConfig
from .labels import STATES
from .pipeline import PipelineConfig
from .refine import RefineConfig
from .signal import PreprocessConfig

CACHE_ENV = "TOPSEG_CACHE_DIR"


@dataclass
class RunPaths:
    data_dir: str = "."
    cache_dir: str = ""
    model: str = "topseg.tsegm"
    out_dir: str = "topseg_out"
    budget: float = 100.0  # percent of subjects
    seed: int = 0
    jobs: int = 0  # 0 = all cores
    tol: float = DEFAULT_TOLERANCE
    val_fraction: float = 0.2

    def resolved_cache_dir(self) -> Path:
        if self.cache_dir:
            return Path(self.cache_dir)
        env = os.environ.get(CACHE_ENV)
        if env:
            return Path(env)
        return Path(self.data_dir) / "cache"

    def n_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)


@dataclass
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    paths: RunPaths = field(default_factory=RunPaths)


def _coerce(raw: str, default, hint, key: str):
    try:
        if hint is bool or isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, tuple) or typing.get_origin(hint) is tuple:
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float) or default is None:
            if default is None and raw.strip().lower() in ("", "none", "auto"):
                return None
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def _apply(obj, items: dict[str, str], section: str, rename: dict[str, str] | None = None):
    rename = rename or {}
    names = {f.name: f for f in dataclasses.fields(obj)}
    hints = typing.get_type_hints(type(obj))
    updates = {}
    for key, raw in items.items():
        attr = rename.get(key, key)
        if attr not in names:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        updates[attr] = _coerce(raw, getattr(obj, attr), hints.get(attr), f"[{section}] {key}")
    return replace(obj, **updates) if updates else obj


def _refine_section(cfg: RefineConfig, items: dict[str, str]) -> RefineConfig:
    mins = dict(cfg.min_durations)
    plain = {}
    for key, raw in items.items():
        if key.startswith("min_duration."):
            state = key.split(".", 1)[1]
            match = [s for s in STATES if s.lower() == state.lower()]
            if not match:
                raise ConfigError(f"[refine] unknown state in {key!r}")
            mins[match[0]] = _coerce(raw, 0.0, float, f"[refine] {key}")
        else:
            plain[key] = raw
    out = _apply(cfg, plain, "refine", {"lambda": "lam"})
    return replace(out, min_durations=mins)


def load_config(path: str | Path | None = None) -> RunConfig:
    """Defaults, overlaid with ``path`` when given."""
    run = RunConfig()
    if path is None:
        return run
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case sensitive (K, G)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    pipe = run.pipeline
    pre, feat, ref, dec = pipe.preprocess, pipe.features, pipe.refine, pipe.decoder
    scales = {s.name: s for s in feat.scales}
    paths = run.paths
    for sec in cp.sections():
        items = dict(cp.items(sec))
        if sec == "preprocess":
            pre = _apply(pre, items, sec)
        elif sec == "features":
            feat = _apply(feat, items, sec)
        elif sec.startswith("scales."):
            name = sec.split(".", 1)[1]
            if name not in scales:
                raise ConfigError(f"[{sec}] unknown scale {name!r}")
            scales[name] = _apply(scales[name], items, sec)
        elif sec == "refine":
            ref = _refine_section(ref, items)
        elif sec == "decoder":
            dec = _apply(dec, items, sec)
        elif sec == "run":
            paths = _apply(paths, items, sec)
        else:
            raise ConfigError(f"unknown config section [{sec}]")
    feat = replace(feat, scales=[scales[s.name] for s in feat.scales])
    return RunConfig(PipelineConfig(pre, feat, ref, dec), paths)
