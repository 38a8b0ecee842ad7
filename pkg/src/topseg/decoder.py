"""Framewise temporal decoder (dilated TCN or per-frame MLP) in plain numpy.

Both models end in a per-frame softmax over (S1, systole, S2, diastole) and
are trained on framewise cross-entropy with momentum SGD. Gradients are
derived by hand; ``grad_check`` compares them against central differences.
"""
from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CacheInvalidError, ConfigError, ModelInputError, TrainingError
from .features import read_container
from .labels import PosteriorSequence

log = logging.getLogger(__name__)

N_CLASSES = 4
MODEL_MAGIC = b"TSEGM"
MODEL_VERSION = 1
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass
class DecoderConfig:
    arch: str = "tcn"
    channels: int = 64
    blocks: int = 4
    kernel: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    mlp_hidden: int = 128
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 60
    batch: int = 4
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        self.arch = self.arch.lower()
        self.dilations = tuple(int(d) for d in self.dilations)
        if self.arch not in ("tcn", "mlp"):
            raise ConfigError(f"unknown decoder arch {self.arch!r}")
        if self.arch == "tcn":
            if len(self.dilations) != self.blocks:
                raise ConfigError("need one dilation per TCN block")
            if self.kernel % 2 != 1:
                raise ConfigError("TCN kernel must be odd for symmetric padding")

    @property
    def receptive_field(self) -> int:
        if self.arch == "mlp":
            return 1
        return 1 + (self.kernel - 1) * sum(self.dilations)


def _gelu(x):
    u = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(u)
    return 0.5 * x * (1.0 + th), th


def _gelu_grad(x, th):
    du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * du


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _shift(h, o):
    """out[t] = h[t + o], zero outside."""
    if o == 0:
        return h
    out = np.zeros_like(h)
    T = h.shape[0]
    if abs(o) >= T:
        return out
    if o > 0:
        out[:T - o] = h[o:]
    else:
        out[-o:] = h[:T + o]
    return out


def init_params(cfg: DecoderConfig, input_dim: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    p: dict[str, np.ndarray] = {}
    if cfg.arch == "mlp":
        H = cfg.mlp_hidden
        p["W1"] = rng.standard_normal((input_dim, H)) / math.sqrt(input_dim)
        p["b1"] = np.zeros(H)
        p["W2"] = rng.standard_normal((H, N_CLASSES)) / math.sqrt(H)
        p["b2"] = np.zeros(N_CLASSES)
        return p
    C = cfg.channels
    p["W_in"] = rng.standard_normal((input_dim, C)) / math.sqrt(input_dim)
    p["b_in"] = np.zeros(C)
    for i in range(cfg.blocks):
        p[f"W_conv{i}"] = rng.standard_normal((cfg.kernel, C, C)) / math.sqrt(cfg.kernel * C)
        p[f"b_conv{i}"] = np.zeros(C)
    p["W_out"] = rng.standard_normal((C, N_CLASSES)) / math.sqrt(C)
    p["b_out"] = np.zeros(N_CLASSES)
    return p


def param_group(name: str) -> str:
    if name.startswith("b"):
        return "bias"
    if name in ("W_out", "W2"):
        return "head"
    return "conv"


def forward_logits(params: dict, X: np.ndarray, cfg: DecoderConfig, keep: bool = False):
    """Logits (T, 4) for one sequence X (T, D); with ``keep`` also the activations."""
    if cfg.arch == "mlp":
        z = X @ params["W1"] + params["b1"]
        a, th = _gelu(z)
        logits = a @ params["W2"] + params["b2"]
        return (logits, (X, z, th, a)) if keep else logits
    h = X @ params["W_in"] + params["b_in"]
    cache = [X]
    half = (cfg.kernel - 1) // 2
    for i, dil in enumerate(cfg.dilations):
        W = params[f"W_conv{i}"]
        z = np.zeros_like(h) + params[f"b_conv{i}"]
        for j in range(cfg.kernel):
            z += _shift(h, (j - half) * dil) @ W[j]
        a, th = _gelu(z)
        cache.append((h, z, th))
        h = h + a
    logits = h @ params["W_out"] + params["b_out"]
    cache.append(h)
    return (logits, cache) if keep else logits


def loss_and_grad(params: dict, X: np.ndarray, y: np.ndarray, cfg: DecoderConfig,
                  weight_decay: float = 0.0) -> tuple[float, dict, int]:
    """Summed cross-entropy over frames, its gradient, and the frame count."""
    logits, cache = forward_logits(params, X, cfg, keep=True)
    P = _softmax(logits)
    T = len(y)
    loss = -np.sum(np.log(np.maximum(P[np.arange(T), y], 1e-300)))
    dlog = P.copy()
    dlog[np.arange(T), y] -= 1.0
    g: dict[str, np.ndarray] = {}
    if cfg.arch == "mlp":
        X_, z, th, a = cache
        g["W2"] = a.T @ dlog
        g["b2"] = dlog.sum(axis=0)
        dz = (dlog @ params["W2"].T) * _gelu_grad(z, th)
        g["W1"] = X_.T @ dz
        g["b1"] = dz.sum(axis=0)
    else:
        h_last = cache[-1]
        g["W_out"] = h_last.T @ dlog
        g["b_out"] = dlog.sum(axis=0)
        dh = dlog @ params["W_out"].T
        half = (cfg.kernel - 1) // 2
        for i in reversed(range(len(cfg.dilations))):
            dil = cfg.dilations[i]
            h, z, th = cache[1 + i]
            W = params[f"W_conv{i}"]
            dz = dh * _gelu_grad(z, th)
            gW = np.empty_like(W)
            dh_in = dh.copy()  # residual path
            for j in range(cfg.kernel):
                o = (j - half) * dil
                gW[j] = _shift(h, o).T @ dz
                dh_in += _shift(dz @ W[j].T, -o)
            g[f"W_conv{i}"] = gW
            g[f"b_conv{i}"] = dz.sum(axis=0)
            dh = dh_in
        g["W_in"] = cache[0].T @ dh
        g["b_in"] = dh.sum(axis=0)
    if weight_decay:
        for k, v in params.items():
            if not k.startswith("b"):
                loss += 0.5 * weight_decay * T * np.sum(v * v)
                g[k] = g[k] + weight_decay * T * v
    return float(loss), g, T


def grad_check(params: dict, X: np.ndarray, y: np.ndarray, cfg: DecoderConfig,
               step: float = 1e-4) -> dict[str, float]:
    """Max relative error |a - n| / max(|a| + |n|, 1e-8) per parameter group."""
    if X.shape[0] > 32 or X.shape[1] > 16:
        raise ValueError("grad_check is meant for T <= 32, D <= 16")
    _, g, _ = loss_and_grad(params, X, y, cfg)
    errs = {"conv": 0.0, "bias": 0.0, "head": 0.0}
    for name, P in params.items():
        flat = P.reshape(-1)
        ga = g[name].reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + step
            lp = loss_and_grad(params, X, y, cfg)[0]
            flat[idx] = old - step
            lm = loss_and_grad(params, X, y, cfg)[0]
            flat[idx] = old
            num = (lp - lm) / (2 * step)
            err = abs(ga[idx] - num) / max(abs(ga[idx]) + abs(num), 1e-8)
            grp = param_group(name)
            errs[grp] = max(errs[grp], err)
    return errs


@dataclass
class Decoder:
    cfg: DecoderConfig
    params: dict[str, np.ndarray]
    mean: np.ndarray
    scale: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return len(self.mean)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ModelInputError(
                f"model expects {self.input_dim} feature columns, got {X.shape[-1]}")
        return (X - self.mean) / self.scale

    def forward(self, X: np.ndarray, frame_rate: float = 60.0) -> PosteriorSequence:
        logits = forward_logits(self.params, self.standardize(X), self.cfg)
        return PosteriorSequence(_softmax(logits), frame_rate)


def feature_stats(Xs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and a floored population std, accumulated in float64."""
    n = 0
    s1 = 0.0
    for X in Xs:
        s1 = s1 + X.sum(axis=0, dtype=np.float64)
        n += len(X)
    mean = s1 / n
    s2 = 0.0
    for X in Xs:
        s2 = s2 + np.sum((X - mean) ** 2, axis=0)
    sd = np.sqrt(s2 / n)
    # near-constant columns would blow up on unseen data
    floor = 0.01 * float(np.mean(sd)) if np.any(sd > 0) else 1.0
    return mean, np.maximum(sd, max(floor, 1e-12))


def _dataset_loss(params, data, cfg) -> float:
    tot = 0.0
    n = 0
    for X, y in data:
        logits = forward_logits(params, X, cfg)
        P = _softmax(logits)
        tot -= np.sum(np.log(np.maximum(P[np.arange(len(y)), y], 1e-300)))
        n += len(y)
    return tot / max(n, 1)


def train(dataset: list[tuple[np.ndarray, np.ndarray]], cfg: DecoderConfig,
          validation: list[tuple[np.ndarray, np.ndarray]] | None = None,
          input_dim: int | None = None) -> Decoder:
    """Fit a decoder on (features (T, D), labels (T,)) pairs.

    With ``validation``, training stops after ``cfg.patience`` epochs without
    a validation-loss improvement and the best epoch's parameters are kept.
    ``info`` records the loss traces and the best epoch.
    """
    if not dataset:
        raise TrainingError("training set is empty")
    dims = {X.shape[1] for X, _ in dataset}
    if len(dims) != 1 or (input_dim is not None and dims != {input_dim}):
        raise ModelInputError(f"inconsistent feature widths {sorted(dims)}")
    for X, y in dataset:
        if len(X) != len(y):
            raise ModelInputError("features and labels differ in length")
    mean, scale = feature_stats([X for X, _ in dataset])
    # standardized copies are held in float32 to keep memory at desk scale
    data = [(((X - mean) / scale).astype(np.float32), np.asarray(y, dtype=np.int64))
            for X, y in dataset]
    val = [(((X - mean) / scale).astype(np.float32), np.asarray(y, dtype=np.int64))
           for X, y in (validation or [])]

    params = init_params(cfg, dims.pop())
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(cfg.seed + 1)
    train_trace, val_trace = [], []
    best = (math.inf, -1, None)
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        ep_loss = 0.0
        ep_frames = 0
        for start in range(0, len(order), cfg.batch):
            grads = None
            frames = 0
            for idx in order[start:start + cfg.batch]:
                X, y = data[idx]
                loss, g, T = loss_and_grad(params, X, y, cfg, cfg.weight_decay)
                ep_loss += loss
                frames += T
                if grads is None:
                    grads = g
                else:
                    for k in grads:
                        grads[k] += g[k]
            ep_frames += frames
            for k in params:
                velocity[k] = cfg.momentum * velocity[k] - cfg.lr * grads[k] / frames
                params[k] += velocity[k]
        ep_loss /= ep_frames
        if not math.isfinite(ep_loss):
            raise TrainingError(f"training loss diverged at epoch {epoch}")
        train_trace.append(ep_loss)
        if val:
            vl = _dataset_loss(params, val, cfg)
            val_trace.append(vl)
            if vl < best[0] - 1e-9:
                best = (vl, epoch, {k: v.copy() for k, v in params.items()})
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        log.debug("epoch %d train %.4f val %s", epoch, ep_loss, val_trace[-1] if val else "-")

    k = min(5, len(train_trace))
    if len(train_trace) >= 2 * k and np.mean(train_trace[-k:]) >= np.mean(train_trace[:k]):
        warnings.warn("training loss did not decrease over the run", stacklevel=2)
    if val and best[2] is not None:
        params = best[2]
        best_epoch = best[1]
    else:
        best_epoch = len(train_trace) - 1
    info = {"train_loss": train_trace, "val_loss": val_trace, "best_epoch": best_epoch,
            "epochs_run": len(train_trace)}
    return Decoder(cfg, params, mean, scale, info)


# --------------------------------------------------------------------------
# serialization


def save_model(model: Decoder, path: str | Path) -> None:
    path = Path(path)
    arrays = [("mean", model.mean), ("scale", model.scale)] + list(model.params.items())
    cfg = asdict(model.cfg)
    cfg["dilations"] = list(cfg["dilations"])
    header = {
        "config": cfg,
        "arrays": [[name, list(arr.shape)] for name, arr in arrays],
        "info": {"best_epoch": model.info.get("best_epoch"),
                 "epochs_run": model.info.get("epochs_run")},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<II", MODEL_VERSION, len(blob)))
            fh.write(blob)
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path: str | Path) -> Decoder:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file {path} not found")
    header, body = read_container(path, MODEL_MAGIC, MODEL_VERSION)
    out = {}
    pos = 0
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        chunk = body[pos:pos + 8 * n]
        if len(chunk) != 8 * n:
            raise CacheInvalidError(f"{path}: truncated model data")
        out[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        pos += 8 * n
    cfg = DecoderConfig(**header["config"])
    mean = out.pop("mean")
    scale = out.pop("scale")
    return Decoder(cfg, out, mean, scale, dict(header.get("info", {})))
