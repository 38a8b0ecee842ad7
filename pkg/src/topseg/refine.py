"""Inference-time refinement of framewise posteriors.

Pipeline per recording: fine-scale landscapes -> topology target r(t) ->
reliability eta(t) -> convex refinement of the posteriors on the simplex ->
order/duration-constrained decoding into a label sequence.

The refinement minimises

    sum_t |P_t - Phat_t|^2
      + lambda_s * sum_{t>=1} |P_t - P_{t-1}|^2
      + lambda_b * sum_t (e_t - theta_max)_+^2
      + lambda   * sum_t eta_t (e_t - r_t)^2,      e_t = P_t[S1] + P_t[S2]

over rows P_t on the probability simplex.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit

from .labels import STATES, LabelSequence, PosteriorSequence

EVENT_COLUMNS = (0, 2)  # S1, S2

DEFAULT_MIN_DURATIONS = {"S1": 0.050, "systole": 0.100, "S2": 0.040, "diastole": 0.150}

# recommended ranges for the solver weights
RECOMMENDED_RANGES = {
    "lambda_s": (5e-3, 2e-2),
    "lambda_b": (2e-2, 8e-2),
    "lam": (2e-2, 8e-2),
}


@dataclass
class RefineConfig:
    lambda_s: float = 1e-2
    lambda_b: float = 5e-2
    lam: float = 5e-2
    theta_max: float = 0.65
    n_iter: int = 8
    gamma: float = 2.0
    tau_thr: float = 0.5
    rho: float = 0.90
    norm_window: float = 2.0  # s
    step_size: float | None = None  # None: 1 / Lipschitz bound
    landscape_reduce: str = "max"  # or "mean"
    min_durations: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MIN_DURATIONS))

    def __post_init__(self):
        for name in ("lambda_s", "lambda_b", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.landscape_reduce not in ("max", "mean"):
            raise ValueError("landscape_reduce must be 'max' or 'mean'")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")

    def lipschitz(self) -> float:
        # fidelity 2, smoothness 2*lambda_s*|graph Laplacian| <= 8*lambda_s,
        # event terms 2*w*|a|^2 = 4*w with a = (1, 0, 1, 0)
        return 2.0 * (1.0 + 4.0 * self.lambda_s + 2.0 * self.lambda_b + 2.0 * self.lam)


@dataclass
class TopologyTarget:
    r: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        if self.r.shape != self.eta.shape:
            raise ValueError("r and eta must have the same length")


# --------------------------------------------------------------------------
# topology target and reliability


def landscape_score(fine_block: np.ndarray, K: int, G: int, reduce: str = "max") -> np.ndarray:
    """Per-frame sum over layers (and both degrees) of the reduced landscape."""
    fine_block = np.asarray(fine_block, dtype=float)
    T = fine_block.shape[0]
    lam = fine_block.reshape(T, 2, K, G)
    red = lam.max(axis=3) if reduce == "max" else lam.mean(axis=3)
    return red.sum(axis=(1, 2))


def percentile_normalize(x: np.ndarray, window: int) -> np.ndarray:
    """clip((x - p5) / (p95 - p5), 0, 1) over a centered window of ``window`` frames.

    Windows are truncated at the sequence ends. Where p95 == p5 the output is 0.
    """
    x = np.asarray(x, dtype=float)
    T = len(x)
    half = max(window // 2, 0)
    padded = np.concatenate([np.full(half, np.nan), x, np.full(half, np.nan)])
    win = np.lib.stride_tricks.sliding_window_view(padded, 2 * half + 1)[:T]
    lo, hi = np.nanpercentile(win, [5, 95], axis=1)
    span = hi - lo
    out = np.zeros(T)
    ok = span > 1e-12 * np.maximum(1.0, np.abs(hi))
    out[ok] = np.clip((x[ok] - lo[ok]) / span[ok], 0.0, 1.0)
    return out


def topo_target(fine_block: np.ndarray, K: int, G: int, frame_rate: float,
                cfg: RefineConfig | None = None) -> np.ndarray:
    cfg = cfg or RefineConfig()
    raw = landscape_score(fine_block, K, G, cfg.landscape_reduce)
    return percentile_normalize(raw, int(round(cfg.norm_window * frame_rate)))


def reliability(r: np.ndarray, cfg: RefineConfig | None = None) -> np.ndarray:
    """eta(t) = sigmoid(gamma * (EMA_t - tau)), EMA seeded with r(0)."""
    cfg = cfg or RefineConfig()
    r = np.asarray(r, dtype=float)
    ema = np.empty_like(r)
    if len(r):
        ema[0] = r[0]
        for t in range(1, len(r)):
            ema[t] = cfg.rho * ema[t - 1] + (1.0 - cfg.rho) * r[t]
    return expit(cfg.gamma * (ema - cfg.tau_thr))


def build_target(fine_block: np.ndarray, K: int, G: int, frame_rate: float,
                 cfg: RefineConfig | None = None) -> TopologyTarget:
    r = topo_target(fine_block, K, G, frame_rate, cfg)
    return TopologyTarget(r, reliability(r, cfg))


# --------------------------------------------------------------------------
# simplex projection and the solver


def project_rows(V: np.ndarray) -> np.ndarray:
    """Euclidean projection of every row onto the probability simplex (sort + threshold)."""
    V = np.asarray(V, dtype=float)
    flat = V.reshape(-1, V.shape[-1])
    n = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ks = np.arange(1, n + 1)
    cond = u - css / ks > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(flat)), rho] / (rho + 1)
    return np.maximum(flat - theta[:, None], 0.0).reshape(V.shape)


def simplex_project(v: np.ndarray) -> np.ndarray:
    return project_rows(np.asarray(v, dtype=float)[None, :])[0]


def objective(P: np.ndarray, P_hat: np.ndarray, r: np.ndarray, eta: np.ndarray,
              cfg: RefineConfig) -> float:
    e = P[:, 0] + P[:, 2]
    fid = np.sum((P - P_hat) ** 2)
    smooth = np.sum((P[1:] - P[:-1]) ** 2)
    cap = np.sum(np.maximum(e - cfg.theta_max, 0.0) ** 2)
    align = np.sum(eta * (e - r) ** 2)
    return float(fid + cfg.lambda_s * smooth + cfg.lambda_b * cap + cfg.lam * align)


def gradient(P: np.ndarray, P_hat: np.ndarray, r: np.ndarray, eta: np.ndarray,
             cfg: RefineConfig) -> np.ndarray:
    g = 2.0 * (P - P_hat)
    d = P[1:] - P[:-1]
    g[1:] += 2.0 * cfg.lambda_s * d
    g[:-1] -= 2.0 * cfg.lambda_s * d
    e = P[:, 0] + P[:, 2]
    ge = 2.0 * cfg.lambda_b * np.maximum(e - cfg.theta_max, 0.0) + 2.0 * cfg.lam * eta * (e - r)
    g[:, 0] += ge
    g[:, 2] += ge
    return g


@njit(cache=True)
def _project_into(v, out, u):
    n = v.shape[0]
    for k in range(n):  # insertion sort, descending
        x = v[k]
        j = k
        while j > 0 and u[j - 1] < x:
            u[j] = u[j - 1]
            j -= 1
        u[j] = x
    css = 0.0
    theta = 0.0
    for k in range(n):
        css += u[k]
        t = (css - 1.0) / (k + 1)
        if u[k] - t > 0:
            theta = t
    for c in range(n):
        out[c] = max(v[c] - theta, 0.0)


@njit(cache=True)
def _objective_nb(P, P_hat, r, eta, ls, lb, lam, theta):
    T, C = P.shape
    f = 0.0
    for t in range(T):
        for c in range(C):
            d = P[t, c] - P_hat[t, c]
            f += d * d
            if t > 0:
                d = P[t, c] - P[t - 1, c]
                f += ls * d * d
        e = P[t, 0] + P[t, 2]
        if e > theta:
            f += lb * (e - theta) ** 2
        f += lam * eta[t] * (e - r[t]) ** 2
    return f


@njit(cache=True)
def _pgd_step(P, P_hat, r, eta, ls, lb, lam, theta, step, out):
    """out <- proj(P - step * grad(P)), one pass over the frames."""
    T, C = P.shape
    v = np.empty(C)
    row = np.empty(C)
    buf = np.empty(C)
    for t in range(T):
        e = P[t, 0] + P[t, 2]
        ge = 2.0 * lam * eta[t] * (e - r[t])
        if e > theta:
            ge += 2.0 * lb * (e - theta)
        for c in range(C):
            g = 2.0 * (P[t, c] - P_hat[t, c])
            if t > 0:
                g += 2.0 * ls * (P[t, c] - P[t - 1, c])
            if t < T - 1:
                g -= 2.0 * ls * (P[t + 1, c] - P[t, c])
            if c == 0 or c == 2:
                g += ge
            v[c] = P[t, c] - step * g
        _project_into(v, row, buf)
        for c in range(C):
            out[t, c] = row[c]


def solve_refinement(P_hat: np.ndarray, r: np.ndarray, eta: np.ndarray, cfg: RefineConfig,
                     init: np.ndarray | None = None, n_iter: int | None = None,
                     tol: float = 0.0) -> tuple[np.ndarray, list[float]]:
    """Monotone projected gradient descent.

    Returns the final iterate and the objective after every accepted step
    (entry 0 is the starting point). A step that would raise the objective is
    halved until it does not; ``tol`` stops early once the max-norm change
    drops below it.
    """
    P_hat = np.ascontiguousarray(P_hat, dtype=float)
    r = np.ascontiguousarray(r, dtype=float)
    eta = np.ascontiguousarray(eta, dtype=float)
    n_iter = cfg.n_iter if n_iter is None else n_iter
    step0 = cfg.step_size if cfg.step_size is not None else 1.0 / cfg.lipschitz()
    weights = (float(cfg.lambda_s), float(cfg.lambda_b), float(cfg.lam), float(cfg.theta_max))
    P = project_rows(P_hat if init is None else init)
    P_new = np.empty_like(P)
    F = _objective_nb(P, P_hat, r, eta, *weights)
    history = [F]
    for _ in range(n_iter):
        step = step0
        for _ in range(60):
            _pgd_step(P, P_hat, r, eta, *weights, step, P_new)
            F_new = _objective_nb(P_new, P_hat, r, eta, *weights)
            if F_new <= F:
                break
            step *= 0.5
        else:
            break  # no descent left at machine precision
        change = np.max(np.abs(P_new - P)) if len(P) else 0.0
        P, P_new = P_new, P
        F = F_new
        history.append(F)
        if change <= tol:
            break
    return P, history


def refine_pgd(P_hat: PosteriorSequence, target: TopologyTarget,
               cfg: RefineConfig | None = None, init: np.ndarray | None = None) -> PosteriorSequence:
    cfg = cfg or RefineConfig()
    if len(target.r) != len(P_hat):
        raise ValueError(f"target length {len(target.r)} != posterior length {len(P_hat)}")
    P, _ = solve_refinement(P_hat.P, target.r, target.eta, cfg, init=init)
    return PosteriorSequence(P, P_hat.frame_rate)


# --------------------------------------------------------------------------
# constrained decoding


def min_duration_frames(min_durations: dict[str, float], frame_rate: float) -> np.ndarray:
    return np.array([max(1, math.ceil(min_durations[s] * frame_rate - 1e-9)) for s in STATES],
                    dtype=np.int64)


@njit(cache=True)
def _duration_viterbi(logp, dmin):
    T, S = logp.shape
    offs = np.zeros(S + 1, dtype=np.int64)
    for s in range(S):
        offs[s + 1] = offs[s] + dmin[s]
    X = offs[S]
    score = np.full(X, -np.inf)
    back = np.empty((T, X), dtype=np.int64)
    for s in range(S):
        score[offs[s] + dmin[s] - 1] = logp[0, s]
    back[0, :] = -1
    new = np.empty(X)
    for t in range(1, T):
        for s in range(S):
            prev = (s - 1) % S
            enter = offs[prev] + dmin[prev] - 1  # previous state, duration satisfied
            first = offs[s]
            last = offs[s] + dmin[s] - 1
            if dmin[s] == 1:
                a = score[enter]
                b = score[first]
                if b >= a:
                    new[first] = b
                    back[t, first] = first
                else:
                    new[first] = a
                    back[t, first] = enter
            else:
                new[first] = score[enter]
                back[t, first] = enter
                for d in range(1, dmin[s] - 1):
                    new[first + d] = score[first + d - 1]
                    back[t, first + d] = first + d - 1
                a = score[last - 1]
                b = score[last]
                if b >= a:
                    new[last] = b
                    back[t, last] = last
                else:
                    new[last] = a
                    back[t, last] = last - 1
            for x in range(first, last + 1):
                new[x] += logp[t, s]
        for x in range(X):
            score[x] = new[x]
    best = 0
    for x in range(1, X):
        if score[x] > score[best]:
            best = x
    owner = np.empty(X, dtype=np.int64)
    for s in range(S):
        for x in range(offs[s], offs[s + 1]):
            owner[x] = s
    path = np.empty(T, dtype=np.int64)
    x = best
    for t in range(T - 1, -1, -1):
        path[t] = owner[x]
        x = back[t, x]
    return path, score[best]


def constrained_decode(P: PosteriorSequence,
                       min_durations: dict[str, float] | None = None) -> LabelSequence:
    """Most likely cyclic S1 -> systole -> S2 -> diastole path with minimum run lengths.

    The first and last runs are exempt from the minimum duration. Sequences
    shorter than one minimal cycle fall back to framewise argmax.
    """
    min_durations = min_durations or DEFAULT_MIN_DURATIONS
    dmin = min_duration_frames(min_durations, P.frame_rate)
    if len(P) < dmin.sum():
        warnings.warn(f"{len(P)} frames is shorter than one minimal cycle ({dmin.sum()} frames); "
                      "using framewise argmax", stacklevel=2)
        return P.argmax()
    logp = np.log(np.maximum(P.P, 1e-12))
    path, _ = _duration_viterbi(logp, dmin)
    return LabelSequence(path, P.frame_rate)


def path_log_likelihood(P: np.ndarray, states: np.ndarray) -> float:
    logp = np.log(np.maximum(P, 1e-12))
    return float(logp[np.arange(len(states)), states].sum())
