"""Persistence landscapes sampled on a fixed grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import AggregationError, InvalidPairError

DEFAULT_K = 5
DEFAULT_G = 128


def tent(b: float, d: float, eps: float) -> float:
    if b > d:
        raise InvalidPairError(f"birth {b} exceeds death {d}")
    return max(0.0, min(eps - b, d - eps))


@njit(cache=True)
def _landscape(pairs, K, grid):
    """k-max envelope of tent functions; out[k, g] is the (k+1)-th largest."""
    G = grid.shape[0]
    out = np.zeros((K, G))
    for g in range(G):
        eps = grid[g]
        for p in range(pairs.shape[0]):
            v = min(eps - pairs[p, 0], pairs[p, 1] - eps)
            if v <= out[K - 1, g]:
                continue
            r = K - 1
            while r > 0 and out[r - 1, g] < v:
                out[r, g] = out[r - 1, g]
                r -= 1
            out[r, g] = v
    return out


def grid_points(grid_min: float, grid_max: float, G: int) -> np.ndarray:
    return np.linspace(grid_min, grid_max, G)


@dataclass
class LandscapeVector:
    values: np.ndarray  # (K, G)
    grid_min: float
    grid_max: float
    homology_dim: int

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def G(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return grid_points(self.grid_min, self.grid_max, self.G)


def landscape_values(pairs: np.ndarray, K: int, grid: np.ndarray) -> np.ndarray:
    pairs = np.ascontiguousarray(pairs, dtype=np.float64).reshape(-1, 2)
    if len(pairs) and np.any(pairs[:, 0] > pairs[:, 1]):
        raise InvalidPairError("diagram contains a pair with birth > death")
    return _landscape(pairs, int(K), np.ascontiguousarray(grid, dtype=np.float64))


def diagram_to_landscape(diag, dim: int, K: int = DEFAULT_K, G: int = DEFAULT_G,
                         grid_min: float = 0.0, grid_max: float = 1.0) -> LandscapeVector:
    """Sample the first K landscapes of ``diag``'s degree-``dim`` pairs.

    The grid is uniform with both endpoints included. Pairs that stick out of
    the grid are evaluated as-is, nothing is clamped.
    """
    if K < 1 or G < 2 or not grid_min < grid_max:
        raise ValueError(f"need K >= 1, G >= 2, grid_min < grid_max (got {K}, {G}, "
                         f"[{grid_min}, {grid_max}])")
    grid = grid_points(grid_min, grid_max, G)
    return LandscapeVector(landscape_values(diag.pairs(dim), K, grid), grid_min, grid_max, dim)


def mean_landscapes(items: list[LandscapeVector]) -> LandscapeVector:
    if not items:
        raise AggregationError("cannot average an empty list of landscapes")
    first = items[0]
    for lv in items[1:]:
        if (lv.values.shape != first.values.shape or lv.grid_min != first.grid_min
                or lv.grid_max != first.grid_max or lv.homology_dim != first.homology_dim):
            raise AggregationError("landscapes differ in shape, grid or homology degree")
    values = np.mean([lv.values for lv in items], axis=0)
    return LandscapeVector(values, first.grid_min, first.grid_max, first.homology_dim)


def flatten(lv_h0: LandscapeVector, lv_h1: LandscapeVector) -> np.ndarray:
    """[H0 row-major | H1 row-major], length 2*K*G."""
    if lv_h0.values.shape != lv_h1.values.shape:
        raise AggregationError(
            f"H0/H1 landscape shapes differ: {lv_h0.values.shape} vs {lv_h1.values.shape}")
    return np.concatenate([lv_h0.values.ravel(), lv_h1.values.ravel()])


def unflatten(vec: np.ndarray, K: int, G: int, grid_min: float = 0.0,
              grid_max: float = 1.0) -> tuple[LandscapeVector, LandscapeVector]:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (2 * K * G,):
        raise AggregationError(f"expected length {2 * K * G}, got {vec.shape}")
    h0 = vec[: K * G].reshape(K, G)
    h1 = vec[K * G:].reshape(K, G)
    return (LandscapeVector(h0.copy(), grid_min, grid_max, 0),
            LandscapeVector(h1.copy(), grid_min, grid_max, 1))
