"""Sparsified Vietoris-Rips persistent homology in degrees 0 and 1.

The fast path works on the clique complex of a symmetric k-NN graph whose
edges are clipped at a quantile of the k-NN edge lengths. H0 comes from a
union-find sweep; H1 from a Z/2 reduction of the edge/triangle boundary
matrix in its anti-transposed (coboundary) form. Union-find already tells
which edges are negative (they kill an H0 class), so those columns are
cleared up front and only positive-edge columns are reduced.

``oracle_vr_persistence`` is a deliberately naive dense reduction of the
full Rips complex, used to check the fast path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import DegenerateWindowError, OracleSizeError

DEFAULT_Q = 0.95
ORACLE_MAX_POINTS = 16


def knn_k(n: int) -> int:
    return int(math.ceil(math.sqrt(n)))


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _distances(points):
    n, d = points.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for c in range(d):
                diff = points[i, c] - points[j, c]
                s += diff * diff
            out[i, j] = math.sqrt(s)
            out[j, i] = out[i, j]
    return out


@njit(cache=True)
def _quantile_sorted(v, q):
    m = v.shape[0]
    h = (m - 1) * q
    lo = int(math.floor(h))
    if lo >= m - 1:
        return v[m - 1]
    frac = h - lo
    return v[lo] + frac * (v[lo + 1] - v[lo])


@njit(cache=True)
def _sparse_edges(dist, k, q):
    """Symmetric k-NN edges <= clip, sorted by (length, i, j); returns (ei, ej, w, clip)."""
    n = dist.shape[0]
    k = min(k, n - 1)
    adj = np.zeros((n, n), dtype=np.bool_)
    bd = np.empty(k)
    bj = np.empty(k, dtype=np.int64)
    for i in range(n):
        # bounded insertion buffer; strict < keeps the lower index on ties
        filled = 0
        for j in range(n):
            if j == i:
                continue
            d = dist[i, j]
            if filled == k and d >= bd[k - 1]:
                continue
            pos = filled if filled < k else k - 1
            while pos > 0 and bd[pos - 1] > d:
                if pos < k:
                    bd[pos] = bd[pos - 1]
                    bj[pos] = bj[pos - 1]
                pos -= 1
            bd[pos] = d
            bj[pos] = j
            if filled < k:
                filled += 1
        for r in range(filled):
            adj[i, bj[r]] = True
            adj[bj[r], i] = True
    m = 0
    for i in range(n):
        for j in range(i + 1, n):
            if adj[i, j]:
                m += 1
    ei = np.empty(m, dtype=np.int64)
    ej = np.empty(m, dtype=np.int64)
    w = np.empty(m)
    c = 0
    for i in range(n):
        for j in range(i + 1, n):
            if adj[i, j]:
                ei[c] = i
                ej[c] = j
                w[c] = dist[i, j]
                c += 1
    # mergesort is stable, so (i, j) order survives as the tie-break
    order = np.argsort(w, kind="mergesort")
    ei = ei[order]
    ej = ej[order]
    w = w[order]
    clip = _quantile_sorted(w, q)
    keep = 0
    while keep < m and w[keep] <= clip:
        keep += 1
    return ei[:keep], ej[:keep], w[:keep], clip


@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def _h0(ei, ej, w, n, clip):
    """Returns (deaths of merged components, survivor count, negative-edge mask)."""
    parent = np.arange(n)
    deaths = np.empty(max(n - 1, 0))
    negative = np.zeros(w.shape[0], dtype=np.bool_)
    nd = 0
    for e in range(w.shape[0]):
        if w[e] > clip:
            break
        ri = _find(parent, ei[e])
        rj = _find(parent, ej[e])
        if ri == rj:
            continue
        # all components are born at 0; the higher root index dies
        if ri < rj:
            parent[rj] = ri
        else:
            parent[ri] = rj
        deaths[nd] = w[e]
        negative[e] = True
        nd += 1
    return deaths[:nd], n - nd, negative


@njit(cache=True)
def _xor_asc(a, b):
    """Symmetric difference of two strictly ascending int arrays."""
    out = np.empty(a.shape[0] + b.shape[0], dtype=np.int64)
    i = 0
    j = 0
    c = 0
    while i < a.shape[0] and j < b.shape[0]:
        if a[i] < b[j]:
            out[c] = a[i]
            i += 1
            c += 1
        elif a[i] > b[j]:
            out[c] = b[j]
            j += 1
            c += 1
        else:
            i += 1
            j += 1
    while i < a.shape[0]:
        out[c] = a[i]
        i += 1
        c += 1
    while j < b.shape[0]:
        out[c] = b[j]
        j += 1
        c += 1
    return out[:c]


@njit(cache=True)
def _h1(ei, ej, w, n, clip, negative):
    """H1 (birth, death) pairs, zero-persistence dropped, essentials cut at clip.

    Reduces the coboundary matrix (the anti-transposed boundary matrix of the
    edge/triangle complex): one column per positive edge, visited in reverse
    filtration order. Triangles are keyed by their edge indices
    (longest, middle, shortest), which is a valid filtration order.
    """
    m = w.shape[0]
    eidx = np.full((n, n), -1, dtype=np.int64)
    deg = np.zeros(n, dtype=np.int64)
    for e in range(m):
        eidx[ei[e], ej[e]] = e
        eidx[ej[e], ei[e]] = e
        deg[ei[e]] += 1
        deg[ej[e]] += 1
    nbr_start = np.zeros(n + 1, dtype=np.int64)
    for v in range(n):
        nbr_start[v + 1] = nbr_start[v] + deg[v]
    nbr = np.empty(nbr_start[n], dtype=np.int64)
    fill = nbr_start[:n].copy()
    for e in range(m):
        nbr[fill[ei[e]]] = ej[e]
        fill[ei[e]] += 1
        nbr[fill[ej[e]]] = ei[e]
        fill[ej[e]] += 1

    mm = np.int64(m)
    # pivot lookup: owned pivots chained per longest edge (chains are short)
    head = np.full(m, -1, dtype=np.int64)
    link = np.empty(m, dtype=np.int64)
    link_key = np.empty(m, dtype=np.int64)
    columns = [np.empty(0, dtype=np.int64)]
    births = np.empty(m)
    deaths = np.empty(m)
    npairs = 0
    nown = 0
    keys = np.empty(n, dtype=np.int64)
    for e in range(m - 1, -1, -1):
        if negative[e]:
            continue  # cleared: this edge already kills an H0 class
        a = ei[e]
        b = ej[e]
        nt = 0
        for p in range(nbr_start[a], nbr_start[a + 1]):
            v = nbr[p]
            f1 = eidx[b, v]
            if f1 < 0:
                continue
            f0 = eidx[a, v]
            hi = max(e, max(f0, f1))
            lo = min(e, min(f0, f1))
            mid = e + f0 + f1 - hi - lo
            keys[nt] = (hi * mm + mid) * mm + lo
            nt += 1
        col = np.sort(keys[:nt])
        while col.shape[0] > 0:
            piv = col[0]
            slot = head[piv // (mm * mm)]
            while slot >= 0 and link_key[slot] != piv:
                slot = link[slot]
            if slot < 0:
                break
            col = _xor_asc(col, columns[slot + 1])
        if col.shape[0] == 0:
            if clip > w[e]:
                births[npairs] = w[e]
                deaths[npairs] = clip
                npairs += 1
            continue
        piv = col[0]
        hi = piv // (mm * mm)
        link_key[nown] = piv
        link[nown] = head[hi]
        head[hi] = nown
        nown += 1
        columns.append(col)
        death = w[hi]
        if death > w[e]:
            births[npairs] = w[e]
            deaths[npairs] = death
            npairs += 1
    out = np.empty((npairs, 2))
    out[:, 0] = births[:npairs]
    out[:, 1] = deaths[:npairs]
    return out


@njit(cache=True)
def _window_pairs(points, k, q):
    dist = _distances(points)
    ei, ej, w, clip = _sparse_edges(dist, k, q)
    n = points.shape[0]
    deaths, survivors, negative = _h0(ei, ej, w, n, clip)
    nz = 0
    for x in deaths:
        if x > 0.0:
            nz += 1
    n0 = nz + (survivors if clip > 0.0 else 0)
    h0 = np.zeros((n0, 2))
    c = 0
    for x in deaths:
        if x > 0.0:
            h0[c, 1] = x
            c += 1
    while c < n0:
        h0[c, 1] = clip
        c += 1
    h1 = _h1(ei, ej, w, n, clip, negative)
    return h0, h1, clip


# --------------------------------------------------------------------------
# public API


@dataclass
class PersistenceDiagram:
    """Birth-death pairs per homology degree for one window.

    ``h0`` and ``h1`` are (m, 2) arrays of (birth, death). Infinite bars are
    truncated at ``clip_radius``; zero-persistence pairs are never stored.
    """

    h0: np.ndarray
    h1: np.ndarray
    clip_radius: float
    center_time: float = 0.0

    def pairs(self, dim: int) -> np.ndarray:
        if dim == 0:
            return self.h0
        if dim == 1:
            return self.h1
        raise ValueError(f"homology degree {dim} is not computed")

    def sorted(self) -> "PersistenceDiagram":
        return PersistenceDiagram(
            _sort_pairs(self.h0), _sort_pairs(self.h1), self.clip_radius, self.center_time
        )

    def to_text(self) -> str:
        """``dim birth death`` per line, full float precision."""
        lines = []
        for dim in (0, 1):
            for b, d in self.pairs(dim):
                lines.append(f"{dim} {float(b)!r} {float(d)!r}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, clip_radius: float = math.nan) -> "PersistenceDiagram":
        rows: dict[int, list] = {0: [], 1: []}
        for line in text.splitlines():
            if not line.strip():
                continue
            dim, b, d = line.split()
            rows[int(dim)].append((float(b), float(d)))
        return cls(
            np.array(rows[0], dtype=float).reshape(-1, 2),
            np.array(rows[1], dtype=float).reshape(-1, 2),
            clip_radius,
        )


def _sort_pairs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    if len(p) == 0:
        return p
    return p[np.lexsort((p[:, 1], p[:, 0]))]


class SparseEdges(NamedTuple):
    i: np.ndarray
    j: np.ndarray
    length: np.ndarray
    clip_radius: float


@dataclass
class WindowPointCloud:
    points: np.ndarray
    center_time: float = 0.0
    q: float = DEFAULT_Q
    k: int | None = None
    clip_radius: float = field(init=False)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if self.k is None:
            self.k = knn_k(len(self.points))
        self.clip_radius = math.nan

    @property
    def n(self) -> int:
        return len(self.points)


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    return _distances(pts)


def build_sparse_edges(cloud: WindowPointCloud) -> SparseEdges:
    """k-NN edges clipped at the q-quantile of their lengths.

    Sets ``cloud.clip_radius`` as a side effect.
    """
    if cloud.n < 2:
        raise DegenerateWindowError(f"window needs at least 2 points, got {cloud.n}")
    ei, ej, w, clip = _sparse_edges(_distances(cloud.points), int(cloud.k), float(cloud.q))
    cloud.clip_radius = float(clip)
    return SparseEdges(ei, ej, w, float(clip))


def _as_arrays(edges):
    if isinstance(edges, SparseEdges):
        return edges.i, edges.j, edges.length
    edges = list(edges)
    if not edges:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    arr = np.asarray(edges, dtype=float)
    ei = arr[:, 0].astype(np.int64)
    ej = arr[:, 1].astype(np.int64)
    w = arr[:, 2]
    order = np.lexsort((ej, ei, w))
    return ei[order], ej[order], w[order]


def persistence_h0(edges, n: int, clip_radius: float) -> np.ndarray:
    """H0 pairs from a union-find sweep over ``edges`` (elder rule).

    ``edges`` is a SparseEdges or an iterable of (i, j, length).
    """
    ei, ej, w = _as_arrays(edges)
    deaths, survivors, _ = _h0(ei, ej, w, n, float(clip_radius))
    deaths = deaths[deaths > 0]
    surv = np.full(survivors if clip_radius > 0 else 0, float(clip_radius))
    d = np.concatenate([deaths, surv])
    return np.column_stack([np.zeros_like(d), d])


def persistence_h1(edges, n: int, clip_radius: float) -> np.ndarray:
    """H1 pairs of the clique complex spanned by ``edges``."""
    ei, ej, w = _as_arrays(edges)
    keep = w <= clip_radius
    ei, ej, w = ei[keep], ej[keep], w[keep]
    _, _, negative = _h0(ei, ej, w, n, float(clip_radius))
    return _h1(ei, ej, w, n, float(clip_radius), negative)


def window_diagram(points: np.ndarray, q: float = DEFAULT_Q, k: int | None = None,
                   center_time: float = 0.0) -> PersistenceDiagram:
    """Full fast path for one window: k-NN graph, clipping, H0 and H1."""
    cloud = WindowPointCloud(points, center_time=center_time, q=q, k=k)
    if cloud.n < 2:
        raise DegenerateWindowError(f"window needs at least 2 points, got {cloud.n}")
    h0, h1, clip = _window_pairs(cloud.points, int(cloud.k), float(q))
    return PersistenceDiagram(h0, h1, float(clip), center_time)


def oracle_vr_persistence(points: np.ndarray, clip_radius: float) -> PersistenceDiagram:
    """Reference persistence of the full Rips complex by dense column reduction.

    No sparsification, no clearing, no early exit. Only meant for tiny clouds.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = len(pts)
    if n > ORACLE_MAX_POINTS:
        raise OracleSizeError(f"oracle handles at most {ORACLE_MAX_POINTS} points, got {n}")
    dist = pairwise_distances(pts)

    simplices = [((v,), 0.0) for v in range(n)]
    for i, j in combinations(range(n), 2):
        if dist[i, j] <= clip_radius:
            simplices.append(((i, j), dist[i, j]))
    for i, j, k in combinations(range(n), 3):
        diam = max(dist[i, j], dist[i, k], dist[j, k])
        if diam <= clip_radius:
            simplices.append(((i, j, k), diam))
    simplices.sort(key=lambda s: (s[1], len(s[0]), s[0]))
    index = {s: r for r, (s, _) in enumerate(simplices)}

    size = len(simplices)
    boundary = np.zeros((size, size), dtype=bool)
    for c, (s, _) in enumerate(simplices):
        if len(s) > 1:
            for face in combinations(s, len(s) - 1):
                boundary[index[face], c] = True

    def low(col):
        nz = np.flatnonzero(col)
        return nz[-1] if len(nz) else -1

    low_owner: dict[int, int] = {}
    pivots = {}
    for c in range(size):
        lo = low(boundary[:, c])
        while lo >= 0 and lo in low_owner:
            boundary[:, c] ^= boundary[:, low_owner[lo]]
            lo = low(boundary[:, c])
        if lo >= 0:
            low_owner[lo] = c
            pivots[lo] = c

    out: dict[int, list] = {0: [], 1: []}
    killed = set(pivots.values())
    for r, (s, val) in enumerate(simplices):
        dim = len(s) - 1
        if dim > 1:
            continue
        if r in pivots:
            death = simplices[pivots[r]][1]
        elif r in killed:
            continue  # negative simplex, not a birth
        else:
            death = clip_radius
        if death > val:
            out[dim].append((val, death))
    return PersistenceDiagram(
        _sort_pairs(np.array(out[0]).reshape(-1, 2)),
        _sort_pairs(np.array(out[1]).reshape(-1, 2)),
        float(clip_radius),
    )
