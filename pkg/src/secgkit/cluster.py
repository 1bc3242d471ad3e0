"""Density clustering of the 2D embedding, plus the k-distance diagnostic.

DBSCAN semantics are pinned deterministically so results are reproducible
and independently checkable:

- a point is core when its eps-neighborhood (inclusive of itself, distances
  compared with <=) holds at least min_pts points;
- clusters are the connected components of the core points under the
  eps-neighbor relation, numbered 0, 1, ... by their smallest core index
  (identical to discovery order under an ascending scan);
- a non-core point within eps of at least one core point joins the
  lowest-numbered such cluster; everything else is an outlier (-1).

Neighbor queries run on a uniform grid with cell size eps, which changes the
complexity, not the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # -1 = outlier, else contiguous ids from 0
    eps: float
    min_pts: int

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if (self.labels >= 0).any() else 0

    @property
    def outlier_fraction(self) -> float:
        return float((self.labels == -1).mean()) if len(self.labels) else 0.0


def k_distance(points: np.ndarray, k: int = 4) -> np.ndarray:
    """Distance from each point to its k-th nearest neighbor, sorted descending.

    The default k follows the twice-the-dimensionality rule of thumb for a 2D
    embedding. The sorted curve is the elbow diagnostic used to choose eps.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    n = len(pts)
    if n <= k:
        raise ClusteringError(f"need more than k={k} points, got {n}")
    out = np.empty(n)
    chunk = max(1, int(2e7) // max(n, 1))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        d2 = ((pts[lo:hi, None, :] - pts[None, :, :]) ** 2).sum(-1)
        part = np.partition(d2, k, axis=1)[:, k]  # k-th excluding self (d2=0 at self)
        out[lo:hi] = np.sqrt(part)
    return np.sort(out)[::-1]


class _GridIndex:
    """Uniform bucketing with cell size eps for exact radius queries."""

    def __init__(self, pts: np.ndarray, eps: float):
        self.pts = pts
        self.eps = eps
        self.eps2 = eps * eps
        self.cells: dict[tuple[int, int], list[int]] = {}
        keys = np.floor(pts / eps).astype(np.int64)
        for i, (cx, cy) in enumerate(keys):
            self.cells.setdefault((int(cx), int(cy)), []).append(i)
        self.keys = keys

    def neighbors(self, i: int) -> np.ndarray:
        cx, cy = self.keys[i]
        cand: list[int] = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                cand.extend(self.cells.get((int(cx + dx), int(cy + dy)), ()))
        cand_arr = np.asarray(cand, dtype=np.int64)
        d2 = ((self.pts[cand_arr] - self.pts[i]) ** 2).sum(axis=1)
        return np.sort(cand_arr[d2 <= self.eps2])


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def dbscan(points: np.ndarray, eps: float = 0.75, min_pts: int = 15) -> ClusterAssignment:
    """Cluster 2D points; -1 marks outliers. See module docstring for the
    exact (deterministic) semantics."""
    if eps <= 0:
        raise ClusteringError("eps must be positive")
    if min_pts < 1:
        raise ClusteringError("min_pts must be >= 1")
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ClusteringError("points must have shape (n, 2)")
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return ClusterAssignment(labels, eps, min_pts)

    grid = _GridIndex(pts, eps)
    neigh = [grid.neighbors(i) for i in range(n)]
    core = np.asarray([len(nb) >= min_pts for nb in neigh], dtype=bool)

    uf = _UnionFind(n)
    for i in np.flatnonzero(core):
        for j in neigh[i]:
            if core[j]:
                uf.union(i, int(j))

    # number core components by their smallest core index
    comp_id: dict[int, int] = {}
    for i in np.flatnonzero(core):
        root = uf.find(int(i))
        if root not in comp_id:
            comp_id[root] = len(comp_id)
        labels[i] = comp_id[root]

    # border points join the lowest-numbered adjacent cluster
    for i in np.flatnonzero(~core):
        adjacent = [labels[j] for j in neigh[i] if core[j]]
        if adjacent:
            labels[i] = min(adjacent)

    return ClusterAssignment(labels, eps, min_pts)
