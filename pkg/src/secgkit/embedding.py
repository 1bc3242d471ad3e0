"""Interval-difference (Lorenz) histograms and the 2D t-SNE projection.

Each sub-episode's consensus R-peaks become an RR-interval series, then a
sequence of (dRR(i), dRR(i+1)) points, then a flattened 5x5 count histogram
over a symmetric range. Histograms are raw counts, not frequencies: the
point count itself separates sparse rhythms (pause) from dense ones
(tachycardia).

The t-SNE here is the exact O(n^2) formulation with early exaggeration and
momentum gradient descent, compiled with numba. It reports the KL divergence
along the optimization so callers can audit convergence.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .qrs import RPeaks


class EmbeddingError(ValueError):
    pass


class PointSource(enum.Enum):
    TRAIN = "Train"
    TEST = "Test"


@dataclass(frozen=True)
class LorenzHistogram:
    counts: np.ndarray  # 25 ints, row-major 5x5
    bounds_s: float  # symmetric half-range c: both axes cover [-c, +c]
    n_points: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))

    def as_matrix(self, grid: int = 5) -> np.ndarray:
        return self.counts.reshape(grid, grid)


@dataclass(frozen=True)
class EmbeddedPoint:
    sub_ref: tuple[str, int]
    xy: tuple[float, float]
    source: PointSource
    label: str | None = None


def rr_series(rpeaks: RPeaks) -> np.ndarray:
    """RR(i) = t(i+1) - t(i), in seconds. Fewer than 2 peaks -> empty."""
    t = rpeaks.times_s
    if t.size < 2:
        return np.empty(0)
    return np.diff(t)


def lorenz_points(rr: np.ndarray) -> np.ndarray:
    """(dRR(i), dRR(i+1)) pairs with dRR(i) = RR(i+1) - RR(i); shape (k-2, 2)."""
    rr = np.asarray(rr, dtype=np.float64)
    if rr.size < 3:
        return np.empty((0, 2))
    drr = np.diff(rr)
    return np.column_stack([drr[:-1], drr[1:]])


def histogram(points: np.ndarray, grid: int = 5, bounds_s: float = 0.5) -> LorenzHistogram:
    """Count points on a grid x grid lattice over [-c, c]^2.

    Out-of-range points are clipped into the edge bins so the total count is
    preserved for extreme rhythms. Row index follows the y (dRR(i+1)) axis
    from -c upward, column index the x axis; the counts vector is row-major.
    """
    if bounds_s <= 0:
        raise EmbeddingError("bounds_s must be positive")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    counts = np.zeros(grid * grid, dtype=np.int64)
    if len(points):
        width = 2.0 * bounds_s / grid
        cols = np.clip(((points[:, 0] + bounds_s) / width).astype(np.int64), 0, grid - 1)
        rows = np.clip(((points[:, 1] + bounds_s) / width).astype(np.int64), 0, grid - 1)
        np.add.at(counts, rows * grid + cols, 1)
    return LorenzHistogram(counts=counts, bounds_s=bounds_s, n_points=len(points))


def histogram_bounds(abs_drr_values: np.ndarray, percentile: float = 99.0) -> float:
    """Training-corpus half-range: the |dRR| percentile rounded up to 0.1 s."""
    vals = np.asarray(abs_drr_values, dtype=np.float64)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.5
    c = float(np.percentile(vals, percentile))
    return max(0.1, math.ceil(c * 10.0 - 1e-9) / 10.0)


# ---------------------------------------------------------------------------
# exact t-SNE


@dataclass
class TsneResult:
    coords: np.ndarray  # (n, 2)
    kl_trace: list[tuple[int, float]]  # (iteration, KL vs unexaggerated P)


@njit(cache=True, nogil=True)
def _sq_dists(x):
    n, d = x.shape
    out = np.empty((n, n))
    for i in range(n):
        out[i, i] = 0.0
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                diff = x[i, k] - x[j, k]
                s += diff * diff
            out[i, j] = s
            out[j, i] = s
    return out


@njit(cache=True, nogil=True)
def _conditional_p(dists, log_perp, tol=1e-5, max_tries=50):
    """Row-stochastic conditional affinities via per-point precision search."""
    n = dists.shape[0]
    p = np.zeros((n, n))
    for i in range(n):
        beta = 1.0
        beta_min = -np.inf
        beta_max = np.inf
        for _ in range(max_tries):
            sum_p = 0.0
            for j in range(n):
                if j != i:
                    v = math.exp(-dists[i, j] * beta)
                    p[i, j] = v
                    sum_p += v
            if sum_p <= 0.0:
                sum_p = 1e-300
            # entropy H = log(sum) + beta * E[d]
            acc = 0.0
            for j in range(n):
                if j != i:
                    acc += dists[i, j] * p[i, j]
            h = math.log(sum_p) + beta * acc / sum_p
            diff = h - log_perp
            if abs(diff) < tol:
                break
            if diff > 0.0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
        sum_p = 0.0
        for j in range(n):
            if j != i:
                sum_p += p[i, j]
        if sum_p <= 0.0:
            sum_p = 1e-300
        for j in range(n):
            if j != i:
                p[i, j] /= sum_p
    return p


@njit(cache=True, nogil=True)
def _gradient_step(p, y, grad, num):
    """Fill `num` with student-t numerators, `grad` with dC/dY; returns sum(num)."""
    n = y.shape[0]
    total = 0.0
    for i in range(n):
        num[i, i] = 0.0
        for j in range(i + 1, n):
            dx = y[i, 0] - y[j, 0]
            dy = y[i, 1] - y[j, 1]
            v = 1.0 / (1.0 + dx * dx + dy * dy)
            num[i, j] = v
            num[j, i] = v
            total += 2.0 * v
    inv_total = 1.0 / total
    for i in range(n):
        gx = 0.0
        gy = 0.0
        for j in range(n):
            if j != i:
                q = num[i, j] * inv_total
                mult = (p[i, j] - q) * num[i, j]
                gx += mult * (y[i, 0] - y[j, 0])
                gy += mult * (y[i, 1] - y[j, 1])
        grad[i, 0] = 4.0 * gx
        grad[i, 1] = 4.0 * gy
    return total


@njit(cache=True, nogil=True)
def _kl_divergence(p, num, total):
    n = p.shape[0]
    kl = 0.0
    inv_total = 1.0 / total
    for i in range(n):
        for j in range(n):
            if i != j and p[i, j] > 1e-12:
                q = num[i, j] * inv_total
                if q < 1e-12:
                    q = 1e-12
                kl += p[i, j] * math.log(p[i, j] / q)
    return kl


def tsne(
    vectors: np.ndarray,
    perplexity: float = 30.0,
    n_iter: int = 1000,
    seed: int = 0,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    learning_rate: float | None = None,
    trace_every: int = 25,
) -> TsneResult:
    """Exact t-SNE to 2D; deterministic for a given seed.

    The returned KL trace is evaluated against the unexaggerated affinities
    at every `trace_every`-th iteration and at the last one.
    """
    x = np.ascontiguousarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise EmbeddingError("vectors must be 2-D (n_samples, n_features)")
    n = x.shape[0]
    if n <= 3 * perplexity:
        raise EmbeddingError(
            f"need more than 3*perplexity={3 * perplexity:.0f} vectors, got {n}"
        )
    if np.ptp(x, axis=0).max() == 0:
        raise EmbeddingError(
            "all input vectors are identical; add jitter before embedding"
        )
    if learning_rate is None:
        learning_rate = n / 12.0

    dists = _sq_dists(x)
    cond = _conditional_p(dists, math.log(perplexity))
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)

    rng = np.random.default_rng(np.random.SeedSequence((seed, n)))
    y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    grad = np.empty_like(y)
    num = np.empty((n, n))

    p_run = p * early_exaggeration
    kl_trace: list[tuple[int, float]] = []
    for it in range(n_iter):
        if it == exaggeration_iters:
            # the objective changes here; stale momentum would kick the
            # embedding uphill on the new surface
            p_run = p
            velocity[:] = 0.0
            gains[:] = 1.0
        momentum = 0.5 if it < exaggeration_iters else 0.8
        total = _gradient_step(p_run, y, grad, num)

        flip = np.sign(grad) != np.sign(velocity)
        gains = np.where(flip, gains + 0.2, gains * 0.8)
        np.clip(gains, 0.01, None, out=gains)
        velocity = momentum * velocity - learning_rate * (gains * grad)
        y = y + velocity
        y -= y.mean(axis=0)

        if (it + 1) % trace_every == 0 or it == n_iter - 1:
            # trace against the true affinities even during exaggeration
            kl = float(_kl_divergence(p, num, total))
            kl_trace.append((it, kl))

    return TsneResult(coords=y, kl_trace=kl_trace)
