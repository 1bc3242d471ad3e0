"""High-frequency noise segment detection on sub-episodes.

The detector decomposes a sub-episode with the complete-ensemble EMD, sums
the first three (highest-frequency) intrinsic mode functions into Hn, counts
zero crossings of Hn in a short sliding window wherever the window amplitude
exceeds a global quantile threshold, and marks runs of crossing-rich windows
longer than a minimum gate duration as noise segments.

Window counts are indexed by window center with symmetric zero padding, which
keeps the gate vector aligned with the waveform for segment reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import SubEpisode
from .emd import ImfStack, ceemdan


@dataclass(frozen=True)
class NoiseSegment:
    start_s: float
    end_s: float

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class NoiseGateParams:
    quantile: float = 0.85
    window_s: float = 0.234375  # 30 samples at 128 Hz
    nzc_min: int = 2
    gate_min_s: float = 0.75
    hf_imf_count: int = 3

    def __post_init__(self) -> None:
        if not 0 < self.quantile < 1:
            raise ValueError("quantile must be in (0, 1)")
        if self.window_s <= 0 or self.gate_min_s <= 0:
            raise ValueError("window_s and gate_min_s must be positive")

    def window_samples(self, sample_rate_hz: float) -> int:
        w = self.window_s * sample_rate_hz
        wi = int(round(w))
        if wi < 2 or abs(w - wi) > 1e-6:
            raise ValueError(
                f"window_s={self.window_s} is not a whole number of samples "
                f"at {sample_rate_hz} Hz"
            )
        return wi


@dataclass(frozen=True)
class EmdParams:
    """Knobs for the ensemble decomposition feeding the gate."""

    ensemble: int = 100
    noise_std_frac: float = 0.2
    max_sift: int = 10
    seed: int = 0
    max_imfs: int = 12


def high_freq_sum(stack: ImfStack, count: int = 3) -> tuple[np.ndarray, bool]:
    """Element-wise sum of the first `count` IMFs (Hn).

    Returns (hn, short_stack): when fewer than `count` IMFs exist, all
    available ones are summed and short_stack is set.
    """
    k = len(stack)
    if k == 0:
        raise ValueError("empty IMF stack")
    use = min(count, k)
    return stack.imfs[:use].sum(axis=0), use < count


def _signs(x: np.ndarray) -> np.ndarray:
    """Sign sequence where exact zeros inherit the previous sign."""
    s = np.sign(x).astype(np.int8)
    if s[0] == 0:
        s[0] = 1
    zeros = np.flatnonzero(s == 0)
    for i in zeros:
        s[i] = s[i - 1]
    return s


def nzc_profile(hn: np.ndarray, params: NoiseGateParams, sample_rate_hz: float) -> np.ndarray:
    """Windowed zero-crossing counts of Hn, gated by the amplitude threshold.

    Position i holds the crossing count of the window centered at i when that
    window's peak magnitude exceeds the `quantile` of |Hn| over the whole
    sub-episode, else 0. Edge positions without a full window are 0.
    """
    hn = np.asarray(hn, dtype=np.float64)
    if hn.size == 0:
        raise ValueError("empty signal")
    w = params.window_samples(sample_rate_hz)
    n = hn.size
    nzc = np.zeros(n, dtype=np.int64)
    if n < w:
        return nzc

    threshold = np.quantile(np.abs(hn), params.quantile)
    signs = _signs(hn)
    flips = (signs[1:] != signs[:-1]).astype(np.int64)

    # rolling window maxima / crossing sums via cumulative tricks
    abs_hn = np.abs(hn)
    win_max = sliding_window_view(abs_hn, w).max(axis=1)  # length n - w + 1
    csum = np.concatenate([[0], np.cumsum(flips)])
    # crossings strictly inside window [s, s + w): flips at s+1 .. s+w-1
    win_cross = csum[w - 1 :] - csum[: n - w + 1]

    half = w // 2
    centers = np.arange(n - w + 1) + half
    active = win_max > threshold
    nzc[centers[active]] = win_cross[active]
    return nzc


def gate_vector(nzc: np.ndarray, nzc_min: int = 2) -> np.ndarray:
    """Binary gate: 1 where the crossing count reaches nzc_min."""
    return (nzc >= nzc_min).astype(np.int8)


def _runs_of_ones(g: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs [start, end) of 1s."""
    padded = np.concatenate([[0], g, [0]])
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def detect_noise(
    sub: SubEpisode,
    params: NoiseGateParams | None = None,
    emd_params: EmdParams | None = None,
) -> list[NoiseSegment]:
    """Run the gate on one sub-episode; returns disjoint, sorted segments.

    Only runs strictly longer than gate_min_s survive.
    """
    params = params or NoiseGateParams()
    emd_params = emd_params or EmdParams()
    fs = sub.sample_rate_hz
    w = params.window_samples(fs)
    if len(sub.samples) < w:
        raise ValueError(
            f"sub-episode {sub.parent_id}[{sub.index}] shorter than one gate window"
        )
    stack = ceemdan(
        sub.samples,
        ensemble=emd_params.ensemble,
        noise_std_frac=emd_params.noise_std_frac,
        max_sift=emd_params.max_sift,
        seed=emd_params.seed,
        max_imfs=max(params.hf_imf_count, 1),
    )
    if len(stack) == 0:
        return []
    hn, _ = high_freq_sum(stack, params.hf_imf_count)
    nzc = nzc_profile(hn, params, fs)
    gn = gate_vector(nzc, params.nzc_min)

    segments = []
    for s, e in _runs_of_ones(gn):
        if (e - s) / fs > params.gate_min_s:
            segments.append(NoiseSegment(start_s=s / fs, end_s=e / fs))
    return segments


def is_noisy(segments: list[NoiseSegment]) -> bool:
    """A sub-episode counts as noise when the gate fired at all."""
    return len(segments) > 0


def jaccard(a: list[NoiseSegment], b: list[NoiseSegment]) -> float:
    """Time-axis Jaccard index between two segment lists; both empty -> 1.0."""
    if not a and not b:
        return 1.0

    def total(sgs: list[tuple[float, float]]) -> float:
        return sum(e - s for s, e in sgs)

    def merge(sgs: list[NoiseSegment]) -> list[tuple[float, float]]:
        out: list[tuple[float, float]] = []
        for seg in sorted(sgs, key=lambda s: s.start_s):
            if out and seg.start_s <= out[-1][1]:
                out[-1] = (out[-1][0], max(out[-1][1], seg.end_s))
            else:
                out.append((seg.start_s, seg.end_s))
        return out

    ma, mb = merge(a), merge(b)
    inter = 0.0
    for s1, e1 in ma:
        for s2, e2 in mb:
            inter += max(0.0, min(e1, e2) - max(s1, s2))
    union = total(ma) + total(mb) - inter
    return inter / union if union > 0 else 1.0
