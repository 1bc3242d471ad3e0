"""R-peak detection: four independent detectors fused by KDE voting.

Each detector emits candidate peak times on its own; the fusion pools all
candidates, builds a Gaussian kernel density over the time axis, and accepts
density maxima supported by at least two distinct detectors. All filter
widths are derived from the sample rate, which for monitor data is low
(128 Hz), so nothing assumes clinical-grade resolution.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, filtfilt

from .core import SubEpisode


class DetectorId(enum.Enum):
    ENERGY_WINDOW = "EnergyWindow"
    MATCHED_FILTER = "MatchedFilter"
    PAN_TOMPKINS = "PanTompkins"
    MAXIMA_SEARCH = "MaximaSearch"


@dataclass(frozen=True)
class PeakCandidates:
    detector_id: DetectorId
    times_s: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times_s, dtype=np.float64)
        object.__setattr__(self, "times_s", t)
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError(f"{self.detector_id}: candidate times must be increasing")


@dataclass(frozen=True)
class RPeaks:
    times_s: np.ndarray
    support: np.ndarray  # distinct detectors backing each peak

    def __post_init__(self) -> None:
        object.__setattr__(self, "times_s", np.asarray(self.times_s, dtype=np.float64))
        object.__setattr__(self, "support", np.asarray(self.support, dtype=np.int64))


@dataclass(frozen=True)
class QrsParams:
    kde_bandwidth_s: float = 0.05
    min_support: int = 2
    refractory_s: float = 0.25
    matched_threshold: float = 0.55
    maxima_mad_factor: float = 6.0


# ---------------------------------------------------------------------------
# small shared helpers


def _movmean(x: np.ndarray, w: int) -> np.ndarray:
    w = max(1, w)
    if w % 2 == 0:
        w += 1
    kernel = np.ones(w) / w
    return np.convolve(np.pad(x, w // 2, mode="edge"), kernel, mode="valid")


def _local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of local maxima; a plateau above both neighbors counts once,
    at its midpoint."""
    if x.size < 3:
        return np.empty(0, dtype=np.int64)
    change = np.flatnonzero(np.diff(x) != 0)
    starts = np.concatenate([[0], change + 1])
    if starts.size < 3:
        return np.empty(0, dtype=np.int64)
    ends = np.concatenate([change, [x.size - 1]])  # inclusive run ends
    vals = x[starts]
    is_max = (vals[1:-1] > vals[:-2]) & (vals[1:-1] > vals[2:])
    runs = np.flatnonzero(is_max) + 1
    return (starts[runs] + ends[runs]) // 2


def _select_peaks(score: np.ndarray, threshold: float, min_gap: int) -> np.ndarray:
    """Local maxima above threshold, greedily thinned by descending score."""
    cand = _local_maxima(score)
    cand = cand[score[cand] > threshold]
    if cand.size == 0:
        return cand
    order = cand[np.argsort(score[cand])[::-1]]
    taken: list[int] = []
    for idx in order:
        if all(abs(idx - t) >= min_gap for t in taken):
            taken.append(int(idx))
    return np.sort(np.asarray(taken, dtype=np.int64))


def _snap_to_apex(x: np.ndarray, idx: np.ndarray, fs: float, radius_s: float = 0.08) -> np.ndarray:
    """Move each index to the nearby maximum of |x - median(x)|."""
    base = np.abs(x - np.median(x))
    r = max(1, int(round(radius_s * fs)))
    out = np.empty_like(idx)
    for j, i in enumerate(idx):
        lo, hi = max(0, i - r), min(len(x), i + r + 1)
        out[j] = lo + int(np.argmax(base[lo:hi]))
    return np.unique(out)


def _bandpass(x: np.ndarray, fs: float, lo: float, hi: float, order: int = 2) -> np.ndarray:
    nyq = fs / 2.0
    hi = min(hi, 0.95 * nyq)
    b, a = butter(order, [lo / nyq, hi / nyq], btype="band")
    return filtfilt(b, a, x)


# ---------------------------------------------------------------------------
# detectors


def detect_energy(sub: SubEpisode, params: QrsParams | None = None) -> PeakCandidates:
    """Window-based peak energy detector (difference-of-moving-averages band)."""
    params = params or QrsParams()
    x = sub.samples
    fs = sub.sample_rate_hz
    if np.ptp(x) == 0:
        return PeakCandidates(DetectorId.ENERGY_WINDOW, np.empty(0))
    detrended = x - _movmean(x, int(0.28 * fs))
    smooth = _movmean(detrended, int(0.045 * fs))
    env = _movmean(smooth**2, int(0.10 * fs))
    thr = 0.15 * np.quantile(env, 0.99)
    idx = _select_peaks(env, thr, int(params.refractory_s * fs))
    idx = _snap_to_apex(x, idx, fs)
    return PeakCandidates(DetectorId.ENERGY_WINDOW, idx / fs)


def default_qrs_template(fs: float) -> np.ndarray:
    """Generic narrow QRS kernel used by the matched filter."""
    t = np.arange(-0.08 * fs, 0.08 * fs) / fs
    tpl = np.exp(-0.5 * (t / 0.022) ** 2)
    tpl -= 0.25 * np.exp(-0.5 * ((t - 0.035) / 0.015) ** 2)
    tpl -= 0.10 * np.exp(-0.5 * ((t + 0.035) / 0.012) ** 2)
    return tpl - tpl.mean()


def learn_template(sub: SubEpisode, width_s: float = 0.16) -> np.ndarray:
    """Template from the highest-energy beat of this sub-episode."""
    x = sub.samples
    fs = sub.sample_rate_hz
    half = int(width_s * fs / 2)
    dev = np.abs(x - np.median(x))
    center = int(np.argmax(dev[half : len(x) - half])) + half
    tpl = x[center - half : center + half].astype(np.float64)
    return tpl - tpl.mean()


def detect_matched(
    sub: SubEpisode, template: np.ndarray | None = None, params: QrsParams | None = None
) -> PeakCandidates:
    """Normalized cross-correlation against a QRS template."""
    params = params or QrsParams()
    x = sub.samples
    fs = sub.sample_rate_hz
    if np.ptp(x) == 0:
        return PeakCandidates(DetectorId.MATCHED_FILTER, np.empty(0))
    tpl = default_qrs_template(fs) if template is None else np.asarray(template, float)
    tpl = tpl - tpl.mean()
    tnorm = np.linalg.norm(tpl)
    if tnorm == 0:
        return PeakCandidates(DetectorId.MATCHED_FILTER, np.empty(0))

    detrended = x - _movmean(x, int(0.28 * fs))
    m = len(tpl)
    num = np.correlate(detrended, tpl, mode="same")
    sq = np.convolve(detrended**2, np.ones(m), mode="same")
    denom = np.sqrt(np.maximum(sq, 1e-12)) * tnorm
    ncc = num / denom
    # correlation is shape-only; gate out quiet stretches whose local energy
    # is far below the beat level so template-like floor wiggles cannot fire
    local_rms = np.sqrt(sq / m)
    ncc[local_rms < 0.2 * np.quantile(local_rms, 0.95)] = 0.0
    idx = _select_peaks(ncc, params.matched_threshold, int(params.refractory_s * fs))
    idx = _snap_to_apex(x, idx, fs)
    return PeakCandidates(DetectorId.MATCHED_FILTER, idx / fs)


def detect_pan_tompkins(sub: SubEpisode, params: QrsParams | None = None) -> PeakCandidates:
    """Bandpass, derivative, square, integrate, dual adaptive thresholds."""
    params = params or QrsParams()
    x = sub.samples
    fs = sub.sample_rate_hz
    if np.ptp(x) == 0 or len(x) < int(fs):
        return PeakCandidates(DetectorId.PAN_TOMPKINS, np.empty(0))

    bp = _bandpass(x, fs, 5.0, 15.0)
    deriv = np.gradient(bp)
    sq = deriv**2
    integ = _movmean(sq, int(0.15 * fs))

    peaks = _local_maxima(integ)
    if peaks.size == 0:
        return PeakCandidates(DetectorId.PAN_TOMPKINS, np.empty(0))

    refr = int(params.refractory_s * fs)
    spki = float(np.quantile(integ[peaks], 0.90))
    npki = float(np.quantile(integ[peaks], 0.30))
    accepted: list[int] = []

    def threshold() -> float:
        return npki + 0.25 * (spki - npki)

    for p in peaks:
        if accepted and p - accepted[-1] < refr:
            continue
        v = float(integ[p])
        if v > threshold():
            accepted.append(int(p))
            spki = 0.125 * v + 0.875 * spki
        else:
            npki = 0.125 * v + 0.875 * npki
            # search-back: if we went > 1.66x the recent RR without a beat,
            # re-admit the best candidate above half threshold
            if len(accepted) >= 2:
                rr = np.diff(accepted[-8:]).mean()
                if p - accepted[-1] > 1.66 * rr:
                    window = [q for q in peaks if accepted[-1] + refr <= q <= p]
                    if window:
                        best = max(window, key=lambda q: integ[q])
                        if integ[best] > 0.5 * threshold():
                            accepted.append(int(best))
                            spki = 0.25 * float(integ[best]) + 0.75 * spki

    idx = _snap_to_apex(x, np.asarray(sorted(accepted), dtype=np.int64), fs)
    return PeakCandidates(DetectorId.PAN_TOMPKINS, idx / fs)


def detect_maxima(sub: SubEpisode, params: QrsParams | None = None) -> PeakCandidates:
    """Absolute-amplitude maxima above a MAD multiple, refractory-thinned."""
    params = params or QrsParams()
    x = sub.samples
    fs = sub.sample_rate_hz
    dev = np.abs(x - np.median(x))
    mad = np.median(dev)
    thr = params.maxima_mad_factor * mad
    if thr == 0:
        return PeakCandidates(DetectorId.MAXIMA_SEARCH, np.empty(0))
    idx = _select_peaks(dev, thr, int(params.refractory_s * fs))
    return PeakCandidates(DetectorId.MAXIMA_SEARCH, idx / fs)


def detect_all(sub: SubEpisode, params: QrsParams | None = None) -> list[PeakCandidates]:
    params = params or QrsParams()
    return [
        detect_energy(sub, params),
        detect_matched(sub, params=params),
        detect_pan_tompkins(sub, params),
        detect_maxima(sub, params),
    ]


# ---------------------------------------------------------------------------
# fusion


def fuse_kde(candidates: list[PeakCandidates], params: QrsParams | None = None) -> RPeaks:
    """Accept pooled candidates where the vote density peaks with quorum.

    Density maxima whose supporting candidates (within +-2 bandwidths) come
    from fewer than min_support distinct detectors are rejected; accepted
    peak times are the median of the supporting candidates. Peaks closer than
    the refractory period are thinned keeping the denser one.
    """
    params = params or QrsParams()
    bw = params.kde_bandwidth_s
    if bw <= 0:
        raise ValueError("kde_bandwidth_s must be positive")

    times = np.concatenate([c.times_s for c in candidates]) if candidates else np.empty(0)
    dets = np.concatenate(
        [np.full(len(c.times_s), i) for i, c in enumerate(candidates)]
    ) if candidates else np.empty(0, dtype=int)
    det_names = [c.detector_id for c in candidates]
    if times.size == 0:
        return RPeaks(np.empty(0), np.empty(0, dtype=np.int64))

    order = np.argsort(times, kind="stable")
    times, dets = times[order], dets[order]

    step = bw / 4.0
    grid = np.arange(times.min() - 3 * bw, times.max() + 3 * bw + step, step)
    density = np.exp(-0.5 * ((grid[:, None] - times[None, :]) / bw) ** 2).sum(axis=1)

    maxima = _local_maxima(density)
    picked: list[tuple[float, int, float]] = []  # (time, support, density)
    for g in maxima:
        t0 = grid[g]
        near = np.flatnonzero(np.abs(times - t0) <= 2 * bw)
        if near.size == 0:
            continue
        detector_set = {det_names[dets[j]] for j in near}
        if len(detector_set) < params.min_support:
            continue
        fused_t = float(np.median(times[near]))
        picked.append((fused_t, len(detector_set), float(density[g])))

    # identical supporter sets can yield duplicate fused times; keep one
    picked.sort(key=lambda p: (p[0], -p[2]))
    dedup: list[tuple[float, int, float]] = []
    for p in picked:
        if dedup and abs(p[0] - dedup[-1][0]) < 1e-9:
            continue
        dedup.append(p)

    # refractory thinning, densest first
    dedup.sort(key=lambda p: (-p[2], p[0]))
    kept: list[tuple[float, int, float]] = []
    for p in dedup:
        if all(abs(p[0] - q[0]) >= params.refractory_s for q in kept):
            kept.append(p)
    kept.sort(key=lambda p: p[0])

    return RPeaks(
        np.asarray([p[0] for p in kept]),
        np.asarray([p[1] for p in kept], dtype=np.int64),
    )


def consensus_peaks(sub: SubEpisode, params: QrsParams | None = None) -> RPeaks:
    """Convenience wrapper: run all four detectors and fuse."""
    params = params or QrsParams()
    return fuse_kde(detect_all(sub, params), params)
