"""Dataset serialization and the synthetic sECG generator.

The on-disk corpus format is JSON lines, one episode per line:

    {"id": "ep-0001", "sample_rate_hz": 128.0, "samples": [...],
     "labels": [{"label": "AFib"}, {"label": "Noise", "start_s": 20.0, "end_s": 35.0}]}

A sidecar truth file (same stem, ``.truth.jsonl``) keeps generator ground
truth per episode id: true R-peak times, injected noise intervals, and the
drawn rhythm parameters. The truth file is never read by the pipeline; it
exists for evaluation and tests.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, lfilter

from .core import Episode, LabelSpan, RhythmClass

LABELS_BY_NAME = {c.value: c for c in RhythmClass}


class DatasetError(ValueError):
    """Raised on malformed dataset files or invalid generator specs."""


# ---------------------------------------------------------------------------
# serialization


def _episode_to_record(ep: Episode) -> dict:
    labels = []
    for span in ep.labels:
        rec: dict = {"label": span.label.value}
        if not span.is_global:
            rec["start_s"] = span.start_s
            rec["end_s"] = span.end_s
        labels.append(rec)
    return {
        "id": ep.id,
        "sample_rate_hz": ep.sample_rate_hz,
        "samples": ep.samples.tolist(),
        "labels": labels,
    }


def _record_to_episode(rec: dict, line_no: int) -> Episode:
    def fail(fieldname: str, why: str) -> DatasetError:
        return DatasetError(f"line {line_no}, field '{fieldname}': {why}")

    for key in ("id", "sample_rate_hz", "samples", "labels"):
        if key not in rec:
            raise fail(key, "missing")
    spans = []
    for i, lab in enumerate(rec["labels"]):
        name = lab.get("label")
        if name not in LABELS_BY_NAME:
            raise fail(f"labels[{i}].label", f"unknown label {name!r}")
        try:
            spans.append(
                LabelSpan(LABELS_BY_NAME[name], lab.get("start_s"), lab.get("end_s"))
            )
        except ValueError as exc:
            raise fail(f"labels[{i}]", str(exc)) from exc
    try:
        return Episode(
            id=str(rec["id"]),
            sample_rate_hz=float(rec["sample_rate_hz"]),
            samples=np.asarray(rec["samples"], dtype=np.float64),
            labels=tuple(spans),
        )
    except ValueError as exc:
        raise fail("samples", str(exc)) from exc


def atomic_write_bytes(path: str, blob: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_dataset(episodes: list[Episode], path: str, variant: str | None = None) -> None:
    """Serialize episodes to JSON lines.

    variant="train" enforces global labels only; variant="test" enforces that
    every label carries start/end times.
    """
    if variant not in (None, "train", "test"):
        raise DatasetError(f"unknown variant {variant!r}")
    for ep in episodes:
        if variant == "train" and not ep.has_global_labels_only():
            raise DatasetError(f"episode {ep.id}: train variant forbids timed spans")
        if variant == "test" and any(s.is_global for s in ep.labels):
            raise DatasetError(f"episode {ep.id}: test variant requires timed spans")
    lines = [json.dumps(_episode_to_record(ep)) for ep in episodes]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_dataset(path: str) -> list[Episode]:
    episodes = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: not valid JSON ({exc})") from exc
            episodes.append(_record_to_episode(rec, line_no))
    return episodes


# ---------------------------------------------------------------------------
# generator ground truth


@dataclass
class EpisodeTruth:
    """Sidecar ground truth emitted alongside a synthetic episode."""

    episode_id: str
    rhythm_class: RhythmClass
    r_peak_times_s: np.ndarray
    noise_intervals: list[tuple[float, float]] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "id": self.episode_id,
            "class": self.rhythm_class.value,
            "r_peaks_s": [round(float(t), 9) for t in self.r_peak_times_s],
            "noise_intervals": [[float(a), float(b)] for a, b in self.noise_intervals],
            "params": self.params,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "EpisodeTruth":
        return cls(
            episode_id=rec["id"],
            rhythm_class=LABELS_BY_NAME[rec["class"]],
            r_peak_times_s=np.asarray(rec["r_peaks_s"], dtype=np.float64),
            noise_intervals=[(a, b) for a, b in rec["noise_intervals"]],
            params=rec.get("params", {}),
        )


def save_truth(truths: list[EpisodeTruth], path: str) -> None:
    lines = [json.dumps(t.to_record()) for t in truths]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_truth(path: str) -> dict[str, EpisodeTruth]:
    out: dict[str, EpisodeTruth] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                t = EpisodeTruth.from_record(json.loads(line))
                out[t.episode_id] = t
    return out


# ---------------------------------------------------------------------------
# waveform synthesis


@dataclass
class SynthSpec:
    """Parameters for one synthetic 60 s episode."""

    rhythm_class: RhythmClass
    seed: int
    base_bpm: float = 70.0
    rr_jitter_frac: float = 0.03
    rsa_frac: float = 0.02  # respiratory RR modulation depth
    rate_drift_frac: float = 0.04  # slow autonomic rate drift depth
    # event placement window (pause gap onset, noise burst onset, phase switch)
    event_window: tuple[float, float] = (8.0, 32.0)
    noise_band_hz: tuple[float, float] = (25.0, 60.0)
    noise_amp_factor: float = 4.0
    # two-phase episodes start in sinus and switch to the event rhythm
    two_phase: bool = False
    duration_s: float = 60.0
    sample_rate_hz: float = 128.0

    def __post_init__(self) -> None:
        if self.rhythm_class == RhythmClass.TACHYCARDIA and self.base_bpm < 100:
            raise DatasetError("tachycardia spec needs base_bpm >= 100")
        if self.noise_amp_factor < 0:
            raise DatasetError("noise_amp_factor must be non-negative")


def _beat_kernel(fs: float, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """One QRS-T complex sampled at fs; returns (kernel, index of R apex).

    Morphology is drawn per episode: R width/amplitude, S depth and T height
    vary to mimic implant-site dependent waveforms. The apex sample is always
    the kernel maximum.
    """
    r_amp = rng.uniform(0.85, 1.15)
    r_half_w = rng.uniform(0.018, 0.030)  # seconds
    q_amp = rng.uniform(0.05, 0.15)
    s_amp = rng.uniform(0.12, 0.30)
    t_amp = rng.uniform(0.15, 0.32)
    t_center = rng.uniform(0.20, 0.27)
    t_width = rng.uniform(0.05, 0.08)

    t = np.arange(-0.10 * fs, 0.45 * fs) / fs
    apex = int(np.searchsorted(t, 0.0))
    kern = r_amp * np.exp(-0.5 * (t / r_half_w) ** 2)
    kern -= q_amp * np.exp(-0.5 * ((t + 0.035) / 0.012) ** 2)
    kern -= s_amp * np.exp(-0.5 * ((t - 0.035) / 0.015) ** 2)
    kern += t_amp * np.exp(-0.5 * ((t - t_center) / t_width) ** 2)
    return kern, apex


def _render_beats(beat_times: np.ndarray, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    kern, apex = _beat_kernel(fs, rng)
    sig = np.zeros(n)
    for t in beat_times:
        center = int(round(t * fs))
        lo = center - apex
        hi = lo + len(kern)
        klo, khi = max(0, -lo), len(kern) - max(0, hi - n)
        sig[max(0, lo) : min(n, hi)] += kern[klo:khi]
    return sig


def _rr_sequence(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """Beat times covering the episode for the spec's rhythm, plus event info."""
    rr0 = 60.0 / spec.base_bpm
    dur = spec.duration_s

    if spec.rhythm_class == RhythmClass.AFIB and not spec.two_phase:
        return _afib_times(0.0, dur, rr0, rng), {}

    if spec.two_phase and spec.rhythm_class in (RhythmClass.TACHYCARDIA, RhythmClass.AFIB):
        switch = rng.uniform(*spec.event_window)
        # snap close to a sub-episode boundary so half-overlap labeling is clean
        switch = round(switch / 10.0) * 10.0 + rng.uniform(-1.0, 1.0)
        sinus_bpm = rng.uniform(60.0, 85.0)
        head = _regular_times(
            0.0, switch, 60.0 / sinus_bpm, spec.rr_jitter_frac, rng,
            rsa_frac=spec.rsa_frac, drift_frac=spec.rate_drift_frac,
        )
        if spec.rhythm_class == RhythmClass.AFIB:
            tail = _afib_times(switch, dur, rr0, rng)
        else:
            # tachycardia runs with little beat-to-beat variability
            tail = _regular_times(switch, dur, rr0, 0.5 * spec.rr_jitter_frac, rng)
        return np.concatenate([head, tail]), {"switch_s": float(switch)}

    if spec.rhythm_class == RhythmClass.TACHYCARDIA:
        times = _regular_times(0.0, dur, rr0, 0.5 * spec.rr_jitter_frac, rng)
        return times, {}

    times = _regular_times(
        0.0, dur, rr0, spec.rr_jitter_frac, rng,
        rsa_frac=spec.rsa_frac, drift_frac=spec.rate_drift_frac,
    )

    if spec.rhythm_class == RhythmClass.PAUSE:
        gap = rng.uniform(5.4, 7.0)
        # place the gap well inside one window (margin > max RR) so the
        # owning sub-episode keeps a >= 5 s overlap with the pause span
        sub = int(rng.integers(1, 5))
        gap_start = sub * 10.0 + rng.uniform(1.5, 10.0 - gap - 0.6)
        keep = (times < gap_start) | (times >= gap_start + gap)
        times = times[keep]
    return times, {}


def _regular_times(
    t0: float,
    t1: float,
    rr: float,
    cv: float,
    rng: np.random.Generator,
    rsa_frac: float = 0.0,
    rsa_hz: float = 0.25,
    drift_frac: float = 0.0,
) -> np.ndarray:
    """Sinus beat times: white RR jitter, respiratory modulation, and a slow
    autonomic rate drift that makes windows within one episode differ."""
    times = []
    t = t0 + rng.uniform(0.2, 0.2 + rr)
    phase = rng.uniform(0.0, 2 * np.pi)
    drift_hz = rng.uniform(0.015, 0.05)
    drift_phase = rng.uniform(0.0, 2 * np.pi)
    while t < t1:
        times.append(t)
        mod = 1.0 + rsa_frac * np.sin(2 * np.pi * rsa_hz * t + phase)
        mod += drift_frac * np.sin(2 * np.pi * drift_hz * t + drift_phase)
        t += rr * max(0.4, mod + rng.normal(0.0, cv))
    return np.asarray(times)


def _afib_times(t0: float, t1: float, rr_mean: float, rng: np.random.Generator) -> np.ndarray:
    """Irregularly irregular RR via an AR(1) deviation rescaled to a CV target."""
    cv = rng.uniform(0.16, 0.22)
    n = int((t1 - t0) / rr_mean * 2) + 30
    u = np.zeros(n)
    phi = 0.35
    for i in range(1, n):
        u[i] = phi * u[i - 1] + rng.normal(0.0, 1.0)
    sd = u.std()
    if sd > 0:
        u *= cv / sd
    rr = np.clip(rr_mean * (1.0 + u), 0.25 * rr_mean, 2.2 * rr_mean)
    # rescale realized CV so the >= 0.15 irregularity floor holds even after
    # the sequence is truncated at t1
    realized = rr.std() / rr.mean()
    if realized < 0.20:
        rr = rr.mean() + (rr - rr.mean()) * (0.22 / max(realized, 1e-9))
        rr = np.maximum(rr, 0.2 * rr_mean)
    times = t0 + rng.uniform(0.2, 0.2 + rr_mean) + np.cumsum(rr) - rr[0]
    return times[times < t1]


def inject_hf_burst(
    samples: np.ndarray,
    fs: float,
    start_s: float,
    end_s: float,
    amp_factor: float,
    band_hz: tuple[float, float],
    rng: np.random.Generator,
) -> np.ndarray:
    """Add band-limited noise of amp_factor x signal std over [start_s, end_s).

    Edges get a 0.1 s cosine ramp so the burst boundary is not a step.
    Returns a new array.
    """
    out = samples.copy()
    n = len(out)
    lo = max(0, int(round(start_s * fs)))
    hi = min(n, int(round(end_s * fs)))
    if hi <= lo:
        return out
    white = rng.standard_normal(hi - lo + 256)
    nyq = fs / 2.0
    b, a = butter(4, [band_hz[0] / nyq, min(band_hz[1], nyq * 0.98) / nyq], btype="band")
    shaped = lfilter(b, a, white)[256:]
    base_std = samples.std()
    if shaped.std() > 0:
        shaped *= amp_factor * base_std / shaped.std()
    ramp = np.ones(hi - lo)
    k = min(int(0.1 * fs), (hi - lo) // 2)
    if k > 0:
        edge = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, k))
        ramp[:k] = edge
        ramp[-k:] = edge[::-1]
    out[lo:hi] += shaped * ramp
    return out


def synth_episode(spec: SynthSpec, episode_id: str | None = None) -> tuple[Episode, EpisodeTruth]:
    """Generate one synthetic episode plus its sidecar ground truth.

    Deterministic given spec.seed. Labels follow the training convention
    (global); callers building a test corpus re-label with timed spans via
    the truth metadata (see synth_corpus).
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    fs = spec.sample_rate_hz
    n = int(round(spec.duration_s * fs))
    eid = episode_id or f"synth-{spec.rhythm_class.value.lower()}-{spec.seed}"

    beat_times, event_info = _rr_sequence(spec, rng)
    # snap apexes onto the sample grid so sidecar truth matches the waveform
    beat_times = np.round(beat_times * fs) / fs
    beat_times = beat_times[(beat_times >= 0) & (beat_times < spec.duration_s)]
    sig = _render_beats(beat_times, n, fs, rng)

    t = np.arange(n) / fs
    wander_f = rng.uniform(0.15, 0.35)
    sig += rng.uniform(0.04, 0.09) * np.sin(2 * np.pi * wander_f * t + rng.uniform(0, 2 * np.pi))
    # smooth low-frequency floor noise: device-side filtering and compression
    # leave little broadband content outside genuine artifact periods
    white = rng.standard_normal(n + 256)
    b, a = butter(2, 3.0 / (fs / 2.0), btype="low")
    floor = lfilter(b, a, white)[256:]
    std = floor.std()
    if std > 0:
        sig += floor * (rng.uniform(0.015, 0.030) / std)

    noise_intervals: list[tuple[float, float]] = []
    params: dict = {
        "base_bpm": spec.base_bpm,
        "rr_jitter_frac": spec.rr_jitter_frac,
        "two_phase": spec.two_phase,
        **event_info,
    }
    if spec.rhythm_class == RhythmClass.NOISE:
        n_sub = int(rng.integers(2, 4))
        first = int(rng.integers(1, 6 - n_sub))
        start = first * 10.0 + rng.uniform(0.2, 1.2)
        end = (first + n_sub) * 10.0 - rng.uniform(0.2, 1.2)
        amp = spec.noise_amp_factor * rng.uniform(0.9, 1.4)
        sig = inject_hf_burst(sig, fs, start, end, amp, spec.noise_band_hz, rng)
        noise_intervals.append((start, end))
        params["noise_amp_factor"] = amp
        params["noise_band_hz"] = list(spec.noise_band_hz)

    episode = Episode(
        id=eid,
        sample_rate_hz=fs,
        samples=sig,
        labels=(LabelSpan(spec.rhythm_class),),
    )
    truth = EpisodeTruth(
        episode_id=eid,
        rhythm_class=spec.rhythm_class,
        r_peak_times_s=beat_times,
        noise_intervals=noise_intervals,
        params=params,
    )
    return episode, truth


# ---------------------------------------------------------------------------
# corpus assembly

#: Class imbalance mirroring the training-set label distribution we target
#: (roughly half sinus, the rest split across event classes).
DEFAULT_CLASS_MIX = {
    RhythmClass.NORMAL: 0.49,
    RhythmClass.PAUSE: 0.10,
    RhythmClass.TACHYCARDIA: 0.08,
    RhythmClass.AFIB: 0.17,
    RhythmClass.NOISE: 0.16,
}

#: Fraction of tachycardia/aFib episodes rendered with a sinus lead-in, so a
#: single global training label is deliberately wrong for part of the episode.
TWO_PHASE_FRAC = 0.5


def counts_from_mix(total: int, mix: dict[RhythmClass, float]) -> dict[RhythmClass, int]:
    """Largest-remainder apportionment of `total` episodes over the mix."""
    if total < 0:
        raise DatasetError("total must be non-negative")
    weight = sum(mix.values())
    raw = {c: total * w / weight for c, w in mix.items()}
    counts = {c: int(math.floor(v)) for c, v in raw.items()}
    short = total - sum(counts.values())
    for c in sorted(mix, key=lambda c: raw[c] - counts[c], reverse=True)[:short]:
        counts[c] += 1
    return counts


def _draw_spec(cls: RhythmClass, seed: int, rng: np.random.Generator) -> SynthSpec:
    if cls == RhythmClass.TACHYCARDIA:
        bpm = rng.uniform(125.0, 180.0)
    elif cls == RhythmClass.AFIB:
        bpm = rng.uniform(75.0, 110.0)
    else:
        bpm = rng.uniform(60.0, 85.0)
    two_phase = cls in (RhythmClass.TACHYCARDIA, RhythmClass.AFIB) and rng.random() < TWO_PHASE_FRAC
    return SynthSpec(
        rhythm_class=cls,
        seed=seed,
        base_bpm=bpm,
        rr_jitter_frac=rng.uniform(0.02, 0.045),
        rsa_frac=rng.uniform(0.01, 0.03),
        rate_drift_frac=rng.uniform(0.05, 0.09),
        noise_amp_factor=rng.uniform(3.2, 5.0),
        two_phase=two_phase,
    )


def _test_spans(ep: Episode, truth: EpisodeTruth) -> tuple[LabelSpan, ...]:
    """Timed label spans for a test episode, derived from generator truth."""
    cls = truth.rhythm_class
    dur = ep.duration_s
    if cls == RhythmClass.NORMAL:
        return (LabelSpan(RhythmClass.NORMAL, 0.0, dur),)
    if cls == RhythmClass.NOISE:
        spans = []
        cursor = 0.0
        for a, b in truth.noise_intervals:
            if a > cursor:
                spans.append(LabelSpan(RhythmClass.NORMAL, cursor, a))
            spans.append(LabelSpan(RhythmClass.NOISE, a, b))
            cursor = b
        if cursor < dur:
            spans.append(LabelSpan(RhythmClass.NORMAL, cursor, dur))
        return tuple(spans)
    if cls == RhythmClass.PAUSE:
        peaks = truth.r_peak_times_s
        gaps = np.diff(peaks)
        g = int(np.argmax(gaps))
        a, b = float(peaks[g]), float(peaks[g + 1])
        spans = []
        if a > 0:
            spans.append(LabelSpan(RhythmClass.NORMAL, 0.0, a))
        spans.append(LabelSpan(RhythmClass.PAUSE, a, b))
        if b < dur:
            spans.append(LabelSpan(RhythmClass.NORMAL, b, dur))
        return tuple(spans)
    # tachycardia / aFib: either the whole episode or an onset after sinus
    if truth.params.get("two_phase"):
        switch = float(truth.params["switch_s"])
        return (
            LabelSpan(RhythmClass.NORMAL, 0.0, switch),
            LabelSpan(cls, switch, dur),
        )
    return (LabelSpan(cls, 0.0, dur),)


def synth_corpus(
    n_train: int,
    n_test: int,
    seed: int,
    class_mix: dict[RhythmClass, float] | None = None,
) -> tuple[list[Episode], list[Episode], dict[str, EpisodeTruth]]:
    """Generate a train corpus (global labels) and test corpus (timed spans).

    The per-class episode counts follow class_mix exactly (largest-remainder
    rounding). Returns (train, test, truth-by-episode-id); deterministic for
    a given seed.
    """
    mix = class_mix or DEFAULT_CLASS_MIX
    master = np.random.default_rng(np.random.SeedSequence(seed))
    truths: dict[str, EpisodeTruth] = {}

    def build(count_total: int, variant: str) -> list[Episode]:
        episodes = []
        counts = counts_from_mix(count_total, mix)
        idx = 0
        for cls in sorted(counts, key=lambda c: c.value):
            for _ in range(counts[cls]):
                ep_seed = int(master.integers(0, 2**63 - 1))
                spec = _draw_spec(cls, ep_seed, master)
                eid = f"{variant}-{idx:05d}-{cls.value.lower()}"
                ep, truth = synth_episode(spec, episode_id=eid)
                if variant == "test":
                    ep = Episode(ep.id, ep.sample_rate_hz, ep.samples, _test_spans(ep, truth))
                truths[eid] = truth
                episodes.append(ep)
                idx += 1
        return episodes

    train = build(n_train, "train")
    test = build(n_test, "test")
    return train, test, truths
