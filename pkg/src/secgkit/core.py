"""Domain types for sECG episodes: labels, segmentation, label propagation.

Episodes are up to 60 s of single-lead subcutaneous ECG at 128 Hz. They are
cut into non-overlapping 10 s sub-episodes, the atomic unit everything
downstream (noise gating, embedding, clustering, prediction) operates on.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class RhythmClass(enum.Enum):
    NORMAL = "Normal"
    PAUSE = "Pause"
    TACHYCARDIA = "Tachycardia"
    AFIB = "AFib"
    NOISE = "Noise"

    def __str__(self) -> str:
        return self.value


#: Fixed label order used for deterministic tie-breaking everywhere.
LABEL_ORDER = (
    RhythmClass.NORMAL,
    RhythmClass.PAUSE,
    RhythmClass.TACHYCARDIA,
    RhythmClass.AFIB,
    RhythmClass.NOISE,
)

#: Sentinel for predictions that land in the DBSCAN outlier group.
UNCLASSIFIED = "Unclassified"


class EpisodeError(ValueError):
    """Raised when an episode or its labels violate an invariant."""


@dataclass(frozen=True)
class LabelSpan:
    """A rhythm label, either global (no times) or bounded to [start_s, end_s)."""

    label: RhythmClass
    start_s: float | None = None
    end_s: float | None = None

    def __post_init__(self) -> None:
        if (self.start_s is None) != (self.end_s is None):
            raise EpisodeError("label span must set both start_s and end_s or neither")
        if self.start_s is not None:
            if self.start_s < 0 or self.end_s <= self.start_s:
                raise EpisodeError(
                    f"bad label span [{self.start_s}, {self.end_s}] for {self.label}"
                )

    @property
    def is_global(self) -> bool:
        return self.start_s is None


@dataclass(frozen=True)
class Episode:
    """One recorded sECG episode with its expert labels."""

    id: str
    sample_rate_hz: float
    samples: np.ndarray
    labels: tuple[LabelSpan, ...] = ()

    def __post_init__(self) -> None:
        if self.sample_rate_hz <= 0:
            raise EpisodeError(f"episode {self.id}: sample_rate_hz must be positive")
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", tuple(self.labels))
        if samples.ndim != 1:
            raise EpisodeError(f"episode {self.id}: samples must be 1-D")
        if len(samples) > self.sample_rate_hz * 60:
            raise EpisodeError(
                f"episode {self.id}: {len(samples)} samples exceeds 60 s "
                f"at {self.sample_rate_hz} Hz"
            )
        for span in self.labels:
            if span.end_s is not None and span.end_s > self.duration_s + 1e-9:
                raise EpisodeError(
                    f"episode {self.id}: span ends at {span.end_s}s beyond "
                    f"duration {self.duration_s:.3f}s"
                )

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def has_global_labels_only(self) -> bool:
        return all(span.is_global for span in self.labels)


@dataclass(frozen=True)
class SubEpisode:
    """One window of a parent episode; carries the labels it inherited."""

    parent_id: str
    index: int
    sample_rate_hz: float
    samples: np.ndarray
    inherited_labels: tuple[RhythmClass, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        object.__setattr__(self, "inherited_labels", tuple(self.inherited_labels))

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    @property
    def ref(self) -> tuple[str, int]:
        return (self.parent_id, self.index)


def segment_episode(episode: Episode, window_s: float = 10.0) -> list[SubEpisode]:
    """Cut an episode into consecutive, disjoint windows of window_s seconds.

    A trailing remainder shorter than window_s is discarded. A 60 s episode
    with the default window yields six 10 s sub-episodes.
    """
    if window_s <= 0:
        raise EpisodeError("window_s must be positive")
    if len(episode.samples) == 0:
        raise EpisodeError(f"episode {episode.id} is empty")
    step = int(round(window_s * episode.sample_rate_hz))
    if step <= 0:
        raise EpisodeError("window shorter than one sample")
    n_windows = len(episode.samples) // step
    return [
        SubEpisode(
            parent_id=episode.id,
            index=i,
            sample_rate_hz=episode.sample_rate_hz,
            samples=episode.samples[i * step : (i + 1) * step],
        )
        for i in range(n_windows)
    ]


def propagate_global_labels(episode: Episode, subs: list[SubEpisode]) -> list[SubEpisode]:
    """Copy the parent's global label set onto every sub-episode.

    Multi-label parents yield multi-labeled sub-episodes; training later
    duplicates one row per label.
    """
    if not episode.labels:
        raise EpisodeError(f"episode {episode.id} has no labels to propagate")
    if not episode.has_global_labels_only():
        raise EpisodeError(
            f"episode {episode.id} carries timed spans; use assign_segmented_labels"
        )
    labels = tuple(span.label for span in episode.labels)
    return [
        SubEpisode(s.parent_id, s.index, s.sample_rate_hz, s.samples, labels)
        for s in subs
    ]


def assign_segmented_labels(episode: Episode, subs: list[SubEpisode]) -> list[SubEpisode]:
    """Assign each sub-episode the timed label overlapping at least half of it.

    Sub-episodes with no qualifying span are dropped. Ties at exactly half a
    window are broken towards the span with the earlier start, so the result
    does not depend on span order.
    """
    spans = [s for s in episode.labels if not s.is_global]
    if len(spans) != len(episode.labels):
        raise EpisodeError(f"episode {episode.id} mixes global labels into segmented assignment")
    ordered = sorted(spans, key=lambda s: (s.start_s, s.end_s))
    for a, b in zip(ordered, ordered[1:]):
        if b.start_s < a.end_s - 1e-9:
            raise EpisodeError(
                f"episode {episode.id}: overlapping label spans "
                f"[{a.start_s},{a.end_s}] and [{b.start_s},{b.end_s}]"
            )

    out: list[SubEpisode] = []
    for sub in subs:
        w = sub.duration_s
        lo = sub.index * w
        hi = lo + w
        best: LabelSpan | None = None
        best_overlap = 0.0
        for span in ordered:
            overlap = min(hi, span.end_s) - max(lo, span.start_s)
            # strictly-better overlap wins; ties keep the earlier span (list is
            # sorted by start, so the first one to reach best_overlap stays)
            if overlap > best_overlap + 1e-12:
                best = span
                best_overlap = overlap
        if best is not None and best_overlap >= w / 2 - 1e-9:
            out.append(
                SubEpisode(
                    sub.parent_id, sub.index, sub.sample_rate_hz, sub.samples, (best.label,)
                )
            )
    return out


def label_rows(subs: list[SubEpisode]) -> list[tuple[SubEpisode, RhythmClass]]:
    """Expand multi-labeled sub-episodes into one (sub, label) row per label."""
    rows: list[tuple[SubEpisode, RhythmClass]] = []
    for sub in subs:
        if not sub.inherited_labels:
            raise EpisodeError(
                f"sub-episode {sub.parent_id}[{sub.index}] has no labels; "
                "cannot enter training"
            )
        for lab in sub.inherited_labels:
            rows.append((sub, lab))
    return rows
