import numpy as np
import pytest

from secgkit.core import (
    Episode,
    EpisodeError,
    LabelSpan,
    RhythmClass,
    assign_segmented_labels,
    label_rows,
    propagate_global_labels,
    segment_episode,
)


def make_episode(duration_s, fs=128.0, labels=(), eid="ep"):
    n = int(duration_s * fs)
    samples = np.sin(np.arange(n) * 0.1)
    return Episode(id=eid, sample_rate_hz=fs, samples=samples, labels=labels)


class TestSegmentEpisode:
    def test_sixty_seconds_gives_six_windows(self):
        ep = make_episode(60.0)
        subs = segment_episode(ep, 10.0)
        assert len(subs) == 6
        assert all(len(s.samples) == 1280 for s in subs)

    def test_identity_window(self):
        ep = make_episode(10.0)
        subs = segment_episode(ep, 10.0)
        assert len(subs) == 1
        assert np.array_equal(subs[0].samples, ep.samples)

    def test_trailing_remainder_dropped(self):
        ep = make_episode(57.0)
        subs = segment_episode(ep, 10.0)
        assert len(subs) == 5
        assert sum(len(s.samples) for s in subs) == 5 * 1280

    def test_empty_episode_rejected(self):
        ep = make_episode(60.0)
        object.__setattr__(ep, "samples", np.empty(0))
        with pytest.raises(EpisodeError):
            segment_episode(ep, 10.0)

    def test_segmentation_is_a_partition(self, rng):
        for _ in range(20):
            dur = float(rng.uniform(5, 60))
            w = float(rng.uniform(2, 15))
            ep = make_episode(dur)
            subs = segment_episode(ep, w)
            step = int(round(w * 128))
            joined = np.concatenate([s.samples for s in subs]) if subs else np.empty(0)
            assert np.array_equal(joined, ep.samples[: len(subs) * step])
            assert [s.index for s in subs] == list(range(len(subs)))


class TestPropagateGlobalLabels:
    def test_single_label(self):
        ep = make_episode(60.0, labels=(LabelSpan(RhythmClass.AFIB),))
        subs = propagate_global_labels(ep, segment_episode(ep, 10.0))
        assert all(s.inherited_labels == (RhythmClass.AFIB,) for s in subs)

    def test_multi_label_duplication(self):
        ep = make_episode(
            60.0, labels=(LabelSpan(RhythmClass.NORMAL), LabelSpan(RhythmClass.NOISE))
        )
        subs = propagate_global_labels(ep, segment_episode(ep, 10.0))
        rows = label_rows(subs)
        assert len(rows) == 12
        # label multiset cardinality is 6x the parent's
        assert sum(1 for _, lab in rows if lab == RhythmClass.NORMAL) == 6
        assert sum(1 for _, lab in rows if lab == RhythmClass.NOISE) == 6

    def test_unlabeled_parent_rejected(self):
        ep = make_episode(60.0)
        with pytest.raises(EpisodeError):
            propagate_global_labels(ep, segment_episode(ep, 10.0))

    def test_unlabeled_sub_rejected_at_row_expansion(self):
        ep = make_episode(60.0)
        with pytest.raises(EpisodeError):
            label_rows(segment_episode(ep, 10.0))


class TestAssignSegmentedLabels:
    def test_full_span_labels_all(self):
        ep = make_episode(60.0, labels=(LabelSpan(RhythmClass.AFIB, 0.0, 60.0),))
        subs = assign_segmented_labels(ep, segment_episode(ep, 10.0))
        assert len(subs) == 6
        assert all(s.inherited_labels == (RhythmClass.AFIB,) for s in subs)

    def test_half_overlap_tie_goes_to_earlier_span(self):
        ep = make_episode(
            60.0,
            labels=(
                LabelSpan(RhythmClass.NOISE, 0.0, 5.0),
                LabelSpan(RhythmClass.NORMAL, 5.0, 60.0),
            ),
        )
        subs = assign_segmented_labels(ep, segment_episode(ep, 10.0))
        first = next(s for s in subs if s.index == 0)
        assert first.inherited_labels == (RhythmClass.NOISE,)

    def test_short_span_drops_everything(self):
        ep = make_episode(60.0, labels=(LabelSpan(RhythmClass.TACHYCARDIA, 12.0, 14.0),))
        subs = assign_segmented_labels(ep, segment_episode(ep, 10.0))
        assert subs == []

    def test_overlapping_spans_rejected(self):
        ep = make_episode(
            60.0,
            labels=(
                LabelSpan(RhythmClass.NORMAL, 0.0, 30.0),
                LabelSpan(RhythmClass.AFIB, 20.0, 60.0),
            ),
        )
        with pytest.raises(EpisodeError):
            assign_segmented_labels(ep, segment_episode(ep, 10.0))

    def test_never_assigns_below_half_window(self, rng):
        # random non-overlapping two-span layouts; every kept sub must truly
        # overlap its label by >= 5 s
        for _ in range(30):
            cut = float(rng.uniform(1.0, 59.0))
            ep = make_episode(
                60.0,
                labels=(
                    LabelSpan(RhythmClass.PAUSE, 0.0, cut),
                    LabelSpan(RhythmClass.NORMAL, cut, 60.0),
                ),
            )
            for sub in assign_segmented_labels(ep, segment_episode(ep, 10.0)):
                lo, hi = sub.index * 10.0, sub.index * 10.0 + 10.0
                span = next(
                    s for s in ep.labels if s.label == sub.inherited_labels[0]
                )
                overlap = min(hi, span.end_s) - max(lo, span.start_s)
                assert overlap >= 5.0 - 1e-9


class TestEpisodeInvariants:
    def test_over_long_episode_rejected(self):
        with pytest.raises(EpisodeError):
            make_episode(61.0)

    def test_bad_span_rejected(self):
        with pytest.raises(EpisodeError):
            LabelSpan(RhythmClass.NORMAL, 5.0, 5.0)
        with pytest.raises(EpisodeError):
            LabelSpan(RhythmClass.NORMAL, -1.0, 5.0)
        with pytest.raises(EpisodeError):
            LabelSpan(RhythmClass.NORMAL, 1.0, None)

    def test_span_beyond_duration_rejected(self):
        with pytest.raises(EpisodeError):
            make_episode(30.0, labels=(LabelSpan(RhythmClass.NORMAL, 0.0, 31.0),))
