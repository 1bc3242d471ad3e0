import numpy as np
import pytest

from oracles import count_zero_crossings, interval_jaccard
from secgkit import data
from secgkit.core import RhythmClass, segment_episode
from secgkit.emd import ImfStack
from secgkit.noisegate import (
    EmdParams,
    NoiseGateParams,
    NoiseSegment,
    detect_noise,
    gate_vector,
    high_freq_sum,
    jaccard,
    nzc_profile,
)

FS = 128.0
FAST_EMD = EmdParams(ensemble=40, seed=0)


def stack_of(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return ImfStack(imfs=rows, residual=np.zeros(rows.shape[1]))


def clean_sub(seed=0, bpm=70.0, cls=RhythmClass.NORMAL, index=1):
    spec = data.SynthSpec(rhythm_class=cls, seed=seed, base_bpm=bpm)
    ep, _ = data.synth_episode(spec)
    return segment_episode(ep)[index]


class TestHighFreqSum:
    def test_exact_three_imf_sum(self, rng):
        rows = rng.standard_normal((3, 64))
        hn, short = high_freq_sum(stack_of(rows))
        assert np.array_equal(hn, rows.sum(axis=0))
        assert not short

    def test_short_stack_flagged(self, rng):
        rows = rng.standard_normal((1, 64))
        hn, short = high_freq_sum(stack_of(rows))
        assert np.array_equal(hn, rows[0])
        assert short

    def test_zero_imfs_give_zero_hn(self):
        hn, _ = high_freq_sum(stack_of(np.zeros((3, 64))))
        assert not hn.any()

    def test_empty_stack_rejected(self):
        with pytest.raises(ValueError):
            high_freq_sum(ImfStack(imfs=np.empty((0, 64)), residual=np.zeros(64)))


class TestNzcProfile:
    def test_zero_signal_all_zero(self):
        nzc = nzc_profile(np.zeros(256), NoiseGateParams(), FS)
        assert not nzc.any()

    def test_forty_hz_sine_count_matches_brute_force(self):
        t = np.arange(1280) / FS
        hn = np.sin(2 * np.pi * 40.0 * t)
        params = NoiseGateParams()
        nzc = nzc_profile(hn, params, FS)
        w = params.window_samples(FS)
        i = 640
        window = hn[i - w // 2 : i - w // 2 + w]
        prev = 1 if window[0] >= 0 else -1
        expected = count_zero_crossings(window, prev)
        assert nzc[i] == expected
        assert expected in (18, 19)  # 2 * 40 Hz * 0.234375 s = 18.75 crossings

    def test_uniform_amplitude_never_beats_quantile(self):
        # |signal| constant: window max equals the quantile, strict > fails
        hn = np.tile([1.0, -1.0], 640)
        nzc = nzc_profile(hn, NoiseGateParams(), FS)
        assert not nzc.any()

    def test_edges_are_zero_padded(self):
        rng = np.random.default_rng(1)
        hn = rng.standard_normal(256)
        params = NoiseGateParams()
        w = params.window_samples(FS)
        nzc = nzc_profile(hn, params, FS)
        assert not nzc[: w // 2].any()
        assert not nzc[len(hn) - w + w // 2 + 1 :].any()


class TestDetectNoise:
    def test_clean_sinus_has_no_segments(self):
        assert detect_noise(clean_sub(seed=21), emd_params=FAST_EMD) == []

    def test_injected_burst_found_with_good_overlap(self, rng):
        sub = clean_sub(seed=22)
        burst = (4.0, 6.0)
        noisy = data.inject_hf_burst(
            sub.samples, FS, *burst, amp_factor=3.0, band_hz=(30.0, 60.0),
            rng=np.random.default_rng(5),
        )
        sub2 = type(sub)(sub.parent_id, sub.index, FS, noisy, sub.inherited_labels)
        segs = detect_noise(sub2, emd_params=FAST_EMD)
        assert len(segs) == 1
        got = [(s.start_s, s.end_s) for s in segs]
        assert interval_jaccard(got, [burst], resolution=1e-3) >= 0.5

    def test_half_second_burst_below_gate_minimum(self):
        sub = clean_sub(seed=23)
        noisy = data.inject_hf_burst(
            sub.samples, FS, 5.0, 5.5, amp_factor=4.0, band_hz=(30.0, 60.0),
            rng=np.random.default_rng(6),
        )
        sub2 = type(sub)(sub.parent_id, sub.index, FS, noisy, sub.inherited_labels)
        assert detect_noise(sub2, emd_params=FAST_EMD) == []

    def test_segments_disjoint_sorted_and_long_enough(self):
        sub = clean_sub(seed=24)
        noisy = data.inject_hf_burst(
            sub.samples, FS, 1.0, 2.5, 4.0, (30.0, 60.0), np.random.default_rng(7)
        )
        noisy = data.inject_hf_burst(
            noisy, FS, 6.0, 8.0, 4.0, (30.0, 60.0), np.random.default_rng(8)
        )
        sub2 = type(sub)(sub.parent_id, sub.index, FS, noisy, sub.inherited_labels)
        params = NoiseGateParams()
        segs = detect_noise(sub2, params, FAST_EMD)
        assert len(segs) >= 2
        for a, b in zip(segs, segs[1:]):
            assert a.end_s < b.start_s
        assert all(s.duration_s > params.gate_min_s for s in segs)

    def test_scale_invariance_is_exact(self):
        sub = clean_sub(seed=25)
        noisy = data.inject_hf_burst(
            sub.samples, FS, 3.0, 5.0, 3.5, (30.0, 60.0), np.random.default_rng(9)
        )
        a = type(sub)(sub.parent_id, sub.index, FS, noisy, sub.inherited_labels)
        b = type(sub)(sub.parent_id, sub.index, FS, 7.25 * noisy, sub.inherited_labels)
        segs_a = detect_noise(a, emd_params=FAST_EMD)
        segs_b = detect_noise(b, emd_params=FAST_EMD)
        assert segs_a == segs_b

    def test_quantile_monotonicity(self):
        sub = clean_sub(seed=26)
        noisy = data.inject_hf_burst(
            sub.samples, FS, 2.0, 7.0, 3.0, (30.0, 60.0), np.random.default_rng(10)
        )
        sub2 = type(sub)(sub.parent_id, sub.index, FS, noisy, sub.inherited_labels)
        durations = []
        for q in (0.70, 0.85, 0.95):
            segs = detect_noise(sub2, NoiseGateParams(quantile=q), FAST_EMD)
            durations.append(sum(s.duration_s for s in segs))
        assert durations[0] >= durations[1] >= durations[2]


class TestJaccard:
    def seg(self, a, b):
        return NoiseSegment(a, b)

    def test_identical_lists(self):
        s = [self.seg(1.0, 2.0), self.seg(4.0, 5.0)]
        assert jaccard(s, list(s)) == 1.0

    def test_partial_overlap_is_one_third(self):
        assert jaccard([self.seg(0, 2)], [self.seg(1, 3)]) == pytest.approx(1 / 3)

    def test_disjoint_lists(self):
        assert jaccard([self.seg(0, 1)], [self.seg(2, 3)]) == 0.0

    def test_both_empty(self):
        assert jaccard([], []) == 1.0

    def test_matches_sampled_oracle(self, rng):
        for _ in range(20):
            a = sorted(rng.uniform(0, 10, size=4))
            b = sorted(rng.uniform(0, 10, size=4))
            la = [self.seg(a[0], a[1]), self.seg(a[2], a[3])]
            lb = [self.seg(b[0], b[1]), self.seg(b[2], b[3])]
            want = interval_jaccard(
                [(s.start_s, s.end_s) for s in la],
                [(s.start_s, s.end_s) for s in lb],
            )
            assert jaccard(la, lb) == pytest.approx(want, abs=2e-3)


def test_gate_vector_threshold():
    nzc = np.array([0, 1, 2, 5, 1, 3])
    assert gate_vector(nzc, 2).tolist() == [0, 0, 1, 1, 0, 1]
