import numpy as np
import pytest

from oracles import fuse_votes_reference, greedy_match_count
from secgkit import data, qrs
from secgkit.core import RhythmClass, SubEpisode, segment_episode

FS = 128.0


def flat_sub():
    return SubEpisode("flat", 0, FS, np.zeros(1280))


def synth_subs(cls, bpm, seed, n_episodes=3):
    """(sub, truth peak times within the sub) pairs from the generator."""
    out = []
    for i in range(n_episodes):
        spec = data.SynthSpec(rhythm_class=cls, seed=seed + i, base_bpm=bpm)
        ep, truth = data.synth_episode(spec)
        for sub in segment_episode(ep):
            lo = sub.index * 10.0
            t = truth.r_peak_times_s
            out.append((sub, t[(t >= lo) & (t < lo + 10.0)] - lo))
    return out


DETECTORS = [
    ("energy", lambda s: qrs.detect_energy(s)),
    ("matched", lambda s: qrs.detect_matched(s)),
    ("pan_tompkins", lambda s: qrs.detect_pan_tompkins(s)),
    ("maxima", lambda s: qrs.detect_maxima(s)),
]


class TestIndividualDetectors:
    @pytest.mark.parametrize("name,det", DETECTORS)
    def test_flat_signal_yields_nothing(self, name, det):
        assert len(det(flat_sub()).times_s) == 0

    @pytest.mark.parametrize("name,det", DETECTORS)
    def test_sinus_count_and_accuracy(self, name, det):
        for sub, truth in synth_subs(RhythmClass.NORMAL, 60.0, 900, n_episodes=2):
            got = det(sub).times_s
            assert abs(len(got) - len(truth)) <= 1
            matched = greedy_match_count(truth, got, 0.05)
            assert matched >= len(truth) - 1

    @pytest.mark.parametrize("name,det", DETECTORS)
    def test_tachycardia_count(self, name, det):
        for sub, truth in synth_subs(RhythmClass.TACHYCARDIA, 150.0, 950, n_episodes=2):
            got = det(sub).times_s
            assert abs(len(got) - len(truth)) <= 2

    def test_matched_filter_finds_inserted_templates(self):
        tpl = qrs.default_qrs_template(FS)
        sig = np.zeros(1280)
        spots = [200, 500, 800, 1100]
        for s in spots:
            sig[s : s + len(tpl)] += tpl
        sub = SubEpisode("tpl", 0, FS, sig)
        got = qrs.detect_matched(sub).times_s
        centers = [(s + np.argmax(tpl)) / FS for s in spots]
        assert greedy_match_count(np.asarray(centers), got, 0.05) == 4

    def test_candidates_strictly_increasing(self):
        for sub, _ in synth_subs(RhythmClass.NORMAL, 75.0, 1000, n_episodes=1):
            for _, det in DETECTORS:
                t = det(sub).times_s
                assert np.all(np.diff(t) > 0)


def cands(*time_lists):
    ids = list(qrs.DetectorId)
    return [
        qrs.PeakCandidates(ids[i], np.asarray(ts, dtype=float))
        for i, ts in enumerate(time_lists)
    ]


class TestFuseKde:
    def test_perfect_agreement(self):
        fused = qrs.fuse_kde(cands([1, 2, 3], [1, 2, 3], [1, 2, 3], [1, 2, 3]))
        assert np.allclose(fused.times_s, [1, 2, 3])
        assert fused.support.tolist() == [4, 4, 4]

    def test_lone_detector_is_rejected(self):
        fused = qrs.fuse_kde(cands([1.0, 5.0], [1.0], [1.0], []))
        assert np.allclose(fused.times_s, [1.0])

    def test_fused_time_is_median_of_supporters(self):
        fused = qrs.fuse_kde(cands([1.00], [1.01], [1.02], [0.99]))
        assert len(fused.times_s) == 1
        assert fused.times_s[0] == pytest.approx(1.005)
        assert fused.support[0] == 4

    def test_all_empty(self):
        fused = qrs.fuse_kde(cands([], [], [], []))
        assert len(fused.times_s) == 0

    def test_refractory_invariant(self, rng):
        params = qrs.QrsParams()
        for _ in range(30):
            lists = [np.sort(rng.uniform(0, 10, size=rng.integers(0, 12))) for _ in range(4)]
            fused = qrs.fuse_kde(cands(*lists), params)
            if len(fused.times_s) > 1:
                assert np.diff(fused.times_s).min() >= params.refractory_s

    def test_fused_peaks_near_candidates(self, rng):
        params = qrs.QrsParams()
        for _ in range(30):
            lists = [np.sort(rng.uniform(0, 10, size=rng.integers(1, 12))) for _ in range(4)]
            pooled = np.concatenate(lists)
            fused = qrs.fuse_kde(cands(*lists), params)
            for t in fused.times_s:
                assert np.abs(pooled - t).min() <= 2 * params.kde_bandwidth_s

    def test_permutation_invariance(self, rng):
        for _ in range(50):
            lists = [np.sort(rng.uniform(0, 10, size=rng.integers(0, 10))) for _ in range(4)]
            base = qrs.fuse_kde(cands(*lists))
            perm = rng.permutation(4)
            shuffled = qrs.fuse_kde(cands(*[lists[i] for i in perm]))
            assert np.array_equal(base.times_s, shuffled.times_s)
            assert np.array_equal(base.support, shuffled.support)

    def test_matches_naive_rule_evaluation(self, rng):
        params = qrs.QrsParams()
        for _ in range(40):
            lists = [np.sort(rng.uniform(0, 10, size=rng.integers(0, 10))) for _ in range(4)]
            fused = qrs.fuse_kde(cands(*lists), params)
            want = fuse_votes_reference(
                lists, params.kde_bandwidth_s, params.min_support, params.refractory_s
            )
            assert np.allclose(fused.times_s, want)


class TestConsensus:
    def test_clean_corpus_sensitivity_and_precision(self):
        tp = fn = fp = 0
        for cls, bpm, seed in [
            (RhythmClass.NORMAL, 72.0, 1100),
            (RhythmClass.TACHYCARDIA, 150.0, 1200),
        ]:
            for sub, truth in synth_subs(cls, bpm, seed, n_episodes=3):
                got = qrs.consensus_peaks(sub).times_s
                m = greedy_match_count(truth, got, 0.05)
                tp += m
                fn += len(truth) - m
                fp += len(got) - m
        assert tp / (tp + fn) >= 0.99
        assert tp / (tp + fp) >= 0.99

    def test_pause_subs_allow_empty_output(self):
        # asystole windows legitimately produce no peaks
        sig = np.zeros(1280)
        sig[:160] = qrs.default_qrs_template(FS)[:160].max()  # a lone artifact edge
        sub = SubEpisode("pause", 0, FS, np.zeros(1280))
        fused = qrs.consensus_peaks(sub)
        assert len(fused.times_s) == 0
