import numpy as np
import pytest

from oracles import trustworthiness
from secgkit.embedding import (
    EmbeddingError,
    histogram,
    histogram_bounds,
    lorenz_points,
    rr_series,
    tsne,
)
from secgkit.qrs import RPeaks


def peaks(*times):
    return RPeaks(np.asarray(times, dtype=float), np.full(len(times), 4))


class TestRrSeries:
    def test_unit_spacing(self):
        assert rr_series(peaks(1, 2, 3)).tolist() == [1.0, 1.0]

    def test_too_few_peaks(self):
        assert rr_series(peaks(5)).size == 0
        assert rr_series(peaks()).size == 0

    def test_sixty_bpm_about_one_second(self, rng):
        t = np.cumsum(1.0 + 0.02 * rng.standard_normal(20))
        rr = rr_series(peaks(*t))
        assert np.all(np.abs(rr - 1.0) < 0.1)


class TestLorenzPoints:
    def test_regular_rhythm_all_zero(self):
        pts = lorenz_points(np.array([1.0, 1.0, 1.0, 1.0]))
        assert pts.shape == (2, 2)
        assert not pts.any()

    def test_single_pair_arithmetic(self):
        pts = lorenz_points(np.array([0.8, 1.0, 0.7]))
        assert pts.shape == (1, 2)
        assert pts[0, 0] == pytest.approx(0.2)
        assert pts[0, 1] == pytest.approx(-0.3)

    def test_too_few_intervals(self):
        assert lorenz_points(np.array([1.0, 1.0])).shape == (0, 2)

    def test_pair_count(self, rng):
        for k in range(3, 30):
            rr = rng.uniform(0.5, 1.5, size=k)
            assert lorenz_points(rr).shape == (k - 2, 2)


class TestHistogram:
    def test_center_mass(self):
        pts = np.zeros((7, 2))
        h = histogram(pts, grid=5, bounds_s=0.5)
        assert h.counts[2 * 5 + 2] == 7
        assert h.counts.sum() == 7
        assert h.n_points == 7

    def test_empty_point_list(self):
        h = histogram(np.empty((0, 2)), bounds_s=0.5)
        assert not h.counts.any()
        assert h.n_points == 0

    def test_corner_bin_indexing(self):
        h = histogram(np.array([[0.49, -0.49]]), grid=5, bounds_s=0.5)
        # x=0.49 -> column 4; y=-0.49 -> row 0; row-major flat index 4
        assert h.counts[0 * 5 + 4] == 1

    def test_clipping_preserves_mass(self, rng):
        pts = rng.uniform(-3, 3, size=(200, 2))
        h = histogram(pts, bounds_s=0.5)
        assert h.counts.sum() == 200

    def test_mass_conservation_random(self, rng):
        for _ in range(20):
            rr = rng.uniform(0.3, 2.0, size=int(rng.integers(0, 25)))
            pts = lorenz_points(rr)
            h = histogram(pts, bounds_s=0.4)
            assert h.counts.sum() == h.n_points == max(0, len(rr) - 2)

    def test_reversed_series_gives_rotated_transpose(self, rng):
        for _ in range(20):
            rr = rng.uniform(0.3, 1.8, size=12)
            fwd = histogram(lorenz_points(rr), bounds_s=0.6).as_matrix()
            rev = histogram(lorenz_points(rr[::-1]), bounds_s=0.6).as_matrix()
            assert np.array_equal(rev, np.rot90(fwd.T, 2))

    def test_invalid_bounds(self):
        with pytest.raises(EmbeddingError):
            histogram(np.zeros((1, 2)), bounds_s=0.0)


class TestHistogramBounds:
    def test_rounds_up_to_tenth(self):
        vals = np.full(1000, 0.42)
        assert histogram_bounds(vals) == pytest.approx(0.5)

    def test_floor_at_one_tenth(self):
        assert histogram_bounds(np.full(100, 0.01)) == pytest.approx(0.1)

    def test_empty_defaults(self):
        assert histogram_bounds(np.empty(0)) == pytest.approx(0.5)


def three_blobs(seed=42, n_per=60):
    rng = np.random.default_rng(seed)
    blobs = []
    for c in rng.standard_normal((3, 25)) * 10:
        basis = rng.standard_normal((2, 25))
        blobs.append(c + rng.standard_normal((n_per, 2)) @ basis
                     + 0.05 * rng.standard_normal((n_per, 25)))
    return np.vstack(blobs)


class TestTsne:
    def test_deterministic_given_seed(self):
        x = three_blobs(n_per=40)
        a = tsne(x, perplexity=15, n_iter=300, seed=9)
        b = tsne(x, perplexity=15, n_iter=300, seed=9)
        assert a.coords.tobytes() == b.coords.tobytes()
        c = tsne(x, perplexity=15, n_iter=300, seed=10)
        assert not np.array_equal(a.coords, c.coords)

    def test_identical_vectors_rejected(self):
        x = np.ones((100, 25))
        with pytest.raises(EmbeddingError, match="jitter"):
            tsne(x, perplexity=10)

    def test_too_few_points_rejected(self):
        with pytest.raises(EmbeddingError):
            tsne(np.random.default_rng(0).standard_normal((20, 25)), perplexity=10)

    def test_blobs_stay_faithful(self):
        x = three_blobs(n_per=50)
        res = tsne(x, perplexity=20, n_iter=500, seed=1)
        assert trustworthiness(x, res.coords, k=10) >= 0.95

    def test_duplicates_land_together(self):
        x = three_blobs(n_per=40)
        xd = np.vstack([x, x[:5]])
        res = tsne(xd, perplexity=15, n_iter=500, seed=2)
        d = np.linalg.norm(res.coords[len(x):] - res.coords[:5], axis=1)
        diameter = np.linalg.norm(res.coords.max(0) - res.coords.min(0))
        assert np.all(d < 0.01 * diameter)

    def test_kl_trace_reported_and_decreasing_late(self):
        x = three_blobs(n_per=40)
        res = tsne(x, perplexity=15, n_iter=400, seed=3, trace_every=10)
        assert res.kl_trace
        post = [kl for it, kl in res.kl_trace if it >= 250]
        assert all(b <= a + 1e-6 for a, b in zip(post, post[1:]))
