import numpy as np
import pytest

from oracles import dbscan_reference
from secgkit.cluster import ClusteringError, dbscan, k_distance


class TestKDistance:
    def test_collinear_unit_spacing(self):
        pts = np.column_stack([np.arange(5.0), np.zeros(5)])
        d = k_distance(pts, k=1)
        assert np.allclose(d, 1.0)

    def test_unit_square_second_neighbor(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        d = k_distance(pts, k=2)
        # each corner: two side neighbors at 1, diagonal at sqrt(2)
        assert np.allclose(d, 1.0)

    def test_sorted_descending(self, rng):
        pts = rng.standard_normal((50, 2))
        d = k_distance(pts, k=4)
        assert np.all(np.diff(d) <= 0)

    def test_needs_more_points_than_k(self):
        with pytest.raises(ClusteringError):
            k_distance(np.zeros((4, 2)), k=4)


def blob(rng, center, n, spread=0.1):
    return center + spread * rng.standard_normal((n, 2))


class TestDbscan:
    def test_two_blobs_two_clusters(self, rng):
        pts = np.vstack([blob(rng, (0, 0), 50), blob(rng, (10, 10), 50)])
        got = dbscan(pts, eps=0.75, min_pts=5)
        assert got.n_clusters == 2
        assert got.outlier_fraction == 0.0
        ref = dbscan_reference(pts, 0.75, 5)
        assert np.array_equal(got.labels, ref)

    def test_identical_points(self):
        pts = np.zeros((20, 2))
        a = dbscan(pts, eps=0.5, min_pts=15)
        assert a.n_clusters == 1
        assert (a.labels == 0).all()
        b = dbscan(pts[:10], eps=0.5, min_pts=15)
        assert (b.labels == -1).all()

    def test_sparse_scatter_all_outliers(self):
        pts = np.column_stack([np.arange(30) * 5.0, np.zeros(30)])
        got = dbscan(pts, eps=1.0, min_pts=2)
        assert (got.labels == -1).all()

    def test_matches_reference_on_random_instances(self, rng):
        for _ in range(25):
            n = int(rng.integers(10, 200))
            style = rng.integers(0, 3)
            if style == 0:
                pts = rng.uniform(-5, 5, size=(n, 2))
            elif style == 1:
                k = int(rng.integers(2, 5))
                centers = rng.uniform(-10, 10, size=(k, 2))
                pts = np.vstack(
                    [blob(rng, c, max(2, n // k), spread=rng.uniform(0.1, 1.0)) for c in centers]
                )
            else:
                pts = np.round(rng.uniform(-3, 3, size=(n, 2)) * 4) / 4  # many ties
            eps = float(rng.uniform(0.1, 2.0))
            min_pts = int(rng.integers(2, 30))
            got = dbscan(pts, eps=eps, min_pts=min_pts)
            ref = dbscan_reference(pts, eps, min_pts)
            assert np.array_equal(got.labels, ref), (eps, min_pts, len(pts))

    def test_cluster_ids_contiguous(self, rng):
        pts = np.vstack([blob(rng, (i * 4, 0), 20, 0.3) for i in range(4)])
        got = dbscan(pts, eps=0.75, min_pts=4)
        ids = sorted(set(got.labels.tolist()) - {-1})
        assert ids == list(range(len(ids)))

    def test_deterministic(self, rng):
        pts = rng.standard_normal((120, 2))
        a = dbscan(pts, eps=0.4, min_pts=6)
        b = dbscan(pts, eps=0.4, min_pts=6)
        assert np.array_equal(a.labels, b.labels)

    def test_parameter_validation(self):
        with pytest.raises(ClusteringError):
            dbscan(np.zeros((5, 2)), eps=0.0)
        with pytest.raises(ClusteringError):
            dbscan(np.zeros((5, 2)), min_pts=0)
        with pytest.raises(ClusteringError):
            dbscan(np.zeros((5, 3)))
