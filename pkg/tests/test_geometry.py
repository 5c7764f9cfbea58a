import numpy as np
import pytest

from sdrsac.geometry import (
    ConsensusResult,
    CorrespondenceSet,
    DegenerateGeometryError,
    PointCloud,
    RigidTransform,
    apply_transform,
    consensus_score,
    estimate_rigid,
    nearest_neighbor,
)


def random_rotation(rng):
    # QR of a Gaussian matrix, sign-fixed to det +1
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, -1] *= -1
    return q


def nn_linear_scan(points, query):
    """Oracle: brute-force nearest neighbour, ties to the smallest index."""
    d = np.linalg.norm(points - query, axis=1)
    i = int(np.argmin(d))  # argmin returns the first (smallest) index on ties
    return i, float(d[i])


class TestPointCloud:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 2)))
        with pytest.raises(ValueError):
            PointCloud(np.array([[np.nan, 0, 0]]))

    def test_immutable(self):
        c = PointCloud(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            c.points[0, 0] = 1.0

    def test_extent(self):
        c = PointCloud(np.array([[0.0, 0, 0], [1.0, 2.0, 2.0]]))
        assert c.extent == pytest.approx(3.0)


class TestRigidTransform:
    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 2.0, np.zeros(3))
        mirror = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(mirror, np.zeros(3))

    def test_identity_apply(self):
        cloud = PointCloud(np.arange(12, dtype=float).reshape(4, 3))
        out = apply_transform(RigidTransform.identity(), cloud)
        np.testing.assert_array_equal(out.points, cloud.points)

    def test_z_rotation_90(self):
        rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        t = RigidTransform(rz, np.array([1.0, 0.0, 0.0]))
        out = t.apply(np.array([[1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out, [[1.0, 1.0, 0.0]], atol=1e-15)

    def test_compose_inverse_roundtrip(self):
        rng = np.random.default_rng(3)
        t = RigidTransform(random_rotation(rng), rng.normal(size=3))
        roundtrip = t.inverse().compose(t)
        np.testing.assert_allclose(roundtrip.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(roundtrip.translation, 0.0, atol=1e-12)

    def test_distances_preserved(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(30, 3))
        t = RigidTransform(random_rotation(rng), rng.normal(size=3))
        moved = t.apply(pts)
        d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        d1 = np.linalg.norm(moved[:, None] - moved[None, :], axis=-1)
        np.testing.assert_allclose(d0, d1, atol=1e-12)


class TestNearestNeighbor:
    def test_two_point_example(self):
        cloud = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
        idx, dist = nearest_neighbor(cloud, np.array([0.6, 0.0, 0.0]))
        assert idx == 1
        assert dist == pytest.approx(0.4)

    def test_tie_breaks_to_smallest_index(self):
        cloud = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
        idx, dist = nearest_neighbor(cloud, np.array([0.5, 0.0, 0.0]))
        assert idx == 0
        assert dist == pytest.approx(0.5)

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-1, 1, size=(500, 3))
        cloud = PointCloud(pts)
        for q in rng.uniform(-1.2, 1.2, size=(100, 3)):
            idx, dist = nearest_neighbor(cloud, q)
            oidx, odist = nn_linear_scan(pts, q)
            assert idx == oidx
            assert dist == pytest.approx(odist, abs=1e-12)


class TestCorrespondenceSet:
    def test_rejects_repeated_sources(self):
        with pytest.raises(ValueError):
            CorrespondenceSet(np.array([[0, 1], [0, 2]]))

    def test_allows_repeated_targets(self):
        cs = CorrespondenceSet(np.array([[0, 1], [2, 1]]))
        assert len(cs) == 2
        assert not cs.is_one_to_one()

    def test_one_to_one(self):
        cs = CorrespondenceSet(np.array([[0, 1], [2, 3]]))
        assert cs.is_one_to_one()


class TestConsensus:
    def test_exact_overlap_counts_everything(self):
        rng = np.random.default_rng(5)
        src = PointCloud(rng.normal(size=(50, 3)))
        t = RigidTransform(random_rotation(rng), rng.normal(size=3))
        dst = apply_transform(t, src)
        res = consensus_score(src, dst, t, epsilon=1e-9)
        assert res.count == 50
        assert len(res.inliers) == 50
        # at the true transform every point maps onto its own image
        np.testing.assert_array_equal(
            res.inliers.source_indices, res.inliers.target_indices
        )

    def test_epsilon_must_be_positive(self):
        c = PointCloud(np.zeros((1, 3)))
        with pytest.raises(ValueError):
            consensus_score(c, c, RigidTransform.identity(), 0.0)

    def test_count_matches_inliers(self):
        with pytest.raises(ValueError):
            ConsensusResult(count=2, inliers=CorrespondenceSet.empty())

    def test_monotone_in_epsilon(self):
        rng = np.random.default_rng(6)
        src = PointCloud(rng.uniform(size=(200, 3)))
        dst = PointCloud(rng.uniform(size=(200, 3)))
        t = RigidTransform.identity()
        counts = [
            consensus_score(src, dst, t, eps).count
            for eps in (0.01, 0.05, 0.1, 0.3)
        ]
        assert counts == sorted(counts)

    def test_survivor_binomial_bound(self):
        # sparse cloud (spacing >> eps) with 30% of targets removed and noise
        # far below eps: inliers are exactly the survivors, binomially many.
        rng = np.random.default_rng(7)
        n, r, sigma, eps = 1000, 0.3, 1e-3, 0.02
        pts = rng.uniform(0, 10, size=(n, 3))  # spacing ~ 0.5 >> eps
        t = RigidTransform(random_rotation(rng), rng.normal(size=3))
        moved = t.apply(pts) + rng.normal(scale=sigma, size=(n, 3))
        keep = rng.permutation(n)[: n - int(r * n)]
        dst = PointCloud(moved[keep])
        res = consensus_score(PointCloud(pts), dst, t, eps)
        expected = n * (1 - r)
        tol = 3 * np.sqrt(n * r * (1 - r))
        assert abs(res.count - expected) <= tol


class TestEstimateRigid:
    def test_recovers_random_transform(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            src = rng.normal(size=(10, 3))
            t = RigidTransform(random_rotation(rng), rng.normal(size=3))
            est = estimate_rigid(src, t.apply(src))
            np.testing.assert_allclose(est.rotation, t.rotation, atol=1e-9)
            np.testing.assert_allclose(est.translation, t.translation, atol=1e-9)
            resid = np.linalg.norm(est.apply(src) - t.apply(src), axis=1)
            assert resid.max() < 1e-9

    def test_identity_on_identical_points(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(5, 3))
        est = estimate_rigid(pts, pts)
        np.testing.assert_allclose(est.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(est.translation, 0.0, atol=1e-12)

    def test_mirrored_data_still_proper(self):
        # target is a mirror image: the fit must stay a proper rotation
        rng = np.random.default_rng(10)
        src = rng.normal(size=(3, 3))
        dst = src.copy()
        dst[:, 2] *= -1
        est = estimate_rigid(src, dst)
        assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-9)

    def test_too_few_pairs(self):
        with pytest.raises(ValueError):
            estimate_rigid(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_collinear_raises(self):
        src = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
        with pytest.raises(DegenerateGeometryError):
            estimate_rigid(src, src)
