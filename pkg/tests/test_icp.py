"""Tests for the trimmed iterative-closest-point refinement.

A deliberately naive full-correspondence implementation (linear-scan nearest
neighbors, no trimming) serves as the oracle for the classic variant; the
trimmed variant is checked on partially overlapping clouds where the classic
iteration is pulled off target.
"""

import numpy as np
import pytest

from sdrsac.geometry import PointCloud, RigidTransform, estimate_rigid
from sdrsac.icp import IcpConfig, IcpResult, refine_icp


def random_rotation(rng):
    a = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, [0, 1]] = q[:, [1, 0]]
    return q


def rotation_about(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [
            [0, -axis[2], axis[1]],
            [axis[2], 0, -axis[0]],
            [-axis[1], axis[0], 0],
        ]
    )
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rotation_error_deg(r_est, r_true):
    c = (np.trace(r_est @ r_true.T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def classic_icp_oracle(source, target, init, max_iter=50, tol=1e-8):
    """Reference full-correspondence iteration with linear-scan neighbors."""
    transform = init
    prev = np.inf
    for _ in range(max_iter):
        moved = transform.apply(source)
        d2 = ((moved[:, None, :] - target[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        mse = float(np.mean(d2[np.arange(len(source)), idx]))
        if mse == 0.0 or (np.isfinite(prev) and abs(prev - mse) <= tol * prev):
            break
        prev = mse
        transform = estimate_rigid(source, target[idx])
    return transform


class TestConfig:
    def test_defaults(self):
        cfg = IcpConfig()
        assert cfg.max_iter == 50
        assert cfg.tol == 1e-8
        assert cfg.trim_ratio == 0.7

    def test_validation(self):
        with pytest.raises(ValueError):
            IcpConfig(max_iter=0)
        with pytest.raises(ValueError):
            IcpConfig(tol=0.0)
        with pytest.raises(ValueError):
            IcpConfig(trim_ratio=0.0)
        with pytest.raises(ValueError):
            IcpConfig(trim_ratio=1.5)


class TestClassicVariant:
    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(50)
        pts = rng.uniform(-1, 1, size=(60, 3))
        rot = rotation_about([0.3, 1.0, 0.2], np.radians(12))
        t = np.array([0.05, -0.02, 0.04])
        target = pts @ rot.T + t
        src_cloud = PointCloud(pts)
        tgt_cloud = PointCloud(target)
        init = RigidTransform.identity()

        result = refine_icp(
            src_cloud, tgt_cloud, init, IcpConfig(trim_ratio=1.0)
        )
        oracle = classic_icp_oracle(pts, target, init)
        assert np.allclose(result.transform.rotation, oracle.rotation, atol=1e-9)
        assert np.allclose(
            result.transform.translation, oracle.translation, atol=1e-9
        )

    def test_recovers_moderate_rotation(self):
        rng = np.random.default_rng(51)
        pts = rng.uniform(-1, 1, size=(200, 3))
        rot = rotation_about([0.0, 0.0, 1.0], np.radians(15))
        t = np.array([0.1, 0.0, -0.05])
        target = PointCloud(pts @ rot.T + t)
        result = refine_icp(
            PointCloud(pts), target, config=IcpConfig(trim_ratio=1.0)
        )
        assert result.converged
        assert not result.degenerate
        assert rotation_error_deg(result.transform.rotation, rot) < 1e-6
        assert result.mse < 1e-16


class TestFixedPoint:
    def test_ground_truth_converges_immediately(self):
        rng = np.random.default_rng(52)
        pts = rng.normal(size=(100, 3))
        rot = random_rotation(rng)
        t = rng.normal(size=3) * 0.3
        truth = RigidTransform(rot, t)
        target = PointCloud(truth.apply(pts))
        result = refine_icp(PointCloud(pts), target, init=truth)
        assert result.converged
        assert result.iterations <= 2
        assert np.allclose(result.transform.rotation, rot, atol=1e-12)
        assert np.allclose(result.transform.translation, t, atol=1e-12)


class TestTrimmedVariant:
    def test_robust_to_missing_target_points(self):
        # Remove 30% of the target: every removed source point drags the
        # classic iteration toward surviving far-away points, while the
        # trimmed iteration ignores exactly that worst fraction.
        rng = np.random.default_rng(53)
        pts = rng.uniform(-1, 1, size=(400, 3))
        rot = rotation_about([0.2, 0.5, 1.0], np.radians(10))
        t = np.array([0.08, -0.03, 0.05])
        moved = pts @ rot.T + t
        survivors = rng.permutation(400)[: int(0.7 * 400)]
        target = PointCloud(moved[np.sort(survivors)])
        source = PointCloud(pts)

        trimmed = refine_icp(source, target, config=IcpConfig(trim_ratio=0.7))
        classic = refine_icp(source, target, config=IcpConfig(trim_ratio=1.0))
        err_trim = rotation_error_deg(trimmed.transform.rotation, rot)
        err_classic = rotation_error_deg(classic.transform.rotation, rot)
        assert err_trim < 0.5
        assert err_trim <= err_classic

    def test_mse_history_nonincreasing(self):
        rng = np.random.default_rng(54)
        for trial in range(5):
            pts = rng.uniform(-1, 1, size=(150, 3))
            rot = random_rotation(rng)
            target = PointCloud(
                (pts @ rot.T + rng.normal(size=3) * 0.1)[
                    rng.permutation(150)[:100]
                ]
            )
            result = refine_icp(
                PointCloud(pts), target, config=IcpConfig(trim_ratio=0.6)
            )
            hist = np.array(result.mse_history)
            assert np.all(np.diff(hist) <= 1e-12), f"trial {trial}"

    def test_minimum_three_pairs_kept(self):
        rng = np.random.default_rng(55)
        pts = rng.normal(size=(4, 3))
        target = PointCloud(pts + 0.01)
        result = refine_icp(
            PointCloud(pts), target, config=IcpConfig(trim_ratio=0.01)
        )
        assert isinstance(result, IcpResult)


class TestEdgeCases:
    def test_degenerate_pairs_flagged(self):
        # Collinear sources admit no unique rotation; the initial transform
        # must come back flagged rather than an arbitrary estimate.
        line = np.column_stack(
            [np.linspace(0, 1, 10), np.zeros(10), np.zeros(10)]
        )
        init = RigidTransform.identity()
        result = refine_icp(
            PointCloud(line), PointCloud(line + [0.0, 0.3, 0.0]), init=init
        )
        assert result.degenerate
        assert not result.converged
        assert np.array_equal(result.transform.rotation, init.rotation)
        assert np.array_equal(result.transform.translation, init.translation)

    def test_too_few_points_rejected(self):
        two = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
        with pytest.raises(ValueError):
            refine_icp(two, two)

    def test_iteration_budget_respected(self):
        rng = np.random.default_rng(56)
        pts = rng.uniform(-1, 1, size=(50, 3))
        rot = rotation_about([1.0, 0.0, 0.0], np.radians(25))
        target = PointCloud(pts @ rot.T)
        result = refine_icp(
            PointCloud(pts), target, config=IcpConfig(max_iter=1)
        )
        assert result.iterations == 1
        assert len(result.mse_history) == 1
