"""Run-report serialization: determinism, round-trips, and error metrics."""

import numpy as np
import pytest

from sdrsac.geometry import (
    ConsensusResult,
    CorrespondenceSet,
    PointCloud,
    RigidTransform,
)
from sdrsac.report import (
    RunReport,
    emit_json,
    emit_text,
    parse_json,
    report_from_result,
    rotation_error_deg,
    translation_error,
)
from sdrsac.sampler import RegistrationResult, SdrsacConfig
from sdrsac.synthetic import uniform_rotation


def _axis_rotation(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _fake_result(seed=3, method="sdrsac"):
    rng = np.random.default_rng(seed)
    transform = RigidTransform(uniform_rotation(rng), rng.normal(size=3))
    consensus = ConsensusResult(
        count=17,
        inliers=CorrespondenceSet(
            np.column_stack([np.arange(17), np.arange(17)])
        ),
    )
    return RegistrationResult(
        method=method,
        transform=transform,
        consensus=consensus,
        iterations=12,
        stop_bound=34,
        p_inlier=0.44,
        trace=((1, 5, 0.01), (2, 17, 0.002)),
        wall_time_s=1.2345,
    )


class TestErrorMetrics:
    def test_zero_error_for_equal_rotations(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            rot = uniform_rotation(rng)
            assert rotation_error_deg(rot, rot) < 1e-9

    def test_known_angle_recovered(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            angle = rng.uniform(0.01, np.pi - 0.01)
            axis = rng.normal(size=3)
            base = uniform_rotation(rng)
            rotated = _axis_rotation(axis, angle) @ base
            err = rotation_error_deg(rotated, base)
            assert err == pytest.approx(np.degrees(angle), abs=1e-7)

    def test_clipping_survives_roundoff(self):
        rot = np.eye(3) + 1e-13
        # Gram-normalize so the constructor-free path still sees a near-identity.
        assert rotation_error_deg(rot, np.eye(3)) >= 0.0

    def test_translation_error_is_euclidean(self):
        assert translation_error([1.0, 2.0, 2.0], [1.0, 0.0, 0.0]) == pytest.approx(
            np.sqrt(8.0)
        )


class TestReportConstruction:
    def test_flattens_result_fields(self):
        result = _fake_result()
        report = report_from_result(result, SdrsacConfig())
        assert report.method == "sdrsac"
        assert report.consensus == 17
        assert report.iterations == 12
        assert report.stop_bound == 34
        np.testing.assert_allclose(
            np.asarray(report.rotation).reshape(3, 3),
            result.transform.rotation,
        )
        np.testing.assert_allclose(
            report.translation, result.transform.translation
        )
        assert report.rotation_error_deg is None
        assert report.translation_error is None

    def test_truth_errors_attached(self):
        result = _fake_result()
        report = report_from_result(
            result, SdrsacConfig(), truth=result.transform
        )
        assert report.rotation_error_deg == pytest.approx(0.0, abs=1e-9)
        assert report.translation_error == pytest.approx(0.0, abs=1e-12)

    def test_timing_suppression_zeroes_wall_time(self):
        result = _fake_result()
        report = report_from_result(result, SdrsacConfig(), timing=False)
        assert report.wall_time_s == 0.0

    def test_config_echo_resolves_gamma(self):
        result = _fake_result()
        report = report_from_result(
            result, SdrsacConfig(epsilon=0.05, gamma=None)
        )
        assert report.config["gamma"] == pytest.approx(0.1)
        assert report.config["epsilon"] == pytest.approx(0.05)

    def test_transform_reconstruction(self):
        result = _fake_result()
        report = report_from_result(result, SdrsacConfig())
        rebuilt = report.transform()
        np.testing.assert_allclose(
            rebuilt.rotation, result.transform.rotation, atol=1e-15
        )


class TestJsonRoundTrip:
    def test_parse_emit_identity(self):
        report = report_from_result(
            _fake_result(), SdrsacConfig(), truth=RigidTransform.identity()
        )
        again = parse_json(emit_json(report))
        assert again == report

    def test_emission_is_deterministic(self):
        report = report_from_result(_fake_result(), SdrsacConfig())
        assert emit_json(report) == emit_json(report)

    def test_equal_reports_equal_bytes(self):
        a = report_from_result(_fake_result(seed=9), SdrsacConfig())
        b = report_from_result(_fake_result(seed=9), SdrsacConfig())
        assert emit_json(a) == emit_json(b)

    def test_floats_keep_full_precision(self):
        report = report_from_result(_fake_result(), SdrsacConfig())
        again = parse_json(emit_json(report))
        assert again.rotation == report.rotation
        assert again.p_inlier == report.p_inlier
        assert again.wall_time_s == report.wall_time_s

    def test_json_keys_sorted(self):
        text = emit_json(report_from_result(_fake_result(), SdrsacConfig()))
        keys = [
            line.split('"')[1]
            for line in text.splitlines()
            if line.startswith('  "')
        ]
        assert keys == sorted(keys)

    def test_text_mode_mentions_core_fields(self):
        report = report_from_result(
            _fake_result(), SdrsacConfig(), truth=RigidTransform.identity()
        )
        text = emit_text(report)
        for token in ("method", "consensus", "rotation_error_deg", "translation"):
            assert token in text


class TestSo3Consistency:
    def test_report_rotation_passes_so3_checks(self):
        report = report_from_result(_fake_result(), SdrsacConfig())
        rot = np.asarray(report.rotation).reshape(3, 3)
        assert np.abs(rot.T @ rot - np.eye(3)).max() < 1e-9
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-9)

    def test_consensus_matches_recomputation(self):
        rng = np.random.default_rng(5)
        cloud = PointCloud(rng.uniform(0.0, 1.0, (40, 3)))
        from sdrsac.geometry import consensus_score

        transform = RigidTransform.identity()
        consensus = consensus_score(cloud, cloud, transform, 1e-6)
        result = RegistrationResult(
            method="icp",
            transform=transform,
            consensus=consensus,
            iterations=1,
            stop_bound=1,
            p_inlier=1.0,
            trace=((1, consensus.count, 0.0),),
            wall_time_s=0.0,
        )
        report = report_from_result(result, SdrsacConfig())
        again = consensus_score(cloud, cloud, report.transform(), 1e-6)
        assert report.consensus == again.count == 40
