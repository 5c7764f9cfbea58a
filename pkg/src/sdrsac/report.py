"""Machine-readable run reports.

A RunReport captures what a registration run produced — the transform, its
consensus support, loop counters, timing, the configuration that was used —
plus, when a ground truth is known, the rotation and translation errors
against it.  Reports serialize to JSON deterministically: keys are sorted and
floats are written with `repr`, so equal reports are byte-identical and every
report round-trips through its own JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform
from .sampler import RegistrationResult, SdrsacConfig

__all__ = [
    "RunReport",
    "rotation_error_deg",
    "translation_error",
    "report_from_result",
    "emit_json",
    "parse_json",
    "emit_text",
]


def rotation_error_deg(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Geodesic angle, in degrees, between two rotation matrices.

    Equals arccos((trace(R_est @ R_truth.T) - 1) / 2), but is evaluated as
    2 * arcsin(||R_est - R_truth||_F / (2 sqrt(2))), which is the same angle
    (||R1 - R2||_F = 2 sqrt(2) sin(theta/2)) yet stays exact at 0 instead of
    amplifying round-off noise the way arccos does near cos = 1.
    """
    diff = np.asarray(estimate, dtype=np.float64) - np.asarray(
        truth, dtype=np.float64
    )
    half_sin = np.linalg.norm(diff) / (2.0 * np.sqrt(2.0))
    return float(np.degrees(2.0 * np.arcsin(np.clip(half_sin, 0.0, 1.0))))


def translation_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Euclidean distance between two translation vectors."""
    return float(
        np.linalg.norm(np.asarray(estimate, dtype=np.float64).reshape(3)
                       - np.asarray(truth, dtype=np.float64).reshape(3))
    )


def _config_echo(config: SdrsacConfig) -> dict:
    return {
        "n_sample": config.n_sample,
        "m": config.m,
        "inner_iters": config.inner_iters,
        "p_s": config.p_s,
        "epsilon": config.epsilon,
        "gamma": config.resolved_gamma,
        "max_iter": config.max_iter,
        "seed": config.seed,
        "sdp_tol": config.sdp_tol,
        "sdp_max_iter": config.sdp_max_iter,
        "icp_max_iter": config.icp.max_iter,
        "icp_tol": config.icp.tol,
        "icp_trim_ratio": config.icp.trim_ratio,
    }


@dataclass(frozen=True)
class RunReport:
    """One registration run, flattened for serialization.

    rotation is row-major (nine floats); truth errors are None unless the
    run had a known ground truth.  wall_time_s is 0.0 when timing is
    suppressed for reproducibility.
    """

    method: str
    rotation: tuple
    translation: tuple
    consensus: int
    iterations: int
    stop_bound: int
    p_inlier: float
    wall_time_s: float
    config: dict = field(default_factory=dict)
    rotation_error_deg: float | None = None
    translation_error: float | None = None

    def transform(self) -> RigidTransform:
        return RigidTransform(
            np.asarray(self.rotation, dtype=np.float64).reshape(3, 3),
            np.asarray(self.translation, dtype=np.float64),
        )


def report_from_result(
    result: RegistrationResult,
    config: SdrsacConfig,
    truth: RigidTransform | None = None,
    timing: bool = True,
) -> RunReport:
    """Flatten a RegistrationResult, attaching truth errors when available."""
    rot = result.transform.rotation
    tra = result.transform.translation
    return RunReport(
        method=result.method,
        rotation=tuple(float(v) for v in rot.ravel()),
        translation=tuple(float(v) for v in tra),
        consensus=int(result.consensus.count),
        iterations=int(result.iterations),
        stop_bound=int(min(result.stop_bound, 2**62)),
        p_inlier=float(result.p_inlier),
        wall_time_s=float(result.wall_time_s) if timing else 0.0,
        config=_config_echo(config),
        rotation_error_deg=(
            None if truth is None
            else rotation_error_deg(rot, truth.rotation)
        ),
        translation_error=(
            None if truth is None
            else translation_error(tra, truth.translation)
        ),
    )


class _ReprFloat(float):
    """Float whose json serialization is its repr (shortest round-trip)."""

    def __repr__(self) -> str:  # pragma: no cover - trivial
        return float.__repr__(self)


def _canonical(value):
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        return _ReprFloat(value)
    if isinstance(value, (np.floating,)):
        return _ReprFloat(float(value))
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def emit_json(report: RunReport) -> str:
    """Serialize deterministically: sorted keys, repr floats, newline end."""
    payload = {
        "method": report.method,
        "rotation": report.rotation,
        "translation": report.translation,
        "consensus": report.consensus,
        "iterations": report.iterations,
        "stop_bound": report.stop_bound,
        "p_inlier": report.p_inlier,
        "wall_time_s": report.wall_time_s,
        "config": report.config,
        "rotation_error_deg": report.rotation_error_deg,
        "translation_error": report.translation_error,
    }
    return json.dumps(_canonical(payload), sort_keys=True, indent=2) + "\n"


def parse_json(text: str) -> RunReport:
    """Inverse of emit_json: parse(emit(x)) == x."""
    raw = json.loads(text)
    return RunReport(
        method=raw["method"],
        rotation=tuple(raw["rotation"]),
        translation=tuple(raw["translation"]),
        consensus=int(raw["consensus"]),
        iterations=int(raw["iterations"]),
        stop_bound=int(raw["stop_bound"]),
        p_inlier=float(raw["p_inlier"]),
        wall_time_s=float(raw["wall_time_s"]),
        config=dict(raw["config"]),
        rotation_error_deg=raw["rotation_error_deg"],
        translation_error=raw["translation_error"],
    )


def emit_text(report: RunReport) -> str:
    """Fixed-width human-readable rendering of one report."""
    lines = [
        f"{'method':<20}{report.method}",
        f"{'consensus':<20}{report.consensus}",
        f"{'iterations':<20}{report.iterations}",
        f"{'stop_bound':<20}{report.stop_bound}",
        f"{'p_inlier':<20}{report.p_inlier!r}",
        f"{'wall_time_s':<20}{report.wall_time_s!r}",
    ]
    if report.rotation_error_deg is not None:
        lines.append(f"{'rotation_error_deg':<20}{report.rotation_error_deg!r}")
    if report.translation_error is not None:
        lines.append(f"{'translation_error':<20}{report.translation_error!r}")
    rot = np.asarray(report.rotation).reshape(3, 3)
    lines.append("rotation")
    for row in rot.tolist():
        lines.append("  " + "  ".join(f"{v:+.9f}" for v in row))
    lines.append("translation")
    lines.append("  " + "  ".join(f"{v:+.9f}" for v in report.translation))
    return "\n".join(lines) + "\n"
