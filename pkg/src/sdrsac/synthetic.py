"""Reproducible synthetic registration instances.

An instance subsamples a base cloud, applies a uniformly random rigid motion,
adds per-axis Gaussian noise, and deletes a fixed fraction of the moved
points.  Every randomized stage draws from its own counter-based stream keyed
by (seed, stage), so changing one stage's draw count can never shift another
stage's output, and identical seeds give byte-identical instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, RigidTransform

__all__ = [
    "SyntheticSpec",
    "SyntheticInstance",
    "synth_generate",
    "surface_blob",
    "downsample_uniform",
    "uniform_rotation",
]

_STREAM_SUBSAMPLE = 0
_STREAM_ROTATION = 1
_STREAM_TRANSLATION = 2
_STREAM_NOISE = 3
_STREAM_REMOVAL = 4
_STREAM_BLOB = 5


def _stream(seed: int, stage: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, stage]))


def uniform_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix drawn uniformly (Haar) via a random unit quaternion."""
    u1, u2, u3 = rng.uniform(size=3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    qw = a * np.sin(2 * np.pi * u2)
    qx = a * np.cos(2 * np.pi * u2)
    qy = b * np.sin(2 * np.pi * u3)
    qz = b * np.cos(2 * np.pi * u3)
    return np.array(
        [
            [
                1 - 2 * (qy * qy + qz * qz),
                2 * (qx * qy - qz * qw),
                2 * (qx * qz + qy * qw),
            ],
            [
                2 * (qx * qy + qz * qw),
                1 - 2 * (qx * qx + qz * qz),
                2 * (qy * qz - qx * qw),
            ],
            [
                2 * (qx * qz - qy * qw),
                2 * (qy * qz + qx * qw),
                1 - 2 * (qx * qx + qy * qy),
            ],
        ]
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of one synthetic instance."""

    n_points: int = 2000
    removal_ratio: float = 0.0
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_points < 3:
            raise ValueError("n_points must be at least 3")
        if not 0.0 <= self.removal_ratio < 1.0:
            raise ValueError("removal_ratio must be in [0, 1)")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass(frozen=True)
class SyntheticInstance:
    """A generated problem plus everything needed to score an answer.

    survivors holds the source indices whose moved images were kept in the
    target, in source order; target row i is the (noisy) image of source
    point survivors[i].
    """

    source: PointCloud
    target: PointCloud
    transform: RigidTransform
    survivors: np.ndarray
    spec: SyntheticSpec
    true_inlier_count: int = field(init=False)

    def __post_init__(self) -> None:
        surv = np.asarray(self.survivors, dtype=np.int64)
        surv.setflags(write=False)
        object.__setattr__(self, "survivors", surv)
        object.__setattr__(self, "true_inlier_count", int(len(surv)))


def synth_generate(base: PointCloud, spec: SyntheticSpec) -> SyntheticInstance:
    """Generate one instance from a base cloud (which must be large enough
    to subsample `spec.n_points` from)."""
    n_base = len(base)
    if n_base < spec.n_points:
        raise ValueError(
            f"base cloud has {n_base} points, need at least {spec.n_points}"
        )
    idx = _stream(spec.seed, _STREAM_SUBSAMPLE).choice(
        n_base, size=spec.n_points, replace=False
    )
    source = PointCloud(base.points[np.sort(idx)])

    rotation = uniform_rotation(_stream(spec.seed, _STREAM_ROTATION))
    translation = _stream(spec.seed, _STREAM_TRANSLATION).uniform(
        -0.5, 0.5, size=3
    ) * source.extent
    truth = RigidTransform(rotation, translation)

    moved = truth.apply(source.points)
    if spec.noise_sigma > 0.0:
        moved = moved + _stream(spec.seed, _STREAM_NOISE).normal(
            scale=spec.noise_sigma, size=moved.shape
        )

    n = spec.n_points
    n_removed = int(np.floor(spec.removal_ratio * n))
    if n_removed:
        removed = _stream(spec.seed, _STREAM_REMOVAL).choice(
            n, size=n_removed, replace=False
        )
        survivors = np.setdiff1d(np.arange(n), removed)
    else:
        survivors = np.arange(n)

    return SyntheticInstance(
        source=source,
        target=PointCloud(moved[survivors]),
        transform=truth,
        survivors=survivors,
        spec=spec,
    )


def surface_blob(
    n_points: int,
    seed: int = 0,
    radius: float = 0.05,
    axis_scale: tuple = (1.0, 0.82, 0.64),
    bump_scale: float = 1.0,
) -> PointCloud:
    """Dense asymmetric closed surface for registration benchmarks.

    Points sample a bumpy ellipsoid whose harmonics break every rotational
    and reflective symmetry, so the rigid alignment onto a copy of itself is
    unique.  At the default size the point spacing for a few thousand points
    is well below a hundredth of the extent, dense enough that consensus
    counting with a matching-scale tolerance saturates.  bump_scale trades
    surface ruggedness for smoothness: smaller bumps widen the attraction
    basin of local refinement while the axis asymmetry keeps the alignment
    unique.
    """
    rng = _stream(seed, _STREAM_BLOB)
    u = rng.uniform(-1.0, 1.0, size=n_points)
    phi = rng.uniform(0.0, 2 * np.pi, size=n_points)
    st = np.sqrt(1.0 - u**2)
    directions = np.column_stack([st * np.cos(phi), st * np.sin(phi), u])
    bump = 1.0 + bump_scale * (
        0.22 * np.sin(3 * phi) * st
        + 0.17 * np.cos(2 * phi) * u
        + 0.13 * np.sin(5 * phi + 1.0) * st**2
    )
    points = directions * (radius * bump)[:, None] * np.asarray(axis_scale)
    return PointCloud(points)


def downsample_uniform(
    cloud: PointCloud, k: int, seed: int, stage: int = _STREAM_SUBSAMPLE
) -> PointCloud:
    """Uniform subsample without replacement, order preserved."""
    if not 1 <= k <= len(cloud):
        raise ValueError(f"k must be in [1, {len(cloud)}], got {k}")
    idx = _stream(seed, stage).choice(len(cloud), size=k, replace=False)
    return cloud.subset(np.sort(idx))
