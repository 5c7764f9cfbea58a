"""Core geometric primitives: point clouds, rigid motions, correspondences.

Everything downstream (matching, ICP, the samplers) is built on the four
operations here: applying/estimating rigid transforms, nearest-neighbour
lookup against a spatial index, and counting consensus inliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "DegenerateGeometryError",
    "PointCloud",
    "RigidTransform",
    "CorrespondenceSet",
    "ConsensusResult",
    "apply_transform",
    "nearest_neighbor",
    "consensus_score",
    "estimate_rigid",
]

_ORTHO_TOL = 1e-9


class DegenerateGeometryError(ValueError):
    """Raised when a configuration does not determine a unique rigid motion."""


@dataclass(frozen=True)
class PointCloud:
    """Immutable set of 3-D points, shape (n, 3), with a lazy k-d tree."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"expected (n, 3) points with n >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @cached_property
    def kdtree(self) -> cKDTree:
        """Spatial index over the points; built once, reused across queries."""
        return cKDTree(self.points)

    @cached_property
    def extent(self) -> float:
        """Length of the bounding-box diagonal."""
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(span))

    def subset(self, indices: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices, dtype=np.intp)])


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion x -> R x + t with R in SO(3)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1 within 1e-9")
        r = np.ascontiguousarray(r)
        r.setflags(write=False)
        t = np.ascontiguousarray(t)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Pairs (source index, target index), optionally scored.

    Source indices are unique by construction.  Target indices are unique for
    matchings produced by the assignment pipeline but may legitimately repeat
    in consensus inlier sets, where several source points can share a nearest
    target; `is_one_to_one` distinguishes the two uses.
    """

    pairs: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self) -> None:
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.shape[0] and (np.unique(pairs[:, 0]).size != pairs.shape[0]):
            raise ValueError("source indices must not repeat")
        if np.any(pairs < 0):
            raise ValueError("indices must be non-negative")
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        if self.scores is not None:
            scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if scores.shape[0] != pairs.shape[0]:
                raise ValueError("scores must align with pairs")
            scores.setflags(write=False)
            object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.pairs.shape[0]

    @property
    def source_indices(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def target_indices(self) -> np.ndarray:
        return self.pairs[:, 1]

    def is_one_to_one(self) -> bool:
        return np.unique(self.pairs[:, 1]).size == self.pairs.shape[0]

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(np.empty((0, 2), dtype=np.int64), np.empty(0))


@dataclass(frozen=True)
class ConsensusResult:
    """Inlier count plus per-inlier (source, nearest target) pairs."""

    count: int
    inliers: CorrespondenceSet = field(default_factory=CorrespondenceSet.empty)

    def __post_init__(self) -> None:
        if self.count != len(self.inliers):
            raise ValueError("count must equal the number of inlier pairs")


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Return a new cloud with every point mapped through the transform."""
    return PointCloud(transform.apply(cloud.points))


def nearest_neighbor(cloud: PointCloud, query: np.ndarray) -> tuple[int, float]:
    """Index and distance of the point closest to `query`.

    Exact ties are broken toward the smallest index, which keeps results
    reproducible across tree layouts.
    """
    q = np.asarray(query, dtype=np.float64).reshape(3)
    dist, idx = cloud.kdtree.query(q)
    ties = cloud.kdtree.query_ball_point(q, dist)
    if len(ties) > 1:
        idx = min(ties)
    return int(idx), float(dist)


def consensus_score(
    source: PointCloud,
    target: PointCloud,
    transform: RigidTransform,
    epsilon: float,
) -> ConsensusResult:
    """Count source points whose transformed image lies within `epsilon` of
    some target point.  Target indices in the inlier set may repeat; this is
    a score of the transform, not a matching."""
    if not epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    moved = transform.apply(source.points)
    dist, idx = target.kdtree.query(moved)
    keep = dist <= epsilon
    src = np.nonzero(keep)[0]
    pairs = np.column_stack([src, idx[keep]])
    return ConsensusResult(
        count=int(keep.sum()),
        inliers=CorrespondenceSet(pairs, dist[keep]),
    )


def estimate_rigid(source_points: np.ndarray, target_points: np.ndarray) -> RigidTransform:
    """Least-squares rigid motion from paired points (SVD of the cross
    covariance, smallest singular direction flipped if needed so that the
    rotation is proper).

    Raises ValueError for fewer than 3 pairs and DegenerateGeometryError when
    the pairs are (near-)collinear and do not pin down the rotation.
    """
    src = np.asarray(source_points, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("source and target point arrays must have equal shape")
    if src.shape[0] < 3:
        raise ValueError("at least 3 point pairs are required")

    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0.0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateGeometryError(
            "point pairs are collinear or coincident; rotation is not unique"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        raise DegenerateGeometryError("cross covariance is singular")
    flip = np.ones(3)
    flip[-1] = d
    rotation = vt.T @ np.diag(flip) @ u.T
    translation = c_dst - rotation @ c_src
    return RigidTransform(rotation, translation)
