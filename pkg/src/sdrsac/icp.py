"""Iterative closest point refinement with optional distance trimming.

Each sweep matches every source point to its nearest target point, keeps the
best-matched fraction (`trim_ratio`), and re-estimates the rigid transform
from scratch over those pairs.  Keeping only the closest pairs makes the
refinement robust when part of the source has no counterpart in the target;
a ratio of 1.0 recovers the classic full-correspondence iteration.

The trimmed mean squared error is nonincreasing across sweeps: nearest
neighbors can only shrink each point's distance, the trimmed subset keeps the
smallest of them, and the re-estimated transform is optimal for the kept
pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    DegenerateGeometryError,
    PointCloud,
    RigidTransform,
    estimate_rigid,
)

__all__ = ["IcpConfig", "IcpResult", "refine_icp"]


@dataclass(frozen=True)
class IcpConfig:
    """Refinement controls.

    max_iter: sweep budget.
    tol: relative change of trimmed mean squared error that counts as
        converged.
    trim_ratio: fraction of correspondences kept each sweep (at least three
        pairs are always kept).
    """

    max_iter: int = 50
    tol: float = 1e-8
    trim_ratio: float = 0.7

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.trim_ratio <= 1.0:
            raise ValueError("trim_ratio must be in (0, 1]")


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    mse: float
    iterations: int
    converged: bool
    degenerate: bool
    mse_history: tuple


def refine_icp(
    source: PointCloud,
    target: PointCloud,
    init: RigidTransform | None = None,
    config: IcpConfig | None = None,
) -> IcpResult:
    """Refine `init` so the source aligns onto the target.

    Ties in the trimming order resolve toward the smaller source index, so
    the sweep sequence is fully determined by its inputs.  If a sweep's kept
    pairs are too degenerate to determine a rotation, the refinement is
    abandoned: the initial transform comes back flagged `degenerate`.
    """
    init = init if init is not None else RigidTransform.identity()
    config = config if config is not None else IcpConfig()
    if len(source) < 3:
        raise ValueError("refinement needs at least 3 source points")
    src = source.points
    keep_count = max(3, int(np.floor(config.trim_ratio * len(source))))
    tree = target.kdtree

    transform = init
    prev_mse = np.inf
    history: list[float] = []
    converged = False
    iterations = 0
    # distances below a few machine epsilons of the data scale are exact hits
    zero_floor = (16.0 * np.finfo(np.float64).eps * max(1.0, target.extent)) ** 2

    for iterations in range(1, config.max_iter + 1):
        moved = transform.apply(src)
        dist, idx = tree.query(moved)
        keep = np.argsort(dist, kind="stable")[:keep_count]
        mse = float(np.mean(dist[keep] ** 2))
        history.append(mse)
        if mse <= zero_floor or (
            np.isfinite(prev_mse)
            and abs(prev_mse - mse) <= config.tol * prev_mse
        ):
            converged = True
            break
        prev_mse = mse
        try:
            transform = estimate_rigid(src[keep], target.points[idx[keep]])
        except DegenerateGeometryError:
            return IcpResult(
                transform=init,
                mse=mse,
                iterations=iterations,
                converged=False,
                degenerate=True,
                mse_history=tuple(history),
            )

    return IcpResult(
        transform=transform,
        mse=history[-1],
        iterations=iterations,
        converged=converged,
        degenerate=False,
        mse_history=tuple(history),
    )
