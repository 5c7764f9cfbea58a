"""Randomized consensus registration driven by relaxed matching.

Each attempt draws a small subset from both clouds, matches the subsets by
solving the tightened semidefinite relaxation of pairwise-consistency
matching, lifts the best-supported assignments to a rigid transform, refines
it by trimmed iterative closest point over the full clouds, and scores it by
consensus counting.  The attempt budget adapts like a consensus sampler's:
from the best consensus ratio seen so far (floored by the sample-to-match
ratio), the loop bounds how many attempts are needed to have hit at least one
all-inlier match with the requested confidence, and stops at that bound.

Drawing a larger-than-minimal subset and matching it with the relaxation
makes single attempts far more likely to succeed than minimal three-point
draws, so the adaptive budget collapses after the first good hit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    ConsensusResult,
    CorrespondenceSet,
    DegenerateGeometryError,
    PointCloud,
    RigidTransform,
    consensus_score,
    estimate_rigid,
)
from .icp import IcpConfig, IcpResult, refine_icp
from .matching import assignment_candidates, build_affinity
from .sdp import SdpSolution, assemble_problem, solve_sdp

__all__ = [
    "SdrsacConfig",
    "SdrMatchResult",
    "RegistrationResult",
    "stopping_iterations",
    "sdr_matching",
    "sdrsac",
    "csdrsac",
    "ransac_baseline",
]

_STREAM_SOURCE_DRAW = 16
_STREAM_TARGET_DRAW = 17
_STREAM_MINIMAL_SOURCE = 18

_UNBOUNDED = 2**62


def _stream(seed: int, stage: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, stage]))


@dataclass(frozen=True)
class SdrsacConfig:
    """Knobs of the randomized registration loop.

    epsilon is the absolute consensus distance; gamma, the pairwise length
    consistency threshold of the matching stage, defaults to twice epsilon.
    """

    n_sample: int = 16
    m: int = 4
    inner_iters: int = 4
    p_s: float = 0.99
    epsilon: float = 0.01
    gamma: float | None = None
    max_iter: int = 10000
    seed: int = 0
    sdp_tol: float = 1e-4
    sdp_max_iter: int = 2000
    icp: IcpConfig = field(default_factory=IcpConfig)

    def __post_init__(self) -> None:
        if self.m < 3:
            raise ValueError("m must be at least 3")
        if self.n_sample < self.m:
            raise ValueError("n_sample must be at least m")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be at least 1")
        if not 0.0 < self.p_s < 1.0:
            raise ValueError("p_s must be in (0, 1)")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        if self.gamma is not None and not self.gamma > 0.0:
            raise ValueError("gamma must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")

    @property
    def resolved_gamma(self) -> float:
        return self.gamma if self.gamma is not None else 2.0 * self.epsilon


def stopping_iterations(p_inlier: float, p_success: float, m: int) -> int:
    """Attempts needed so that, with per-point inlier probability p_inlier,
    at least one attempt drew m inliers with confidence p_success.

    The ratio log(1 - p_success) / log(1 - p_inlier**m) is truncated to an
    integer bound and clamped to at least one attempt; certain inliers
    (p_inlier >= 1) need a single attempt, impossible ones effectively
    unbounded.
    """
    if not 0.0 < p_success < 1.0:
        raise ValueError("p_success must be in (0, 1)")
    if m < 1:
        raise ValueError("m must be at least 1")
    if p_inlier >= 1.0:
        return 1
    if p_inlier <= 0.0:
        return _UNBOUNDED
    hit = p_inlier**m
    denom = math.log1p(-hit)
    if denom == 0.0:
        return _UNBOUNDED
    bound = math.log1p(-p_success) / denom
    if bound >= _UNBOUNDED:
        return _UNBOUNDED
    return max(1, int(math.floor(bound)))


@dataclass(frozen=True)
class SdrMatchResult:
    """Outcome of one subset-matching attempt."""

    valid: bool
    transform: RigidTransform
    consensus: ConsensusResult
    correspondences: CorrespondenceSet
    sdp: SdpSolution
    icp: IcpResult | None


def sdr_matching(
    source_sample: PointCloud,
    target_sample: PointCloud,
    source: PointCloud,
    target: PointCloud,
    config: SdrsacConfig,
) -> SdrMatchResult:
    """Match two equal-size samples and lift the match to a scored transform.

    The relaxation is solved over the samples only; the refinement and the
    consensus count always run over the full clouds.
    """
    if len(source_sample) != len(target_sample):
        raise ValueError("samples must have equal size")
    affinity = build_affinity(
        source_sample.points, target_sample.points, gamma=config.resolved_gamma
    )
    problem = assemble_problem(affinity, config.m)
    solution = solve_sdp(
        problem, tol=config.sdp_tol, max_iter=config.sdp_max_iter
    )
    candidates = assignment_candidates(solution.x, config.m)

    best: SdrMatchResult | None = None
    for top in candidates:
        try:
            coarse = estimate_rigid(
                source_sample.points[top.source_indices],
                target_sample.points[top.target_indices],
            )
        except DegenerateGeometryError:
            continue
        refined = refine_icp(source, target, init=coarse, config=config.icp)
        consensus = consensus_score(
            source, target, refined.transform, config.epsilon
        )
        attempt = SdrMatchResult(
            valid=True,
            transform=refined.transform,
            consensus=consensus,
            correspondences=top,
            sdp=solution,
            icp=refined,
        )
        if best is None or _improves(attempt, consensus.count, best,
                                     best.consensus.count):
            best = attempt
    if best is None:
        return SdrMatchResult(
            valid=False,
            transform=RigidTransform.identity(),
            consensus=ConsensusResult(0, CorrespondenceSet.empty()),
            correspondences=candidates[0],
            sdp=solution,
            icp=None,
        )
    return best


def _improves(
    attempt: SdrMatchResult,
    count: int,
    best: SdrMatchResult | None,
    best_count: int,
) -> bool:
    """Higher consensus wins; equal consensus falls back to the smaller
    refinement error, so a saturated count cannot mask a sharper fit."""
    if count != best_count:
        return count > best_count
    if best is None or best.icp is None or attempt.icp is None:
        return False
    return attempt.icp.mse < best.icp.mse


@dataclass(frozen=True)
class RegistrationResult:
    """Best transform found plus the loop's bookkeeping.

    trace holds one (attempt_index, consensus_count, relaxation_gap) triple
    per attempt, in order.
    """

    method: str
    transform: RigidTransform
    consensus: ConsensusResult
    iterations: int
    stop_bound: int
    p_inlier: float
    trace: tuple
    wall_time_s: float


def _empty_result(
    method: str,
    stop_bound: int,
    p_floor: float,
    wall: float,
    iterations: int = 0,
    trace: tuple = (),
):
    return RegistrationResult(
        method=method,
        transform=RigidTransform.identity(),
        consensus=ConsensusResult(0, CorrespondenceSet.empty()),
        iterations=iterations,
        stop_bound=stop_bound,
        p_inlier=p_floor,
        trace=trace,
        wall_time_s=wall,
    )


def sdrsac(
    source: PointCloud, target: PointCloud, config: SdrsacConfig | None = None
) -> RegistrationResult:
    """Register source onto target with the adaptive sampling loop.

    Each outer round draws one source sample and `inner_iters` target
    samples; every (source, target) sample pair is one attempt.  After a
    round the attempt bound is recomputed from the best consensus ratio so
    far, floored by m / n_sample.
    """
    config = config if config is not None else SdrsacConfig()
    start = time.perf_counter()
    n_sample = min(config.n_sample, len(source), len(target))
    if n_sample < config.m:
        raise ValueError(
            f"clouds must have at least m={config.m} points to register"
        )
    src_rng = _stream(config.seed, _STREAM_SOURCE_DRAW)
    tgt_rng = _stream(config.seed, _STREAM_TARGET_DRAW)

    p_floor = config.m / n_sample
    best: SdrMatchResult | None = None
    best_count = -1
    trace: list[tuple] = []
    iterations = 0
    bound = stopping_iterations(p_floor, config.p_s, config.m)

    while iterations < min(config.max_iter, bound):
        src_idx = np.sort(
            src_rng.choice(len(source), size=n_sample, replace=False)
        )
        source_sample = source.subset(src_idx)
        for _ in range(config.inner_iters):
            tgt_idx = np.sort(
                tgt_rng.choice(len(target), size=n_sample, replace=False)
            )
            attempt = sdr_matching(
                source_sample, target.subset(tgt_idx), source, target, config
            )
            iterations += 1
            count = attempt.consensus.count if attempt.valid else 0
            trace.append((iterations, count, attempt.sdp.gap))
            if attempt.valid and _improves(attempt, count, best, best_count):
                best = attempt
                best_count = count
        p_inlier = max(best_count / len(source), p_floor)
        bound = stopping_iterations(p_inlier, config.p_s, config.m)

    wall = time.perf_counter() - start
    if best is None:
        return _empty_result(
            "sdrsac", bound, p_floor, wall, iterations, tuple(trace)
        )
    return RegistrationResult(
        method="sdrsac",
        transform=best.transform,
        consensus=best.consensus,
        iterations=iterations,
        stop_bound=bound,
        p_inlier=max(best_count / len(source), p_floor),
        trace=tuple(trace),
        wall_time_s=wall,
    )


def csdrsac(
    source: PointCloud,
    target: PointCloud,
    putative: CorrespondenceSet,
    config: SdrsacConfig | None = None,
) -> RegistrationResult:
    """Correspondence-driven variant: each attempt draws its source sample
    from the putative pairs and takes the paired targets as the target
    sample, so there is no inner loop over target draws.  The adaptive bound
    is re-evaluated after every attempt."""
    config = config if config is not None else SdrsacConfig()
    start = time.perf_counter()
    n_sample = config.n_sample
    if len(putative) < n_sample:
        raise ValueError(
            f"need at least n_sample={n_sample} putative pairs,"
            f" got {len(putative)}"
        )
    rng = _stream(config.seed, _STREAM_SOURCE_DRAW)

    p_floor = config.m / n_sample
    best: SdrMatchResult | None = None
    best_count = -1
    trace: list[tuple] = []
    iterations = 0
    bound = stopping_iterations(p_floor, config.p_s, config.m)

    while iterations < min(config.max_iter, bound):
        pick = np.sort(rng.choice(len(putative), size=n_sample, replace=False))
        attempt = sdr_matching(
            source.subset(putative.source_indices[pick]),
            target.subset(putative.target_indices[pick]),
            source,
            target,
            config,
        )
        iterations += 1
        count = attempt.consensus.count if attempt.valid else 0
        trace.append((iterations, count, attempt.sdp.gap))
        if attempt.valid and _improves(attempt, count, best, best_count):
            best = attempt
            best_count = count
        p_inlier = max(best_count / len(source), p_floor)
        bound = stopping_iterations(p_inlier, config.p_s, config.m)

    wall = time.perf_counter() - start
    if best is None:
        return _empty_result(
            "csdrsac", bound, p_floor, wall, iterations, tuple(trace)
        )
    return RegistrationResult(
        method="csdrsac",
        transform=best.transform,
        consensus=best.consensus,
        iterations=iterations,
        stop_bound=bound,
        p_inlier=max(best_count / len(source), p_floor),
        trace=tuple(trace),
        wall_time_s=wall,
    )


def ransac_baseline(
    source: PointCloud,
    target: PointCloud,
    putative: CorrespondenceSet,
    config: SdrsacConfig | None = None,
    time_budget_s: float | None = None,
    max_attempts: int | None = None,
) -> RegistrationResult:
    """Minimal-sample consensus baseline over putative pairs: three random
    pairs, a rigid fit, a consensus count, and no refinement.  Runs until the
    adaptive bound (with m = 3), the attempt budget, or the wall-clock budget
    is exhausted, whichever comes first.  Degenerate minimal samples are
    skipped, not fatal."""
    config = config if config is not None else SdrsacConfig()
    start = time.perf_counter()
    if len(putative) < 3:
        raise ValueError("need at least 3 putative pairs")
    rng = _stream(config.seed, _STREAM_MINIMAL_SOURCE)

    best_transform: RigidTransform | None = None
    best_consensus: ConsensusResult | None = None
    best_count = -1
    trace: list[tuple] = []
    iterations = 0
    p_floor = 0.0
    bound = _UNBOUNDED

    while iterations < min(config.max_iter, bound):
        if max_attempts is not None and iterations >= max_attempts:
            break
        if (
            time_budget_s is not None
            and time.perf_counter() - start >= time_budget_s
        ):
            break
        pick = rng.choice(len(putative), size=3, replace=False)
        iterations += 1
        try:
            transform = estimate_rigid(
                source.points[putative.source_indices[pick]],
                target.points[putative.target_indices[pick]],
            )
        except DegenerateGeometryError:
            trace.append((iterations, 0, 0.0))
            continue
        consensus = consensus_score(source, target, transform, config.epsilon)
        trace.append((iterations, consensus.count, 0.0))
        if consensus.count > best_count:
            best_count = consensus.count
            best_transform = transform
            best_consensus = consensus
            bound = stopping_iterations(
                max(best_count / len(source), p_floor), config.p_s, 3
            )

    wall = time.perf_counter() - start
    if best_transform is None:
        return _empty_result(
            "ransac", bound, p_floor, wall, iterations, tuple(trace)
        )
    return RegistrationResult(
        method="ransac",
        transform=best_transform,
        consensus=best_consensus,
        iterations=iterations,
        stop_bound=bound,
        p_inlier=best_count / len(source),
        trace=tuple(trace),
        wall_time_s=wall,
    )
