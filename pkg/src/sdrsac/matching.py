"""Pairwise-consistency matching between two equal-size point subsets.

A candidate correspondence (a, b) pairs source point a with target point b.
Two candidates (a, b) and (c, d) support each other when the segment length
|p_a - p_c| is close to |q_b - q_d|; the affinity matrix scores that support
with exp(-|difference|), cut to zero beyond a consistency threshold gamma.
Indices are combined column-major: pair (a, b) maps to a + b * n, matching
the stacked-columns vectorization of the assignment matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import CorrespondenceSet

__all__ = [
    "AffinityMatrix",
    "FractionalMatch",
    "build_affinity",
    "project_assignment",
    "select_top_m",
    "assignment_candidates",
    "brute_force_match",
]

_BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True)
class AffinityMatrix:
    """Dense (n^2, n^2) consistency scores plus the structural-zero mask.

    entries[u, v] with u = a + b*n, v = c + d*n scores candidates (a, b) and
    (c, d).  zero_mask[u, v] is True exactly where the length discrepancy
    exceeded gamma; those entries are zero and are excluded from matching by
    the relaxation.
    """

    n: int
    entries: np.ndarray
    zero_mask: np.ndarray

    def __post_init__(self) -> None:
        n2 = self.n * self.n
        if self.entries.shape != (n2, n2) or self.zero_mask.shape != (n2, n2):
            raise ValueError("affinity blocks must be (n^2, n^2)")
        self.entries.setflags(write=False)
        self.zero_mask.setflags(write=False)

    def pair_index(self, a: int, b: int) -> int:
        return a + b * self.n


@dataclass(frozen=True)
class FractionalMatch:
    """Relaxed assignment: x[i, j] in [0, 1], row/column sums <= 1 (up to the
    solver tolerance), entries summing to m."""

    x: np.ndarray
    objective: float
    m: int


def build_affinity(p: np.ndarray, q: np.ndarray, gamma: float) -> AffinityMatrix:
    """Affinity between all candidate pairs of two n-point sets.

    Entries are exp(-|delta_p - delta_q|) where the deltas are the two segment
    lengths, zeroed (and masked) where the lengths differ by more than gamma.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if p.shape != q.shape:
        raise ValueError("point sets must have equal size")
    if not gamma > 0.0:
        raise ValueError("gamma must be positive")
    n = p.shape[0]
    dp = np.linalg.norm(p[:, None] - p[None, :], axis=-1)
    dq = np.linalg.norm(q[:, None] - q[None, :], axis=-1)
    # axes (b, a, d, c) so that the C-order reshape puts pair (a, b) at a + b*n
    diff = np.abs(dp[None, :, None, :] - dq[:, None, :, None])
    mask = diff > gamma
    entries = np.exp(-diff)
    entries[mask] = 0.0
    n2 = n * n
    return AffinityMatrix(n, entries.reshape(n2, n2), mask.reshape(n2, n2))


def _lexicographic_assignment(score: np.ndarray) -> np.ndarray:
    """Max-score full assignment; among optima, the lexicographically smallest
    column sequence (col[0], col[1], ...).

    Fixes rows in order: row i takes the smallest column that still allows the
    remaining rows to reach the optimal total.
    """
    n = score.shape[0]
    rows, cols = linear_sum_assignment(score, maximize=True)
    best = float(score[rows, cols].sum())
    tol = 1e-12 * max(1.0, abs(best))

    assigned = np.full(n, -1, dtype=np.int64)
    free_cols = list(range(n))
    remaining = best
    for i in range(n):
        sub_rows = np.arange(i + 1, n)
        for j in sorted(free_cols):
            if len(sub_rows):
                sub = score[np.ix_(sub_rows, [c for c in free_cols if c != j])]
                tail = float(sub[linear_sum_assignment(sub, maximize=True)].sum())
            else:
                tail = 0.0
            if score[i, j] + tail >= remaining - tol:
                assigned[i] = j
                free_cols.remove(j)
                remaining -= score[i, j]
                break
        if assigned[i] < 0:  # numerical fallback; keep the LSA answer
            assigned[i] = cols[np.nonzero(rows == i)[0][0]]
            if assigned[i] in free_cols:
                free_cols.remove(assigned[i])
    return assigned


def project_assignment(match: FractionalMatch) -> CorrespondenceSet:
    """Round a fractional assignment to the permutation maximizing the linear
    score <X, x_tilde>; ties resolve to the lexicographically smallest
    permutation so rounding is reproducible."""
    x = np.asarray(match.x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError("fractional match must be square")
    cols = _lexicographic_assignment(x)
    n = x.shape[0]
    pairs = np.column_stack([np.arange(n), cols])
    return CorrespondenceSet(pairs, x[np.arange(n), cols])


def select_top_m(
    assignment: CorrespondenceSet, match: FractionalMatch, m: int
) -> CorrespondenceSet:
    """Keep the m assignment pairs with the largest fractional scores, ties
    broken toward the smaller source index."""
    n = len(assignment)
    if not 3 <= m <= n:
        raise ValueError(f"m must be in [3, {n}], got {m}")
    src = assignment.source_indices
    tgt = assignment.target_indices
    scores = match.x[src, tgt]
    order = np.lexsort((src, -scores))[:m]
    order = order[np.argsort(src[order])]  # present pairs by source index
    return CorrespondenceSet(
        np.column_stack([src[order], tgt[order]]), scores[order]
    )


_EXCLUDED = -1e6


def assignment_candidates(
    match: FractionalMatch, m: int
) -> tuple[CorrespondenceSet, ...]:
    """Deterministic shortlist of integral roundings of a fractional match.

    The primary candidate keeps the m heaviest pairs of the score-maximizing
    assignment.  Because the consistency scores come from pairwise lengths
    alone, a mirror-image matching can carry almost the same fractional mass
    as the true one, and the heavier of the two is not always the one that
    survives rigid refinement.  Re-extracting once with every primary pair
    excluded and once with only the heaviest primary pair excluded surfaces
    those runner-up matchings; downstream scoring picks among the candidates
    by consensus.  Duplicates are dropped, the primary always comes first.
    """
    primary = select_top_m(project_assignment(match), match, m)
    out = [primary]
    seen = {primary.pairs.tobytes()}
    without_all = np.array(match.x)
    without_all[primary.source_indices, primary.target_indices] = _EXCLUDED
    heaviest = int(np.argmax(match.x[primary.source_indices, primary.target_indices]))
    without_top = np.array(match.x)
    without_top[
        primary.source_indices[heaviest], primary.target_indices[heaviest]
    ] = _EXCLUDED
    for masked in (without_all, without_top):
        alt = FractionalMatch(masked, match.objective, match.m)
        candidate = select_top_m(project_assignment(alt), alt, m)
        key = candidate.pairs.tobytes()
        if key not in seen:
            seen.add(key)
            out.append(candidate)
    return tuple(out)


def matching_objective(a: AffinityMatrix, pairs: np.ndarray) -> float:
    """Quadratic matching score x^T A x of a pair set under affinity `a`."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    idx = pairs[:, 0] + pairs[:, 1] * a.n
    return float(a.entries[np.ix_(idx, idx)].sum())


def brute_force_match(a: AffinityMatrix, m: int) -> tuple[CorrespondenceSet, float]:
    """Exact maximizer of the quadratic matching score over sub-permutations
    with exactly m assignments, by exhaustive enumeration.  Guarded to n <= 8;
    meant as an oracle for small instances, not production use."""
    n = a.n
    if n > _BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force is limited to n <= {_BRUTE_FORCE_LIMIT}")
    if not 3 <= m <= n:
        raise ValueError(f"m must be in [3, {n}], got {m}")
    best_val = -np.inf
    best_pairs: np.ndarray | None = None
    all_idx = range(n)
    for rows in combinations(all_idx, m):
        rows_arr = np.asarray(rows, dtype=np.int64)
        for cols_subset in combinations(all_idx, m):
            for cols in permutations(cols_subset):
                idx = rows_arr + np.asarray(cols, dtype=np.int64) * n
                val = float(a.entries[np.ix_(idx, idx)].sum())
                if val > best_val + 1e-15:
                    best_val = val
                    best_pairs = np.column_stack([rows_arr, cols])
    assert best_pairs is not None
    return CorrespondenceSet(best_pairs), best_val
