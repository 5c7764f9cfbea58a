"""Tightened semidefinite relaxation of cardinality-constrained matching.

The quadratic matching problem (pick exactly m assignment pairs maximizing
x^T A x over sub-permutations) is lifted to Y = x x^T and relaxed: the rank
condition becomes Z = [[1, x^T], [x, Y]] >= 0, and the lift is tightened with
entrywise constraints: lifted entries for conflicting candidates (same source
or same target) are nonpositive, every other entry is bounded by the smaller
of its two assignment variables, and entries whose affinity is structurally
zero are eliminated (pinned to zero, which removes their coupling rows from
the problem).

The in-repo solver is a first-order operator-splitting method: one variable
copy lives on the PSD cone (projected each iteration by symmetric
eigendecomposition with negative eigenvalues clipped), the other on the
affine/box polytope (projected by cyclic passes with Dykstra corrections over
separable boxes, per-row/per-column halfspaces, the coupled sum equalities
solved in closed normal form, and the min-coupling groups), with dual updates
on the consensus gap between the two copies.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .matching import AffinityMatrix, FractionalMatch

__all__ = [
    "SdpProblem",
    "SdpSolution",
    "KktReport",
    "assemble_problem",
    "solve_sdp",
    "verify_kkt",
    "constraint_violations",
    "psd_project",
    "dump_problem",
    "recording",
    "SolveRecorder",
]

_PAD = -1e30


def psd_project(mat: np.ndarray) -> np.ndarray:
    """Nearest positive-semidefinite matrix in Frobenius norm: eigenvalues
    clipped at zero, eigenvectors kept."""
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    neg = w < 0.0
    if not np.any(neg):
        return sym
    if neg.sum() <= sym.shape[0] // 2:
        # subtract the (smaller) negative part
        out = sym - (v[:, neg] * w[neg]) @ v[:, neg].T
    else:
        pos = ~neg
        out = (v[:, pos] * w[pos]) @ v[:, pos].T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class _MinFamily:
    """Constraint groups {Y_uv <= x_anchor : v in members[anchor]} arranged so
    no lifted entry repeats within the family.

    members is padded with -1; weights hold the Frobenius multiplicity of each
    member entry (2 off-diagonal, 1 diagonal).  scatter_u/scatter_v flatten
    the real members for symmetric writeback.
    """

    anchors: np.ndarray
    members: np.ndarray
    weights: np.ndarray
    safe_members: np.ndarray
    pad_mask: np.ndarray
    scatter_u: np.ndarray
    scatter_v: np.ndarray

    @classmethod
    def build(cls, n2: int, member_lists, weight_lists) -> "_MinFamily":
        width = max((len(m) for m in member_lists), default=0)
        members = np.full((n2, max(width, 1)), -1, dtype=np.int64)
        weights = np.zeros((n2, max(width, 1)))
        for i, (mem, wts) in enumerate(zip(member_lists, weight_lists)):
            members[i, : len(mem)] = mem
            weights[i, : len(mem)] = wts
        anchors = np.arange(n2, dtype=np.int64)
        pad = members < 0
        safe = np.where(pad, 0, members)
        real = ~pad
        scatter_u = np.repeat(anchors, members.shape[1]).reshape(members.shape)[real]
        scatter_v = members[real]
        return cls(anchors, members, weights, safe, pad, scatter_u, scatter_v)


@dataclass(frozen=True)
class SdpProblem:
    """Assembled relaxation for one affinity instance."""

    n: int
    m: int
    affinity: AffinityMatrix
    objective_matrix: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    fam_a: _MinFamily
    fam_b: _MinFamily
    conflict_pairs: np.ndarray
    masked_pairs: np.ndarray
    min_pairs: np.ndarray

    @property
    def n2(self) -> int:
        return self.n * self.n

    @property
    def dim(self) -> int:
        return self.n2 + 1

    def objective_value(self, z: np.ndarray) -> float:
        return float(np.sum(self.objective_matrix[1:, 1:] * z[1:, 1:]))


def _conflict_matrix(n: int) -> np.ndarray:
    """Boolean (n^2, n^2): candidate pairs sharing a source xor a target."""
    idx = np.arange(n * n)
    a = idx % n
    b = idx // n
    same_src = a[:, None] == a[None, :]
    same_tgt = b[:, None] == b[None, :]
    return same_src ^ same_tgt


def assemble_problem(a: AffinityMatrix, m: int) -> SdpProblem:
    """Build the tightened relaxation for affinity `a` with cardinality m."""
    n = a.n
    n2 = n * n
    if not 3 <= m <= n:
        raise ValueError(f"m must be in [3, {n}], got {m}")
    dim = n2 + 1

    conflict = _conflict_matrix(n)
    masked = np.asarray(a.zero_mask, dtype=bool)

    c = np.zeros((dim, dim))
    c[1:, 1:] = a.entries

    # Box bounds over the full lifted matrix.  The [-1, 1] range on free
    # lifted entries is implied by the cone and the diagonal caps, so adding
    # it to the polytope leaves the feasible set unchanged.
    lo = np.full((dim, dim), -1.0)
    hi = np.ones((dim, dim))
    lo[0, 0] = hi[0, 0] = 1.0
    lo[0, 1:] = 0.0
    lo[1:, 0] = 0.0
    ylo = lo[1:, 1:]
    yhi = hi[1:, 1:]
    diag = np.eye(n2, dtype=bool)
    ylo[diag & ~masked] = 0.0
    conflict_free = conflict & ~masked
    yhi[conflict_free] = 0.0
    ylo[masked] = 0.0
    yhi[masked] = 0.0

    open_pair = ~conflict & ~masked
    mem_a: list[list[int]] = [[] for _ in range(n2)]
    wts_a: list[list[float]] = [[] for _ in range(n2)]
    mem_b: list[list[int]] = [[] for _ in range(n2)]
    wts_b: list[list[float]] = [[] for _ in range(n2)]
    uu, vv = np.nonzero(np.triu(open_pair))
    for u, v in zip(uu.tolist(), vv.tolist()):
        if u == v:
            mem_a[u].append(v)
            wts_a[u].append(1.0)
        else:
            mem_a[u].append(v)
            wts_a[u].append(2.0)
            mem_b[v].append(u)
            wts_b[v].append(2.0)

    masked_u, masked_v = np.nonzero(np.triu(masked))
    conf_u, conf_v = np.nonzero(np.triu(conflict_free, k=1))
    return SdpProblem(
        n=n,
        m=m,
        affinity=a,
        objective_matrix=c,
        lo=lo,
        hi=hi,
        fam_a=_MinFamily.build(n2, mem_a, wts_a),
        fam_b=_MinFamily.build(n2, mem_b, wts_b),
        conflict_pairs=np.column_stack([conf_u, conf_v]),
        masked_pairs=np.column_stack([masked_u, masked_v]),
        min_pairs=np.column_stack([uu, vv]),
    )


# ---------------------------------------------------------------------------
# polytope projection (cyclic Dykstra in the Frobenius metric on symmetric Z)


def _solve_min_groups(a: np.ndarray, b: np.ndarray, w: np.ndarray):
    """Exact projection of each group onto {b_k <= a}: anchor has Frobenius
    weight 2, members weight w.  Returns updated (a, b); padding must be _PAD
    in b with weight 0.  Stationarity is piecewise linear in the anchor, found
    by a descending scan of member values."""
    top = b.max(axis=1)
    needs = top > a
    if not np.any(needs):
        return a, b
    sel = np.nonzero(needs)[0]
    bs_full = b[sel]
    bs = bs_full
    ws = w[sel]
    # The root satisfies x* >= a, so members <= a can never be active; only
    # the largest (kmax + 1) values per row can matter (one extra as the
    # window fence).  Partition those out before the expensive sort.
    kmax = int((bs > a[sel][:, None]).sum(axis=1).max())
    kcols = min(kmax + 1, bs.shape[1])
    if 3 * kcols <= bs.shape[1]:
        part = np.argpartition(-bs, kcols - 1, axis=1)[:, :kcols]
        bs = np.take_along_axis(bs, part, axis=1)
        ws = np.take_along_axis(ws, part, axis=1)
    order = np.argsort(-bs, axis=1)
    bs_sorted = np.take_along_axis(bs, order, axis=1)
    ws_sorted = np.take_along_axis(ws, order, axis=1)
    cum_w = np.cumsum(ws_sorted, axis=1)
    cum_s = np.cumsum(ws_sorted * np.where(bs_sorted <= _PAD, 0.0, bs_sorted), axis=1)
    cand = (2.0 * a[sel][:, None] + cum_s) / (2.0 + cum_w)
    lower = np.concatenate(
        [bs_sorted[:, 1:], np.full((bs_sorted.shape[0], 1), _PAD)], axis=1
    )
    valid = (cand <= bs_sorted + 1e-12) & (cand >= lower)
    k = np.argmax(valid, axis=1)
    rows = np.arange(len(sel))
    x_star = np.where(valid[rows, k], cand[rows, k], a[sel])
    a = a.copy()
    a[sel] = x_star
    b = b.copy()
    b[sel] = np.minimum(bs_full, x_star[:, None])
    return a, b


class _PolytopeProjector:
    """Dykstra passes over the constraint families; corrections are stored
    compactly on each family's support."""

    def __init__(self, problem: SdpProblem):
        self.p = problem
        n2 = problem.n2
        ka = problem.fam_a.members.shape[1]
        kb = problem.fam_b.members.shape[1]
        self.c_row = np.zeros(n2)
        self.c_col = np.zeros(n2)
        self.c_sum_x = np.zeros(n2)
        self.c_sum_d = np.zeros(n2)
        self.c_ax = np.zeros(n2)
        self.c_am = np.zeros((n2, ka))
        self.c_bx = np.zeros(n2)
        self.c_bm = np.zeros((n2, kb))
        self.c_box: np.ndarray | None = None
        self.diag_idx = np.arange(1, n2 + 1)

    def _x(self, z: np.ndarray) -> np.ndarray:
        return z[0, 1:]

    def _set_x(self, z: np.ndarray, x: np.ndarray) -> None:
        z[0, 1:] = x
        z[1:, 0] = x

    def _step_rowcol(self, z: np.ndarray, axis: int, corr: np.ndarray) -> None:
        n = self.p.n
        x = self._x(z) + corr
        xm = x.reshape(n, n, order="F")
        excess = np.maximum(xm.sum(axis=axis) - 1.0, 0.0) / n
        xm = xm - (excess[:, None] if axis == 1 else excess[None, :])
        new = xm.reshape(-1, order="F")
        corr[:] = x - new
        self._set_x(z, new)

    def _step_sums(self, z: np.ndarray) -> None:
        n2 = self.p.n2
        m = self.p.m
        x = self._x(z) + self.c_sum_x
        new_x = x - (x.sum() - m) / n2
        self.c_sum_x[:] = x - new_x
        self._set_x(z, new_x)
        d = z[self.diag_idx, self.diag_idx] + self.c_sum_d
        new_d = d - (d.sum() - m) / n2
        self.c_sum_d[:] = d - new_d
        z[self.diag_idx, self.diag_idx] = new_d

    def _step_family(self, z: np.ndarray, fam: _MinFamily,
                     corr_x: np.ndarray, corr_m: np.ndarray) -> None:
        if fam.scatter_u.size == 0:
            return
        y = z[1:, 1:]
        a = self._x(z) + corr_x
        b = y[fam.anchors[:, None], fam.safe_members]
        b = np.where(fam.pad_mask, _PAD, b + corr_m)
        new_a, new_b = _solve_min_groups(a, b, fam.weights)
        corr_x[:] = a - new_a
        corr_m[:] = np.where(fam.pad_mask, 0.0, b - new_b)
        self._set_x(z, new_a)
        vals = new_b[~fam.pad_mask]
        y[fam.scatter_u, fam.scatter_v] = vals
        y[fam.scatter_v, fam.scatter_u] = vals

    def _step_box(self, z: np.ndarray) -> np.ndarray:
        if self.c_box is None:
            self.c_box = np.zeros_like(z)
        y = z + self.c_box
        new = np.clip(y, self.p.lo, self.p.hi)
        self.c_box = y - new
        return new

    def reset(self) -> None:
        for arr in (self.c_row, self.c_col, self.c_sum_x, self.c_sum_d,
                    self.c_ax, self.c_am, self.c_bx, self.c_bm):
            arr.fill(0.0)
        self.c_box = None

    def project(self, z0: np.ndarray, passes: int) -> np.ndarray:
        """Cyclic Dykstra passes toward the polytope, corrections cold-started
        per call (they are only meaningful for a fixed input point)."""
        z = z0.copy()
        self.reset()
        # The equality projection runs last so truncating the cycle leaves
        # the two equalities exactly satisfied; the inequality families can
        # absorb the tiny resulting drift, a hyperplane cannot.
        for _ in range(passes):
            z = self._step_box(z)
            self._step_rowcol(z, 1, self.c_row)
            self._step_rowcol(z, 0, self.c_col)
            self._step_family(z, self.p.fam_a, self.c_ax, self.c_am)
            self._step_family(z, self.p.fam_b, self.c_bx, self.c_bm)
            self._step_sums(z)
        return z


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SdpSolution:
    x: FractionalMatch
    y: np.ndarray
    z: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    status: str
    history: tuple = ()


@dataclass(frozen=True)
class KktReport:
    max_violation: float
    families: dict
    min_eigenvalue: float


def constraint_violations(problem: SdpProblem, z: np.ndarray) -> dict:
    """Scaled violations of every constraint family at a lifted matrix
    (equalities against |rhs|, inequalities as positive part).  Everything is
    recomputed from the problem data, independent of solver bookkeeping."""
    n, m = problem.n, problem.m
    x = 0.5 * (z[0, 1:] + z[1:, 0])
    y = z[1:, 1:]
    xm = x.reshape(n, n, order="F")
    fams = {
        "corner": abs(z[0, 0] - 1.0),
        "row_sum": float(np.maximum(xm.sum(axis=1) - 1.0, 0.0).max()),
        "col_sum": float(np.maximum(xm.sum(axis=0) - 1.0, 0.0).max()),
        "total_sum": abs(float(x.sum()) - m) / m,
        "trace": abs(float(np.trace(y)) - m) / m,
        "box": float(
            np.maximum(np.maximum(problem.lo - z, z - problem.hi), 0.0).max()
        ),
    }
    cp = problem.conflict_pairs
    fams["conflict"] = (
        float(np.maximum(y[cp[:, 0], cp[:, 1]], 0.0).max()) if len(cp) else 0.0
    )
    mp = problem.masked_pairs
    fams["eliminated"] = (
        float(np.abs(y[mp[:, 0], mp[:, 1]]).max()) if len(mp) else 0.0
    )
    pairs = problem.min_pairs
    if len(pairs):
        yv = y[pairs[:, 0], pairs[:, 1]]
        viol = np.maximum(yv - x[pairs[:, 0]], 0.0)
        viol = np.maximum(viol, np.maximum(yv - x[pairs[:, 1]], 0.0))
        fams["min_bound"] = float(viol.max())
    else:
        fams["min_bound"] = 0.0
    return fams


def verify_kkt(problem: SdpProblem, solution: SdpSolution) -> KktReport:
    """Recompute feasibility of a reported solution from scratch."""
    fams = constraint_violations(problem, solution.z)
    w = np.linalg.eigvalsh(0.5 * (solution.z + solution.z.T))
    min_eig = float(w[0])
    fams["psd"] = max(0.0, -min_eig)
    return KktReport(
        max_violation=float(max(fams.values())),
        families=fams,
        min_eigenvalue=min_eig,
    )


class SolveRecorder:
    """Collects per-solve feasibility summaries; the acceptance suite uses
    one to audit every solve performed inside a sampling run."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def add(self, problem: SdpProblem, solution: SdpSolution, tol: float) -> None:
        report = verify_kkt(problem, solution)
        self.records.append(
            {
                "status": solution.status,
                "tol": tol,
                "max_violation": report.max_violation,
                "objective": solution.objective,
                "iterations": solution.iterations,
            }
        )


_ACTIVE_RECORDERS: list[SolveRecorder] = []


@contextlib.contextmanager
def recording(recorder: SolveRecorder):
    _ACTIVE_RECORDERS.append(recorder)
    try:
        yield recorder
    finally:
        _ACTIVE_RECORDERS.remove(recorder)


def _initial_point(problem: SdpProblem) -> np.ndarray:
    """Deterministic cold start: uniform assignment mass m/n^2, lifted
    diagonal consistent with trace m."""
    dim = problem.dim
    n2 = problem.n2
    z = np.zeros((dim, dim))
    z[0, 0] = 1.0
    z[0, 1:] = problem.m / n2
    z[1:, 0] = problem.m / n2
    idx = np.arange(1, dim)
    z[idx, idx] = problem.m / n2
    return z


def _face_basis(problem: SdpProblem) -> np.ndarray | None:
    """Orthonormal basis of the cone face containing the feasible set.

    When m == n every row and column cap is forced tight, and for each source
    row r the vector v = -e_0 + sum of the row's candidate coordinates
    satisfies v^T Z v = 1 - 2*(row sum) + (row diagonal mass) = 0 at every
    feasible point (conflicts kill the off-diagonal products; the trace pins
    the diagonal mass).  The same holds per target column.  Feasible matrices
    therefore all share this kernel, the relaxation has no strictly positive
    definite point, and the cone-side projection stalls at first-order
    accuracy. Restricting the PSD projection to the face {Z >= 0, Z K = 0}
    leaves the feasible set untouched and restores a relative interior.
    Returns None when m < n (slack rows keep the interior nonempty).
    """
    n = problem.n
    if problem.m < n:
        return None
    dim = problem.dim
    flat = np.arange(problem.n2)
    kernel = np.zeros((dim, 2 * n))
    for r in range(n):
        kernel[0, r] = -1.0
        kernel[1 + np.nonzero(flat % n == r)[0], r] = 1.0
    for c in range(n):
        kernel[0, n + c] = -1.0
        kernel[1 + np.nonzero(flat // n == c)[0], n + c] = 1.0
    u, s, _ = np.linalg.svd(kernel, full_matrices=True)
    rank = int(np.count_nonzero(s > 1e-9 * s[0]))
    return u[:, rank:]


def solve_sdp(
    problem: SdpProblem,
    tol: float = 1e-4,
    max_iter: int = 2000,
    rho: float = 20.0,
    over_relax: float = 1.7,
    dykstra_passes: int = 4,
    check_every: int = 5,
    record_history: bool = False,
) -> SdpSolution:
    """Run the operator-splitting solver to `tol` on scaled residuals.

    Convergence requires the consensus residuals, the objective gap between
    the copies, and the recomputed constraint violations of the reported
    (cone-side) iterate to all fall below `tol`.  The penalty parameter is
    rescaled from the primal/dual residual ratio every 50 iterations.  The
    iterate sequence is deterministic for fixed inputs and parameters.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    c = problem.objective_matrix
    projector = _PolytopeProjector(problem)
    face = _face_basis(problem)
    z = _initial_point(problem)
    w = np.zeros_like(z)
    passes = dykstra_passes
    history: list[tuple] = []

    x = z
    status = "max_iterations"
    r_prim = r_dual = gap = np.inf
    stall_anchor = np.inf
    iterations = 0

    for it in range(1, max_iter + 1):
        iterations = it
        if face is None:
            x = psd_project(z - w + c / rho)
        else:
            v = z - w + c / rho
            x = face @ psd_project(face.T @ v @ face) @ face.T
        x_relaxed = over_relax * x + (1.0 - over_relax) * z
        z_prev = z
        z = projector.project(x_relaxed + w, passes)
        w = w + x_relaxed - z

        if it % check_every and it != max_iter:
            continue

        norm_x = np.linalg.norm(x)
        norm_z = np.linalg.norm(z)
        r_prim = float(np.linalg.norm(x - z) / max(1.0, norm_x, norm_z))
        r_dual = float(
            rho * np.linalg.norm(z - z_prev) / max(1.0, rho * np.linalg.norm(w))
        )
        obj_x = problem.objective_value(x)
        obj_z = problem.objective_value(z)
        gap = abs(obj_x - obj_z) / max(1.0, abs(obj_x), abs(obj_z))
        viol = max(constraint_violations(problem, x).values())
        if record_history:
            history.append((it, r_prim, r_dual, gap, viol, obj_x))

        if max(r_prim, r_dual, gap, viol) <= tol:
            status = "converged"
            break

        # a consensus gap parked far from zero signals an empty intersection
        if it % 150 == 0:
            if r_prim > 0.05 and r_prim > 0.98 * stall_anchor:
                status = "infeasible"
                break
            stall_anchor = r_prim

        if max(r_prim, r_dual, gap) <= tol and viol > tol and passes < 16:
            passes = min(passes * 2, 16)

        if it % 50 == 0 and r_dual > 0 and np.isfinite(r_prim / r_dual):
            scale = float(np.sqrt(r_prim / r_dual))
            scale = min(max(scale, 0.2), 5.0)
            if abs(scale - 1.0) > 0.1:
                rho *= scale
                w /= scale

    x_vec = x[0, 1:]
    objective = problem.objective_value(x)
    solution = SdpSolution(
        x=FractionalMatch(
            x_vec.reshape(problem.n, problem.n, order="F").copy(),
            objective,
            problem.m,
        ),
        y=x[1:, 1:].copy(),
        z=x.copy(),
        objective=objective,
        primal_residual=float(r_prim),
        dual_residual=float(r_dual),
        gap=float(gap),
        iterations=iterations,
        status=status,
        history=tuple(history),
    )
    for recorder in _ACTIVE_RECORDERS:
        recorder.add(problem, solution, tol)
    return solution


def dump_problem(problem: SdpProblem, stream) -> None:
    """Self-describing text dump: dimensions, affinity triplets, zero mask."""
    a = problem.affinity
    ent = a.entries
    nz_u, nz_v = np.nonzero(np.triu(ent))
    stream.write("sdr-matching-problem v1\n")
    stream.write(f"n {problem.n}\nm {problem.m}\ndim {problem.dim}\n")
    stream.write(f"min-pairs {len(problem.min_pairs)}\n")
    stream.write(f"conflict-pairs {len(problem.conflict_pairs)}\n")
    stream.write(f"eliminated-pairs {len(problem.masked_pairs)}\n")
    stream.write(f"affinity-nnz {len(nz_u)}\n")
    for u, v in zip(nz_u.tolist(), nz_v.tolist()):
        stream.write(f"{u} {v} {ent[u, v]!r}\n")
    stream.write(f"zero-mask {len(problem.masked_pairs)}\n")
    for u, v in problem.masked_pairs.tolist():
        stream.write(f"{u} {v}\n")
