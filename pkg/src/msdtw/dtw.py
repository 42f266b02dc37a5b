"""Local cosine cost, cost matrices, banded DTW and subsequence DTW.

Rows of a cost matrix index the template (query), columns index the target.
A step ``(di, dj)`` moves ``di`` rows and ``dj`` columns; cells jumped over by
a step contribute nothing to the path cost.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numba import njit

NORM_EPS = 1e-12

Step = tuple[int, int]


@dataclass(frozen=True)
class FeatureSequence:
    """A time-major ``T x D`` matrix of feature frames."""

    frames: np.ndarray
    frame_rate: float = 100.0

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 1:
            frames = frames[:, None]
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be a non-empty T x D matrix, got shape {frames.shape}")
        if not np.issubdtype(frames.dtype, np.floating):
            frames = frames.astype(np.float64)
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")
        if not self.frame_rate > 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.frame_rate


@dataclass(frozen=True)
class StepSet:
    """Ordered set of admissible steps; the order is the tie-break preference."""

    steps: tuple[Step, ...] = ((1, 1), (1, 2), (2, 1))

    def __post_init__(self):
        steps = tuple((int(a), int(b)) for a, b in self.steps)
        if not steps:
            raise ValueError("step set must not be empty")
        if len(set(steps)) != len(steps):
            raise ValueError(f"duplicate steps in {steps}")
        for di, dj in steps:
            if di < 0 or dj < 0 or (di == 0 and dj == 0):
                raise ValueError(f"invalid step {(di, dj)}")
        if (1, 1) not in steps:
            raise ValueError("step set must contain (1, 1)")
        object.__setattr__(self, "steps", steps)

    @classmethod
    def parse(cls, text: str) -> "StepSet":
        """Parse ``"1,1;1,2;2,1"``."""
        pairs = []
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                a, b = chunk.split(",")
                pairs.append((int(a), int(b)))
            except ValueError:
                raise ValueError(f"malformed step {chunk!r} in {text!r}") from None
        return cls(tuple(pairs))

    def __str__(self) -> str:
        return ";".join(f"{a},{b}" for a, b in self.steps)

    def as_array(self) -> np.ndarray:
        return np.array(self.steps, dtype=np.int64).reshape(-1, 2)


DEFAULT_STEPS = StepSet()
# symmetric (1,0)/(0,1)/(1,1) steps of classic DTW, used by the first DBA pass
CLASSIC_STEPS = StepSet(((1, 1), (1, 0), (0, 1)))


class UnreachableError(ValueError):
    """No admissible path reaches ``cell``."""

    def __init__(self, cell: tuple[int, int], message: str):
        super().__init__(message)
        self.cell = cell


@dataclass
class DtwPath:
    cells: list[tuple[int, int]]
    total_cost: float

    @property
    def onset_col(self) -> int:
        return self.cells[0][1]

    @property
    def offset_col(self) -> int:
        return self.cells[-1][1]

    def __len__(self) -> int:
        return len(self.cells)


@dataclass
class MatchingFunction:
    """Per-end-column result of subsequence DTW.

    ``delta[m]`` is the smallest mean local cost (sum over visited cells
    divided by their number) of any admissible path ending at ``(N-1, m)``;
    ``+inf`` where no path ends. ``accumulated``, ``lengths`` and ``onsets``
    describe that optimal path. The cost matrix is kept for path recovery.
    """

    delta: np.ndarray
    accumulated: np.ndarray
    lengths: np.ndarray
    onsets: np.ndarray
    cost: np.ndarray = field(repr=False)
    steps: StepSet = DEFAULT_STEPS

    @property
    def n_rows(self) -> int:
        return self.cost.shape[0]

    @property
    def scores(self) -> np.ndarray:
        """Similarity ``1 - delta/2`` in ``[0, 1]``; 0 where no path ends."""
        s = 1.0 - self.delta / 2.0
        s[~np.isfinite(self.delta)] = 0.0
        return s


def _as_frames(x) -> np.ndarray:
    if isinstance(x, FeatureSequence):
        x = x.frames
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    return x


def cosine_cost(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < NORM_EPS or nv < NORM_EPS:
        return 1.0
    return float(np.clip(1.0 - np.dot(u, v) / (nu * nv), 0.0, 2.0))


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    silent = norms < NORM_EPS
    safe = np.where(silent, 1.0, norms)
    return x / safe[:, None], silent


def _operand_key(x: np.ndarray) -> tuple:
    return (x.shape[0], x.tobytes())


def cost_matrix(a, b) -> np.ndarray:
    """Cosine-distance matrix with entries ``cosine_cost(a[n], b[m])``.

    The product is always evaluated in a canonical operand order so that
    ``cost_matrix(a, b)`` is bit-identical to ``cost_matrix(b, a).T``.
    """
    A = _as_frames(a)
    B = _as_frames(b)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    swap = _operand_key(B) < _operand_key(A)
    if swap:
        A, B = B, A
    ua, sa = _unit_rows(A)
    ub, sb = _unit_rows(B)
    C = 1.0 - ua @ ub.T
    np.clip(C, 0.0, 2.0, out=C)
    C[sa, :] = 1.0
    C[:, sb] = 1.0
    if swap:
        C = np.ascontiguousarray(C.T)
    return C


@njit(cache=True, nogil=True)
def _full_kernel(C, steps, band_lo, band_hi):
    N, M = C.shape
    S = steps.shape[0]
    acc = np.full((N, M), np.inf)
    bp = np.full((N, M), -1, np.int8)
    acc[0, 0] = C[0, 0]
    for i in range(N):
        lo = max(band_lo[i], 0)
        hi = min(band_hi[i], M - 1)
        for j in range(lo, hi + 1):
            if i == 0 and j == 0:
                continue
            best = np.inf
            bs = -1
            for s in range(S):
                pi = i - steps[s, 0]
                pj = j - steps[s, 1]
                if pi < 0 or pj < 0:
                    continue
                v = acc[pi, pj]
                if v < best:
                    best = v
                    bs = s
            if bs >= 0:
                acc[i, j] = C[i, j] + best
                bp[i, j] = bs
    return acc, bp


@njit(cache=True, nogil=True)
def _skip_limits(N, dmax):
    # most rows a path can have jumped over on arrival at row i
    lim = np.empty(N, np.int64)
    for i in range(N):
        lim[i] = i - (i + dmax - 1) // dmax
    return lim


@njit(cache=True, nogil=True, error_model="numpy")
def _relax(q, qs, p, ps, n):
    # q = min(q, p) elementwise, carrying start columns; branch-free so it vectorizes
    for k in range(n):
        v = p[k]
        c = q[k]
        m = 1.0 if v < c else 0.0
        qs[k] = qs[k] + m * (ps[k] - qs[k])
        q[k] = min(v, c)


@njit(cache=True, nogil=True, error_model="numpy")
def _subseq_kernel(C, steps):
    # State (i, e) of one column: min sum over paths reaching row i having
    # skipped e rows (so visiting i + 1 - e cells). A column's states are
    # flattened row-major with stride W, which turns every step into a constant
    # offset; W is padded so that offsets wrapping into the previous row read inf.
    N, M = C.shape
    S = steps.shape[0]
    dmax = 1
    Rc = 1
    for s in range(S):
        dmax = max(dmax, steps[s, 0])
        Rc = max(Rc, steps[s, 1] + 1)
    lim = _skip_limits(N, dmax)
    W = lim[N - 1] + dmax
    F = N * W
    acc = np.full((Rc, F), np.inf)
    # start columns kept as float64 (exact for any realistic length)
    start = np.full((Rc, F), -1.0)
    delta = np.full(M, np.inf)
    total = np.full(M, np.inf)
    cnt = np.zeros(M, np.int64)
    onset = np.full(M, -1, np.int64)
    r = (N - 1) * W
    for j in range(M):
        c = j % Rc
        cur = acc[c]
        cst = start[c]
        cur[W:] = np.inf
        cur[0] = C[0, j]
        cst[0] = j
        for s in range(S):
            di = steps[s, 0]
            pj = j - steps[s, 1]
            if pj < 0:
                continue
            off = di * W + di - 1
            lo = max(W, off)
            pc = pj % Rc
            _relax(cur[lo:], cst[lo:], acc[pc, lo - off :], start[pc, lo - off :], F - lo)
        for i in range(1, N):
            cij = C[i, j]
            b0 = i * W
            for e in range(lim[i] + 1):
                cur[b0 + e] = cij + cur[b0 + e]
        # free end: best mean cost over path lengths; ties keep the longer path
        for e in range(lim[N - 1] + 1):
            v = cur[r + e]
            if v < np.inf:
                d = v / (N - e)
                if d < delta[j]:
                    delta[j] = d
                    total[j] = v
                    cnt[j] = N - e
                    onset[j] = int(cst[r + e])
    return delta, total, cnt, onset


@njit(cache=True, nogil=True)
def _subseq_trace(C, steps, skips):
    # same recursion restricted to paths starting at (0, 0); returns the cells
    # of the optimal path to (N-1, W-1) that skipped `skips` rows
    N, W = C.shape
    S = steps.shape[0]
    dmax = 1
    for s in range(S):
        dmax = max(dmax, steps[s, 0])
    lim = _skip_limits(N, dmax)
    E = lim[N - 1] + 1
    acc = np.full((W, N, E), np.inf)
    bp = np.full((W, N, E), -1, np.int8)
    acc[0, 0, 0] = C[0, 0]
    for j in range(W):
        for i in range(1, N):
            for s in range(S):
                di = steps[s, 0]
                pj = j - steps[s, 1]
                pi = i - di
                if pj < 0 or pi < 0:
                    continue
                shift = di - 1
                hi = min(lim[i], lim[pi] + shift)
                for e in range(shift, hi + 1):
                    v = acc[pj, pi, e - shift]
                    if v < acc[j, i, e]:
                        acc[j, i, e] = v
                        bp[j, i, e] = s
            cij = C[i, j]
            for e in range(lim[i] + 1):
                if acc[j, i, e] < np.inf:
                    acc[j, i, e] = cij + acc[j, i, e]
    n = N - skips
    cells = np.empty((n, 2), np.int64)
    i = N - 1
    j = W - 1
    e = skips
    k = n - 1
    total = acc[j, i, e]
    while k >= 0:
        cells[k, 0] = i
        cells[k, 1] = j
        k -= 1
        s = bp[j, i, e]
        if s < 0:
            break
        e -= steps[s, 0] - 1
        i -= steps[s, 0]
        j -= steps[s, 1]
    return cells, total


def _band_limits(N: int, M: int, radius: int | None) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(N, dtype=np.int64)
    if radius is None:
        return np.zeros(N, np.int64), np.full(N, M - 1, np.int64)
    if radius < 0:
        raise ValueError(f"band_radius must be non-negative, got {radius}")
    # band widened by the length difference so that (N-1, M-1) stays inside
    if M >= N:
        return rows - radius, rows + (M - N) + radius
    return rows - (N - M) - radius, rows + radius


def _coerce_cost(cost) -> np.ndarray:
    C = np.ascontiguousarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.size == 0:
        raise ValueError(f"cost must be a non-empty 2-D matrix, got shape {C.shape}")
    return C


def _coerce_steps(steps) -> StepSet:
    if steps is None:
        return DEFAULT_STEPS
    if isinstance(steps, StepSet):
        return steps
    if isinstance(steps, str):
        return StepSet.parse(steps)
    return StepSet(tuple(steps))


def _walk_back(bp: np.ndarray, steps: StepSet, i: int, j: int) -> list[tuple[int, int]]:
    cells = [(i, j)]
    st = steps.steps
    while True:
        s = bp[i, j]
        if s < 0:
            break
        di, dj = st[s]
        i -= di
        j -= dj
        cells.append((i, j))
    cells.reverse()
    return cells


def dtw_full(cost, steps: StepSet | Iterable[Step] | None = None, band_radius: int | None = None) -> DtwPath:
    """Minimum-cost path from ``(0, 0)`` to ``(N-1, M-1)``.

    With ``band_radius`` set, cells must satisfy the Sakoe-Chiba constraint,
    widened by ``|N - M|`` on the long side as in tslearn.
    """
    C = _coerce_cost(cost)
    steps = _coerce_steps(steps)
    N, M = C.shape
    lo, hi = _band_limits(N, M, band_radius)
    acc, bp = _full_kernel(C, steps.as_array(), lo, hi)
    total = acc[N - 1, M - 1]
    if not np.isfinite(total):
        raise UnreachableError(
            (N - 1, M - 1),
            f"no admissible path reaches cell ({N - 1}, {M - 1}) of a {N}x{M} matrix "
            f"with steps {steps} and band radius {band_radius}",
        )
    return DtwPath(_walk_back(bp, steps, N - 1, M - 1), float(total))


def subsequence_dtw(cost, steps: StepSet | Iterable[Step] | None = None) -> MatchingFunction:
    """Free-start, free-end DTW of the template rows against the target columns.

    Row 0 may start at any column. For every end column the path with the
    minimum mean cost is selected exactly, so a path that skips rows is never
    favoured merely for visiting fewer cells. Both step components must be
    positive.
    """
    C = _coerce_cost(cost)
    steps = _coerce_steps(steps)
    if any(di < 1 or dj < 1 for di, dj in steps.steps):
        raise ValueError(f"subsequence DTW needs strictly positive steps, got {steps}")
    delta, total, cnt, onset = _subseq_kernel(C, steps.as_array())
    return MatchingFunction(delta=delta, accumulated=total, lengths=cnt, onsets=onset, cost=C, steps=steps)


def backtrack(mf: MatchingFunction, end_col: int) -> DtwPath:
    """Recover the optimal path ending at ``(N-1, end_col)``.

    The recursion is re-run on the columns between the stored onset and
    ``end_col`` only; with identical tie-breaking this reproduces the path
    selected by :func:`subsequence_dtw`.
    """
    M = mf.delta.shape[0]
    if not 0 <= end_col < M:
        raise IndexError(f"end_col {end_col} outside [0, {M})")
    if not np.isfinite(mf.delta[end_col]):
        raise UnreachableError((mf.n_rows - 1, end_col), f"no admissible path ends at column {end_col}")
    onset = int(mf.onsets[end_col])
    window = np.ascontiguousarray(mf.cost[:, onset : end_col + 1])
    skips = mf.n_rows - int(mf.lengths[end_col])
    cells, total = _subseq_trace(window, mf.steps.as_array(), skips)
    if total != mf.accumulated[end_col]:
        raise RuntimeError(f"path recovery mismatch at column {end_col}: {total} != {mf.accumulated[end_col]}")
    return DtwPath([(int(i), int(j) + onset) for i, j in cells], float(total))


def path_cost(cost: np.ndarray, cells: Sequence[tuple[int, int]]) -> float:
    """Sum of local costs over visited cells, accumulated in path order."""
    total = 0.0
    for i, j in cells:
        total = cost[i, j] + total
    return float(total)
